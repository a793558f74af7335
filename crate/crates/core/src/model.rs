//! Keys, table schemas, bucket partitioning and ring placement.
//!
//! Every table key has a canonical byte encoding: one table tag byte followed
//! by the key fields in fixed-width big-endian form.
//!
//! | table          | tag | fields                                  | length |
//! |----------------|-----|-----------------------------------------|--------|
//! | `TermTable`    | 0   | user `u64`, keyword `u32`               | 13     |
//! | `InterTable`   | 1   | sender `u64`, receiver `u64`            | 17     |
//! | `MessageTable` | 2   | recipient `u64`                         | 9      |
//! | `SeqNoTable`   | 3   | inbox owner `u64`                       | 9      |
//!
//! A key hashes (FNV-1a 64) to one of `B` buckets of its table. Buckets, not
//! keys, are placed on the ring: a bucket's encoding is its table tag
//! followed by the `u32` index, and it is owned by the first node whose ring
//! position is strictly greater than the bucket's position.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, PutBytes, Reader};
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Ring position of an arbitrary identifier: FNV-1a followed by the
/// splitmix64 finalizer. Raw FNV-1a of short identifiers that differ only in
/// their last bytes lands in a narrow arc of the ring.
pub fn ring_position(bytes: &[u8]) -> u64 {
    let mut z = fnv1a64(bytes);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Keyword(pub u32);

/// Message identifier: the recipient's inbox plus a per-inbox sequence
/// number. Sequence 0 is never assigned to a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MsgId {
    pub recipient: UserId,
    pub seq: u64,
}

impl MsgId {
    pub fn new(recipient: UserId, seq: u64) -> Self {
        MsgId { recipient, seq }
    }
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.recipient.0, self.seq)
    }
}

/// Timestamp value meaning "let the storing node assign one".
pub const UNSTAMPED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub id: MsgId,
    pub sender: UserId,
    pub recipient: UserId,
    pub content: Vec<Keyword>,
    pub timestamp: u64,
}

impl Message {
    /// Distinct words of the content.
    pub fn keywords(&self) -> BTreeSet<Keyword> {
        self.content.iter().copied().collect()
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        out.put_u64(self.id.recipient.0);
        out.put_u64(self.id.seq);
        out.put_u64(self.sender.0);
        out.put_u64(self.recipient.0);
        out.put_u64(self.timestamp);
        out.put_u32(self.content.len() as u32);
        for k in &self.content {
            out.put_u32(k.0);
        }
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> std::result::Result<Self, DecodeError> {
        let id = MsgId::new(UserId(r.u64()?), r.u64()?);
        let sender = UserId(r.u64()?);
        let recipient = UserId(r.u64()?);
        let timestamp = r.u64()?;
        let n = r.count(4)?;
        let content = (0..n).map(|_| r.u32().map(Keyword)).collect::<std::result::Result<_, _>>()?;
        if id.recipient != recipient {
            return Err(DecodeError::Invalid("message id recipient differs from recipient"));
        }
        Ok(Message {
            id,
            sender,
            recipient,
            content,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum TableId {
    TermTable = 0,
    InterTable = 1,
    MessageTable = 2,
    SeqNoTable = 3,
}

impl TableId {
    pub const ALL: [TableId; 4] = [
        TableId::TermTable,
        TableId::InterTable,
        TableId::MessageTable,
        TableId::SeqNoTable,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> std::result::Result<Self, DecodeError> {
        match tag {
            0 => Ok(TableId::TermTable),
            1 => Ok(TableId::InterTable),
            2 => Ok(TableId::MessageTable),
            3 => Ok(TableId::SeqNoTable),
            tag => Err(DecodeError::UnknownTag { what: "table", tag }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TableId::TermTable => "TermTable",
            TableId::InterTable => "InterTable",
            TableId::MessageTable => "MessageTable",
            TableId::SeqNoTable => "SeqNoTable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TableKey {
    Term(UserId, Keyword),
    Inter { sender: UserId, receiver: UserId },
    Message(UserId),
    SeqNo(UserId),
}

impl TableKey {
    pub fn inter(sender: UserId, receiver: UserId) -> Self {
        TableKey::Inter { sender, receiver }
    }

    pub fn table(&self) -> TableId {
        match self {
            TableKey::Term(..) => TableId::TermTable,
            TableKey::Inter { .. } => TableId::InterTable,
            TableKey::Message(_) => TableId::MessageTable,
            TableKey::SeqNo(_) => TableId::SeqNoTable,
        }
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        out.put_u8(self.table().tag());
        match *self {
            TableKey::Term(u, k) => {
                out.put_u64(u.0);
                out.put_u32(k.0);
            }
            TableKey::Inter { sender, receiver } => {
                out.put_u64(sender.0);
                out.put_u64(receiver.0);
            }
            TableKey::Message(u) | TableKey::SeqNo(u) => out.put_u64(u.0),
        }
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> std::result::Result<Self, DecodeError> {
        Ok(match TableId::from_tag(r.u8()?)? {
            TableId::TermTable => TableKey::Term(UserId(r.u64()?), Keyword(r.u32()?)),
            TableId::InterTable => TableKey::inter(UserId(r.u64()?), UserId(r.u64()?)),
            TableId::MessageTable => TableKey::Message(UserId(r.u64()?)),
            TableId::SeqNoTable => TableKey::SeqNo(UserId(r.u64()?)),
        })
    }
}

impl fmt::Display for TableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableKey::Term(u, k) => write!(f, "TermTable[({},{})]", u.0, k.0),
            TableKey::Inter { sender, receiver } => write!(f, "InterTable[({},{})]", sender.0, receiver.0),
            TableKey::Message(u) => write!(f, "MessageTable[{}]", u.0),
            TableKey::SeqNo(u) => write!(f, "SeqNoTable[{}]", u.0),
        }
    }
}

/// Canonical byte encoding of a key; injective across all tables.
pub fn canonical_encode(key: &TableKey) -> Vec<u8> {
    let mut out = Vec::with_capacity(17);
    key.encode_into(&mut out);
    out
}

pub fn canonical_decode(bytes: &[u8]) -> std::result::Result<TableKey, DecodeError> {
    let mut r = Reader::new(bytes);
    let key = TableKey::decode_from(&mut r)?;
    r.finish()?;
    Ok(key)
}

/// The unit of synchronization: a hash range of one table's keys. Ordered
/// lexicographically by (table tag, index), which is the global lock order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketId {
    pub table: TableId,
    pub index: u32,
}

impl BucketId {
    pub fn new(table: TableId, index: u32) -> Self {
        BucketId { table, index }
    }

    pub fn encode(&self) -> [u8; 5] {
        let i = self.index.to_be_bytes();
        [self.table.tag(), i[0], i[1], i[2], i[3]]
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> std::result::Result<Self, DecodeError> {
        Ok(BucketId::new(TableId::from_tag(r.u8()?)?, r.u32()?))
    }

    pub fn ring_position(&self) -> u64 {
        ring_position(&self.encode())
    }

    /// Parses the `Table#index` form produced by `Display`.
    pub fn parse(s: &str) -> Option<Self> {
        let (table, index) = s.split_once('#')?;
        let table = TableId::ALL.into_iter().find(|t| t.name() == table)?;
        Some(BucketId::new(table, index.parse().ok()?))
    }
}

impl fmt::Display for BucketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.table.name(), self.index)
    }
}

/// Maps a key to its bucket: FNV-1a 64 of the canonical encoding, modulo the
/// per-table bucket count.
pub fn bucket_of(key: &TableKey, buckets: u32) -> Result<BucketId> {
    if buckets == 0 {
        return Err(Error::Config("bucket count must be at least 1".into()));
    }
    let h = fnv1a64(&canonical_encode(key));
    Ok(BucketId::new(key.table(), (h % u64::from(buckets)) as u32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Identifier string hashed to place the node on the ring.
    pub fn label(&self) -> String {
        format!("node-{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node-{}", self.0)
    }
}

/// Node positions on the hash ring, sorted by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingLayout {
    nodes: Vec<(u64, NodeId)>,
}

impl RingLayout {
    /// Layout of nodes `0..count`, each positioned by hashing its label.
    pub fn with_nodes(count: u32) -> Result<Self> {
        Self::from_positions((0..count).map(|i| {
            let id = NodeId(i);
            (ring_position(id.label().as_bytes()), id)
        }))
    }

    pub fn from_positions(positions: impl IntoIterator<Item = (u64, NodeId)>) -> Result<Self> {
        let mut nodes: Vec<_> = positions.into_iter().collect();
        if nodes.is_empty() {
            return Err(Error::Config("ring layout has no nodes".into()));
        }
        nodes.sort_unstable();
        let mut ids: Vec<_> = nodes.iter().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != nodes.len() {
            return Err(Error::Config("ring layout lists a node twice".into()));
        }
        Ok(RingLayout { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn positions(&self) -> &[(u64, NodeId)] {
        &self.nodes
    }

    /// Owner of a bucket: the node with the smallest position strictly
    /// greater than the bucket's, wrapping to the lowest position.
    pub fn owner_of(&self, bucket: BucketId) -> NodeId {
        let pos = bucket.ring_position();
        let i = self.nodes.partition_point(|&(p, _)| p <= pos);
        self.nodes.get(i).unwrap_or(&self.nodes[0]).1
    }

    /// All buckets of all tables owned by `node`, in canonical order.
    pub fn buckets_of(&self, node: NodeId, buckets: u32) -> Vec<BucketId> {
        TableId::ALL
            .iter()
            .flat_map(|&t| (0..buckets).map(move |i| BucketId::new(t, i)))
            .filter(|&b| self.owner_of(b) == node)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Reference FNV-1a written independently of `fnv1a64`.
    fn fnv_reference(data: &[u8]) -> u64 {
        let mut hash: u64 = 14695981039346656037;
        for byte in data {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(1099511628211);
        }
        hash
    }

    fn arb_key() -> impl Strategy<Value = TableKey> {
        prop_oneof![
            (any::<u64>(), any::<u32>()).prop_map(|(u, k)| TableKey::Term(UserId(u), Keyword(k))),
            (any::<u64>(), any::<u64>()).prop_map(|(s, r)| TableKey::inter(UserId(s), UserId(r))),
            any::<u64>().prop_map(|u| TableKey::Message(UserId(u))),
            any::<u64>().prop_map(|u| TableKey::SeqNo(UserId(u))),
        ]
    }

    #[test]
    fn seqno_zero_encoding() {
        assert_eq!(canonical_encode(&TableKey::SeqNo(UserId(0))), vec![3, 0, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn swapped_term_fields_encode_differently() {
        let a = canonical_encode(&TableKey::Term(UserId(1), Keyword(2)));
        let b = canonical_encode(&TableKey::Term(UserId(2), Keyword(1)));
        assert_ne!(a, b);
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn modulus_one_is_bucket_zero() {
        for key in [TableKey::SeqNo(UserId(9)), TableKey::Term(UserId(3), Keyword(4))] {
            assert_eq!(bucket_of(&key, 1).unwrap().index, 0);
        }
    }

    #[test]
    fn zero_buckets_rejected() {
        assert!(matches!(bucket_of(&TableKey::SeqNo(UserId(1)), 0), Err(Error::Config(_))));
    }

    #[test]
    fn seqno_seven_against_reference_hash() {
        let key = TableKey::SeqNo(UserId(7));
        let expected = fnv_reference(&[3, 0, 0, 0, 0, 0, 0, 0, 7]) % 1024;
        let b = bucket_of(&key, 1024).unwrap();
        assert_eq!(b, BucketId::new(TableId::SeqNoTable, expected as u32));
        assert_eq!(b, bucket_of(&key, 1024).unwrap());
    }

    #[test]
    fn single_node_owns_everything() {
        let layout = RingLayout::with_nodes(1).unwrap();
        for t in TableId::ALL {
            for i in 0..64 {
                assert_eq!(layout.owner_of(BucketId::new(t, i)), NodeId(0));
            }
        }
    }

    #[test]
    fn empty_layout_rejected() {
        assert!(RingLayout::from_positions(Vec::new()).is_err());
        assert!(RingLayout::from_positions(vec![(1, NodeId(0)), (2, NodeId(0))]).is_err());
    }

    #[test]
    fn equal_position_goes_to_next_node() {
        let b = BucketId::new(TableId::InterTable, 5);
        let p = b.ring_position();
        let layout = RingLayout::from_positions(vec![(p, NodeId(0)), (p.wrapping_add(10), NodeId(1))]).unwrap();
        assert_eq!(layout.owner_of(b), NodeId(1));
        // Nothing greater: wrap to the lowest position.
        let layout = RingLayout::from_positions(vec![(p, NodeId(0)), (p - 10, NodeId(1))]).unwrap();
        assert_eq!(layout.owner_of(b), NodeId(1));
    }

    #[test]
    fn two_nodes_match_linear_scan() {
        let layout = RingLayout::with_nodes(2).unwrap();
        let mut sorted: Vec<(u64, u32)> = (0..2u32)
            .map(|i| (ring_position(format!("node-{i}").as_bytes()), i))
            .collect();
        sorted.sort();
        for i in 0..4 {
            let b = BucketId::new(TableId::TermTable, i);
            let pos = b.ring_position();
            let mut owner = sorted[0].1;
            for &(p, id) in &sorted {
                if p > pos {
                    owner = id;
                    break;
                }
            }
            assert_eq!(layout.owner_of(b), NodeId(owner), "bucket {b}");
        }
    }

    /// With uniformly random node positions an arc of the ring has length
    /// Beta(1, N-1), so a given table leaves some node without buckets with
    /// probability close to N(N-1)/(B+N-1). The observed rate must match.
    #[test]
    fn starvation_rate_matches_arc_model() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for n in [2u32, 4, 8] {
            let buckets = 64 * n;
            let trials = 500u32;
            let mut starved = 0u32;
            for _ in 0..trials {
                let layout = RingLayout::from_positions((0..n).map(|i| (rng.random::<u64>(), NodeId(i)))).unwrap();
                for &t in &TableId::ALL {
                    let mut owned = vec![0u32; n as usize];
                    for i in 0..buckets {
                        owned[layout.owner_of(BucketId::new(t, i)).0 as usize] += 1;
                    }
                    starved += owned.contains(&0) as u32;
                }
            }
            let samples = f64::from(trials * 4);
            let expected = f64::from(n * (n - 1)) / f64::from(buckets + n - 1);
            let observed = f64::from(starved) / samples;
            let sigma = (expected * (1.0 - expected) / samples).sqrt();
            assert!((observed - expected).abs() <= 4.0 * sigma + 0.005, "{n} nodes: {observed} vs {expected}");
        }
    }

    #[test]
    fn named_nodes_all_own_buckets() {
        let layout = RingLayout::with_nodes(4).unwrap();
        for n in 0..4 {
            assert!(!layout.buckets_of(NodeId(n), 256).is_empty());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encoding_round_trips(key in arb_key()) {
            let bytes = canonical_encode(&key);
            prop_assert_eq!(bytes[0], key.table().tag());
            prop_assert_eq!(canonical_decode(&bytes).unwrap(), key);
        }

        #[test]
        fn encoding_is_injective(a in arb_key(), b in arb_key()) {
            prop_assert_eq!(a == b, canonical_encode(&a) == canonical_encode(&b));
        }

        #[test]
        fn bucket_stays_in_range(key in arb_key(), buckets in 1u32..5000) {
            let b = bucket_of(&key, buckets).unwrap();
            prop_assert!(b.index < buckets);
            prop_assert_eq!(b.table, key.table());
        }
    }
}
