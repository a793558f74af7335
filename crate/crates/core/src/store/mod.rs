//! Per-node storage: table entries, the primitive storage operations, the
//! wire frame codec, the node request handler and its transports.

pub mod client;
pub mod frame;
pub mod node;
pub mod transport;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, PutBytes, Reader};
use crate::error::{Error, Result};
use crate::model::{fnv1a64, BucketId, Message, MsgId, TableId, TableKey, UserId, UNSTAMPED};

pub use client::StoreClient;
pub use node::{Node, NodeConfig, OpRecord};
pub use transport::{Connector, LocalTcpCluster, LoopbackCluster, NodeServer, Session, TcpConnector};

/// Concurrency-control fields riding along with a storage request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxnContext {
    /// 0 for requests issued outside any transaction.
    pub txn: u64,
    pub attempt: u32,
    pub flags: u8,
    pub token: u64,
}

impl TxnContext {
    pub fn new(txn: u64, attempt: u32) -> Self {
        TxnContext {
            txn,
            attempt,
            flags: 0,
            token: 0,
        }
    }

    pub fn with_flags(mut self, flags: u8) -> Self {
        self.flags |= flags;
        self
    }

    pub fn with_token(mut self, token: u64) -> Self {
        self.token = token;
        self
    }

    pub fn has(&self, flag: u8) -> bool {
        self.flags & flag != 0
    }
}

/// Result of one storage operation as seen by the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageReply {
    pub value: Option<TableEntry>,
    /// Optimistic version of the bucket when the op was applied.
    pub version: u64,
    /// Entry before and after the op, present for recorded requests.
    pub pre: Option<TableEntry>,
    pub post: Option<TableEntry>,
}

impl StorageReply {
    pub(crate) fn encode_body(&self, out: &mut Vec<u8>) {
        match &self.value {
            Some(e) => {
                out.put_u8(1);
                e.encode_into(out);
            }
            None => out.put_u8(0),
        }
        if let (Some(pre), Some(post)) = (&self.pre, &self.post) {
            pre.encode_into(out);
            post.encode_into(out);
        }
    }

    pub(crate) fn decode_body(body: &[u8], version: u64, recorded: bool) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(body);
        let value = match r.u8()? {
            0 => None,
            1 => Some(TableEntry::decode_from(&mut r)?),
            tag => return Err(DecodeError::UnknownTag { what: "reply value", tag }),
        };
        let (pre, post) = if recorded {
            (Some(TableEntry::decode_from(&mut r)?), Some(TableEntry::decode_from(&mut r)?))
        } else {
            (None, None)
        };
        r.finish()?;
        Ok(StorageReply {
            value,
            version,
            pre,
            post,
        })
    }
}

/// Sequence numbers of an inbox: the newest message and the deletion cutoff.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeqPair {
    pub current: u64,
    pub deleted: u64,
}

impl SeqPair {
    pub fn new(current: u64, deleted: u64) -> Self {
        SeqPair { current, deleted }
    }
}

/// Value stored under one key. Absent keys read as the table's default.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TableEntry {
    MsgIdList(Vec<MsgId>),
    MessageList(Vec<Message>),
    SeqPair(SeqPair),
}

impl TableEntry {
    pub fn default_for(table: TableId) -> Self {
        match table {
            TableId::TermTable | TableId::InterTable => TableEntry::MsgIdList(Vec::new()),
            TableId::MessageTable => TableEntry::MessageList(Vec::new()),
            TableId::SeqNoTable => TableEntry::SeqPair(SeqPair::default()),
        }
    }

    pub fn is_default(&self) -> bool {
        match self {
            TableEntry::MsgIdList(v) => v.is_empty(),
            TableEntry::MessageList(v) => v.is_empty(),
            TableEntry::SeqPair(p) => *p == SeqPair::default(),
        }
    }

    pub fn as_ids(&self) -> Result<&[MsgId]> {
        match self {
            TableEntry::MsgIdList(v) => Ok(v),
            other => Err(Error::Protocol(format!("expected id list, got {other:?}"))),
        }
    }

    pub fn as_messages(&self) -> Result<&[Message]> {
        match self {
            TableEntry::MessageList(v) => Ok(v),
            other => Err(Error::Protocol(format!("expected message list, got {other:?}"))),
        }
    }

    pub fn as_seq(&self) -> Result<SeqPair> {
        match self {
            TableEntry::SeqPair(p) => Ok(*p),
            other => Err(Error::Protocol(format!("expected sequence pair, got {other:?}"))),
        }
    }

    fn matches(&self, table: TableId) -> bool {
        matches!(
            (self, table),
            (TableEntry::MsgIdList(_), TableId::TermTable | TableId::InterTable)
                | (TableEntry::MessageList(_), TableId::MessageTable)
                | (TableEntry::SeqPair(_), TableId::SeqNoTable)
        )
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            TableEntry::MsgIdList(ids) => {
                out.put_u8(0);
                out.put_u32(ids.len() as u32);
                for id in ids {
                    out.put_u64(id.recipient.0);
                    out.put_u64(id.seq);
                }
            }
            TableEntry::MessageList(msgs) => {
                out.put_u8(1);
                out.put_u32(msgs.len() as u32);
                for m in msgs {
                    m.encode_into(out);
                }
            }
            TableEntry::SeqPair(p) => {
                out.put_u8(2);
                out.put_u64(p.current);
                out.put_u64(p.deleted);
            }
        }
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> std::result::Result<Self, DecodeError> {
        match r.u8()? {
            0 => {
                let n = r.count(16)?;
                let ids = (0..n)
                    .map(|_| Ok(MsgId::new(UserId(r.u64()?), r.u64()?)))
                    .collect::<std::result::Result<_, DecodeError>>()?;
                Ok(TableEntry::MsgIdList(ids))
            }
            1 => {
                let n = r.count(44)?;
                let msgs = (0..n)
                    .map(|_| Message::decode_from(r))
                    .collect::<std::result::Result<_, _>>()?;
                Ok(TableEntry::MessageList(msgs))
            }
            2 => Ok(TableEntry::SeqPair(SeqPair::new(r.u64()?, r.u64()?))),
            tag => Err(DecodeError::UnknownTag { what: "entry", tag }),
        }
    }

    pub fn digest(&self) -> u64 {
        let mut buf = Vec::new();
        self.encode_into(&mut buf);
        fnv1a64(&buf)
    }
}

/// Payload appended to or removed from a list entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Item {
    Id(MsgId),
    Message(Message),
}

/// The primitive operations every transaction reduces to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StorageOp {
    Read(TableKey),
    Append(TableKey, Item),
    /// Removes every occurrence; message lists are matched by message id.
    Remove(TableKey, MsgId),
    WriteSeq(TableKey, SeqPair),
    IncrementSeq(TableKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Append,
    Remove,
    WriteSeq,
    IncrementSeq,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Append => "append",
            OpKind::Remove => "remove",
            OpKind::WriteSeq => "write_seq",
            OpKind::IncrementSeq => "increment_seq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "read" => OpKind::Read,
            "append" => OpKind::Append,
            "remove" => OpKind::Remove,
            "write_seq" => OpKind::WriteSeq,
            "increment_seq" => OpKind::IncrementSeq,
            _ => return None,
        })
    }

    pub fn is_write(self) -> bool {
        self != OpKind::Read
    }
}

impl StorageOp {
    pub fn key(&self) -> &TableKey {
        match self {
            StorageOp::Read(k)
            | StorageOp::Append(k, _)
            | StorageOp::Remove(k, _)
            | StorageOp::WriteSeq(k, _)
            | StorageOp::IncrementSeq(k) => k,
        }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            StorageOp::Read(_) => OpKind::Read,
            StorageOp::Append(..) => OpKind::Append,
            StorageOp::Remove(..) => OpKind::Remove,
            StorageOp::WriteSeq(..) => OpKind::WriteSeq,
            StorageOp::IncrementSeq(_) => OpKind::IncrementSeq,
        }
    }

    /// Checks that the operation and its item fit the key's table.
    pub fn validate(&self) -> Result<()> {
        let table = self.key().table();
        let ok = match self {
            StorageOp::Read(_) => true,
            StorageOp::Append(_, Item::Id(_)) => matches!(table, TableId::TermTable | TableId::InterTable),
            StorageOp::Append(key, Item::Message(m)) => *key == TableKey::Message(m.recipient),
            StorageOp::Remove(..) => table != TableId::SeqNoTable,
            StorageOp::WriteSeq(_, p) => table == TableId::SeqNoTable && p.deleted <= p.current,
            StorageOp::IncrementSeq(_) => table == TableId::SeqNoTable,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{:?} does not apply to {}", self.kind(), self.key())))
        }
    }

    /// Applies the operation to `entry`. Returns the reply value: the entry
    /// for reads, the new pair for increments, nothing for other writes.
    /// Unstamped messages receive a timestamp from `stamp`.
    pub fn apply(&self, entry: &mut TableEntry, stamp: impl FnOnce() -> u64) -> Result<Option<TableEntry>> {
        self.validate()?;
        if !entry.matches(self.key().table()) {
            return Err(Error::Protocol(format!("entry type mismatch for {}", self.key())));
        }
        match (self, entry) {
            (StorageOp::Read(_), e) => return Ok(Some(e.clone())),
            (StorageOp::Append(_, Item::Id(id)), TableEntry::MsgIdList(ids)) => ids.push(*id),
            (StorageOp::Append(_, Item::Message(m)), TableEntry::MessageList(msgs)) => {
                let mut m = m.clone();
                if m.timestamp == UNSTAMPED {
                    m.timestamp = stamp();
                }
                msgs.push(m);
            }
            (StorageOp::Remove(_, id), TableEntry::MsgIdList(ids)) => ids.retain(|x| x != id),
            (StorageOp::Remove(_, id), TableEntry::MessageList(msgs)) => msgs.retain(|m| m.id != *id),
            (StorageOp::WriteSeq(_, p), TableEntry::SeqPair(cur)) => *cur = *p,
            (StorageOp::IncrementSeq(_), TableEntry::SeqPair(cur)) => {
                cur.current += 1;
                return Ok(Some(TableEntry::SeqPair(*cur)));
            }
            (op, _) => return Err(Error::Protocol(format!("{:?} does not apply to {}", op.kind(), op.key()))),
        }
        Ok(None)
    }

    pub(crate) fn encode_body(&self, out: &mut Vec<u8>) {
        self.key().encode_into(out);
        match self {
            StorageOp::Read(_) | StorageOp::IncrementSeq(_) => {}
            StorageOp::Append(_, Item::Id(id)) => {
                out.put_u8(0);
                put_id(out, id);
            }
            StorageOp::Append(_, Item::Message(m)) => {
                out.put_u8(1);
                m.encode_into(out);
            }
            StorageOp::Remove(_, id) => put_id(out, id),
            StorageOp::WriteSeq(_, p) => {
                out.put_u64(p.current);
                out.put_u64(p.deleted);
            }
        }
    }

    pub(crate) fn decode_body(kind: OpKind, body: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(body);
        let key = TableKey::decode_from(&mut r)?;
        let op = match kind {
            OpKind::Read => StorageOp::Read(key),
            OpKind::IncrementSeq => StorageOp::IncrementSeq(key),
            OpKind::Append => match r.u8()? {
                0 => StorageOp::Append(key, Item::Id(MsgId::new(UserId(r.u64()?), r.u64()?))),
                1 => StorageOp::Append(key, Item::Message(Message::decode_from(&mut r)?)),
                tag => return Err(DecodeError::UnknownTag { what: "item", tag }),
            },
            OpKind::Remove => StorageOp::Remove(key, MsgId::new(UserId(r.u64()?), r.u64()?)),
            OpKind::WriteSeq => StorageOp::WriteSeq(key, SeqPair::new(r.u64()?, r.u64()?)),
        };
        r.finish()?;
        Ok(op)
    }
}

fn put_id(out: &mut Vec<u8>, id: &MsgId) {
    out.put_u64(id.recipient.0);
    out.put_u64(id.seq);
}

/// Deterministic dump of table state, ordered by canonical key encoding.
/// Default-valued entries are never stored, so equal states dump equally.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Snapshot {
    entries: BTreeMap<TableKey, (BucketId, TableEntry)>,
}

impl Snapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, bucket: BucketId, key: TableKey, entry: TableEntry) {
        if entry.is_default() {
            self.entries.remove(&key);
        } else {
            self.entries.insert(key, (bucket, entry));
        }
    }

    pub fn get(&self, key: &TableKey) -> Option<&TableEntry> {
        self.entries.get(key).map(|(_, e)| e)
    }

    /// Value of `key`, or the table default when absent.
    pub fn read(&self, key: &TableKey) -> TableEntry {
        self.get(key).cloned().unwrap_or_else(|| TableEntry::default_for(key.table()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BucketId, &TableKey, &TableEntry)> {
        self.entries.iter().map(|(k, (b, e))| (*b, k, e))
    }

    pub fn merge(&mut self, other: Snapshot) {
        self.entries.extend(other.entries);
    }

    /// Layout: `u32` record count, then per record the 5-byte bucket, the
    /// canonical key and the tagged entry.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u32(self.entries.len() as u32);
        for (key, (bucket, entry)) in &self.entries {
            out.extend_from_slice(&bucket.encode());
            key.encode_into(&mut out);
            entry.encode_into(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let n = r.count(5 + 9 + 17)?;
        let mut snap = Snapshot::new();
        for _ in 0..n {
            let bucket = BucketId::decode_from(&mut r)?;
            let key = TableKey::decode_from(&mut r)?;
            let entry = TableEntry::decode_from(&mut r)?;
            if bucket.table != key.table() || !entry.matches(key.table()) {
                return Err(DecodeError::Invalid("snapshot record does not match its table"));
            }
            snap.entries.insert(key, (bucket, entry));
        }
        r.finish()?;
        Ok(snap)
    }

    pub fn digest(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}
