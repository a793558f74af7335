//! Storage node: owns a subset of buckets, applies storage operations with
//! the configured delay, and hosts the per-bucket concurrency-control
//! registries (locks, version counters, commit locks) plus the global lock.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use parking_lot::{Condvar, Mutex, MutexGuard};
use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, PutBytes, Reader};
use crate::error::{Error, Result};
use crate::model::{bucket_of, BucketId, NodeId, RingLayout, TableKey};
use crate::store::frame::{self, Frame, OpCode, Status, FLAG_RECORD, FLAG_RELEASE_AFTER, FLAG_VERSION_WAIT, MAX_FRAME};
use crate::store::{OpKind, Snapshot, StorageOp, StorageReply, TableEntry, TxnContext};

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub id: NodeId,
    /// Total number of nodes in the ring.
    pub nodes: u32,
    /// Buckets per table.
    pub buckets: u32,
    pub delay: Duration,
}

/// One storage operation as applied by a node, in bucket order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub bucket: BucketId,
    pub txn: u64,
    pub attempt: u32,
    pub kind: OpKind,
    pub key: TableKey,
    /// Digest of the entry after the op.
    pub digest: u64,
}

impl OpRecord {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.bucket.encode());
        out.put_u64(self.txn);
        out.put_u32(self.attempt);
        out.put_u8(OpCode::for_kind(self.kind) as u8);
        self.key.encode_into(out);
        out.put_u64(self.digest);
    }

    fn decode_from(r: &mut Reader<'_>) -> std::result::Result<Self, DecodeError> {
        let bucket = BucketId::decode_from(r)?;
        let txn = r.u64()?;
        let attempt = r.u32()?;
        let code = r.u8()?;
        let kind = OpCode::from_u8(code)
            .and_then(OpCode::storage_kind)
            .ok_or(DecodeError::UnknownTag { what: "op kind", tag: code })?;
        let key = TableKey::decode_from(r)?;
        let digest = r.u64()?;
        Ok(OpRecord {
            bucket,
            txn,
            attempt,
            kind,
            key,
            digest,
        })
    }

    pub fn encode_list(records: &[OpRecord]) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u32(records.len() as u32);
        for r in records {
            r.encode_into(&mut out);
        }
        out
    }

    pub fn decode_list(bytes: &[u8]) -> std::result::Result<Vec<OpRecord>, DecodeError> {
        let mut r = Reader::new(bytes);
        let n = r.count(35)?;
        let out = (0..n).map(|_| OpRecord::decode_from(&mut r)).collect::<std::result::Result<_, _>>()?;
        r.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Default)]
struct BucketData {
    entries: BTreeMap<TableKey, TableEntry>,
    lock_owner: Option<u64>,
    commit_owner: Option<u64>,
    version: u64,
    supremum: u64,
    reserve_owner: Option<u64>,
    released: u64,
    history: Vec<OpRecord>,
}

impl BucketData {
    fn holds(&self) -> Option<&'static str> {
        if self.lock_owner.is_some() {
            Some("bucket lock held")
        } else if self.commit_owner.is_some() {
            Some("commit lock held")
        } else if self.reserve_owner.is_some() || self.released != self.supremum {
            Some("private versions outstanding")
        } else {
            None
        }
    }
}

#[derive(Debug, Default)]
struct BucketSlot {
    data: Mutex<BucketData>,
    cond: Condvar,
}

impl BucketSlot {
    fn wait_until<'a>(&'a self, mut guard: MutexGuard<'a, BucketData>, ready: impl Fn(&BucketData) -> bool) -> MutexGuard<'a, BucketData> {
        while !ready(&guard) {
            self.cond.wait(&mut guard);
        }
        guard
    }
}

pub struct Node {
    config: NodeConfig,
    slots: HashMap<BucketId, BucketSlot>,
    global: Mutex<Option<u64>>,
    global_cond: Condvar,
    clock: AtomicU64,
    in_flight: AtomicUsize,
    recording: AtomicBool,
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Node {
    pub fn new(config: NodeConfig) -> Result<Self> {
        if config.buckets == 0 {
            return Err(Error::Config("bucket count must be at least 1".into()));
        }
        if config.id.0 >= config.nodes {
            return Err(Error::Config(format!("{} is outside a ring of {} nodes", config.id, config.nodes)));
        }
        let layout = RingLayout::with_nodes(config.nodes)?;
        let slots = layout
            .buckets_of(config.id, config.buckets)
            .into_iter()
            .map(|b| (b, BucketSlot::default()))
            .collect();
        Ok(Node {
            config,
            slots,
            global: Mutex::new(None),
            global_cond: Condvar::new(),
            clock: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            recording: AtomicBool::new(false),
        })
    }

    pub fn id(&self) -> NodeId {
        self.config.id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn owned_buckets(&self) -> usize {
        self.slots.len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    fn slot(&self, bucket: BucketId) -> Result<&BucketSlot> {
        self.slots.get(&bucket).ok_or(Error::Routing {
            bucket,
            node: self.config.id,
        })
    }

    /// Applies one storage operation: waits until the scheme admits it,
    /// applies it atomically with respect to every other operation on the
    /// bucket, then sleeps for the configured delay before replying.
    pub fn storage_apply(&self, bucket: BucketId, op: &StorageOp, ctx: TxnContext) -> Result<StorageReply> {
        let slot = self.slot(bucket)?;
        op.validate()?;
        if bucket_of(op.key(), self.config.buckets)? != bucket {
            return Err(Error::Protocol(format!("{} does not hash to {bucket}", op.key())));
        }
        let version_wait = ctx.has(FLAG_VERSION_WAIT);
        if version_wait {
            let d = slot.data.lock();
            if ctx.token <= d.released || ctx.token > d.supremum {
                return Err(Error::Protocol(format!(
                    "private version {} not outstanding on {bucket} (released {}, supremum {})",
                    ctx.token, d.released, d.supremum
                )));
            }
        }
        let admissible = |d: &BucketData| {
            d.commit_owner.is_none_or(|o| o == ctx.txn) && (!version_wait || d.released + 1 == ctx.token)
        };
        let mut d = slot.wait_until(slot.data.lock(), admissible);

        let key = *op.key();
        let mut entry = d.entries.remove(&key).unwrap_or_else(|| TableEntry::default_for(key.table()));
        let record = ctx.has(FLAG_RECORD);
        let pre = record.then(|| entry.clone());
        let applied = op.apply(&mut entry, || self.clock.fetch_add(1, Ordering::SeqCst) + 1);
        let post = record.then(|| entry.clone());
        if self.recording.load(Ordering::Relaxed) && applied.is_ok() {
            d.history.push(OpRecord {
                bucket,
                txn: ctx.txn,
                attempt: ctx.attempt,
                kind: op.kind(),
                key,
                digest: entry.digest(),
            });
        }
        if !entry.is_default() {
            d.entries.insert(key, entry);
        }
        let value = applied?;

        if ctx.has(FLAG_RELEASE_AFTER) {
            if version_wait {
                d.released = ctx.token;
            } else if d.lock_owner == Some(ctx.txn) {
                d.lock_owner = None;
            }
            slot.cond.notify_all();
        }
        let version = d.version;
        drop(d);
        // The op takes effect on arrival; the delay models the reply's way
        // back and is spent without holding the bucket.
        if !self.config.delay.is_zero() {
            thread::sleep(self.config.delay);
        }
        Ok(StorageReply {
            value,
            version,
            pre,
            post,
        })
    }

    /// Deterministic dump of every stored entry. Refused unless quiescent.
    pub fn snapshot(&self) -> Result<Snapshot> {
        self.snapshot_with(0)
    }

    fn snapshot_with(&self, own_requests: usize) -> Result<Snapshot> {
        if let Some(why) = self.busy(own_requests) {
            return Err(Error::Refused(format!("{} not quiescent: {why}", self.config.id)));
        }
        let mut snap = Snapshot::new();
        for (&bucket, slot) in &self.slots {
            let d = slot.data.lock();
            for (key, entry) in &d.entries {
                snap.insert(bucket, *key, entry.clone());
            }
        }
        Ok(snap)
    }

    /// Clears all state; `record` turns the per-bucket op history on or off.
    pub fn reset(&self, record: bool) -> Result<()> {
        self.reset_with(0, record)
    }

    fn reset_with(&self, own_requests: usize, record: bool) -> Result<()> {
        if let Some(why) = self.busy(own_requests) {
            return Err(Error::Refused(format!("{} not quiescent: {why}", self.config.id)));
        }
        for slot in self.slots.values() {
            *slot.data.lock() = BucketData::default();
        }
        self.clock.store(0, Ordering::SeqCst);
        self.recording.store(record, Ordering::SeqCst);
        Ok(())
    }

    /// Recorded operations of every owned bucket, in bucket order then
    /// application order.
    pub fn history(&self) -> Vec<OpRecord> {
        let mut buckets: Vec<_> = self.slots.keys().copied().collect();
        buckets.sort_unstable();
        buckets
            .into_iter()
            .flat_map(|b| self.slots[&b].data.lock().history.clone())
            .collect()
    }

    fn busy(&self, own_requests: usize) -> Option<String> {
        let others = self.in_flight().saturating_sub(own_requests);
        if others > 0 {
            return Some(format!("{others} requests in flight"));
        }
        if self.global.lock().is_some() {
            return Some("global lock held".into());
        }
        self.slots
            .iter()
            .find_map(|(b, slot)| slot.data.lock().holds().map(|why| format!("{why} on {b}")))
    }

    /// Decodes a length-prefixed request, serves it and encodes the reply.
    /// Malformed input yields an error reply, never a panic.
    pub fn serve_bytes(&self, bytes: &[u8]) -> Vec<u8> {
        let reply = if bytes.len() >= 4 && u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize > MAX_FRAME {
            Frame::error(frame::salvage_request_id(bytes), Status::Oversized, "frame exceeds 16 MiB")
        } else {
            match Frame::decode(bytes) {
                Ok(req) => self.serve(req),
                Err(e) => Frame::error(frame::salvage_request_id(bytes), Status::Malformed, e.to_string()),
            }
        };
        reply.encode()
    }

    pub fn serve(&self, req: Frame) -> Frame {
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        let _guard = InFlight(&self.in_flight);
        let Some(op) = req.op() else {
            return Frame::error(req.request_id, Status::UnknownOp, format!("unknown op code {:#04x}", req.code));
        };
        match self.dispatch(&req, op) {
            Ok(reply) => reply,
            Err(e) => {
                let status = match &e {
                    Error::Decode(_) => Status::Malformed,
                    Error::Routing { .. } => Status::Routing,
                    Error::Refused(_) => Status::Refused,
                    _ => Status::Protocol,
                };
                let mut reply = req.reply_to(status);
                reply.body = e.to_string().into_bytes();
                reply
            }
        }
    }

    fn dispatch(&self, req: &Frame, op: OpCode) -> Result<Frame> {
        let ctx = TxnContext {
            txn: req.txn,
            attempt: req.attempt,
            flags: req.flags,
            token: req.token,
        };
        let mut reply = req.reply_to(Status::Ok);
        if let Some(kind) = op.storage_kind() {
            let sop = StorageOp::decode_body(kind, &req.body)?;
            let out = self.storage_apply(req.bucket, &sop, ctx)?;
            reply.token = out.version;
            out.encode_body(&mut reply.body);
            return Ok(reply);
        }
        match op {
            OpCode::Ping => reply.body = b"PONG".to_vec(),
            OpCode::Snapshot => reply.body = self.snapshot_with(1)?.to_bytes(),
            OpCode::Reset => self.reset_with(1, req.body.first().is_some_and(|&b| b != 0))?,
            OpCode::History => reply.body = OpRecord::encode_list(&self.history()),
            OpCode::GlobalLock => {
                let mut g = self.global.lock();
                while g.is_some_and(|o| o != req.txn) {
                    self.global_cond.wait(&mut g);
                }
                *g = Some(req.txn);
            }
            OpCode::GlobalUnlock => {
                let mut g = self.global.lock();
                if *g != Some(req.txn) {
                    return Err(Error::Protocol(format!("txn {} does not hold the global lock", req.txn)));
                }
                *g = None;
                self.global_cond.notify_all();
            }
            OpCode::Lock => {
                let slot = self.slot(req.bucket)?;
                let mut d = slot.wait_until(slot.data.lock(), |d| d.lock_owner.is_none_or(|o| o == req.txn));
                d.lock_owner = Some(req.txn);
            }
            OpCode::Unlock => {
                let slot = self.slot(req.bucket)?;
                let mut d = slot.data.lock();
                if d.lock_owner != Some(req.txn) {
                    return Err(Error::Protocol(format!("txn {} does not hold {}", req.txn, req.bucket)));
                }
                d.lock_owner = None;
                slot.cond.notify_all();
            }
            OpCode::ReserveVersion => {
                let slot = self.slot(req.bucket)?;
                let mut d = slot.wait_until(slot.data.lock(), |d| d.reserve_owner.is_none_or(|o| o == req.txn));
                d.reserve_owner = Some(req.txn);
                d.supremum += 1;
                reply.token = d.supremum;
            }
            OpCode::ReserveDone => {
                let slot = self.slot(req.bucket)?;
                let mut d = slot.data.lock();
                if d.reserve_owner != Some(req.txn) {
                    return Err(Error::Protocol(format!("txn {} is not reserving {}", req.txn, req.bucket)));
                }
                d.reserve_owner = None;
                slot.cond.notify_all();
            }
            OpCode::ReleaseVersion => {
                let slot = self.slot(req.bucket)?;
                let pv = req.token;
                {
                    let d = slot.data.lock();
                    if pv <= d.released || pv > d.supremum {
                        return Err(Error::Protocol(format!("private version {pv} not outstanding on {}", req.bucket)));
                    }
                }
                let mut d = slot.wait_until(slot.data.lock(), |d| d.released + 1 == pv);
                d.released = pv;
                slot.cond.notify_all();
            }
            OpCode::CommitLock => {
                let slot = self.slot(req.bucket)?;
                let mut d = slot.wait_until(slot.data.lock(), |d| d.commit_owner.is_none_or(|o| o == req.txn));
                d.commit_owner = Some(req.txn);
                reply.token = d.version;
            }
            OpCode::CommitUnlock => {
                let slot = self.slot(req.bucket)?;
                let mut d = slot.data.lock();
                if d.commit_owner != Some(req.txn) {
                    return Err(Error::Protocol(format!("txn {} does not hold commit lock on {}", req.txn, req.bucket)));
                }
                if req.token == 1 {
                    d.version += 1;
                }
                d.commit_owner = None;
                reply.token = d.version;
                slot.cond.notify_all();
            }
            _ => unreachable!("storage ops handled above"),
        }
        Ok(reply)
    }
}
