//! Concurrency control. One transaction interface over four schemes:
//!
//! * `GLock`: a single global lock on node 0, held from begin to commit.
//! * `Fgl`: two-phase locking on buckets. Every declared bucket is locked at
//!   begin in canonical order; a bucket is released right after its last
//!   planned access.
//! * `Occ`: reads record bucket versions, writes are buffered. Commit locks
//!   the read and write sets in canonical order, validates the versions and
//!   applies the buffer, or aborts so the transaction is re-executed.
//! * `PesV`: each declared bucket hands out a private version from its
//!   supremum counter at begin. Accesses wait until every earlier version
//!   has been released; the last planned access releases the bucket.
//!
//! Lock, version and commit state lives on the node owning each bucket; the
//! handle only tracks what this transaction holds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Clock, Event, EventKind, TxnEffects, TxnKind};
use crate::model::{BucketId, Message, MsgId, TableKey};
use crate::store::frame::{FLAG_RECORD, FLAG_RELEASE_AFTER, FLAG_VERSION_WAIT};
use crate::store::{Item, SeqPair, StorageOp, StorageReply, StoreClient, TableEntry, TxnContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    GLock,
    Fgl,
    Occ,
    PesV,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::GLock, Scheme::Fgl, Scheme::Occ, Scheme::PesV];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::GLock => "glock",
            Scheme::Fgl => "fgl",
            Scheme::Occ => "occ",
            Scheme::PesV => "pesv",
        }
    }

    /// Only the optimistic scheme can abort.
    pub fn may_abort(self) -> bool {
        self == Scheme::Occ
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?} (expected glock, fgl, occ or pesv)")))
    }
}

/// Keys a transaction will touch with an upper bound on accesses per key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessPlan {
    ops: BTreeMap<TableKey, u32>,
    writes: bool,
}

impl AccessPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&mut self, key: TableKey) -> &mut Self {
        self.reads(key, 1)
    }

    pub fn reads(&mut self, key: TableKey, n: u32) -> &mut Self {
        *self.ops.entry(key).or_default() += n;
        self
    }

    pub fn write(&mut self, key: TableKey, n: u32) -> &mut Self {
        self.writes |= n > 0;
        self.reads(key, n)
    }

    pub fn ops(&self) -> &BTreeMap<TableKey, u32> {
        &self.ops
    }

    pub fn is_read_only(&self) -> bool {
        !self.writes
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// A transaction's declared access set, in buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnDescriptor {
    pub txn: u64,
    /// Planned op count per bucket; iteration order is the lock order.
    pub access: BTreeMap<BucketId, u32>,
    pub read_only: bool,
}

impl TxnDescriptor {
    pub fn from_plan(txn: u64, plan: &AccessPlan, buckets: u32) -> Result<Self> {
        let mut access = BTreeMap::new();
        for (key, &n) in plan.ops() {
            *access.entry(crate::model::bucket_of(key, buckets)?).or_insert(0) += n;
        }
        let desc = TxnDescriptor {
            txn,
            access,
            read_only: plan.is_read_only(),
        };
        desc.validate()?;
        Ok(desc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.txn == 0 {
            return Err(Error::Precondition("transaction id 0 is reserved".into()));
        }
        if self.access.is_empty() {
            return Err(Error::Precondition(format!("txn {} declares no buckets", self.txn)));
        }
        if let Some((b, _)) = self.access.iter().find(|(_, &n)| n == 0) {
            return Err(Error::Precondition(format!("txn {} plans zero ops on {b}", self.txn)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed,
    /// Validation failed; only produced by the optimistic scheme.
    AbortedRetry,
}

/// Full-jitter exponential backoff between optimistic retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_millis(1),
            cap: Duration::from_millis(64),
            max_attempts: 10_000,
        }
    }
}

impl RetryPolicy {
    /// Sleep before attempt `failed + 1`: uniform in `[0, min(cap, base·2^(failed-1))]`.
    pub fn delay(&self, failed: u32, rng: &mut impl Rng) -> Duration {
        let shift = failed.saturating_sub(1).min(30);
        let ceiling = self.base.saturating_mul(1 << shift).min(self.cap);
        let nanos = ceiling.as_nanos() as u64;
        if nanos == 0 {
            Duration::ZERO
        } else {
            Duration::from_nanos(rng.random_range(0..=nanos))
        }
    }
}

#[derive(Debug, Default)]
struct OccState {
    reads: BTreeMap<BucketId, u64>,
    buffer: Vec<StorageOp>,
    written: BTreeSet<BucketId>,
    locked: Vec<BucketId>,
}

#[derive(Debug)]
enum SchemeState {
    GLock { held: bool },
    Fgl { held: BTreeSet<BucketId> },
    Occ(OccState),
    PesV { versions: BTreeMap<BucketId, u64>, released: BTreeSet<BucketId> },
}

#[derive(Debug, Default)]
struct Effects {
    before: BTreeMap<TableKey, TableEntry>,
    after: BTreeMap<TableKey, TableEntry>,
}

impl Effects {
    fn observe(&mut self, key: TableKey, reply: &StorageReply, write: bool) {
        if let Some(pre) = &reply.pre {
            self.before.entry(key).or_insert_with(|| pre.clone());
        }
        if write {
            if let Some(post) = &reply.post {
                self.after.insert(key, post.clone());
            }
        }
    }
}

/// Live state of one attempt of a transaction.
#[derive(Debug)]
pub struct TxnHandle {
    desc: TxnDescriptor,
    attempt: u32,
    remaining: BTreeMap<BucketId, u32>,
    state: SchemeState,
    live: bool,
    effects: Effects,
    ops: BTreeMap<BucketId, u32>,
}

impl TxnHandle {
    pub fn txn(&self) -> u64 {
        self.desc.txn
    }

    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn descriptor(&self) -> &TxnDescriptor {
        &self.desc
    }

    pub fn is_live(&self) -> bool {
        self.live
    }

    /// Storage ops issued by this attempt, per bucket.
    pub fn ops_per_bucket(&self) -> &BTreeMap<BucketId, u32> {
        &self.ops
    }
}

/// A committed transaction as seen by its client.
#[derive(Debug, Clone, PartialEq)]
pub struct TxnResult<T> {
    pub txn: u64,
    pub label: TxnKind,
    pub attempts: u32,
    pub start_ns: u64,
    pub commit_ns: u64,
    /// Storage ops per bucket over all attempts.
    pub ops_per_bucket: BTreeMap<BucketId, u32>,
    pub value: T,
}

impl<T> TxnResult<T> {
    /// Separates the value from the bookkeeping.
    pub fn split(self) -> (T, TxnResult<()>) {
        let TxnResult { txn, label, attempts, start_ns, commit_ns, ops_per_bucket, value } = self;
        (value, TxnResult { txn, label, attempts, start_ns, commit_ns, ops_per_bucket, value: () })
    }
}

/// One client's transaction manager.
pub struct Coordinator {
    store: StoreClient,
    scheme: Scheme,
    client: u32,
    clock: Clock,
    retry: RetryPolicy,
    rng: ChaCha8Rng,
    record: bool,
    epoch: u64,
    next_txn: u64,
    events: Vec<Event>,
    committed: Vec<TxnEffects>,
}

impl Coordinator {
    /// `seed` drives only the retry backoff.
    pub fn new(store: StoreClient, scheme: Scheme, client: u32, clock: Clock, retry: RetryPolicy, seed: u64) -> Self {
        Coordinator {
            store,
            scheme,
            client,
            clock,
            retry,
            rng: ChaCha8Rng::seed_from_u64(seed),
            record: false,
            epoch: 0,
            next_txn: 1,
            events: Vec::new(),
            committed: Vec::new(),
        }
    }

    /// In recording mode replies carry pre/post entries and every committed
    /// transaction's logical effects are kept.
    pub fn set_record(&mut self, record: bool) {
        self.record = record;
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn client_id(&self) -> u32 {
        self.client
    }

    pub fn store(&mut self) -> &mut StoreClient {
        &mut self.store
    }

    pub fn emit(&mut self, kind: EventKind) {
        let e = Event::new(self.clock.now_ns(), self.client, kind);
        self.events.push(e);
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    pub fn take_effects(&mut self) -> Vec<TxnEffects> {
        std::mem::take(&mut self.committed)
    }

    /// Separates transaction ids of consecutive phases (warmup, measured)
    /// that reuse client indices against the same cluster.
    pub fn set_epoch(&mut self, epoch: u8) {
        self.epoch = u64::from(epoch);
    }

    /// Transaction ids are unique per run: the client index in the high bits,
    /// then the epoch, then a per-client sequence.
    fn allocate_txn(&mut self) -> u64 {
        let id = (u64::from(self.client) + 1) << 40 | self.epoch << 32 | self.next_txn;
        self.next_txn += 1;
        id
    }

    pub fn begin(&mut self, desc: &TxnDescriptor) -> Result<TxnHandle> {
        self.begin_attempt(desc, 1)
    }

    fn begin_attempt(&mut self, desc: &TxnDescriptor, attempt: u32) -> Result<TxnHandle> {
        desc.validate()?;
        let txn = desc.txn;
        let mut handle = TxnHandle {
            desc: desc.clone(),
            attempt,
            remaining: desc.access.clone(),
            state: match self.scheme {
                Scheme::GLock => SchemeState::GLock { held: false },
                Scheme::Fgl => SchemeState::Fgl { held: BTreeSet::new() },
                Scheme::Occ => SchemeState::Occ(OccState::default()),
                Scheme::PesV => SchemeState::PesV {
                    versions: BTreeMap::new(),
                    released: BTreeSet::new(),
                },
            },
            live: true,
            effects: Effects::default(),
            ops: BTreeMap::new(),
        };
        let acquired = match &mut handle.state {
            SchemeState::GLock { held } => self.store.global_lock(txn).map(|()| *held = true),
            SchemeState::Fgl { held } => desc.access.keys().try_for_each(|&b| {
                self.store.lock(b, txn)?;
                held.insert(b);
                Ok(())
            }),
            SchemeState::Occ(_) => Ok(()),
            SchemeState::PesV { versions, .. } => {
                // Reservation locks are taken in canonical order and held
                // until every version is drawn, so versions of any two
                // transactions are ordered the same way on all shared buckets.
                let mut reserving = Vec::new();
                let mut drawn = desc.access.keys().try_for_each(|&b| {
                    let pv = self.store.reserve_version(b, txn)?;
                    reserving.push(b);
                    versions.insert(b, pv);
                    Ok(())
                });
                for b in reserving {
                    let done = self.store.reserve_done(b, txn);
                    if drawn.is_ok() {
                        drawn = done;
                    }
                }
                drawn
            }
        };
        if let Err(e) = acquired {
            self.abandon(&mut handle);
            return Err(e);
        }
        Ok(handle)
    }

    fn send(&mut self, h: &mut TxnHandle, op: &StorageOp, flags: u8, token: u64) -> Result<StorageReply> {
        let bucket = self.store.bucket_of(op.key());
        let mut ctx = TxnContext::new(h.desc.txn, h.attempt).with_flags(flags).with_token(token);
        if self.record {
            ctx = ctx.with_flags(FLAG_RECORD);
        }
        let reply = self.store.storage(op, ctx)?;
        self.emit(EventKind::BucketOp {
            txn: h.desc.txn,
            attempt: h.attempt,
            bucket,
            op: op.kind(),
        });
        *h.ops.entry(bucket).or_default() += 1;
        h.effects.observe(*op.key(), &reply, op.kind().is_write());
        Ok(reply)
    }

    /// Performs one planned access. Reads return the entry (including this
    /// transaction's own writes); increments return the new pair.
    pub fn access(&mut self, h: &mut TxnHandle, op: StorageOp) -> Result<Option<TableEntry>> {
        if !h.live {
            return Err(Error::Precondition(format!("txn {} is no longer live", h.desc.txn)));
        }
        op.validate()?;
        let bucket = self.store.bucket_of(op.key());
        let Some(left) = h.remaining.get_mut(&bucket) else {
            return Err(Error::Precondition(format!("txn {} accessed undeclared {bucket}", h.desc.txn)));
        };
        if *left == 0 {
            return Err(Error::Precondition(format!("txn {} exceeded its planned ops on {bucket}", h.desc.txn)));
        }
        if h.desc.read_only && op.kind().is_write() {
            return Err(Error::Precondition(format!("read-only txn {} issued a write", h.desc.txn)));
        }
        *left -= 1;
        let last = *left == 0;
        match &mut h.state {
            SchemeState::GLock { .. } => Ok(self.send(h, &op, 0, 0)?.value),
            SchemeState::Fgl { .. } => {
                let reply = self.send(h, &op, if last { FLAG_RELEASE_AFTER } else { 0 }, 0)?;
                if let (true, SchemeState::Fgl { held }) = (last, &mut h.state) {
                    held.remove(&bucket);
                }
                Ok(reply.value)
            }
            SchemeState::PesV { versions, .. } => {
                let pv = versions[&bucket];
                let flags = FLAG_VERSION_WAIT | if last { FLAG_RELEASE_AFTER } else { 0 };
                let reply = self.send(h, &op, flags, pv)?;
                if let (true, SchemeState::PesV { released, .. }) = (last, &mut h.state) {
                    released.insert(bucket);
                }
                Ok(reply.value)
            }
            SchemeState::Occ(_) => self.occ_access(h, bucket, op),
        }
    }

    /// Server read overlaid with the buffered writes to the same key. A
    /// second read of a bucket at a different version aborts immediately.
    fn occ_read(&mut self, h: &mut TxnHandle, bucket: BucketId, key: TableKey) -> Result<TableEntry> {
        let reply = self.send(h, &StorageOp::Read(key), 0, 0)?;
        let SchemeState::Occ(s) = &mut h.state else { unreachable!() };
        if *s.reads.entry(bucket).or_insert(reply.version) != reply.version {
            return Err(Error::Conflict);
        }
        let mut view = reply.value.unwrap_or_else(|| TableEntry::default_for(key.table()));
        for op in s.buffer.iter().filter(|op| *op.key() == key) {
            op.apply(&mut view, || crate::model::UNSTAMPED)?;
        }
        Ok(view)
    }

    fn occ_access(&mut self, h: &mut TxnHandle, bucket: BucketId, op: StorageOp) -> Result<Option<TableEntry>> {
        let key = *op.key();
        let value = match op {
            StorageOp::Read(_) => return Ok(Some(self.occ_read(h, bucket, key)?)),
            StorageOp::IncrementSeq(_) => {
                let mut view = self.occ_read(h, bucket, key)?;
                op.apply(&mut view, || crate::model::UNSTAMPED)?
            }
            _ => None,
        };
        let SchemeState::Occ(s) = &mut h.state else { unreachable!() };
        s.buffer.push(op);
        s.written.insert(bucket);
        Ok(value)
    }

    pub fn commit(&mut self, h: &mut TxnHandle) -> Result<CommitOutcome> {
        if !h.live {
            return Err(Error::Precondition(format!("txn {} is no longer live", h.desc.txn)));
        }
        let txn = h.desc.txn;
        let outcome = match &mut h.state {
            SchemeState::GLock { held } => {
                self.store.global_unlock(txn)?;
                *held = false;
                CommitOutcome::Committed
            }
            SchemeState::Fgl { held } => {
                while let Some(b) = held.pop_first() {
                    self.store.unlock(b, txn)?;
                }
                CommitOutcome::Committed
            }
            SchemeState::PesV { versions, released } => {
                for (&b, &pv) in versions.iter() {
                    if released.insert(b) {
                        self.store.release_version(b, txn, pv)?;
                    }
                }
                CommitOutcome::Committed
            }
            SchemeState::Occ(_) => self.occ_commit(h)?,
        };
        h.live = false;
        Ok(outcome)
    }

    fn occ_commit(&mut self, h: &mut TxnHandle) -> Result<CommitOutcome> {
        let txn = h.desc.txn;
        let SchemeState::Occ(s) = &mut h.state else { unreachable!() };
        let buckets: BTreeSet<BucketId> = s.reads.keys().chain(&s.written).copied().collect();
        let mut valid = true;
        for b in buckets {
            let version = self.store.commit_lock(b, txn)?;
            s.locked.push(b);
            if s.reads.get(&b).is_some_and(|&seen| seen != version) {
                valid = false;
                break;
            }
        }
        if !valid {
            while let Some(b) = s.locked.pop() {
                self.store.commit_unlock(b, txn, false)?;
            }
            return Ok(CommitOutcome::AbortedRetry);
        }
        let buffer = std::mem::take(&mut s.buffer);
        for op in &buffer {
            self.send(h, op, 0, 0)?;
        }
        let SchemeState::Occ(s) = &mut h.state else { unreachable!() };
        while let Some(b) = s.locked.pop() {
            self.store.commit_unlock(b, txn, s.written.contains(&b))?;
        }
        Ok(CommitOutcome::Committed)
    }

    /// Releases whatever the handle still holds. Used when an attempt ends
    /// without committing; failures are logged, not returned.
    pub fn abandon(&mut self, h: &mut TxnHandle) {
        let txn = h.desc.txn;
        let result: Result<()> = (|| {
            match &mut h.state {
                SchemeState::GLock { held } => {
                    if std::mem::take(held) {
                        self.store.global_unlock(txn)?;
                    }
                }
                SchemeState::Fgl { held } => {
                    while let Some(b) = held.pop_first() {
                        self.store.unlock(b, txn)?;
                    }
                }
                SchemeState::PesV { versions, released } => {
                    for (&b, &pv) in versions.iter() {
                        if released.insert(b) {
                            self.store.release_version(b, txn, pv)?;
                        }
                    }
                }
                SchemeState::Occ(s) => {
                    while let Some(b) = s.locked.pop() {
                        self.store.commit_unlock(b, txn, false)?;
                    }
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            warn!("cleanup of txn {txn} failed: {e}");
        }
        h.live = false;
    }

    /// Runs `body` as one atomic transaction, re-executing it after
    /// optimistic aborts with randomized backoff.
    pub fn run_atomic<T>(
        &mut self,
        label: TxnKind,
        plan: &AccessPlan,
        mut body: impl FnMut(&mut Txn<'_>) -> Result<T>,
    ) -> Result<TxnResult<T>> {
        let txn = self.allocate_txn();
        let desc = TxnDescriptor::from_plan(txn, plan, self.store.buckets())?;
        let start_ns = self.clock.now_ns();
        self.events.push(Event::new(start_ns, self.client, EventKind::TxnStart { txn, label }));
        let mut ops_per_bucket: BTreeMap<BucketId, u32> = BTreeMap::new();
        let mut attempt = 1;
        loop {
            if attempt > 1 {
                self.emit(EventKind::RetryStart { txn, attempt });
            }
            let mut h = self.begin_attempt(&desc, attempt)?;
            let run = body(&mut Txn {
                coord: self,
                handle: &mut h,
            });
            let outcome = match run {
                Ok(value) => match self.commit(&mut h) {
                    Ok(CommitOutcome::Committed) => Some(value),
                    Ok(CommitOutcome::AbortedRetry) => None,
                    Err(e) => {
                        self.abandon(&mut h);
                        return Err(e);
                    }
                },
                Err(Error::Conflict) => {
                    self.abandon(&mut h);
                    None
                }
                Err(e) => {
                    self.abandon(&mut h);
                    return Err(e);
                }
            };
            for (b, n) in &h.ops {
                *ops_per_bucket.entry(*b).or_default() += n;
            }
            if let Some(value) = outcome {
                let commit_ns = self.clock.now_ns();
                self.events.push(Event::new(commit_ns, self.client, EventKind::Commit { txn, attempt }));
                if self.record {
                    let effects = std::mem::take(&mut h.effects);
                    self.committed.push(TxnEffects {
                        txn,
                        attempt,
                        client: self.client,
                        label,
                        commit_ns,
                        before: effects.before.into_iter().collect(),
                        after: effects.after.into_iter().collect(),
                    });
                }
                return Ok(TxnResult {
                    txn,
                    label,
                    attempts: attempt,
                    start_ns,
                    commit_ns,
                    ops_per_bucket,
                    value,
                });
            }
            if attempt >= self.retry.max_attempts {
                return Err(Error::AttemptLimit { txn, attempts: attempt });
            }
            let pause = self.retry.delay(attempt, &mut self.rng);
            if !pause.is_zero() {
                thread::sleep(pause);
            }
            attempt += 1;
        }
    }

    /// Reads a key outside any transaction.
    pub fn peek(&mut self, key: TableKey) -> Result<TableEntry> {
        let bucket = self.store.bucket_of(&key);
        let reply = self.store.storage(&StorageOp::Read(key), TxnContext::new(0, 0))?;
        self.emit(EventKind::BucketOp {
            txn: 0,
            attempt: 0,
            bucket,
            op: crate::store::OpKind::Read,
        });
        Ok(reply.value.unwrap_or_else(|| TableEntry::default_for(key.table())))
    }
}

/// Typed access to a running transaction.
pub struct Txn<'a> {
    coord: &'a mut Coordinator,
    handle: &'a mut TxnHandle,
}

impl Txn<'_> {
    pub fn id(&self) -> u64 {
        self.handle.txn()
    }

    pub fn attempt(&self) -> u32 {
        self.handle.attempt()
    }

    pub fn access(&mut self, op: StorageOp) -> Result<Option<TableEntry>> {
        self.coord.access(self.handle, op)
    }

    pub fn read(&mut self, key: TableKey) -> Result<TableEntry> {
        let v = self.access(StorageOp::Read(key))?;
        Ok(v.unwrap_or_else(|| TableEntry::default_for(key.table())))
    }

    pub fn read_ids(&mut self, key: TableKey) -> Result<Vec<MsgId>> {
        Ok(self.read(key)?.as_ids()?.to_vec())
    }

    pub fn read_messages(&mut self, key: TableKey) -> Result<Vec<Message>> {
        Ok(self.read(key)?.as_messages()?.to_vec())
    }

    pub fn read_seq(&mut self, key: TableKey) -> Result<SeqPair> {
        self.read(key)?.as_seq()
    }

    pub fn append_id(&mut self, key: TableKey, id: MsgId) -> Result<()> {
        self.access(StorageOp::Append(key, Item::Id(id))).map(drop)
    }

    pub fn append_message(&mut self, message: Message) -> Result<()> {
        let key = TableKey::Message(message.recipient);
        self.access(StorageOp::Append(key, Item::Message(message))).map(drop)
    }

    pub fn remove(&mut self, key: TableKey, id: MsgId) -> Result<()> {
        self.access(StorageOp::Remove(key, id)).map(drop)
    }

    pub fn write_seq(&mut self, key: TableKey, pair: SeqPair) -> Result<()> {
        self.access(StorageOp::WriteSeq(key, pair)).map(drop)
    }

    pub fn increment_seq(&mut self, key: TableKey) -> Result<SeqPair> {
        match self.access(StorageOp::IncrementSeq(key))? {
            Some(e) => e.as_seq(),
            None => Err(Error::Protocol("increment returned no value".into())),
        }
    }
}
