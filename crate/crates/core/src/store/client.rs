use crate::error::{Error, Result};
use crate::model::{bucket_of, BucketId, NodeId, RingLayout, TableId, TableKey};
use crate::store::frame::{Frame, OpCode, Status, FLAG_RECORD};
use crate::store::node::OpRecord;
use crate::store::transport::{Connector, Session};
use crate::store::{Snapshot, StorageOp, StorageReply, TxnContext};

/// Typed request/response calls to the node owning each bucket.
pub struct StoreClient {
    session: Box<dyn Session>,
    layout: RingLayout,
    buckets: u32,
    next_request: u64,
}

const ANY_BUCKET: BucketId = BucketId {
    table: TableId::TermTable,
    index: 0,
};

impl StoreClient {
    pub fn new(session: Box<dyn Session>, layout: RingLayout, buckets: u32) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::Config("bucket count must be at least 1".into()));
        }
        Ok(StoreClient {
            session,
            layout,
            buckets,
            next_request: 1,
        })
    }

    pub fn connect(connector: &dyn Connector, buckets: u32) -> Result<Self> {
        let layout = RingLayout::with_nodes(connector.node_count())?;
        Self::new(connector.connect()?, layout, buckets)
    }

    pub fn buckets(&self) -> u32 {
        self.buckets
    }

    pub fn layout(&self) -> &RingLayout {
        &self.layout
    }

    pub fn bucket_of(&self, key: &TableKey) -> BucketId {
        bucket_of(key, self.buckets).expect("bucket count validated at construction")
    }

    pub fn owner(&self, bucket: BucketId) -> NodeId {
        self.layout.owner_of(bucket)
    }

    fn call(&mut self, node: NodeId, mut frame: Frame) -> Result<Frame> {
        frame.request_id = self.next_request;
        self.next_request += 1;
        let reply = self.session.call(node, &frame)?;
        if reply.request_id != frame.request_id {
            return Err(Error::Protocol(format!(
                "reply id {} does not match request {}",
                reply.request_id, frame.request_id
            )));
        }
        match reply.status() {
            Some(Status::Ok) => Ok(reply),
            Some(status) => Err(Error::Remote {
                status,
                message: String::from_utf8_lossy(&reply.body).into_owned(),
            }),
            None => Err(Error::Protocol(format!("unknown reply status {}", reply.code))),
        }
    }

    fn bucket_call(&mut self, bucket: BucketId, op: OpCode, txn: u64, token: u64) -> Result<Frame> {
        let mut f = Frame::request(0, bucket, op);
        f.txn = txn;
        f.token = token;
        self.call(self.owner(bucket), f)
    }

    /// Sends a storage operation to the owner of its key's bucket.
    pub fn storage(&mut self, op: &StorageOp, ctx: TxnContext) -> Result<StorageReply> {
        let bucket = self.bucket_of(op.key());
        let mut f = Frame::request(0, bucket, OpCode::for_kind(op.kind()));
        f.txn = ctx.txn;
        f.attempt = ctx.attempt;
        f.flags = ctx.flags;
        f.token = ctx.token;
        op.encode_body(&mut f.body);
        let reply = self.call(self.owner(bucket), f)?;
        Ok(StorageReply::decode_body(&reply.body, reply.token, ctx.has(FLAG_RECORD))?)
    }

    /// The global lock lives on node 0.
    pub fn global_lock(&mut self, txn: u64) -> Result<()> {
        let mut f = Frame::request(0, ANY_BUCKET, OpCode::GlobalLock);
        f.txn = txn;
        self.call(NodeId(0), f).map(drop)
    }

    pub fn global_unlock(&mut self, txn: u64) -> Result<()> {
        let mut f = Frame::request(0, ANY_BUCKET, OpCode::GlobalUnlock);
        f.txn = txn;
        self.call(NodeId(0), f).map(drop)
    }

    pub fn lock(&mut self, bucket: BucketId, txn: u64) -> Result<()> {
        self.bucket_call(bucket, OpCode::Lock, txn, 0).map(drop)
    }

    pub fn unlock(&mut self, bucket: BucketId, txn: u64) -> Result<()> {
        self.bucket_call(bucket, OpCode::Unlock, txn, 0).map(drop)
    }

    /// Takes the bucket's supremum and increments it; the supremum stays
    /// reserved by `txn` until [`reserve_done`](Self::reserve_done).
    pub fn reserve_version(&mut self, bucket: BucketId, txn: u64) -> Result<u64> {
        self.bucket_call(bucket, OpCode::ReserveVersion, txn, 0).map(|r| r.token)
    }

    pub fn reserve_done(&mut self, bucket: BucketId, txn: u64) -> Result<()> {
        self.bucket_call(bucket, OpCode::ReserveDone, txn, 0).map(drop)
    }

    pub fn release_version(&mut self, bucket: BucketId, txn: u64, version: u64) -> Result<()> {
        self.bucket_call(bucket, OpCode::ReleaseVersion, txn, version).map(drop)
    }

    /// Returns the bucket's current optimistic version.
    pub fn commit_lock(&mut self, bucket: BucketId, txn: u64) -> Result<u64> {
        self.bucket_call(bucket, OpCode::CommitLock, txn, 0).map(|r| r.token)
    }

    pub fn commit_unlock(&mut self, bucket: BucketId, txn: u64, bump: bool) -> Result<u64> {
        self.bucket_call(bucket, OpCode::CommitUnlock, txn, u64::from(bump)).map(|r| r.token)
    }

    pub fn ping(&mut self, node: NodeId) -> Result<()> {
        let reply = self.call(node, Frame::request(0, ANY_BUCKET, OpCode::Ping))?;
        if reply.body != b"PONG" {
            return Err(Error::Protocol("unexpected ping reply".into()));
        }
        Ok(())
    }

    fn nodes(&self) -> Vec<NodeId> {
        let mut ids: Vec<_> = self.layout.positions().iter().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn ping_all(&mut self) -> Result<()> {
        self.nodes().into_iter().try_for_each(|n| self.ping(n))
    }

    pub fn reset_all(&mut self, record: bool) -> Result<()> {
        for n in self.nodes() {
            let mut f = Frame::request(0, ANY_BUCKET, OpCode::Reset);
            f.body = vec![u8::from(record)];
            self.call(n, f)?;
        }
        Ok(())
    }

    /// Merged snapshot of every node.
    pub fn snapshot_all(&mut self) -> Result<Snapshot> {
        let mut snap = Snapshot::new();
        for n in self.nodes() {
            let reply = self.call(n, Frame::request(0, ANY_BUCKET, OpCode::Snapshot))?;
            snap.merge(Snapshot::from_bytes(&reply.body)?);
        }
        Ok(snap)
    }

    pub fn history_all(&mut self) -> Result<Vec<OpRecord>> {
        let mut out = Vec::new();
        for n in self.nodes() {
            let reply = self.call(n, Frame::request(0, ANY_BUCKET, OpCode::History))?;
            out.extend(OpRecord::decode_list(&reply.body)?);
        }
        out.sort_by_key(|r| r.bucket);
        Ok(out)
    }
}
