//! Distributed transactional-memory benchmark modelled on a social-network
//! inbox: four sharded tables on a hash ring, nine atomic transactions,
//! eight client tasks and four concurrency-control schemes.

mod codec;

pub mod cc;
pub mod error;
pub mod metrics;
pub mod model;
pub mod store;
pub mod workload;

pub use cc::{AccessPlan, CommitOutcome, Coordinator, RetryPolicy, Scheme, Txn, TxnDescriptor, TxnHandle, TxnResult};
pub use codec::DecodeError;
pub use error::{Error, Result};
pub use model::{bucket_of, BucketId, Keyword, Message, MsgId, NodeId, RingLayout, TableId, TableKey, UserId};
pub use store::{Snapshot, StorageOp, StorageReply, TableEntry};
