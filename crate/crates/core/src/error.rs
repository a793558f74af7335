use thiserror::Error;

use crate::codec::DecodeError;
use crate::model::{BucketId, NodeId};
use crate::store::frame::Status;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Decode(#[from] DecodeError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("bucket {bucket} is not owned by {node}")]
    Routing { bucket: BucketId, node: NodeId },
    #[error("request refused: {0}")]
    Refused(String),
    #[error("node replied {status:?}: {message}")]
    Remote { status: Status, message: String },
    #[error("transport error: {0}")]
    Io(#[from] std::io::Error),
    /// Optimistic validation failed; the transaction must be re-executed.
    #[error("transaction conflict")]
    Conflict,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("transaction {txn} gave up after {attempts} attempts")]
    AttemptLimit { txn: u64, attempts: u32 },
    #[error("event stream incomplete: {0}")]
    IncompleteEvents(String),
    #[error("run aborted: {0}")]
    RunAborted(String),
}
