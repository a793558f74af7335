//! Raw timestamped events and their tab-separated log format.
//!
//! One event per line, fields in the order
//! `time-ns  kind  txn-id  client-id  attempt  bucket  op`; fields that do
//! not apply to a kind are written as `-`. `TXN_START` carries the
//! transaction label in the op column.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BucketId;
use crate::store::OpKind;

/// The nine atomic transactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxnKind {
    GetAssociation,
    GetByKeyword,
    GetConversation,
    GetMessages,
    IndexMessages,
    ResetCutoff,
    SendMsg,
    RemoveMessages,
    ImportMessages,
}

impl TxnKind {
    pub const ALL: [TxnKind; 9] = [
        TxnKind::GetAssociation,
        TxnKind::GetByKeyword,
        TxnKind::GetConversation,
        TxnKind::GetMessages,
        TxnKind::IndexMessages,
        TxnKind::ResetCutoff,
        TxnKind::SendMsg,
        TxnKind::RemoveMessages,
        TxnKind::ImportMessages,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TxnKind::GetAssociation => "getAssociation",
            TxnKind::GetByKeyword => "getByKeyword",
            TxnKind::GetConversation => "getConversation",
            TxnKind::GetMessages => "getMessages",
            TxnKind::IndexMessages => "indexMessages",
            TxnKind::ResetCutoff => "resetCutoff",
            TxnKind::SendMsg => "sendMsg",
            TxnKind::RemoveMessages => "removeMessages",
            TxnKind::ImportMessages => "importMessages",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    RunStart,
    RunEnd,
    ClientStart,
    ClientEnd,
    TxnStart { txn: u64, label: TxnKind },
    RetryStart { txn: u64, attempt: u32 },
    Commit { txn: u64, attempt: u32 },
    BucketOp { txn: u64, attempt: u32, bucket: BucketId, op: OpKind },
}

impl EventKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EventKind::RunStart => "RUN_START",
            EventKind::RunEnd => "RUN_END",
            EventKind::ClientStart => "CLIENT_START",
            EventKind::ClientEnd => "CLIENT_END",
            EventKind::TxnStart { .. } => "TXN_START",
            EventKind::RetryStart { .. } => "RETRY_START",
            EventKind::Commit { .. } => "COMMIT",
            EventKind::BucketOp { .. } => "BUCKET_OP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time_ns: u64,
    pub client: u32,
    pub kind: EventKind,
}

impl Event {
    pub fn new(time_ns: u64, client: u32, kind: EventKind) -> Self {
        Event { time_ns, client, kind }
    }

    pub fn to_tsv(&self) -> String {
        let dash = || "-".to_string();
        let (txn, attempt, bucket, op) = match self.kind {
            EventKind::RunStart | EventKind::RunEnd | EventKind::ClientStart | EventKind::ClientEnd => {
                (dash(), dash(), dash(), dash())
            }
            EventKind::TxnStart { txn, label } => (txn.to_string(), dash(), dash(), label.name().to_string()),
            EventKind::RetryStart { txn, attempt } | EventKind::Commit { txn, attempt } => {
                (txn.to_string(), attempt.to_string(), dash(), dash())
            }
            EventKind::BucketOp { txn, attempt, bucket, op } => {
                (txn.to_string(), attempt.to_string(), bucket.to_string(), op.name().to_string())
            }
        };
        let client = match self.kind {
            EventKind::RunStart | EventKind::RunEnd => dash(),
            _ => self.client.to_string(),
        };
        format!("{}\t{}\t{txn}\t{client}\t{attempt}\t{bucket}\t{op}", self.time_ns, self.kind.tag())
    }

    pub fn from_tsv(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("bad event line ({what}): {line:?}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let time_ns = f[0].parse().map_err(|_| bad("time"))?;
        let txn = || f[2].parse::<u64>().map_err(|_| bad("txn"));
        let attempt = || f[4].parse::<u32>().map_err(|_| bad("attempt"));
        let client = if f[3] == "-" { 0 } else { f[3].parse().map_err(|_| bad("client"))? };
        let kind = match f[1] {
            "RUN_START" => EventKind::RunStart,
            "RUN_END" => EventKind::RunEnd,
            "CLIENT_START" => EventKind::ClientStart,
            "CLIENT_END" => EventKind::ClientEnd,
            "TXN_START" => EventKind::TxnStart {
                txn: txn()?,
                label: TxnKind::parse(f[6]).ok_or_else(|| bad("label"))?,
            },
            "RETRY_START" => EventKind::RetryStart {
                txn: txn()?,
                attempt: attempt()?,
            },
            "COMMIT" => EventKind::Commit {
                txn: txn()?,
                attempt: attempt()?,
            },
            "BUCKET_OP" => EventKind::BucketOp {
                txn: txn()?,
                attempt: attempt()?,
                bucket: BucketId::parse(f[5]).ok_or_else(|| bad("bucket"))?,
                op: OpKind::parse(f[6]).ok_or_else(|| bad("op"))?,
            },
            _ => return Err(bad("kind")),
        };
        Ok(Event { time_ns, client, kind })
    }
}

/// Renders a whole log, one line per event.
pub fn write_tsv(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{}", e.to_tsv());
    }
    out
}

pub fn parse_tsv(text: &str) -> Result<Vec<Event>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(Event::from_tsv).collect()
}

/// Monotonic clock shared by every client of a run.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    origin: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Clock { origin: Instant::now() }
    }

    pub fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}
