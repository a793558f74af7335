//! The eight client tasks. Each task is a short sequence of transactions
//! plus client-side processing; transactions within a task run strictly one
//! after another and the task as a whole is not atomic.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;

use super::config::{ScenarioConfig, TaskType};
use super::txns::{
    run, GetAssociation, GetByKeyword, GetConversation, GetMessages, ImportMessages, IndexMessages, RemoveMessages,
    ResetCutoff, SendMsg,
};
use crate::cc::{Coordinator, TxnResult};
use crate::error::Result;
use crate::model::{Keyword, Message, MsgId, TableKey, UserId};
use crate::store::SeqPair;

/// What a task produced, by task type.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutput {
    TermSearch(Vec<Message>),
    InteractionSearch(Vec<Message>),
    SendUnicast(MsgId),
    SendMulticast(Vec<MsgId>),
    BatchImport { offered: usize, imported: usize },
    ClearInbox { cutoff: SeqPair, removed: usize },
    AssociationLevel(f64),
    Indexing(Vec<Message>),
}

/// One executed task: its output and the transactions that committed for it.
/// Transactions with an empty access plan never reach the cluster and are
/// not listed.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRun {
    pub task: TaskType,
    pub txns: Vec<TxnResult<()>>,
    pub output: TaskOutput,
}

struct Steps(Vec<TxnResult<()>>);

impl Steps {
    fn take<T>(&mut self, (value, stats): (T, Option<TxnResult<()>>)) -> T {
        self.0.extend(stats);
        value
    }
}

fn dedup_in_order(ids: Vec<MsgId>) -> Vec<MsgId> {
    let mut seen = BTreeSet::new();
    ids.into_iter().filter(|id| seen.insert(*id)).collect()
}

pub fn term_search(coord: &mut Coordinator, user: UserId, keywords: BTreeSet<Keyword>) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let ids = s.take(run(coord, &GetByKeyword { user, keywords })?);
    let messages = s.take(run(coord, &GetMessages { ids: ids.into_iter().collect() })?);
    Ok(TaskRun {
        task: TaskType::TermSearch,
        txns: s.0,
        output: TaskOutput::TermSearch(messages),
    })
}

pub fn interaction_search(coord: &mut Coordinator, user: UserId, other: UserId) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let conv = GetConversation {
        sender: user,
        recipient: other,
        both_directions: true,
    };
    let ids = dedup_in_order(s.take(run(coord, &conv)?));
    let messages = s.take(run(coord, &GetMessages { ids })?);
    Ok(TaskRun {
        task: TaskType::InteractionSearch,
        txns: s.0,
        output: TaskOutput::InteractionSearch(messages),
    })
}

pub fn send_unicast(coord: &mut Coordinator, sender: UserId, recipient: UserId, content: Vec<Keyword>) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let txn = SendMsg {
        sender,
        recipients: vec![recipient],
        content,
    };
    let ids = s.take(run(coord, &txn)?);
    Ok(TaskRun {
        task: TaskType::SendUnicast,
        txns: s.0,
        output: TaskOutput::SendUnicast(ids[0]),
    })
}

pub fn send_multicast(coord: &mut Coordinator, sender: UserId, recipients: Vec<UserId>, content: Vec<Keyword>) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let txn = SendMsg {
        sender,
        recipients,
        content,
    };
    let ids = s.take(run(coord, &txn)?);
    Ok(TaskRun {
        task: TaskType::SendMulticast,
        txns: s.0,
        output: TaskOutput::SendMulticast(ids),
    })
}

pub fn batch_import(coord: &mut Coordinator, messages: Vec<Message>, cutoff_inclusive: bool) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let offered = messages.len();
    let imported = s.take(run(
        coord,
        &ImportMessages {
            messages,
            cutoff_inclusive,
        },
    )?);
    Ok(TaskRun {
        task: TaskType::BatchImport,
        txns: s.0,
        output: TaskOutput::BatchImport { offered, imported },
    })
}

/// Raises the cutoff, then fetches and removes every message that was live
/// below it: ids `(user, s)` for `s` in `(deleted, current]` of the old pair.
pub fn clear_inbox(coord: &mut Coordinator, user: UserId) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let cutoff = s.take(run(coord, &ResetCutoff { user })?);
    let ids = (cutoff.deleted + 1..=cutoff.current).map(|seq| MsgId::new(user, seq)).collect();
    let messages = s.take(run(coord, &GetMessages { ids })?);
    let removed = messages.len();
    s.take(run(coord, &RemoveMessages { messages })?);
    Ok(TaskRun {
        task: TaskType::ClearInbox,
        txns: s.0,
        output: TaskOutput::ClearInbox { cutoff, removed },
    })
}

/// Distinct messages exchanged between the two users over the size of the
/// first user's inbox (at least 1).
pub fn association_level(coord: &mut Coordinator, u1: UserId, u2: UserId) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let (ids, seqs) = s.take(run(coord, &GetAssociation { u1, u2 })?);
    let distinct = ids.iter().collect::<BTreeSet<_>>().len();
    let inbox = seqs[0].current.saturating_sub(seqs[0].deleted).max(1);
    Ok(TaskRun {
        task: TaskType::AssociationLevel,
        txns: s.0,
        output: TaskOutput::AssociationLevel(distinct as f64 / inbox as f64),
    })
}

pub fn indexing(coord: &mut Coordinator, queries: BTreeMap<UserId, BTreeSet<Keyword>>, cap: usize) -> Result<TaskRun> {
    let mut s = Steps(Vec::new());
    let (messages, _) = s.take(run(coord, &IndexMessages { queries, cap })?);
    Ok(TaskRun {
        task: TaskType::Indexing,
        txns: s.0,
        output: TaskOutput::Indexing(messages),
    })
}

/// Draws users, keywords and messages uniformly from the configured domains.
pub struct DataGen<'a, R> {
    cfg: &'a ScenarioConfig,
    rng: R,
}

impl<'a, R: Rng> DataGen<'a, R> {
    pub fn new(cfg: &'a ScenarioConfig, rng: R) -> Self {
        DataGen { cfg, rng }
    }

    pub fn user(&mut self) -> UserId {
        UserId(self.rng.random_range(0..self.cfg.users))
    }

    pub fn other_user(&mut self, not: UserId) -> UserId {
        loop {
            let u = self.user();
            if u != not {
                return u;
            }
        }
    }

    /// `n` distinct users, none equal to `not`.
    pub fn users_excluding(&mut self, n: usize, not: Option<UserId>) -> Vec<UserId> {
        let mut out = Vec::with_capacity(n);
        let mut seen = BTreeSet::new();
        while out.len() < n {
            let u = self.user();
            if Some(u) != not && seen.insert(u) {
                out.push(u);
            }
        }
        out
    }

    pub fn keyword(&mut self) -> Keyword {
        Keyword(self.rng.random_range(0..self.cfg.keywords))
    }

    /// Between one and `query_cap` distinct keywords.
    pub fn query(&mut self) -> BTreeSet<Keyword> {
        let n = self.rng.random_range(1..=self.cfg.query_cap) as usize;
        index::sample(&mut self.rng, self.cfg.keywords as usize, n)
            .into_iter()
            .map(|k| Keyword(k as u32))
            .collect()
    }

    /// Exactly `msglen` words; repeats are allowed.
    pub fn content(&mut self) -> Vec<Keyword> {
        (0..self.cfg.msglen).map(|_| self.keyword()).collect()
    }

    pub fn multicast_size(&mut self) -> usize {
        self.rng.random_range(self.cfg.multicast_min..=self.cfg.multicast_max) as usize
    }

    pub fn import_size(&mut self) -> usize {
        self.rng.random_range(self.cfg.import_min..=self.cfg.import_max) as usize
    }

    /// A batch of complete messages for one inbox whose current sequence
    /// number is `current`. Sequence numbers are uniform in
    /// `[1, current + size]` and double as timestamps.
    pub fn import_batch(&mut self, recipient: UserId, current: u64, size: usize) -> Vec<Message> {
        let top = current + size as u64;
        (0..size)
            .map(|_| {
                let seq = self.rng.random_range(1..=top);
                Message {
                    id: MsgId::new(recipient, seq),
                    sender: self.other_user(recipient),
                    recipient,
                    content: self.content(),
                    timestamp: seq,
                }
            })
            .collect()
    }
}

/// Draws parameters for a task of type `t` and executes it.
pub fn run_task<R: Rng>(t: TaskType, coord: &mut Coordinator, data: &mut DataGen<'_, R>) -> Result<TaskRun> {
    let cfg = data.cfg;
    match t {
        TaskType::TermSearch => {
            let u = data.user();
            let kws = data.query();
            term_search(coord, u, kws)
        }
        TaskType::InteractionSearch => {
            let u = data.user();
            let v = data.other_user(u);
            interaction_search(coord, u, v)
        }
        TaskType::SendUnicast => {
            let s = data.user();
            let r = data.other_user(s);
            let content = data.content();
            send_unicast(coord, s, r, content)
        }
        TaskType::SendMulticast => {
            let s = data.user();
            let k = data.multicast_size();
            let rs = data.users_excluding(k, Some(s));
            let content = data.content();
            send_multicast(coord, s, rs, content)
        }
        TaskType::BatchImport => {
            let r = data.user();
            let size = data.import_size();
            let current = coord.peek(TableKey::SeqNo(r))?.as_seq()?.current;
            let batch = data.import_batch(r, current, size);
            batch_import(coord, batch, cfg.cutoff_inclusive)
        }
        TaskType::ClearInbox => {
            let u = data.user();
            clear_inbox(coord, u)
        }
        TaskType::AssociationLevel => {
            let u = data.user();
            let v = data.other_user(u);
            association_level(coord, u, v)
        }
        TaskType::Indexing => {
            let users = data.users_excluding(cfg.index_users as usize, None);
            let queries = users.into_iter().map(|u| (u, data.query())).collect();
            indexing(coord, queries, cfg.index_cap as usize)
        }
    }
}
