//! The nine atomic transactions. Each one declares its access plan up
//! front: every key it may touch is a pure function of its parameters,
//! because keyword and conversation lookups are keyed reads rather than
//! table scans.

use std::collections::{BTreeMap, BTreeSet};

use crate::cc::{AccessPlan, Coordinator, Txn, TxnResult};
use crate::error::{Error, Result};
use crate::metrics::TxnKind;
use crate::model::{Keyword, Message, MsgId, TableKey, UserId, UNSTAMPED};
use crate::store::SeqPair;

/// An atomic unit of work with a declared access plan.
pub trait Transaction {
    type Output;

    fn kind(&self) -> TxnKind;

    /// Keys with an upper bound on accesses to each.
    fn plan(&self) -> AccessPlan;

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output>;

    /// Parameter checks made before any storage is touched.
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

/// Runs a transaction. A transaction whose plan is empty touches no storage
/// and completes without contacting the cluster.
pub fn run<T>(coord: &mut Coordinator, t: &T) -> Result<(T::Output, Option<TxnResult<()>>)>
where
    T: Transaction,
    T::Output: Default,
{
    t.validate()?;
    let plan = t.plan();
    if plan.is_empty() {
        return Ok((T::Output::default(), None));
    }
    let (value, stats) = coord.run_atomic(t.kind(), &plan, |tx| t.execute(tx))?.split();
    Ok((value, Some(stats)))
}

fn distinct_words(content: &[Keyword]) -> BTreeSet<Keyword> {
    content.iter().copied().collect()
}

fn check_pair(a: UserId, b: UserId) -> Result<()> {
    if a == b {
        return Err(Error::Precondition(format!("user {} paired with itself", a.0)));
    }
    Ok(())
}

/// Message ids exchanged between two users in both directions, plus both
/// users' sequence pairs. Ids listed in both directions appear twice.
#[derive(Debug, Clone)]
pub struct GetAssociation {
    pub u1: UserId,
    pub u2: UserId,
}

impl Transaction for GetAssociation {
    type Output = (Vec<MsgId>, Vec<SeqPair>);

    fn kind(&self) -> TxnKind {
        TxnKind::GetAssociation
    }

    fn validate(&self) -> Result<()> {
        check_pair(self.u1, self.u2)
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        p.read(TableKey::inter(self.u1, self.u2))
            .read(TableKey::inter(self.u2, self.u1))
            .read(TableKey::SeqNo(self.u1))
            .read(TableKey::SeqNo(self.u2));
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output> {
        let mut ids = tx.read_ids(TableKey::inter(self.u1, self.u2))?;
        ids.extend(tx.read_ids(TableKey::inter(self.u2, self.u1))?);
        let seqs = vec![tx.read_seq(TableKey::SeqNo(self.u1))?, tx.read_seq(TableKey::SeqNo(self.u2))?];
        Ok((ids, seqs))
    }
}

/// Ids of the user's messages containing any of the keywords.
#[derive(Debug, Clone)]
pub struct GetByKeyword {
    pub user: UserId,
    pub keywords: BTreeSet<Keyword>,
}

impl Transaction for GetByKeyword {
    type Output = BTreeSet<MsgId>;

    fn kind(&self) -> TxnKind {
        TxnKind::GetByKeyword
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        for &k in &self.keywords {
            p.read(TableKey::Term(self.user, k));
        }
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output> {
        let mut out = BTreeSet::new();
        for &k in &self.keywords {
            out.extend(tx.read_ids(TableKey::Term(self.user, k))?);
        }
        Ok(out)
    }
}

/// Ids of the messages `sender` exchanged with `recipient`. With
/// `both_directions` the reverse conversation is read in the same
/// transaction and appended.
#[derive(Debug, Clone)]
pub struct GetConversation {
    pub sender: UserId,
    pub recipient: UserId,
    pub both_directions: bool,
}

impl Transaction for GetConversation {
    type Output = Vec<MsgId>;

    fn kind(&self) -> TxnKind {
        TxnKind::GetConversation
    }

    fn validate(&self) -> Result<()> {
        check_pair(self.sender, self.recipient)
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        p.read(TableKey::inter(self.sender, self.recipient));
        if self.both_directions {
            p.read(TableKey::inter(self.recipient, self.sender));
        }
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output> {
        let mut ids = tx.read_ids(TableKey::inter(self.sender, self.recipient))?;
        if self.both_directions {
            ids.extend(tx.read_ids(TableKey::inter(self.recipient, self.sender))?);
        }
        Ok(ids)
    }
}

/// The stored message for each id; ids with no stored message are skipped.
#[derive(Debug, Clone)]
pub struct GetMessages {
    pub ids: Vec<MsgId>,
}

impl GetMessages {
    fn recipients(&self) -> BTreeSet<UserId> {
        self.ids.iter().map(|id| id.recipient).collect()
    }
}

impl Transaction for GetMessages {
    type Output = Vec<Message>;

    fn kind(&self) -> TxnKind {
        TxnKind::GetMessages
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        for u in self.recipients() {
            p.read(TableKey::Message(u));
        }
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output> {
        let mut inboxes = BTreeMap::new();
        for u in self.recipients() {
            inboxes.insert(u, tx.read_messages(TableKey::Message(u))?);
        }
        Ok(self
            .ids
            .iter()
            .filter_map(|id| inboxes[&id.recipient].iter().find(|m| m.id == *id).cloned())
            .collect())
    }
}

/// Messages matching each user's keywords, deduplicated, sorted by
/// timestamp (then id) and cropped to `cap`, plus every queried user's
/// sequence pair.
#[derive(Debug, Clone)]
pub struct IndexMessages {
    pub queries: BTreeMap<UserId, BTreeSet<Keyword>>,
    pub cap: usize,
}

impl Transaction for IndexMessages {
    type Output = (Vec<Message>, Vec<SeqPair>);

    fn kind(&self) -> TxnKind {
        TxnKind::IndexMessages
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        for (&u, kws) in &self.queries {
            for &k in kws {
                p.read(TableKey::Term(u, k));
            }
            if !kws.is_empty() {
                p.read(TableKey::Message(u));
            }
            p.read(TableKey::SeqNo(u));
        }
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output> {
        let mut found: BTreeMap<MsgId, Message> = BTreeMap::new();
        for (&u, kws) in &self.queries {
            let mut ids = BTreeSet::new();
            for &k in kws {
                ids.extend(tx.read_ids(TableKey::Term(u, k))?);
            }
            if ids.is_empty() {
                continue;
            }
            for m in tx.read_messages(TableKey::Message(u))? {
                if ids.contains(&m.id) {
                    found.entry(m.id).or_insert(m);
                }
            }
        }
        let mut msgs: Vec<Message> = found.into_values().collect();
        msgs.sort_by_key(|m| (m.timestamp, m.id));
        msgs.truncate(self.cap);
        let mut seqs = Vec::with_capacity(self.queries.len());
        for &u in self.queries.keys() {
            seqs.push(tx.read_seq(TableKey::SeqNo(u))?);
        }
        Ok((msgs, seqs))
    }
}

/// Moves the deletion cutoff up to the newest sequence number and returns
/// the pair as it was.
#[derive(Debug, Clone)]
pub struct ResetCutoff {
    pub user: UserId,
}

impl Transaction for ResetCutoff {
    type Output = SeqPair;

    fn kind(&self) -> TxnKind {
        TxnKind::ResetCutoff
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        p.read(TableKey::SeqNo(self.user)).write(TableKey::SeqNo(self.user), 1);
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output> {
        let key = TableKey::SeqNo(self.user);
        let old = tx.read_seq(key)?;
        tx.write_seq(key, SeqPair::new(old.current, old.current))?;
        Ok(old)
    }
}

/// Sends one message to each recipient. A single recipient is a unicast;
/// several make the whole series one atomic multicast.
#[derive(Debug, Clone)]
pub struct SendMsg {
    pub sender: UserId,
    pub recipients: Vec<UserId>,
    pub content: Vec<Keyword>,
}

impl Transaction for SendMsg {
    type Output = Vec<MsgId>;

    fn kind(&self) -> TxnKind {
        TxnKind::SendMsg
    }

    fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<UserId> = self.recipients.iter().copied().collect();
        if distinct.len() != self.recipients.len() {
            return Err(Error::Precondition("repeated recipient".into()));
        }
        self.recipients.iter().try_for_each(|&r| check_pair(self.sender, r))
    }

    fn plan(&self) -> AccessPlan {
        let words = distinct_words(&self.content);
        let mut p = AccessPlan::new();
        for &r in &self.recipients {
            p.write(TableKey::SeqNo(r), 1)
                .write(TableKey::Message(r), 1)
                .write(TableKey::inter(self.sender, r), 1)
                .write(TableKey::inter(r, self.sender), 1);
            for &k in &words {
                p.write(TableKey::Term(r, k), 1);
            }
        }
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<Self::Output> {
        let words = distinct_words(&self.content);
        let mut sent = Vec::with_capacity(self.recipients.len());
        for &r in &self.recipients {
            let seq = tx.increment_seq(TableKey::SeqNo(r))?;
            let id = MsgId::new(r, seq.current);
            tx.append_message(Message {
                id,
                sender: self.sender,
                recipient: r,
                content: self.content.clone(),
                timestamp: UNSTAMPED,
            })?;
            tx.append_id(TableKey::inter(self.sender, r), id)?;
            tx.append_id(TableKey::inter(r, self.sender), id)?;
            for &k in &words {
                tx.append_id(TableKey::Term(r, k), id)?;
            }
            sent.push(id);
        }
        Ok(sent)
    }
}

/// Removes messages from every table that indexes them. Sequence numbers
/// are left alone.
#[derive(Debug, Clone)]
pub struct RemoveMessages {
    pub messages: Vec<Message>,
}

impl Transaction for RemoveMessages {
    type Output = ();

    fn kind(&self) -> TxnKind {
        TxnKind::RemoveMessages
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        for m in &self.messages {
            for k in m.keywords() {
                p.write(TableKey::Term(m.recipient, k), 1);
            }
            p.write(TableKey::inter(m.sender, m.recipient), 1)
                .write(TableKey::inter(m.recipient, m.sender), 1)
                .write(TableKey::Message(m.recipient), 1);
        }
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<()> {
        for m in &self.messages {
            for k in m.keywords() {
                tx.remove(TableKey::Term(m.recipient, k), m.id)?;
            }
            tx.remove(TableKey::inter(m.sender, m.recipient), m.id)?;
            tx.remove(TableKey::inter(m.recipient, m.sender), m.id)?;
            tx.remove(TableKey::Message(m.recipient), m.id)?;
        }
        Ok(())
    }
}

/// Stores complete messages, skipping those below the recipient's deletion
/// cutoff and those already stored, and raises the recipient's current
/// sequence number to the highest imported one. Returns the import count.
#[derive(Debug, Clone)]
pub struct ImportMessages {
    pub messages: Vec<Message>,
    /// Skip messages whose sequence equals the cutoff too.
    pub cutoff_inclusive: bool,
}

impl Transaction for ImportMessages {
    type Output = usize;

    fn kind(&self) -> TxnKind {
        TxnKind::ImportMessages
    }

    fn validate(&self) -> Result<()> {
        for m in &self.messages {
            check_pair(m.sender, m.recipient)?;
            if m.id.recipient != m.recipient || m.id.seq == 0 {
                return Err(Error::Precondition(format!("import of malformed message id {}", m.id)));
            }
        }
        Ok(())
    }

    fn plan(&self) -> AccessPlan {
        let mut p = AccessPlan::new();
        for m in &self.messages {
            let r = m.recipient;
            p.reads(TableKey::SeqNo(r), 1)
                .write(TableKey::SeqNo(r), 1)
                .reads(TableKey::Message(r), 1)
                .write(TableKey::Message(r), 1)
                .write(TableKey::inter(m.sender, r), 1)
                .write(TableKey::inter(r, m.sender), 1);
            for k in m.keywords() {
                p.write(TableKey::Term(r, k), 1);
            }
        }
        p
    }

    fn execute(&self, tx: &mut Txn<'_>) -> Result<usize> {
        let mut imported = 0;
        for m in &self.messages {
            let r = m.recipient;
            let seq = tx.read_seq(TableKey::SeqNo(r))?;
            let below = if self.cutoff_inclusive {
                m.id.seq <= seq.deleted
            } else {
                m.id.seq < seq.deleted
            };
            if below {
                continue;
            }
            if tx.read_messages(TableKey::Message(r))?.iter().any(|x| x.id == m.id) {
                continue;
            }
            tx.append_message(m.clone())?;
            tx.append_id(TableKey::inter(m.sender, r), m.id)?;
            tx.append_id(TableKey::inter(r, m.sender), m.id)?;
            for k in m.keywords() {
                tx.append_id(TableKey::Term(r, k), m.id)?;
            }
            if m.id.seq > seq.current {
                tx.write_seq(TableKey::SeqNo(r), SeqPair::new(m.id.seq, seq.deleted))?;
            }
            imported += 1;
        }
        Ok(imported)
    }
}
