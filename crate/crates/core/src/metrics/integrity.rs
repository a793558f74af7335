//! Referential-integrity and sequence-discipline checks on a quiescent
//! snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::model::{MsgId, TableId, TableKey, UserId};
use crate::store::{SeqPair, Snapshot, TableEntry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub table: TableId,
    pub key: TableKey,
    pub id: Option<MsgId>,
    pub what: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.id {
            Some(id) => write!(f, "{} {}: {}", self.key, id, self.what),
            None => write!(f, "{}: {}", self.key, self.what),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntegrityReport {
    pub violations: Vec<Violation>,
}

impl IntegrityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every indexed id resolves to a stored message, that every
/// message is listed in both conversation directions, and that every inbox
/// satisfies `deleted <= current` with live messages in `(deleted, current]`.
pub fn check_integrity(snapshot: &Snapshot) -> IntegrityReport {
    let mut messages: BTreeSet<MsgId> = BTreeSet::new();
    let mut inter: BTreeMap<(UserId, UserId), BTreeSet<MsgId>> = BTreeMap::new();
    let mut seqs: BTreeMap<UserId, SeqPair> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut flag = |key: TableKey, id: Option<MsgId>, what: &str| {
        violations.push(Violation {
            table: key.table(),
            key,
            id,
            what: what.to_string(),
        })
    };

    for (_, key, entry) in snapshot.iter() {
        match (key, entry) {
            (TableKey::Message(u), TableEntry::MessageList(list)) => {
                for m in list {
                    if m.recipient != *u {
                        flag(*key, Some(m.id), "message stored under another inbox");
                    }
                    if !messages.insert(m.id) {
                        flag(*key, Some(m.id), "duplicate message id");
                    }
                }
            }
            (TableKey::Inter { sender, receiver }, TableEntry::MsgIdList(ids)) => {
                inter.entry((*sender, *receiver)).or_default().extend(ids.iter().copied());
            }
            (TableKey::SeqNo(u), TableEntry::SeqPair(p)) => {
                seqs.insert(*u, *p);
            }
            (TableKey::Term(..), TableEntry::MsgIdList(_)) => {}
            _ => flag(*key, None, "entry type does not match table"),
        }
    }

    for (_, key, entry) in snapshot.iter() {
        match (key, entry) {
            (TableKey::Term(..) | TableKey::Inter { .. }, TableEntry::MsgIdList(ids)) => {
                for id in ids {
                    if !messages.contains(id) {
                        flag(*key, Some(*id), "id refers to no stored message");
                    }
                }
            }
            (TableKey::Message(u), TableEntry::MessageList(list)) => {
                let p = seqs.get(u).copied().unwrap_or_default();
                for m in list {
                    for (a, b) in [(m.sender, m.recipient), (m.recipient, m.sender)] {
                        if !inter.get(&(a, b)).is_some_and(|s| s.contains(&m.id)) {
                            let what = format!("missing from conversation ({},{})", a.0, b.0);
                            flag(*key, Some(m.id), &what);
                        }
                    }
                    if m.id.seq <= p.deleted || m.id.seq > p.current {
                        let what = format!("sequence outside live range ({}, {}]", p.deleted, p.current);
                        flag(*key, Some(m.id), &what);
                    }
                }
            }
            (TableKey::SeqNo(_), TableEntry::SeqPair(p)) if p.deleted > p.current => {
                flag(*key, None, "deleted cutoff above current sequence");
            }
            _ => {}
        }
    }
    IntegrityReport { violations }
}
