//! Recorded histories and the serializability checks.
//!
//! A history holds the initial state, the logical effects of every
//! committed transaction (the first value it observed for each key and the
//! last value it wrote) and the per-bucket operation order reported by the
//! nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TxnKind;
use crate::model::{BucketId, TableKey};
use crate::store::{OpRecord, Snapshot, TableEntry};

/// Largest committed-transaction count the permutation search accepts.
pub const BRUTE_FORCE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnEffects {
    pub txn: u64,
    /// The attempt that committed.
    pub attempt: u32,
    pub client: u32,
    pub label: TxnKind,
    pub commit_ns: u64,
    /// First observed value of every key the transaction touched.
    pub before: Vec<(TableKey, TableEntry)>,
    /// Final value of every key the transaction wrote.
    pub after: Vec<(TableKey, TableEntry)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    #[serde(with = "snapshot_bytes")]
    pub initial: Snapshot,
    pub txns: Vec<TxnEffects>,
    pub ops: Vec<OpRecord>,
}

mod snapshot_bytes {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::store::Snapshot;

    pub fn serialize<S: Serializer>(snap: &Snapshot, s: S) -> Result<S::Ok, S::Error> {
        snap.to_bytes().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Snapshot, D::Error> {
        let bytes = Vec::<u8>::deserialize(d)?;
        Snapshot::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

impl History {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("history serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad history file: {e}")))
    }

    /// Committed transactions in commit order.
    pub fn committed(&self) -> Vec<&TxnEffects> {
        let mut v: Vec<_> = self.txns.iter().collect();
        v.sort_by_key(|t| (t.commit_ns, t.txn));
        v
    }

    /// Node-side op order per bucket, restricted to committed attempts.
    pub fn bucket_orders(&self) -> BTreeMap<BucketId, Vec<&OpRecord>> {
        let committed: HashSet<(u64, u32)> = self.txns.iter().map(|t| (t.txn, t.attempt)).collect();
        let mut out: BTreeMap<BucketId, Vec<&OpRecord>> = BTreeMap::new();
        for op in &self.ops {
            if committed.contains(&(op.txn, op.attempt)) {
                out.entry(op.bucket).or_default().push(op);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Transaction ids in an equivalent serial order.
    Serializable { witness: Vec<u64> },
    /// `cycle` is the shortest dependency cycle found, if any.
    Unserializable { cycle: Vec<u64>, reason: String },
}

impl Verdict {
    pub fn is_serializable(&self) -> bool {
        matches!(self, Verdict::Serializable { .. })
    }
}

type State = BTreeMap<TableKey, TableEntry>;

fn read(state: &State, key: &TableKey) -> TableEntry {
    state.get(key).cloned().unwrap_or_else(|| TableEntry::default_for(key.table()))
}

fn normalized(state: &State) -> BTreeMap<TableKey, &TableEntry> {
    state.iter().filter(|(_, e)| !e.is_default()).map(|(k, e)| (*k, e)).collect()
}

/// Searches for a serial order of the committed transactions whose replay
/// from the initial state matches every observed value and reproduces
/// `final_state`. Permutations are explored depth-first starting from commit
/// order, so a serial run yields its commit order as the witness.
pub fn check_serializable(history: &History, final_state: &Snapshot) -> Result<Verdict> {
    let txns = history.committed();
    if txns.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::Precondition(format!(
            "{} committed transactions exceed the permutation limit of {BRUTE_FORCE_LIMIT}; use graph mode",
            txns.len()
        )));
    }
    let mut state: State = history.initial.iter().map(|(_, k, e)| (*k, e.clone())).collect();
    let target: State = final_state.iter().map(|(_, k, e)| (*k, e.clone())).collect();
    let target = normalized(&target).into_iter().map(|(k, e)| (k, e.clone())).collect::<State>();
    let mut used = vec![false; txns.len()];
    let mut order = Vec::with_capacity(txns.len());
    if search(&txns, &mut state, &target, &mut used, &mut order) {
        return Ok(Verdict::Serializable {
            witness: order.iter().map(|&i| txns[i].txn).collect(),
        });
    }
    let cycle = match conflict_graph_cycle(history) {
        Some(c) => c,
        None => Vec::new(),
    };
    Ok(Verdict::Unserializable {
        cycle,
        reason: "no serial order of the committed transactions reproduces the observed values and final state".into(),
    })
}

fn search(txns: &[&TxnEffects], state: &mut State, target: &State, used: &mut [bool], order: &mut Vec<usize>) -> bool {
    if order.len() == txns.len() {
        return normalized(state) == target.iter().map(|(k, e)| (*k, e)).collect();
    }
    for i in 0..txns.len() {
        if used[i] || txns[i].before.iter().any(|(k, v)| read(state, k) != *v) {
            continue;
        }
        let saved: Vec<(TableKey, Option<TableEntry>)> =
            txns[i].after.iter().map(|(k, _)| (*k, state.get(k).cloned())).collect();
        for (k, v) in &txns[i].after {
            state.insert(*k, v.clone());
        }
        used[i] = true;
        order.push(i);
        if search(txns, state, target, used, order) {
            return true;
        }
        order.pop();
        used[i] = false;
        for (k, v) in saved {
            match v {
                Some(v) => state.insert(k, v),
                None => state.remove(&k),
            };
        }
    }
    false
}

/// Precedence edges from per-bucket op order: two ops of different
/// transactions on one bucket conflict when at least one writes. Only edges
/// from the latest writer and the readers since it are kept; the rest follow
/// transitively.
fn conflict_edges(history: &History) -> BTreeMap<u64, BTreeSet<u64>> {
    let mut edges: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for t in &history.txns {
        edges.entry(t.txn).or_default();
    }
    for ops in history.bucket_orders().values() {
        let mut last_writer: Option<u64> = None;
        let mut readers: BTreeSet<u64> = BTreeSet::new();
        for op in ops {
            let mut add = |from: u64| {
                if from != op.txn {
                    edges.entry(from).or_default().insert(op.txn);
                }
            };
            if let Some(w) = last_writer {
                add(w);
            }
            if op.kind.is_write() {
                for &r in &readers {
                    add(r);
                }
                readers.clear();
                last_writer = Some(op.txn);
            } else {
                readers.insert(op.txn);
            }
        }
    }
    edges
}

fn shortest_cycle(edges: &BTreeMap<u64, BTreeSet<u64>>) -> Option<Vec<u64>> {
    let mut best: Option<Vec<u64>> = None;
    for &start in edges.keys() {
        let mut parent: HashMap<u64, u64> = HashMap::new();
        let mut queue = VecDeque::from([start]);
        let mut found = None;
        'bfs: while let Some(n) = queue.pop_front() {
            for &m in &edges[&n] {
                if m == start {
                    found = Some(n);
                    break 'bfs;
                }
                if !parent.contains_key(&m) && edges.contains_key(&m) {
                    parent.insert(m, n);
                    queue.push_back(m);
                }
            }
        }
        if let Some(mut n) = found {
            let mut cycle = vec![n];
            while n != start {
                n = parent[&n];
                cycle.push(n);
            }
            cycle.reverse();
            if best.as_ref().is_none_or(|b| cycle.len() < b.len()) {
                best = Some(cycle);
            }
        }
    }
    best
}

fn conflict_graph_cycle(history: &History) -> Option<Vec<u64>> {
    shortest_cycle(&conflict_edges(history))
}

/// Conflict-graph mode for histories too large to permute: serializable iff
/// the precedence graph of committed transactions is acyclic. The witness is
/// a topological order, ties broken by commit order.
pub fn check_conflict_graph(history: &History) -> Verdict {
    let edges = conflict_edges(history);
    if let Some(cycle) = shortest_cycle(&edges) {
        return Verdict::Unserializable {
            cycle,
            reason: "conflict graph has a cycle".into(),
        };
    }
    let rank: HashMap<u64, usize> = history.committed().iter().enumerate().map(|(i, t)| (t.txn, i)).collect();
    let mut indegree: HashMap<u64, usize> = edges.keys().map(|&n| (n, 0)).collect();
    for targets in edges.values() {
        for t in targets {
            *indegree.entry(*t).or_default() += 1;
        }
    }
    let mut ready: BTreeSet<(usize, u64)> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| (rank.get(&n).copied().unwrap_or(usize::MAX), n))
        .collect();
    let mut witness = Vec::new();
    while let Some((_, n)) = ready.pop_first() {
        witness.push(n);
        for &m in edges.get(&n).into_iter().flatten() {
            let d = indegree.get_mut(&m).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert((rank.get(&m).copied().unwrap_or(usize::MAX), m));
            }
        }
    }
    Verdict::Serializable { witness }
}
