#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use helenos::cc::{AccessPlan, Coordinator, RetryPolicy, Scheme};
use helenos::metrics::{Clock, TxnKind};
use helenos::model::{Keyword, Message, MsgId, TableKey, UserId};
use helenos::store::{LoopbackCluster, SeqPair, StoreClient, TableEntry};
use helenos::workload::tasks::{self, TaskOutput};
use helenos::workload::txns::{
    run, GetAssociation, GetByKeyword, GetConversation, GetMessages, ImportMessages, IndexMessages, RemoveMessages,
    ResetCutoff, SendMsg,
};

pub const A: UserId = UserId(1);
pub const B: UserId = UserId(2);
pub const C: UserId = UserId(3);
pub const W1: Keyword = Keyword(10);
pub const W2: Keyword = Keyword(20);

pub fn cluster(nodes: u32, buckets: u32, delay: Duration) -> LoopbackCluster {
    LoopbackCluster::new(nodes, buckets, delay).expect("cluster")
}

pub fn coordinator(cluster: &LoopbackCluster, buckets: u32, scheme: Scheme, client: u32) -> Coordinator {
    let store = StoreClient::connect(cluster, buckets).expect("connect");
    Coordinator::new(store, scheme, client, Clock::start(), RetryPolicy::default(), 7 + u64::from(client))
}

/// A fresh 4-node cluster with no delay and one client.
pub fn fresh(scheme: Scheme) -> (LoopbackCluster, Coordinator) {
    let c = cluster(4, 16, Duration::ZERO);
    let coord = coordinator(&c, 16, scheme, 0);
    (c, coord)
}

pub fn send(coord: &mut Coordinator, s: UserId, r: UserId, content: &[Keyword]) -> MsgId {
    let t = SendMsg {
        sender: s,
        recipients: vec![r],
        content: content.to_vec(),
    };
    run(coord, &t).expect("send").0[0]
}

pub fn ids(v: &[(UserId, u64)]) -> Vec<MsgId> {
    v.iter().map(|&(u, s)| MsgId::new(u, s)).collect()
}

fn set_seq(coord: &mut Coordinator, u: UserId, pair: SeqPair) {
    let mut plan = AccessPlan::new();
    plan.write(TableKey::SeqNo(u), 1);
    coord
        .run_atomic(TxnKind::ResetCutoff, &plan, |tx| tx.write_seq(TableKey::SeqNo(u), pair))
        .expect("set seq");
}

fn msg(recipient: UserId, seq: u64, sender: UserId, content: &[Keyword]) -> Message {
    Message {
        id: MsgId::new(recipient, seq),
        sender,
        recipient,
        content: content.to_vec(),
        timestamp: seq,
    }
}

/// Collects failed checks instead of panicking so a whole suite can report.
#[derive(Default)]
pub struct Checks {
    pub failures: Vec<String>,
}

impl Checks {
    pub fn eq<T: PartialEq + std::fmt::Debug>(&mut self, what: &str, got: T, want: T) {
        if got != want {
            self.failures.push(format!("{what}: got {got:?}, want {want:?}"));
        }
    }

    pub fn ok(&mut self, what: &str, cond: bool) {
        if !cond {
            self.failures.push(what.to_string());
        }
    }
}

/// Every transaction and task example, on fresh single-client clusters under
/// `scheme`. Returns the failed checks.
pub fn trace_suite(scheme: Scheme) -> Vec<String> {
    let mut k = Checks::default();
    let zero = SeqPair::new(0, 0);

    // getAssociation
    let (_c, mut co) = fresh(scheme);
    let r = run(&mut co, &GetAssociation { u1: A, u2: B }).unwrap().0;
    k.eq("association on empty db", r, (vec![], vec![zero, zero]));
    send(&mut co, A, B, &[W1, W2]);
    let (l, _) = run(&mut co, &GetAssociation { u1: A, u2: B }).unwrap().0;
    k.eq("association after one send", l.clone(), ids(&[(B, 1), (B, 1)]));
    let (m, _) = run(&mut co, &GetAssociation { u1: B, u2: A }).unwrap().0;
    k.eq("association is symmetric", sorted(m), sorted(l));

    // getByKeyword
    let (_c, mut co) = fresh(scheme);
    let r = run(&mut co, &GetByKeyword { user: B, keywords: BTreeSet::new() }).unwrap().0;
    k.eq("keyword search with no keywords", r, BTreeSet::new());
    send(&mut co, A, B, &[W1, W2]);
    let r = run(&mut co, &GetByKeyword { user: B, keywords: [W1].into() }).unwrap().0;
    k.eq("keyword search by recipient", r, [MsgId::new(B, 1)].into());
    let r = run(&mut co, &GetByKeyword { user: A, keywords: [W1].into() }).unwrap().0;
    k.eq("keyword search by sender", r, BTreeSet::new());

    // getConversation
    let (_c, mut co) = fresh(scheme);
    let conv = |s, r| GetConversation {
        sender: s,
        recipient: r,
        both_directions: false,
    };
    k.eq("conversation on empty db", run(&mut co, &conv(A, B)).unwrap().0, vec![]);
    send(&mut co, A, B, &[W1]);
    k.eq("conversation forward", run(&mut co, &conv(A, B)).unwrap().0, ids(&[(B, 1)]));
    k.eq("conversation backward", run(&mut co, &conv(B, A)).unwrap().0, ids(&[(B, 1)]));

    // getMessages
    let (_c, mut co) = fresh(scheme);
    let (r, stats) = run(&mut co, &GetMessages { ids: vec![] }).unwrap();
    k.eq("get no messages", r, vec![]);
    k.ok("get no messages contacts no node", stats.is_none());
    send(&mut co, A, B, &[W1]);
    let r = run(&mut co, &GetMessages { ids: ids(&[(B, 1)]) }).unwrap().0;
    k.ok("get stored message", r.len() == 1 && r[0].sender == A && r[0].id == MsgId::new(B, 1));
    let stored = r;
    run(&mut co, &RemoveMessages { messages: stored }).unwrap();
    let r = run(&mut co, &GetMessages { ids: ids(&[(B, 1)]) }).unwrap().0;
    k.eq("get deleted message", r, vec![]);

    // indexMessages
    let (_c, mut co) = fresh(scheme);
    let q = |qs: &[(UserId, &[Keyword])], cap| IndexMessages {
        queries: qs.iter().map(|(u, w)| (*u, w.iter().copied().collect())).collect(),
        cap,
    };
    let r = run(&mut co, &q(&[(A, &[W1]), (B, &[W2])], 3)).unwrap().0;
    k.eq("index on empty db", r, (vec![], vec![zero, zero]));
    send(&mut co, A, B, &[W1]);
    send(&mut co, C, B, &[W2]);
    let (msgs, seqs) = run(&mut co, &q(&[(B, &[W1, W2])], 3)).unwrap().0;
    k.eq("index finds both", msgs.iter().map(|m| m.id).collect::<Vec<_>>(), ids(&[(B, 1), (B, 2)]));
    k.ok("index sorted by timestamp", msgs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    k.eq("index seq pairs", seqs, vec![SeqPair::new(2, 0)]);
    for _ in 0..3 {
        send(&mut co, A, B, &[W1]);
    }
    let (msgs, _) = run(&mut co, &q(&[(B, &[W1, W2])], 3)).unwrap().0;
    k.eq("index crops to earliest", msgs.iter().map(|m| m.id).collect::<Vec<_>>(), ids(&[(B, 1), (B, 2), (B, 3)]));

    // resetCutoff
    let (_c, mut co) = fresh(scheme);
    k.eq("reset fresh user", run(&mut co, &ResetCutoff { user: A }).unwrap().0, zero);
    k.eq("fresh user stays zero", co.peek(TableKey::SeqNo(A)).unwrap().as_seq().unwrap(), zero);
    set_seq(&mut co, A, SeqPair::new(7, 2));
    k.eq("reset returns old pair", run(&mut co, &ResetCutoff { user: A }).unwrap().0, SeqPair::new(7, 2));
    k.eq("reset moves cutoff", co.peek(TableKey::SeqNo(A)).unwrap().as_seq().unwrap(), SeqPair::new(7, 7));
    k.eq("reset is idempotent", run(&mut co, &ResetCutoff { user: A }).unwrap().0, SeqPair::new(7, 7));
    k.eq("reset fixed point", co.peek(TableKey::SeqNo(A)).unwrap().as_seq().unwrap(), SeqPair::new(7, 7));

    // sendMsg
    let (_c, mut co) = fresh(scheme);
    let id = send(&mut co, A, B, &[W1, W2]);
    k.eq("first send id", id, MsgId::new(B, 1));
    let peek_ids = |co: &mut Coordinator, key| co.peek(key).unwrap().as_ids().unwrap().to_vec();
    k.eq("send seq", co.peek(TableKey::SeqNo(B)).unwrap().as_seq().unwrap(), SeqPair::new(1, 0));
    k.eq("send message count", co.peek(TableKey::Message(B)).unwrap().as_messages().unwrap().len(), 1);
    k.eq("send inter forward", peek_ids(&mut co, TableKey::inter(A, B)), ids(&[(B, 1)]));
    k.eq("send inter backward", peek_ids(&mut co, TableKey::inter(B, A)), ids(&[(B, 1)]));
    k.eq("send term w1", peek_ids(&mut co, TableKey::Term(B, W1)), ids(&[(B, 1)]));
    k.eq("send term w2", peek_ids(&mut co, TableKey::Term(B, W2)), ids(&[(B, 1)]));
    k.eq("second send id", send(&mut co, C, B, &[W1]), MsgId::new(B, 2));
    send(&mut co, A, C, &[W2, W2]);
    k.eq("duplicate word indexed once", peek_ids(&mut co, TableKey::Term(C, W2)), ids(&[(C, 1)]));

    // removeMessages
    let (_c, mut co) = fresh(scheme);
    let (_, stats) = run(&mut co, &RemoveMessages { messages: vec![] }).unwrap();
    k.ok("remove nothing contacts no node", stats.is_none());
    send(&mut co, A, B, &[W1, W2]);
    let stored = co.peek(TableKey::Message(B)).unwrap().as_messages().unwrap().to_vec();
    run(&mut co, &RemoveMessages { messages: stored.clone() }).unwrap();
    for key in [
        TableKey::Message(B),
        TableKey::inter(A, B),
        TableKey::inter(B, A),
        TableKey::Term(B, W1),
        TableKey::Term(B, W2),
    ] {
        k.ok(&format!("remove clears {key}"), co.peek(key).unwrap().is_default());
    }
    k.eq("remove keeps seq", co.peek(TableKey::SeqNo(B)).unwrap().as_seq().unwrap(), SeqPair::new(1, 0));
    let before = snapshot_of(&mut co, &[TableKey::Message(B), TableKey::inter(A, B), TableKey::SeqNo(B)]);
    run(&mut co, &RemoveMessages { messages: stored }).unwrap();
    let after = snapshot_of(&mut co, &[TableKey::Message(B), TableKey::inter(A, B), TableKey::SeqNo(B)]);
    k.eq("second remove is a no-op", after, before);

    // importMessages
    let (_c, mut co) = fresh(scheme);
    let m3 = msg(B, 3, A, &[W1]);
    let imp = |ms: Vec<Message>| ImportMessages {
        messages: ms,
        cutoff_inclusive: true,
    };
    k.eq("import into empty db", run(&mut co, &imp(vec![m3.clone()])).unwrap().0, 1);
    k.eq("import raises current", co.peek(TableKey::SeqNo(B)).unwrap().as_seq().unwrap().current, 3);
    k.eq("import indexes term", peek_ids(&mut co, TableKey::Term(B, W1)), ids(&[(B, 3)]));
    k.eq("re-import skipped", run(&mut co, &imp(vec![m3])).unwrap().0, 0);
    set_seq(&mut co, C, SeqPair::new(5, 5));
    k.eq("import below cutoff skipped", run(&mut co, &imp(vec![msg(C, 3, A, &[W1])])).unwrap().0, 0);
    k.ok("skipped import leaves inbox empty", co.peek(TableKey::Message(C)).unwrap().is_default());

    // tasks
    let (_c, mut co) = fresh(scheme);
    let r = tasks::association_level(&mut co, A, B).unwrap();
    k.eq("association level on empty db", r.output, TaskOutput::AssociationLevel(0.0));
    for _ in 0..3 {
        send(&mut co, A, B, &[W1]);
    }
    let r = tasks::clear_inbox(&mut co, B).unwrap();
    k.eq("clear inbox runs three txns", r.txns.len(), 3);
    k.ok("clear inbox empties inbox", co.peek(TableKey::Message(B)).unwrap().is_default());
    k.eq("clear inbox cutoff", co.peek(TableKey::SeqNo(B)).unwrap().as_seq().unwrap(), SeqPair::new(3, 3));
    let rs = vec![UserId(10), UserId(11), UserId(12), UserId(13)];
    let r = tasks::send_multicast(&mut co, A, rs, vec![W1]).unwrap();
    k.ok("multicast returns four ids", matches!(&r.output, TaskOutput::SendMulticast(v) if v.len() == 4));
    k.eq("multicast is one txn", r.txns.len(), 1);
    if scheme != Scheme::Occ {
        k.eq("multicast commits first time", r.txns[0].attempts, 1);
    }
    k.failures
}

fn sorted(mut v: Vec<MsgId>) -> Vec<MsgId> {
    v.sort();
    v
}

pub fn snapshot_of(coord: &mut Coordinator, keys: &[TableKey]) -> BTreeMap<TableKey, TableEntry> {
    keys.iter().map(|k| (*k, coord.peek(*k).unwrap())).collect()
}
