//! Acceptance criteria. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion does.
//!
//! `cargo test -p helenos-core --test acceptance -- 3 7` runs a subset.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use helenos::cc::{AccessPlan, RetryPolicy, Scheme};
use helenos::metrics::{
    aggregate, check_integrity, check_serializable, parse_tsv, Clock, Event, EventKind, History, MetricsReport,
    TxnEffects, TxnKind, Verdict,
};
use helenos::model::{bucket_of, TableKey, UserId};
use helenos::store::{LocalTcpCluster, OpKind, OpRecord, SeqPair, Snapshot, StoreClient, TableEntry};
use helenos::workload::{run_scenario, Preset, RunOptions, ScenarioConfig};
use helenos::Coordinator;

/// Reports of every run in criteria 2 to 7, checked by criterion 9.
static RUNS: Mutex<Vec<(String, MetricsReport)>> = Mutex::new(Vec::new());

fn keep(label: String, r: &MetricsReport) {
    RUNS.lock().unwrap().push((label, r.clone()));
}

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const MIN: u64 = 60;

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "transaction traces under every scheme", limit: Duration::from_secs(10), run: c1_traces },
        Criterion { id: 2, name: "zero aborts for glock, fgl and pesv", limit: Duration::from_secs(15 * MIN), run: c2_zero_abort },
        Criterion { id: 3, name: "occ counter under forced conflict", limit: Duration::from_secs(2 * MIN), run: c3_occ_counter },
        Criterion { id: 4, name: "serializability oracle", limit: Duration::from_secs(5 * MIN), run: c4_serializable },
        Criterion { id: 5, name: "integrity at quiescence", limit: Duration::from_secs(10 * MIN), run: c5_integrity },
        Criterion { id: 6, name: "fgl throughput falls with delay", limit: Duration::from_secs(10 * MIN), run: c6_delay_trend },
        Criterion { id: 7, name: "throughput grows with buckets", limit: Duration::from_secs(10 * MIN), run: c7_bucket_trend },
        Criterion { id: 8, name: "glock serial ceiling", limit: Duration::from_secs(3 * MIN), run: c8_glock_ceiling },
        Criterion { id: 9, name: "metrics arithmetic", limit: Duration::from_secs(MIN), run: c9_metrics },
        Criterion { id: 10, name: "glock determinism over both transports", limit: Duration::from_secs(3 * MIN), run: c10_determinism },
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.limit => Err(format!("{d}; exceeded the {:?} limit", c.limit)),
            o => o,
        };
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {verdict} [{}] {:.1}s: {detail}", c.id, c.name, took.as_secs_f64());
        failed += usize::from(outcome.is_err());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn desk(preset: Preset, scheme: Scheme) -> ScenarioConfig {
    let mut cfg = preset.config();
    cfg.scheme = scheme;
    cfg.clients = 32;
    cfg.tasks = 3;
    cfg.nodes = 4;
    cfg.buckets = 256;
    cfg.delay_ms = 1.0;
    cfg
}

fn run_loopback(cfg: &ScenarioConfig, opts: RunOptions) -> helenos::workload::RunOutcome {
    let cluster = common::cluster(cfg.nodes, cfg.buckets, cfg.delay());
    run_scenario(&cluster, cfg, opts).expect("run")
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn mad(v: &[f64]) -> f64 {
    let m = median(v);
    median(&v.iter().map(|x| (x - m).abs()).collect::<Vec<_>>())
}

fn c1_traces() -> Outcome {
    let mut bad = Vec::new();
    for scheme in Scheme::ALL {
        bad.extend(common::trace_suite(scheme).into_iter().map(|f| format!("{scheme}: {f}")));
    }
    if bad.is_empty() {
        Ok("all traces exact under glock, fgl, occ, pesv".into())
    } else {
        Err(bad.join("; "))
    }
}

fn c2_zero_abort() -> Outcome {
    const TASKS: u32 = 10_000;
    let mut notes = Vec::new();
    let mut ok = true;
    for scheme in [Scheme::GLock, Scheme::Fgl, Scheme::PesV] {
        let mut cfg = desk(Preset::Standard, scheme);
        cfg.tasks = TASKS.div_ceil(cfg.clients);
        let t = Instant::now();
        let out = run_loopback(&cfg, RunOptions::default());
        let took = t.elapsed();
        let r = &out.report;
        keep(format!("c2 {scheme}"), r);
        let tasks: usize = out.tasks.iter().map(Vec::len).sum();
        let pass = r.abort_ratio == 0.0 && r.retry_rate == 1.0 && tasks >= TASKS as usize && took < Duration::from_secs(5 * MIN);
        ok &= pass;
        notes.push(format!(
            "{scheme}: {tasks} tasks, {} commits, abort {} retry {} in {:.0}s",
            r.commits,
            r.abort_ratio,
            r.retry_rate,
            took.as_secs_f64()
        ));
    }
    if ok {
        Ok(notes.join("; "))
    } else {
        Err(notes.join("; "))
    }
}

fn c3_occ_counter() -> Outcome {
    const PER_CLIENT: u64 = 100;
    let key = TableKey::SeqNo(UserId(0));
    let mut notes = Vec::new();
    let mut ok = true;
    for n in [2u32, 4, 8] {
        let buckets = 64;
        let cluster = common::cluster(4, buckets, Duration::from_millis(1));
        let clock = Clock::start();
        let events: Vec<Event> = thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .map(|client| {
                    let cluster = &cluster;
                    s.spawn(move || {
                        let store = StoreClient::connect(cluster, buckets).unwrap();
                        let mut co = Coordinator::new(store, Scheme::Occ, client, clock, RetryPolicy::default(), u64::from(client));
                        co.emit(EventKind::ClientStart);
                        let mut plan = AccessPlan::new();
                        plan.read(key).write(key, 1);
                        for _ in 0..PER_CLIENT {
                            co.run_atomic(TxnKind::ResetCutoff, &plan, |tx| {
                                let p = tx.read_seq(key)?;
                                tx.write_seq(key, SeqPair::new(p.current + 1, p.deleted))
                            })
                            .unwrap();
                        }
                        co.emit(EventKind::ClientEnd);
                        co.take_events()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
        });
        let r = aggregate(&events).map_err(|e| e.to_string())?;
        let mut co = common::coordinator(&cluster, buckets, Scheme::Occ, 99);
        let counter = co.peek(key).unwrap().as_seq().unwrap().current;
        let pass = counter == PER_CLIENT * u64::from(n) && r.retry_rate > 1.0;
        ok &= pass;
        notes.push(format!("N={n}: counter {counter} retry rate {:.2}", r.retry_rate));
    }
    if ok {
        Ok(notes.join("; "))
    } else {
        Err(notes.join("; "))
    }
}

fn write_skew_fixture() -> (History, Snapshot) {
    let x = TableKey::SeqNo(UserId(1));
    let y = TableKey::SeqNo(UserId(2));
    let seq = |c| TableEntry::SeqPair(SeqPair::new(c, 0));
    let effects = |txn, after| TxnEffects {
        txn,
        attempt: 1,
        client: txn as u32,
        label: TxnKind::ResetCutoff,
        commit_ns: txn * 10,
        before: vec![(x, seq(0)), (y, seq(0))],
        after: vec![after],
    };
    let op = |txn, key: TableKey, kind| OpRecord {
        bucket: bucket_of(&key, 2).unwrap(),
        txn,
        attempt: 1,
        kind,
        key,
        digest: 0,
    };
    let history = History {
        initial: Snapshot::new(),
        txns: vec![effects(1, (x, seq(1))), effects(2, (y, seq(1)))],
        ops: vec![
            op(1, x, OpKind::Read),
            op(2, x, OpKind::Read),
            op(1, y, OpKind::Read),
            op(2, y, OpKind::Read),
            op(1, x, OpKind::WriteSeq),
            op(2, y, OpKind::WriteSeq),
        ],
    };
    let mut fin = Snapshot::new();
    for k in [x, y] {
        fin.insert(bucket_of(&k, 2).unwrap(), k, seq(1));
    }
    (history, fin)
}

fn c4_serializable() -> Outcome {
    const RUNS_PER_SCHEME: u64 = 50;
    let mut bad = Vec::new();
    let mut txns = 0usize;
    let mut largest = 0usize;
    for scheme in Scheme::ALL {
        for seed in 1..=RUNS_PER_SCHEME {
            let mut cfg = Preset::ALL[(seed % 7) as usize].config();
            cfg.scheme = scheme;
            cfg.seed = seed;
            cfg.nodes = 2;
            cfg.buckets = 2;
            cfg.clients = 3 + (seed % 2) as u32;
            cfg.tasks = 1;
            cfg.users = 6;
            cfg.keywords = 4;
            cfg.msglen = 2;
            cfg.multicast_min = 2;
            cfg.multicast_max = 3;
            cfg.import_min = 1;
            cfg.import_max = 3;
            cfg.query_cap = 2;
            cfg.index_users = 2;
            cfg.delay_ms = 1.0;
            let cluster = common::cluster(cfg.nodes, cfg.buckets, cfg.delay());
            let opts = RunOptions {
                record: true,
                warmup_tasks: 2,
            };
            let out = run_scenario(&cluster, &cfg, opts).map_err(|e| format!("{scheme} seed {seed}: {e}"))?;
            let h = out.history.expect("recorded");
            let n = h.committed().len();
            if n > 10 {
                // Four clients may occasionally commit more than ten; the
                // oracle only covers smaller runs, so shrink and retry.
                cfg.clients = 3;
                let out = run_scenario(&cluster, &cfg, opts).map_err(|e| e.to_string())?;
                let h = out.history.expect("recorded");
                check_one(&mut bad, scheme, seed, &h, &out.snapshot, &mut txns, &mut largest);
                continue;
            }
            check_one(&mut bad, scheme, seed, &h, &out.snapshot, &mut txns, &mut largest);
        }
    }
    let (skew, fin) = write_skew_fixture();
    let skew_verdict = check_serializable(&skew, &fin).map_err(|e| e.to_string())?;
    let skew_detected = matches!(&skew_verdict, Verdict::Unserializable { cycle, .. } if cycle.len() == 2);
    if !skew_detected {
        bad.push(format!("write-skew fixture not rejected: {skew_verdict:?}"));
    }
    if bad.is_empty() {
        Ok(format!(
            "200 runs serializable ({txns} committed txns, at most {largest} per run); write skew rejected with a 2-cycle"
        ))
    } else {
        Err(bad.join("; "))
    }
}

fn check_one(bad: &mut Vec<String>, scheme: Scheme, seed: u64, h: &History, fin: &Snapshot, txns: &mut usize, largest: &mut usize) {
    let n = h.committed().len();
    *txns += n;
    *largest = (*largest).max(n);
    match check_serializable(h, fin) {
        Ok(Verdict::Serializable { .. }) => {}
        Ok(v) => bad.push(format!("{scheme} seed {seed}: {v:?}")),
        Err(e) => bad.push(format!("{scheme} seed {seed}: {e}")),
    }
}

fn c5_integrity() -> Outcome {
    let mut bad = Vec::new();
    let mut runs = 0;
    for scheme in Scheme::ALL {
        for preset in Preset::ALL {
            let cfg = desk(preset, scheme);
            let out = run_loopback(&cfg, RunOptions::default());
            keep(format!("c5 {scheme} {}", preset.name()), &out.report);
            let report = check_integrity(&out.snapshot);
            runs += 1;
            if !report.passed() {
                let first: Vec<String> = report.violations.iter().take(3).map(ToString::to_string).collect();
                bad.push(format!("{scheme}/{}: {}", preset.name(), first.join(", ")));
            }
        }
    }
    if bad.is_empty() {
        Ok(format!("{runs} runs, no violations"))
    } else {
        Err(bad.join("; "))
    }
}

fn throughputs(cfg: &ScenarioConfig, label: &str) -> Vec<f64> {
    (1..=5)
        .map(|seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            let out = run_loopback(&c, RunOptions::default());
            keep(format!("{label} seed {seed}"), &out.report);
            out.report.throughput
        })
        .collect()
}

fn c6_delay_trend() -> Outcome {
    let delays = [0.0, 1.0, 3.0, 5.0, 10.0];
    let mut stats = Vec::new();
    for d in delays {
        let mut cfg = desk(Preset::Standard, Scheme::Fgl);
        cfg.delay_ms = d;
        let t = throughputs(&cfg, &format!("c6 delay {d}"));
        stats.push((d, median(&t), mad(&t)));
    }
    let ok = stats.windows(2).all(|w| {
        let ((_, m0, d0), (_, m1, d1)) = (w[0], w[1]);
        m0 > m1 && m0 - m1 > d0.max(d1)
    });
    let desc: Vec<String> = stats.iter().map(|(d, m, a)| format!("{d}ms {m:.1}±{a:.1}")).collect();
    if ok {
        Ok(desc.join(", "))
    } else {
        Err(desc.join(", "))
    }
}

fn c7_bucket_trend() -> Outcome {
    let sizes = [1u32, 8, 64, 512];
    let mut notes = Vec::new();
    let mut ok = true;
    for scheme in [Scheme::Fgl, Scheme::Occ] {
        let medians: Vec<f64> = sizes
            .iter()
            .map(|&b| {
                let mut cfg = desk(Preset::Standard, scheme);
                cfg.buckets = b;
                median(&throughputs(&cfg, &format!("c7 {scheme} B={b}")))
            })
            .collect();
        let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
        let gain = medians[3] / medians[0];
        ok &= monotone && (scheme != Scheme::Fgl || gain >= 2.0);
        let m: Vec<String> = sizes.iter().zip(&medians).map(|(b, m)| format!("B={b} {m:.1}")).collect();
        notes.push(format!("{scheme}: {} (x{gain:.2})", m.join(", ")));
    }
    if ok {
        Ok(notes.join("; "))
    } else {
        Err(notes.join("; "))
    }
}

fn c8_glock_ceiling() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for d in [1.0, 3.0] {
        let mut cfg = desk(Preset::Standard, Scheme::GLock);
        cfg.delay_ms = d;
        let r = run_loopback(&cfg, RunOptions::default()).report;
        let k = r.bucket_ops as f64 / r.commits as f64;
        let ceiling = 1000.0 / (d * k) * 1.05;
        ok &= r.throughput <= ceiling;
        notes.push(format!("d={d}ms k={k:.2}: {:.1} <= {ceiling:.1} tx/s", r.throughput));
    }
    if ok {
        Ok(notes.join("; "))
    } else {
        Err(notes.join("; "))
    }
}

fn c9_metrics() -> Outcome {
    const TIME_TOL_S: f64 = 1e-6;
    let events = parse_tsv(include_str!("fixtures/metrics_events.tsv")).map_err(|e| e.to_string())?;
    let want: serde_json::Value = serde_json::from_str(include_str!("fixtures/metrics_expected.json")).unwrap();
    let r = aggregate(&events).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    let count = |name: &str| want[name].as_u64().unwrap();
    let float = |name: &str| want[name].as_f64().unwrap();
    for (name, got) in [
        ("clients", r.clients),
        ("commits", r.commits),
        ("attempts", r.attempts),
        ("aborted_attempts", r.aborted_attempts),
        ("bucket_ops", r.bucket_ops),
    ] {
        if got != count(name) {
            bad.push(format!("{name} {got} != {}", count(name)));
        }
    }
    let secs = |ns: u64| ns as f64 / 1e9;
    for (name, got) in [
        ("mean_flow_s", r.mean_flow_ns / 1e9),
        ("txn_time_s", secs(r.txn_time_ns)),
        ("retry_time_s", secs(r.retry_time_ns)),
        ("startup_time_s", secs(r.startup_time_ns)),
        ("total_time_s", secs(r.total_time_ns)),
        ("parallel_time_s", secs(r.parallel_time_ns)),
    ] {
        if (got - float(name)).abs() > TIME_TOL_S {
            bad.push(format!("{name} {got} != {}", float(name)));
        }
    }
    for (name, got) in [
        ("throughput_per_s", r.throughput),
        ("abort_ratio", r.abort_ratio),
        ("retry_rate", r.retry_rate),
        ("txn_ratio", r.txn_ratio),
    ] {
        let w = float(name);
        if (got - w).abs() > 1e-9 * w.abs().max(1.0) {
            bad.push(format!("{name} {got} != {w}"));
        }
    }
    let want_kinds: BTreeMap<String, (u64, u64)> = want["per_kind"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), (v["commits"].as_u64().unwrap(), v["flow_ns"].as_u64().unwrap())))
        .collect();
    let got_kinds: BTreeMap<String, (u64, u64)> =
        r.per_kind.iter().map(|(k, s)| (k.name().to_string(), (s.commits, s.flow_ns))).collect();
    if want_kinds != got_kinds {
        bad.push(format!("per-kind stats {got_kinds:?} != {want_kinds:?}"));
    }

    let runs = RUNS.lock().unwrap();
    for (label, r) in runs.iter() {
        let kinds: u64 = r.per_kind.values().map(|k| k.commits).sum();
        if r.retry_rate < 1.0 || !(0.0..=1.0).contains(&r.txn_ratio) || !(0.0..1.0).contains(&r.abort_ratio) || kinds != r.commits {
            bad.push(format!("{label}: retry {} ratio {} abort {}", r.retry_rate, r.txn_ratio, r.abort_ratio));
        }
        if r.parallel_time_ns > r.total_time_ns {
            bad.push(format!("{label}: parallel time exceeds total time"));
        }
    }
    if bad.is_empty() {
        Ok(format!("fixture matches oracle; invariants hold on {} runs", runs.len()))
    } else {
        Err(bad.join("; "))
    }
}

fn c10_determinism() -> Outcome {
    let mut cfg = desk(Preset::Standard, Scheme::GLock);
    cfg.clients = 1;
    cfg.tasks = 40;
    let mut dumps = Vec::new();
    for transport in ["loopback", "tcp"] {
        for _ in 0..2 {
            let out = if transport == "loopback" {
                run_loopback(&cfg, RunOptions::default())
            } else {
                let tcp = LocalTcpCluster::start(cfg.nodes, cfg.buckets, cfg.delay()).map_err(|e| e.to_string())?;
                let out = run_scenario(&tcp, &cfg, RunOptions::default()).map_err(|e| e.to_string())?;
                tcp.shutdown();
                out
            };
            dumps.push((transport, out.snapshot.to_bytes(), out.report.commits));
        }
    }
    let (_, first, commits) = &dumps[0];
    let same = dumps.iter().all(|(_, d, c)| d == first && c == commits);
    let detail = format!("{} dumps of {} bytes, {commits} commits each", dumps.len(), first.len());
    if same && !first.is_empty() {
        Ok(detail)
    } else {
        let desc: Vec<String> = dumps.iter().map(|(t, d, c)| format!("{t}: {} bytes {c} commits", d.len())).collect();
        Err(desc.join("; "))
    }
}
