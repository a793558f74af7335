//! Aggregation of an event stream into the run report, and its CSV form.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{Event, EventKind, TxnKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindStats {
    pub commits: u64,
    pub flow_ns: u64,
}

impl KindStats {
    pub fn mean_flow_ns(&self) -> f64 {
        if self.commits == 0 {
            0.0
        } else {
            self.flow_ns as f64 / self.commits as f64
        }
    }
}

/// Every run metric. Time sums are kept in integer nanoseconds so that
/// replaying a log reproduces the report exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub clients: u64,
    pub commits: u64,
    pub attempts: u64,
    pub aborted_attempts: u64,
    /// Committed transactions per second of parallel execution time.
    pub throughput: f64,
    pub mean_flow_ns: f64,
    pub per_kind: BTreeMap<TxnKind, KindStats>,
    pub abort_ratio: f64,
    pub retry_rate: f64,
    /// Sum of flow times.
    pub txn_time_ns: u64,
    /// Sum over retried transactions of commit minus first retry start.
    pub retry_time_ns: u64,
    /// Sum of first retry start minus start, or the whole flow time when
    /// never retried.
    pub startup_time_ns: u64,
    /// Every storage op executed, including those of aborted attempts.
    pub bucket_ops: u64,
    pub total_time_ns: u64,
    /// First client start to last client end.
    pub parallel_time_ns: u64,
    pub txn_ratio: f64,
}

#[derive(Default)]
struct TxnTrace {
    start: Option<u64>,
    label: Option<TxnKind>,
    first_retry: Option<u64>,
    retries: u64,
    commit: Option<u64>,
}

/// Computes the report. Refuses streams where a client never ended or a
/// transaction never committed.
pub fn aggregate(events: &[Event]) -> Result<MetricsReport> {
    let mut client_start: HashMap<u32, u64> = HashMap::new();
    let mut client_end: HashMap<u32, u64> = HashMap::new();
    let mut run_start = None;
    let mut run_end = None;
    let mut txns: BTreeMap<u64, TxnTrace> = BTreeMap::new();
    let mut bucket_ops = 0u64;

    for e in events {
        match e.kind {
            EventKind::RunStart => run_start = Some(run_start.map_or(e.time_ns, |t: u64| t.min(e.time_ns))),
            EventKind::RunEnd => run_end = Some(run_end.map_or(e.time_ns, |t: u64| t.max(e.time_ns))),
            EventKind::ClientStart => {
                if client_start.insert(e.client, e.time_ns).is_some() {
                    return Err(Error::IncompleteEvents(format!("client {} started twice", e.client)));
                }
            }
            EventKind::ClientEnd => {
                if client_end.insert(e.client, e.time_ns).is_some() {
                    return Err(Error::IncompleteEvents(format!("client {} ended twice", e.client)));
                }
            }
            EventKind::TxnStart { txn, label } => {
                let t = txns.entry(txn).or_default();
                if t.start.is_some() {
                    return Err(Error::IncompleteEvents(format!("txn {txn} started twice")));
                }
                t.start = Some(e.time_ns);
                t.label = Some(label);
            }
            EventKind::RetryStart { txn, .. } => {
                let t = txns.entry(txn).or_default();
                t.retries += 1;
                t.first_retry = Some(t.first_retry.map_or(e.time_ns, |f| f.min(e.time_ns)));
            }
            EventKind::Commit { txn, .. } => {
                let t = txns.entry(txn).or_default();
                if t.commit.is_some() {
                    return Err(Error::IncompleteEvents(format!("txn {txn} committed twice")));
                }
                t.commit = Some(e.time_ns);
            }
            EventKind::BucketOp { .. } => bucket_ops += 1,
        }
    }

    if client_start.is_empty() {
        return Err(Error::IncompleteEvents("no client started".into()));
    }
    if let Some(c) = client_start.keys().find(|c| !client_end.contains_key(c)) {
        return Err(Error::IncompleteEvents(format!("client {c} never ended")));
    }
    if let Some(c) = client_end.keys().find(|c| !client_start.contains_key(c)) {
        return Err(Error::IncompleteEvents(format!("client {c} ended without starting")));
    }
    let first = *client_start.values().min().unwrap();
    let last = *client_end.values().max().unwrap();
    if last < first {
        return Err(Error::IncompleteEvents("clients ended before they started".into()));
    }
    let parallel_time_ns = last - first;

    let mut r = MetricsReport {
        clients: client_start.len() as u64,
        bucket_ops,
        parallel_time_ns,
        ..Default::default()
    };
    for (txn, t) in &txns {
        let (Some(start), Some(label), Some(commit)) = (t.start, t.label, t.commit) else {
            return Err(Error::IncompleteEvents(format!("txn {txn} has no start or no commit")));
        };
        if commit < start || t.first_retry.is_some_and(|f| f < start || f > commit) {
            return Err(Error::IncompleteEvents(format!("txn {txn} has non-monotone times")));
        }
        let flow = commit - start;
        r.commits += 1;
        r.attempts += 1 + t.retries;
        r.aborted_attempts += t.retries;
        r.txn_time_ns += flow;
        match t.first_retry {
            Some(f) => {
                r.startup_time_ns += f - start;
                r.retry_time_ns += commit - f;
            }
            None => r.startup_time_ns += flow,
        }
        let k = r.per_kind.entry(label).or_default();
        k.commits += 1;
        k.flow_ns += flow;
    }

    r.total_time_ns = match (run_start, run_end) {
        (Some(s), Some(e)) if e >= s => e - s,
        _ => parallel_time_ns,
    };
    if r.total_time_ns < r.parallel_time_ns {
        r.total_time_ns = r.parallel_time_ns;
    }
    if r.commits > 0 {
        r.mean_flow_ns = r.txn_time_ns as f64 / r.commits as f64;
        r.retry_rate = r.attempts as f64 / r.commits as f64;
        r.abort_ratio = r.aborted_attempts as f64 / r.attempts as f64;
    }
    if parallel_time_ns > 0 {
        let secs = parallel_time_ns as f64 / 1e9;
        r.throughput = r.commits as f64 / secs;
        r.txn_ratio = (r.txn_time_ns as f64 / (r.clients as f64 * parallel_time_ns as f64)).clamp(0.0, 1.0);
    }
    Ok(r)
}

/// Identifies one CSV row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLabel {
    pub run: String,
    pub scenario: String,
    pub scheme: String,
    pub seed: String,
}

/// Fixed column order of the report CSV. Times are milliseconds.
pub fn csv_header() -> String {
    let mut cols: Vec<String> = [
        "run",
        "scenario",
        "scheme",
        "seed",
        "clients",
        "commits",
        "attempts",
        "aborted_attempts",
        "throughput_tps",
        "mean_flow_ms",
        "abort_ratio",
        "retry_rate",
        "total_txn_ms",
        "total_retry_ms",
        "total_startup_ms",
        "bucket_ops",
        "total_exec_ms",
        "parallel_exec_ms",
        "txn_exec_ratio",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(TxnKind::ALL.iter().map(|k| format!("mft_{}_ms", k.name())));
    cols.join(",")
}

fn ms(ns: f64) -> f64 {
    ns / 1e6
}

impl MetricsReport {
    fn numbers(&self) -> Vec<f64> {
        let mut v = vec![
            self.clients as f64,
            self.commits as f64,
            self.attempts as f64,
            self.aborted_attempts as f64,
            self.throughput,
            ms(self.mean_flow_ns),
            self.abort_ratio,
            self.retry_rate,
            ms(self.txn_time_ns as f64),
            ms(self.retry_time_ns as f64),
            ms(self.startup_time_ns as f64),
            self.bucket_ops as f64,
            ms(self.total_time_ns as f64),
            ms(self.parallel_time_ns as f64),
            self.txn_ratio,
        ];
        v.extend(
            TxnKind::ALL
                .iter()
                .map(|k| ms(self.per_kind.get(k).copied().unwrap_or_default().mean_flow_ns())),
        );
        v
    }

    pub fn csv_row(&self, label: &RunLabel) -> String {
        format_row(label, &self.numbers())
    }
}

fn format_row(label: &RunLabel, numbers: &[f64]) -> String {
    let mut row = format!("{},{},{},{}", label.run, label.scenario, label.scheme, label.seed);
    for n in numbers {
        let _ = write!(row, ",{}", trim(*n));
    }
    row
}

fn trim(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.6}")
    }
}

/// Column-wise mean of several reports as one CSV row.
pub fn mean_row(reports: &[MetricsReport], label: &RunLabel) -> String {
    let rows: Vec<Vec<f64>> = reports.iter().map(MetricsReport::numbers).collect();
    let n = rows.len().max(1) as f64;
    let width = rows.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..width).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    format_row(label, &means)
}
