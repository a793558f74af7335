//! Closed-loop client driver and whole-run orchestration.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{pick_task, ScenarioConfig, TaskType};
use super::tasks::{run_task, DataGen};
use crate::cc::Coordinator;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, Clock, Event, EventKind, History, MetricsReport, TxnEffects};
use crate::store::{Connector, Snapshot, StoreClient};

/// What the clients of one phase produced.
#[derive(Debug, Default)]
pub struct ClientsOutcome {
    /// All events, ordered by time.
    pub events: Vec<Event>,
    /// Committed effects, only when recording.
    pub effects: Vec<TxnEffects>,
    /// Task types executed, per client, in order.
    pub tasks: Vec<Vec<TaskType>>,
}

/// Per-client generators: task choice and data draws use separate streams
/// of the same seed so one does not perturb the other.
pub fn client_rngs(seed: u64, client: u32) -> (ChaCha8Rng, ChaCha8Rng) {
    let s = seed ^ u64::from(client);
    let tasks = ChaCha8Rng::seed_from_u64(s);
    let mut data = ChaCha8Rng::seed_from_u64(s);
    data.set_stream(1);
    (tasks, data)
}

/// Runs `cfg.clients` concurrent clients, each executing `tasks` tasks drawn
/// from the scenario mix. `epoch` keeps transaction ids distinct from other
/// phases against the same cluster. The first client failure stops the
/// others after their current task and is returned.
pub fn run_clients(
    connector: &dyn Connector,
    cfg: &ScenarioConfig,
    clock: Clock,
    tasks: u32,
    epoch: u8,
    record: bool,
) -> Result<ClientsOutcome> {
    let stop = AtomicBool::new(false);
    let results: Vec<Result<(Vec<Event>, Vec<TxnEffects>, Vec<TaskType>)>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.clients)
            .map(|client| {
                let stop = &stop;
                scope.spawn(move || {
                    let r = run_one_client(connector, cfg, clock, tasks, epoch, record, client, stop);
                    if r.is_err() {
                        stop.store(true, Ordering::SeqCst);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::RunAborted("client thread panicked".into()))))
            .collect()
    });

    let mut out = ClientsOutcome::default();
    let mut first_err = None;
    for r in results {
        match r {
            Ok((events, effects, kinds)) => {
                out.events.extend(events);
                out.effects.extend(effects);
                out.tasks.push(kinds);
            }
            Err(e) => {
                // A client stopped by another's failure reports RunAborted;
                // prefer the root cause.
                if first_err.is_none() || matches!(first_err, Some(Error::RunAborted(_))) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    out.events.sort_by_key(|e| e.time_ns);
    out.effects.sort_by_key(|e| e.commit_ns);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_one_client(
    connector: &dyn Connector,
    cfg: &ScenarioConfig,
    clock: Clock,
    tasks: u32,
    epoch: u8,
    record: bool,
    client: u32,
    stop: &AtomicBool,
) -> Result<(Vec<Event>, Vec<TxnEffects>, Vec<TaskType>)> {
    let store = StoreClient::connect(connector, cfg.buckets)?;
    let backoff_seed = (cfg.seed ^ u64::from(client)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut coord = Coordinator::new(store, cfg.scheme, client, clock, cfg.retry_policy(), backoff_seed);
    coord.set_record(record);
    coord.set_epoch(epoch);
    let (mut task_rng, data_rng) = client_rngs(cfg.seed, client);
    let mut data = DataGen::new(cfg, data_rng);
    let mut kinds = Vec::with_capacity(tasks as usize);

    coord.emit(EventKind::ClientStart);
    for i in 0..tasks {
        if stop.load(Ordering::SeqCst) {
            return Err(Error::RunAborted(format!("client {client} stopped after {i} tasks")));
        }
        let t = pick_task(&cfg.probabilities, &mut task_rng);
        if let Err(e) = run_task(t, &mut coord, &mut data) {
            log::error!("client {client} failed in task {i} ({t}): {e}");
            return Err(e);
        }
        kinds.push(t);
    }
    coord.emit(EventKind::ClientEnd);
    Ok((coord.take_events(), coord.take_effects(), kinds))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record bucket histories and transaction effects for verification.
    pub record: bool,
    /// Tasks per client executed before measurement to populate the store.
    /// Their events are discarded; their final state is the initial state
    /// of the recorded history.
    pub warmup_tasks: u32,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub events: Vec<Event>,
    pub snapshot: Snapshot,
    pub history: Option<History>,
    pub tasks: Vec<Vec<TaskType>>,
}

/// Executes one scenario run against a cluster: checks that every node
/// answers, resets the store, optionally warms it up, runs the measured
/// phase and collects the final state.
pub fn run_scenario(connector: &dyn Connector, cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let clock = Clock::start();
    let mut admin = StoreClient::connect(connector, cfg.buckets)?;
    admin.ping_all()?;
    admin.reset_all(opts.record)?;

    if opts.warmup_tasks > 0 {
        run_clients(connector, cfg, clock, opts.warmup_tasks, 1, false)?;
    }
    let initial = if opts.record { admin.snapshot_all()? } else { Snapshot::new() };

    let run_start = Event::new(clock.now_ns(), 0, EventKind::RunStart);
    let phase = run_clients(connector, cfg, clock, cfg.tasks, 0, opts.record)?;
    let snapshot = admin.snapshot_all()?;
    let history = if opts.record {
        Some(History {
            initial,
            txns: phase.effects,
            ops: admin.history_all()?,
        })
    } else {
        None
    };

    let mut events = Vec::with_capacity(phase.events.len() + 2);
    events.push(run_start);
    events.extend(phase.events);
    events.push(Event::new(clock.now_ns(), 0, EventKind::RunEnd));
    let report = aggregate(&events)?;
    Ok(RunOutcome {
        report,
        events,
        snapshot,
        history,
        tasks: phase.tasks,
    })
}
