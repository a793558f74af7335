//! `helenos`: launch storage nodes, run or sweep scenarios, verify recorded
//! runs.

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use helenos::metrics::{
    aggregate, check_conflict_graph, check_integrity, check_serializable, csv_header, mean_row, parse_tsv, write_tsv,
    History, MetricsReport, RunLabel, Verdict, BRUTE_FORCE_LIMIT,
};
use helenos::model::NodeId;
use helenos::store::{LoopbackCluster, Node, NodeConfig, NodeServer, Snapshot, TcpConnector};
use helenos::workload::{run_scenario, Preset, RunOptions, RunOutcome, ScenarioConfig};
use helenos::Scheme;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "helenos", version, about = "Distributed transactional-memory benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve one storage node over TCP until interrupted.
    Node(NodeArgs),
    /// Run a scenario and print one CSV row per repetition plus their mean.
    Run(RunArgs),
    /// Run a scenario once per value of one parameter.
    Sweep(SweepArgs),
    /// Check serializability and integrity of a recorded run.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Scenario file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: standard, small-r, small-rw, small-w, large-r,
    /// large-rw, large-w.
    #[arg(long)]
    preset: Option<Preset>,
    /// Override one setting, e.g. `clients=8` or `probabilities.indexing=0.5`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScenarioConfig, Failure> {
        let base = match (&self.config, self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                ScenarioConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            (None, Some(p)) => p.config(),
            (None, None) => ScenarioConfig::default(),
        };
        base.with_overrides(&self.overrides).map_err(|e| Failure::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct NodeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// This node's index on the ring.
    #[arg(long)]
    id: u32,
    /// Cluster size; defaults to the scenario's node count.
    #[arg(long)]
    nodes: Option<u32>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Concurrency control: glock, fgl, occ, pesv.
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Seed of the first repetition.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repeat: u32,
    /// Directory for the event log, final snapshot and history.
    #[arg(long, value_name = "DIR")]
    record: Option<PathBuf>,
    /// Tasks per client run before measurement to populate the store.
    #[arg(long, default_value_t = 0)]
    warmup: u32,
    /// Host N nodes in this process (the default, with the scenario's node
    /// count).
    #[arg(long, value_name = "N", conflicts_with = "endpoints")]
    in_process: Option<u32>,
    /// Comma-separated node addresses; address i is node i.
    #[arg(long, value_delimiter = ',')]
    endpoints: Vec<SocketAddr>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective scenario file and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// One of buckets, delay, clients, tasks, nodes, msglen, scheme.
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory written by `run --record`.
    dir: PathBuf,
    /// Use conflict-graph acyclicity instead of the permutation search.
    #[arg(long)]
    graph_mode: bool,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
    Verify(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<helenos::Error> for Failure {
    fn from(e: helenos::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HELENOS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Node(a) => cmd_node(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Verify(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

/// The error and its causes, skipping causes already quoted by the message
/// above them.
fn chain(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !last.ends_with(&text) {
            out = format!("{out}: {text}");
        }
        last = text;
    }
    out
}

fn cmd_node(a: NodeArgs) -> Result<(), Failure> {
    let cfg = a.config.load()?;
    let nodes = a.nodes.unwrap_or(cfg.nodes);
    if a.id >= nodes {
        return Err(Failure::Usage(format!("node id {} outside a {nodes}-node cluster", a.id)));
    }
    let node = Node::new(NodeConfig {
        id: NodeId(a.id),
        nodes,
        buckets: cfg.buckets,
        delay: cfg.delay(),
    })?;
    let server = NodeServer::bind(Arc::new(node), a.listen.as_str()).with_context(|| format!("cannot listen on {}", a.listen))?;
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .context("cannot install the interrupt handler")?;
    println!("READY {}", server.local_addr());
    io::stdout().flush().ok();
    let _ = rx.recv();
    log::info!("draining node {}", a.id);
    server.shutdown();
    Ok(())
}

enum Target {
    Local(u32),
    Remote(TcpConnector),
}

impl RunArgs {
    fn scenario(&self) -> Result<ScenarioConfig, Failure> {
        let mut cfg = self.config.load()?;
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.in_process {
            cfg.nodes = n;
        }
        if !self.endpoints.is_empty() {
            cfg.nodes = self.endpoints.len() as u32;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        if self.repeat == 0 {
            return Err(Failure::Usage("--repeat must be at least 1".into()));
        }
        Ok(cfg)
    }

    fn target(&self, cfg: &ScenarioConfig) -> Result<Target, Failure> {
        if self.endpoints.is_empty() {
            Ok(Target::Local(cfg.nodes))
        } else {
            Ok(Target::Remote(TcpConnector::new(self.endpoints.clone())?))
        }
    }
}

/// Runs `repeat` repetitions and returns CSV rows (without header).
fn run_block(args: &RunArgs, cfg: &ScenarioConfig, record: Option<&Path>) -> Result<Vec<String>, Failure> {
    let target = args.target(cfg)?;
    let mut rows = Vec::new();
    let mut reports: Vec<MetricsReport> = Vec::new();
    for i in 0..args.repeat {
        let mut c = cfg.clone();
        c.seed = cfg.seed + u64::from(i);
        let opts = RunOptions {
            record: record.is_some(),
            warmup_tasks: args.warmup,
        };
        let out = match &target {
            Target::Local(n) => {
                let cluster = LoopbackCluster::new(*n, c.buckets, c.delay())?;
                run_scenario(&cluster, &c, opts)
            }
            Target::Remote(conn) => run_scenario(conn, &c, opts),
        }
        .with_context(|| format!("run {} (seed {}) failed", i + 1, c.seed))?;
        if let Some(dir) = record {
            let dir = if args.repeat == 1 {
                dir.to_path_buf()
            } else {
                dir.join(format!("run-{}", i + 1))
            };
            write_record(&dir, &out)?;
        }
        let label = RunLabel {
            run: (i + 1).to_string(),
            scenario: c.name.clone(),
            scheme: c.scheme.to_string(),
            seed: c.seed.to_string(),
        };
        rows.push(out.report.csv_row(&label));
        reports.push(out.report);
    }
    let label = RunLabel {
        run: "mean".into(),
        scenario: cfg.name.clone(),
        scheme: cfg.scheme.to_string(),
        seed: "-".into(),
    };
    rows.push(mean_row(&reports, &label));
    Ok(rows)
}

fn write_record(dir: &Path, out: &RunOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    fs::write(dir.join("events.tsv"), write_tsv(&out.events))?;
    fs::write(dir.join("snapshot.bin"), out.snapshot.to_bytes())?;
    if let Some(h) = &out.history {
        fs::write(dir.join("history.json"), h.to_json())?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes()).context("cannot write to standard output")?;
        }
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let cfg = a.scenario()?;
    if a.print_config {
        return emit(a.out.as_deref(), &cfg.to_toml());
    }
    let rows = run_block(&a, &cfg, a.record.as_deref())?;
    let mut text = csv_header() + "\n";
    for r in rows {
        text += &r;
        text += "\n";
    }
    emit(a.out.as_deref(), &text)
}

const AXES: [&str; 7] = ["buckets", "delay", "clients", "tasks", "nodes", "msglen", "scheme"];

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    if !AXES.contains(&a.axis.as_str()) {
        return Err(Failure::Usage(format!("unknown axis {:?}; expected one of {}", a.axis, AXES.join(", "))));
    }
    if a.axis == "nodes" && !a.run.endpoints.is_empty() {
        return Err(Failure::Usage("the nodes axis needs an in-process cluster".into()));
    }
    let base = a.run.scenario()?;
    let mut text = format!("axis,value,{}\n", csv_header());
    for v in &a.values {
        let key = if a.axis == "delay" { "delay_ms" } else { a.axis.as_str() };
        let cfg = base.with_overrides(&[format!("{key}={v}")]).map_err(|e| Failure::Usage(e.to_string()))?;
        let mut run = a.run.clone();
        if a.axis == "nodes" {
            run.in_process = Some(cfg.nodes);
        }
        let record = a.run.record.as_ref().map(|d| d.join(format!("{}-{v}", a.axis)));
        for row in run_block(&run, &cfg, record.as_deref())? {
            text += &format!("{},{v},{row}\n", a.axis);
        }
    }
    emit(a.run.out.as_deref(), &text)
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let read = |name: &str| {
        let p = a.dir.join(name);
        fs::read(&p).with_context(|| format!("cannot read {}", p.display()))
    };
    let snapshot = Snapshot::from_bytes(&read("snapshot.bin")?).map_err(|e| anyhow!("snapshot.bin: {e}"))?;
    let history_text = String::from_utf8(read("history.json")?).context("history.json is not UTF-8")?;
    let history = History::from_json(&history_text).context("history.json")?;
    let events_text = String::from_utf8(read("events.tsv")?).context("events.tsv is not UTF-8")?;
    let report = aggregate(&parse_tsv(&events_text)?).context("events.tsv")?;

    let committed = history.committed().len();
    if !a.graph_mode && committed > BRUTE_FORCE_LIMIT {
        return Err(Failure::Usage(format!(
            "{committed} committed transactions exceed the permutation limit of {BRUTE_FORCE_LIMIT}; pass --graph-mode"
        )));
    }
    if committed as u64 != report.commits {
        return Err(Failure::Verify(format!(
            "history holds {committed} committed transactions but the event log {}",
            report.commits
        )));
    }
    let verdict = if a.graph_mode {
        check_conflict_graph(&history)
    } else {
        check_serializable(&history, &snapshot)?
    };
    let integrity = check_integrity(&snapshot);
    let mut problems = Vec::new();
    match &verdict {
        Verdict::Serializable { witness } => {
            println!("serializable: {} transactions, witness {witness:?}", witness.len());
        }
        Verdict::Unserializable { cycle, reason } => {
            println!("UNSERIALIZABLE: {reason}; cycle {cycle:?}");
            problems.push("not serializable".to_string());
        }
    }
    if integrity.passed() {
        println!("integrity: ok ({} entries)", snapshot.len());
    } else {
        for v in &integrity.violations {
            println!("integrity violation: {v}");
        }
        problems.push(format!("{} integrity violations", integrity.violations.len()));
    }
    if problems.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Verify(problems.join(", ")))
    }
}
