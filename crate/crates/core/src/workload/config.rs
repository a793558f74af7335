//! Scenario configuration: a flat TOML file with a `[probabilities]` table.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cc::{RetryPolicy, Scheme};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    TermSearch,
    InteractionSearch,
    SendUnicast,
    SendMulticast,
    BatchImport,
    ClearInbox,
    AssociationLevel,
    Indexing,
}

impl TaskType {
    pub const ALL: [TaskType; 8] = [
        TaskType::TermSearch,
        TaskType::InteractionSearch,
        TaskType::SendUnicast,
        TaskType::SendMulticast,
        TaskType::BatchImport,
        TaskType::ClearInbox,
        TaskType::AssociationLevel,
        TaskType::Indexing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskType::TermSearch => "term_search",
            TaskType::InteractionSearch => "interaction_search",
            TaskType::SendUnicast => "send_unicast",
            TaskType::SendMulticast => "send_multicast",
            TaskType::BatchImport => "batch_import",
            TaskType::ClearInbox => "clear_inbox",
            TaskType::AssociationLevel => "association_level",
            TaskType::Indexing => "indexing",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Probability of each task type; field order follows [`TaskType::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probabilities {
    pub term_search: f64,
    pub interaction_search: f64,
    pub send_unicast: f64,
    pub send_multicast: f64,
    pub batch_import: f64,
    pub clear_inbox: f64,
    pub association_level: f64,
    pub indexing: f64,
}

impl Probabilities {
    pub fn from_weights(w: [f64; 8]) -> Self {
        Probabilities {
            term_search: w[0],
            interaction_search: w[1],
            send_unicast: w[2],
            send_multicast: w[3],
            batch_import: w[4],
            clear_inbox: w[5],
            association_level: w[6],
            indexing: w[7],
        }
    }

    pub fn weights(&self) -> [f64; 8] {
        [
            self.term_search,
            self.interaction_search,
            self.send_unicast,
            self.send_multicast,
            self.batch_import,
            self.clear_inbox,
            self.association_level,
            self.indexing,
        ]
    }

    pub fn get(&self, task: TaskType) -> f64 {
        self.weights()[task as usize]
    }

    /// All probability on one task.
    pub fn only(task: TaskType) -> Self {
        let mut w = [0.0; 8];
        w[task as usize] = 1.0;
        Self::from_weights(w)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if let Some(i) = w.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("probability of {} must be a non-negative number", TaskType::ALL[i])));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("task probabilities sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// The seven evaluation scenarios with their task mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Standard,
    SmallR,
    SmallRw,
    SmallW,
    LargeR,
    LargeRw,
    LargeW,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Standard,
        Preset::SmallR,
        Preset::SmallRw,
        Preset::SmallW,
        Preset::LargeR,
        Preset::LargeRw,
        Preset::LargeW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Standard => "standard",
            Preset::SmallR => "small-r",
            Preset::SmallRw => "small-rw",
            Preset::SmallW => "small-w",
            Preset::LargeR => "large-r",
            Preset::LargeRw => "large-rw",
            Preset::LargeW => "large-w",
        }
    }

    pub fn probabilities(self) -> Probabilities {
        Probabilities::from_weights(match self {
            Preset::Standard => [0.25, 0.20, 0.06, 0.04, 0.04, 0.06, 0.20, 0.15],
            Preset::SmallR => [0.30, 0.30, 0.02, 0.02, 0.02, 0.02, 0.30, 0.02],
            Preset::SmallRw => [0.19, 0.19, 0.19, 0.02, 0.02, 0.18, 0.19, 0.02],
            Preset::SmallW => [0.02, 0.02, 0.44, 0.02, 0.02, 0.44, 0.02, 0.02],
            Preset::LargeR => [0.44, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.44],
            Preset::LargeRw => [0.19, 0.02, 0.02, 0.19, 0.18, 0.19, 0.02, 0.19],
            Preset::LargeW => [0.02, 0.02, 0.02, 0.30, 0.30, 0.30, 0.02, 0.02],
        })
    }

    /// Desk-scale configuration for this mix.
    pub fn config(self) -> ScenarioConfig {
        ScenarioConfig {
            name: self.name().to_string(),
            probabilities: self.probabilities(),
            ..ScenarioConfig::default()
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// Every workload parameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub nodes: u32,
    /// Buckets per table.
    pub buckets: u32,
    pub clients: u32,
    /// Tasks each client executes back to back.
    pub tasks: u32,
    /// Words per message.
    pub msglen: u32,
    /// Size of the keyword domain.
    pub keywords: u32,
    /// Size of the user population.
    pub users: u64,
    /// Delay applied by the node to every storage op.
    pub delay_ms: f64,
    pub multicast_min: u32,
    pub multicast_max: u32,
    pub import_min: u32,
    pub import_max: u32,
    /// Most keywords in one search query.
    pub query_cap: u32,
    /// Users covered by one indexing task.
    pub index_users: u32,
    /// Messages kept by an indexing task after sorting.
    pub index_cap: u32,
    pub backoff_base_ms: f64,
    pub backoff_cap_ms: f64,
    pub max_attempts: u32,
    /// Imports skip messages at or below the deletion cutoff when true,
    /// only those strictly below it when false.
    pub cutoff_inclusive: bool,
    pub probabilities: Probabilities,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "standard".into(),
            scheme: Scheme::Fgl,
            seed: 1,
            nodes: 4,
            buckets: 256,
            clients: 32,
            tasks: 3,
            msglen: 8,
            keywords: 100,
            users: 1000,
            delay_ms: 1.0,
            multicast_min: 2,
            multicast_max: 5,
            import_min: 2,
            import_max: 8,
            query_cap: 4,
            index_users: 3,
            index_cap: 3,
            backoff_base_ms: 1.0,
            backoff_cap_ms: 64.0,
            max_attempts: 10_000,
            cutoff_inclusive: true,
            probabilities: Preset::Standard.probabilities(),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies `key=value` overrides; nested keys use dots, as in
    /// `probabilities.indexing=0.5`. Values use TOML syntax, bare words are
    /// taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = path.trim().split('.').collect();
            let leaf = parts.pop().unwrap();
            let mut target = &mut table;
            for p in parts {
                target = target
                    .get_mut(p)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| Error::Config(format!("unknown configuration section {p:?}")))?;
            }
            if !target.contains_key(leaf) {
                return Err(Error::Config(format!("unknown configuration key {:?}", path.trim())));
            }
            target.insert(leaf.to_string(), value);
        }
        let cfg: ScenarioConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", u64::from(self.nodes)),
            ("buckets", u64::from(self.buckets)),
            ("clients", u64::from(self.clients)),
            ("tasks", u64::from(self.tasks)),
            ("msglen", u64::from(self.msglen)),
            ("keywords", u64::from(self.keywords)),
            ("multicast_min", u64::from(self.multicast_min)),
            ("import_min", u64::from(self.import_min)),
            ("query_cap", u64::from(self.query_cap)),
            ("index_users", u64::from(self.index_users)),
            ("index_cap", u64::from(self.index_cap)),
            ("max_attempts", u64::from(self.max_attempts)),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be at least 1")));
        }
        if self.users < 2 {
            return Err(Error::Config("users must be at least 2".into()));
        }
        if self.multicast_min > self.multicast_max || u64::from(self.multicast_max) >= self.users {
            return Err(Error::Config("multicast range must be ordered and below the user count".into()));
        }
        if self.import_min > self.import_max {
            return Err(Error::Config("import range must be ordered".into()));
        }
        if u64::from(self.index_users) > self.users {
            return Err(Error::Config("index_users exceeds the user count".into()));
        }
        if self.query_cap > self.keywords {
            return Err(Error::Config("query_cap exceeds the keyword domain".into()));
        }
        for (k, v) in [("delay_ms", self.delay_ms), ("backoff_base_ms", self.backoff_base_ms), ("backoff_cap_ms", self.backoff_cap_ms)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{k} must be a non-negative number")));
            }
        }
        self.probabilities.validate()
    }

    pub fn delay(&self) -> Duration {
        Duration::from_secs_f64(self.delay_ms / 1e3)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            base: Duration::from_secs_f64(self.backoff_base_ms / 1e3),
            cap: Duration::from_secs_f64(self.backoff_cap_ms / 1e3),
            max_attempts: self.max_attempts,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Samples a task type from the scenario's mix.
pub fn pick_task(probabilities: &Probabilities, rng: &mut impl Rng) -> TaskType {
    let dist = WeightedIndex::new(probabilities.weights()).expect("validated probabilities");
    TaskType::ALL[dist.sample(rng)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_preset_sums_to_one() {
        for p in Preset::ALL {
            p.probabilities().validate().unwrap();
            p.config().validate().unwrap();
        }
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let cfg = Preset::LargeRw.config();
        let text = cfg.to_toml();
        assert!(text.contains("[probabilities]"));
        assert_eq!(ScenarioConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = ScenarioConfig::default();
        let o = cfg.with_overrides(&["clients=1", "scheme=glock", "delay_ms=0.5"]).unwrap();
        assert_eq!((o.clients, o.scheme, o.delay_ms), (1, Scheme::GLock, 0.5));
        let p = cfg
            .with_overrides(&["probabilities.term_search=0.30", "probabilities.indexing=0.10"])
            .unwrap();
        assert_eq!(p.probabilities.term_search, 0.30);
        assert!(cfg.with_overrides(&["probabilities.indexing=0.5"]).is_err());
        assert!(cfg.with_overrides(&["nosuch=1"]).is_err());
        assert!(cfg.with_overrides(&["clients"]).is_err());
        assert!(cfg.with_overrides(&["clients=0"]).is_err());
        assert!(cfg.with_overrides(&["scheme=twophase"]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = ScenarioConfig::default().to_toml().replace("clients", "clientz");
        assert!(ScenarioConfig::parse(&text).is_err());
    }

    #[test]
    fn degenerate_vector_always_picks_its_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Probabilities::only(TaskType::BatchImport);
        assert!((0..1000).all(|_| pick_task(&p, &mut rng) == TaskType::BatchImport));
    }
}
