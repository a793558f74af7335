//! Scenario configuration, the transactions, the client tasks built from
//! them and the multi-client driver.

mod config;
mod driver;
pub mod tasks;
pub mod txns;

pub use config::{pick_task, Preset, Probabilities, ScenarioConfig, TaskType};
pub use driver::{client_rngs, run_clients, run_scenario, ClientsOutcome, RunOptions, RunOutcome};
pub use tasks::{run_task, DataGen, TaskOutput, TaskRun};
pub use txns::Transaction;
