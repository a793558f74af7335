//! Run metrics, recorded histories and offline correctness checks.

mod event;
mod history;
mod integrity;
mod report;

pub use event::{parse_tsv, write_tsv, Clock, Event, EventKind, TxnKind};
pub use history::{check_conflict_graph, check_serializable, History, TxnEffects, Verdict, BRUTE_FORCE_LIMIT};
pub use integrity::{check_integrity, IntegrityReport, Violation};
pub use report::{aggregate, csv_header, mean_row, KindStats, MetricsReport, RunLabel};
