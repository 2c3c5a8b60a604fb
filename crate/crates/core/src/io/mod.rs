//! Case files, scenario configuration and report output.

pub mod case;
pub mod config;
pub mod report;

pub use case::{parse_case, parse_case_str, write_case, CaseFile, CaseMeta};
pub use config::{
    AttackConfig, BuiltScenario, CriteriaConfig, DefenseKind, LineRef, PairsConfig, ScenarioConfig, StreamConfig,
};
pub use report::{
    attack_flows, read_flows, read_metrics, read_records, write_reports, FlowRow, Record, ReportBundle, FLOWS_FILE,
    METRICS_FILE, RECORDS_FILE,
};
