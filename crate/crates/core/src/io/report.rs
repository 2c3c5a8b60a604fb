//! Report files: `metrics.csv`, `flows.csv` and `records.jsonl`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{reported_currents, CheckResult, InitialAttackSolution};
use crate::defense::{BusFlag, DetectionReport, Detector, LineFlag};
use crate::error::{Error, Result};
use crate::grid::{BusId, End, Network};
use crate::sim::Metrics;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FLOWS_FILE: &str = "flows.csv";
pub const RECORDS_FILE: &str = "records.jsonl";

/// True and reported flow entering a line at its `from` end, in MW/MVAr.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub from: BusId,
    pub to: BusId,
    pub p_true: f64,
    pub q_true: f64,
    pub s_true: f64,
    pub p_reported: f64,
    pub q_reported: f64,
    pub s_reported: f64,
    pub s_max: f64,
    pub overloaded: bool,
}

/// Flow rows for every line with an end in the attacked zone.
pub fn attack_flows(network: &Network, solution: &InitialAttackSolution) -> Result<Vec<FlowRow>> {
    let zone = &solution.spec.zone;
    let reported = reported_currents(solution, network)?;
    let base = network.base_power;
    let mut rows = Vec::new();
    for (l, line) in network.lines.iter().enumerate() {
        if !line.in_service || !(zone.contains(&line.from) || zone.contains(&line.to)) {
            continue;
        }
        let k = network.index_of(line.from)?;
        let s_true = solution.true_state.v[k] * solution.true_state.i[l][0].conj() * base;
        let i_rep = match reported.get(&(l, End::From)) {
            Some(&i) => i,
            None => solution.reported_state.i[l][0],
        };
        let s_rep = solution.reported_state.v[k] * i_rep.conj() * base;
        let s_max = line.s_max * base;
        rows.push(FlowRow {
            from: line.from,
            to: line.to,
            p_true: s_true.re,
            q_true: s_true.im,
            s_true: s_true.norm(),
            p_reported: s_rep.re,
            q_reported: s_rep.im,
            s_reported: s_rep.norm(),
            s_max,
            overloaded: s_true.norm() > s_max,
        });
    }
    Ok(rows)
}

/// One line of `records.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Check(CheckResult),
    Flow(FlowRow),
    BusFlag {
        detector: Detector,
        #[serde(flatten)]
        flag: BusFlag,
    },
    LineFlag {
        detector: Detector,
        #[serde(flatten)]
        flag: LineFlag,
    },
    Note {
        detector: Detector,
        text: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportBundle {
    pub metrics: Vec<Metrics>,
    pub flows: Vec<FlowRow>,
    pub checks: Vec<CheckResult>,
    pub reports: Vec<DetectionReport>,
}

impl ReportBundle {
    pub fn records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self.checks.iter().cloned().map(Record::Check).collect();
        out.extend(self.flows.iter().cloned().map(Record::Flow));
        for r in &self.reports {
            let detector = r.detector;
            out.extend(r.flagged_buses.iter().cloned().map(|flag| Record::BusFlag { detector, flag }));
            out.extend(r.flagged_lines.iter().cloned().map(|flag| Record::LineFlag { detector, flag }));
            out.extend(r.notes.iter().cloned().map(|text| Record::Note { detector, text }));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MetricsRow {
    detector: String,
    precision: f64,
    recall: f64,
    time_to_first_flag: Option<usize>,
    flagged_buses: String,
    flagged_lines: String,
    false_positive_buses: String,
    false_positive_lines: String,
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn split(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| x.parse().map_err(|_| Error::Config(format!("bad id {x:?} in metrics list"))))
        .collect()
}

const METRICS_HEADER: [&str; 8] = [
    "detector",
    "precision",
    "recall",
    "time_to_first_flag",
    "flagged_buses",
    "flagged_lines",
    "false_positive_buses",
    "false_positive_lines",
];

const FLOWS_HEADER: [&str; 10] = [
    "from",
    "to",
    "p_true",
    "q_true",
    "s_true",
    "p_reported",
    "q_reported",
    "s_reported",
    "s_max",
    "overloaded",
];

/// Writes the three report files into `dir`, creating it if needed, and
/// returns their paths.
pub fn write_reports(bundle: &ReportBundle, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let metrics_path = dir.join(METRICS_FILE);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&metrics_path)?;
    w.write_record(METRICS_HEADER)?;
    for m in &bundle.metrics {
        w.serialize(MetricsRow {
            detector: m.detector.clone(),
            precision: m.precision,
            recall: m.recall,
            time_to_first_flag: m.time_to_first_flag,
            flagged_buses: join(&m.flagged_buses),
            flagged_lines: join(&m.flagged_lines),
            false_positive_buses: join(&m.false_positive_buses),
            false_positive_lines: join(&m.false_positive_lines),
        })?;
    }
    w.flush()?;

    let flows_path = dir.join(FLOWS_FILE);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&flows_path)?;
    w.write_record(FLOWS_HEADER)?;
    for row in &bundle.flows {
        w.serialize(row)?;
    }
    w.flush()?;

    let records_path = dir.join(RECORDS_FILE);
    let mut out = BufWriter::new(File::create(&records_path)?);
    for rec in bundle.records() {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(vec![metrics_path, flows_path, records_path])
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<Metrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: MetricsRow = row?;
        out.push(Metrics {
            detector: row.detector,
            precision: row.precision,
            recall: row.recall,
            time_to_first_flag: row.time_to_first_flag,
            flagged_buses: split(&row.flagged_buses)?,
            flagged_lines: split(&row.flagged_lines)?,
            false_positive_buses: split(&row.false_positive_buses)?,
            false_positive_lines: split(&row.false_positive_lines)?,
        });
    }
    Ok(out)
}

pub fn read_flows(path: impl AsRef<Path>) -> Result<Vec<FlowRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}
