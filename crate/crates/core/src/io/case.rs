//! Reader and writer for MATPOWER version-2 case files.
//!
//! Only `baseMVA`, `bus`, `gen` and `branch` are interpreted; other blocks are
//! skipped. Powers are converted to per unit on `baseMVA`, angles to radians.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Bus, BusId, Generator, Line, Network};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

/// A parsed case together with where it came from.
#[derive(Clone, Debug)]
pub struct CaseFile {
    pub path: PathBuf,
    pub network: Network,
    pub meta: CaseMeta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseMeta {
    pub name: String,
    pub buses: usize,
    pub lines: usize,
    pub generators: usize,
}

impl CaseFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let network = parse_case(path)?;
        let meta = CaseMeta {
            name: network.name.clone(),
            buses: network.buses.len(),
            lines: network.lines.len(),
            generators: network.generators.len(),
        };
        Ok(CaseFile {
            path: path.to_path_buf(),
            network,
            meta,
        })
    }
}

pub fn parse_case(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("case");
    parse_case_str(&text, stem)
}

#[derive(Debug)]
struct Cell {
    line: usize,
    column: usize,
    text: String,
}

#[derive(Debug)]
struct Row {
    line: usize,
    end_column: usize,
    cells: Vec<Cell>,
}

#[derive(Debug, Default)]
struct RawCase {
    name: Option<String>,
    base_mva: Option<(f64, usize)>,
    tables: BTreeMap<String, (usize, Vec<Row>)>,
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

enum Open {
    Matrix { name: String, start: usize, rows: Vec<Row>, row: Vec<Cell> },
    Cell,
}

fn lex(text: &str) -> Result<RawCase> {
    let mut raw = RawCase::default();
    let mut open: Option<Open> = None;

    for (n, full) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = strip_comment(full);
        let mut rest: &str = line;
        let mut offset = 0usize;

        if open.is_none() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(sig) = trimmed.strip_prefix("function") {
                if let Some((_, name)) = sig.split_once('=') {
                    raw.name = Some(name.trim().trim_end_matches(';').to_string());
                }
                continue;
            }
            let Some((lhs, rhs)) = line.split_once('=') else {
                continue;
            };
            let key = lhs.trim();
            let Some(field) = key.strip_prefix("mpc.") else {
                continue;
            };
            let rhs_start = lhs.len() + 1;
            let value = rhs.trim_start();
            let value_col = rhs_start + (rhs.len() - value.len());
            if let Some(after) = value.strip_prefix('[') {
                open = Some(Open::Matrix {
                    name: field.to_string(),
                    start: lineno,
                    rows: Vec::new(),
                    row: Vec::new(),
                });
                rest = after;
                offset = value_col + 1;
            } else if value.starts_with('{') {
                if !value.contains('}') {
                    open = Some(Open::Cell);
                }
                continue;
            } else {
                if field == "baseMVA" {
                    let tok = value.trim().trim_end_matches(';').trim();
                    let v = parse_number(tok, lineno, value_col + 1)?;
                    if !(v > 0.0) {
                        return Err(perr(lineno, value_col + 1, "baseMVA must be positive"));
                    }
                    raw.base_mva = Some((v, lineno));
                }
                continue;
            }
        }

        match open.as_mut() {
            Some(Open::Cell) => {
                if rest.contains('}') {
                    open = None;
                }
            }
            Some(Open::Matrix { rows, row, .. }) => {
                let mut closed = false;
                let col = offset;
                let bytes = rest.as_bytes();
                let mut i = 0;
                while i < bytes.len() {
                    let c = bytes[i] as char;
                    if c == ']' {
                        closed = true;
                        break;
                    }
                    if c == ';' {
                        flush_row(rows, row, lineno, col + i + 1);
                        i += 1;
                        continue;
                    }
                    if c.is_whitespace() || c == ',' {
                        i += 1;
                        continue;
                    }
                    let start = i;
                    while i < bytes.len() {
                        let c = bytes[i] as char;
                        if c.is_whitespace() || c == ',' || c == ';' || c == ']' {
                            break;
                        }
                        i += 1;
                    }
                    row.push(Cell {
                        line: lineno,
                        column: col + start + 1,
                        text: rest[start..i].to_string(),
                    });
                }
                flush_row(rows, row, lineno, col + rest.len() + 1);
                if closed {
                    if let Some(Open::Matrix { name, start, rows, .. }) = open.take() {
                        raw.tables.insert(name, (start, rows));
                    }
                }
            }
            None => {}
        }
    }
    match open {
        Some(Open::Matrix { name, start, .. }) => Err(perr(start, 1, format!("table `{name}` is never closed"))),
        Some(Open::Cell) => Err(perr(text.lines().count(), 1, "unterminated cell array")),
        None => Ok(raw),
    }
}

fn flush_row(rows: &mut Vec<Row>, row: &mut Vec<Cell>, line: usize, end_column: usize) {
    if row.is_empty() {
        return;
    }
    let cells = std::mem::take(row);
    rows.push(Row {
        line: cells[0].line.min(line),
        end_column,
        cells,
    });
}

fn parse_number(tok: &str, line: usize, column: usize) -> Result<f64> {
    match tok {
        "Inf" | "inf" => return Ok(f64::INFINITY),
        "-Inf" | "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(perr(line, column, format!("`{tok}` is not a finite number"))),
    }
}

/// Numeric view of one table row with positional error reporting.
struct Fields<'a> {
    row: &'a Row,
    values: Vec<f64>,
}

impl<'a> Fields<'a> {
    fn new(row: &'a Row, table: &str, min_cols: usize) -> Result<Self> {
        if row.cells.len() < min_cols {
            return Err(perr(
                row.line,
                row.end_column,
                format!("{table} row has {} columns, expected at least {min_cols}", row.cells.len()),
            ));
        }
        let values = row
            .cells
            .iter()
            .map(|c| parse_number(&c.text, c.line, c.column))
            .collect::<Result<Vec<_>>>()?;
        Ok(Fields { row, values })
    }

    /// Column `col` (1-based), required to be finite.
    fn finite(&self, col: usize) -> Result<f64> {
        let v = self.values[col - 1];
        if !v.is_finite() {
            let c = &self.row.cells[col - 1];
            return Err(perr(c.line, c.column, "value must be finite"));
        }
        Ok(v)
    }

    fn any(&self, col: usize) -> f64 {
        self.values[col - 1]
    }

    fn id(&self, col: usize) -> Result<BusId> {
        let v = self.finite(col)?;
        if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            let c = &self.row.cells[col - 1];
            return Err(perr(c.line, c.column, format!("`{}` is not a bus number", c.text)));
        }
        Ok(v as BusId)
    }

    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        let c = &self.row.cells[col - 1];
        perr(c.line, c.column, message)
    }
}

fn table<'a>(raw: &'a RawCase, name: &str) -> Result<&'a [Row]> {
    raw.tables
        .get(name)
        .map(|(_, rows)| rows.as_slice())
        .ok_or_else(|| perr(1, 1, format!("missing `mpc.{name}` table")))
}

fn warn_extra(rows: &[Row], table: &str, supported: usize) {
    let widest = rows.iter().map(|r| r.cells.len()).max().unwrap_or(0);
    if widest > supported {
        log::warn!("{table}: ignoring columns {}..{widest}", supported + 1);
    }
}

/// Parses case text. `default_name` is used when the file has no
/// `function mpc = name` header.
pub fn parse_case_str(text: &str, default_name: &str) -> Result<Network> {
    let raw = lex(text)?;
    let (base, _) = raw
        .base_mva
        .ok_or_else(|| perr(1, 1, "missing `mpc.baseMVA`"))?;

    let bus_rows = table(&raw, "bus")?;
    let gen_rows = table(&raw, "gen")?;
    let branch_rows = table(&raw, "branch")?;
    warn_extra(bus_rows, "bus", BUS_COLS);
    warn_extra(gen_rows, "gen", GEN_COLS);
    warn_extra(branch_rows, "branch", 13);

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut slack = None;
    let mut shunts = 0usize;
    for row in bus_rows {
        let f = Fields::new(row, "bus", BUS_COLS)?;
        let id = f.id(1)?;
        let kind = f.finite(2)?;
        match kind as i64 {
            1 | 2 => {}
            3 => {
                if slack.replace(id).is_some() {
                    return Err(f.err(2, "more than one reference bus"));
                }
            }
            4 => return Err(f.err(2, "isolated buses (type 4) are not supported")),
            _ => return Err(f.err(2, format!("unknown bus type {kind}"))),
        }
        if kind.fract() != 0.0 {
            return Err(f.err(2, format!("unknown bus type {kind}")));
        }
        if f.finite(5)? != 0.0 || f.finite(6)? != 0.0 {
            shunts += 1;
        }
        let (v_max, v_min) = (f.finite(12)?, f.finite(13)?);
        if !(v_min > 0.0 && v_min <= v_max) {
            return Err(f.err(13, format!("voltage bounds [{v_min}, {v_max}] are invalid")));
        }
        buses.push(Bus {
            id,
            v_min,
            v_max,
            p_load: f.finite(3)? / base,
            q_load: f.finite(4)? / base,
            is_generator: false,
        });
    }
    if shunts > 0 {
        log::warn!("ignoring bus shunts at {shunts} buses");
    }
    let slack = slack.ok_or_else(|| perr(raw.tables["bus"].0, 1, "no reference bus (type 3)"))?;

    let mut gens: BTreeMap<BusId, Generator> = BTreeMap::new();
    for row in gen_rows {
        let f = Fields::new(row, "gen", GEN_COLS)?;
        let bus = f.id(1)?;
        if f.finite(8)? <= 0.0 {
            continue;
        }
        let g = Generator {
            bus,
            p_min: f.any(10) / base,
            p_max: f.any(9) / base,
            q_min: f.any(5) / base,
            q_max: f.any(4) / base,
            p_set: f.finite(2)? / base,
            q_set: f.finite(3)? / base,
            v_set: f.finite(6)?,
        };
        if !(g.v_set > 0.0) {
            return Err(f.err(6, "voltage setpoint must be positive"));
        }
        if g.p_min > g.p_max || g.q_min > g.q_max {
            return Err(f.err(4, "generator limits are inverted"));
        }
        if !buses.iter().any(|b| b.id == bus) {
            return Err(f.err(1, format!("generator at unknown bus {bus}")));
        }
        match gens.get_mut(&bus) {
            Some(prev) => {
                log::warn!("merging generators at bus {bus}");
                prev.p_min += g.p_min;
                prev.p_max += g.p_max;
                prev.q_min += g.q_min;
                prev.q_max += g.q_max;
                prev.p_set += g.p_set;
                prev.q_set += g.q_set;
            }
            None => {
                gens.insert(bus, g);
            }
        }
    }
    for b in &mut buses {
        b.is_generator = gens.contains_key(&b.id);
        if let Some(g) = gens.get(&b.id) {
            if g.v_set > b.v_max || g.v_set < b.v_min {
                log::warn!("bus {}: widening voltage bounds to the generator setpoint {}", b.id, g.v_set);
                b.v_max = b.v_max.max(g.v_set);
                b.v_min = b.v_min.min(g.v_set);
            }
        }
    }

    let mut lines = Vec::with_capacity(branch_rows.len());
    for row in branch_rows {
        let f = Fields::new(row, "branch", BRANCH_COLS)?;
        let (from, to) = (f.id(1)?, f.id(2)?);
        let x = f.finite(4)?;
        if x <= 0.0 {
            return Err(f.err(4, format!("reactance must be positive, got {x}")));
        }
        let rate = f.finite(6)?;
        if rate < 0.0 {
            return Err(f.err(6, "negative rating"));
        }
        let ratio = f.finite(9)?;
        if ratio < 0.0 {
            return Err(f.err(9, "negative tap ratio"));
        }
        let theta_max = if f.values.len() >= 13 {
            angle_limit(f.finite(12)?, f.finite(13)?)
        } else {
            2.0 * std::f64::consts::PI
        };
        lines.push(Line {
            from,
            to,
            r: f.finite(3)?,
            x,
            b_charge: f.finite(5)?,
            tap_ratio: if ratio == 0.0 { 1.0 } else { ratio },
            phase_shift: f.finite(10)?.to_radians(),
            s_max: if rate == 0.0 { f64::INFINITY } else { rate / base },
            theta_max,
            in_service: f.finite(11)? > 0.0,
        });
    }

    let name = raw.name.clone().unwrap_or_else(|| default_name.to_string());
    Network::new(name, base, buses, lines, gens.into_values().collect(), slack, None)
}

/// Symmetric angle limit in radians; `±360°` (or both zero) means none.
fn angle_limit(angmin: f64, angmax: f64) -> f64 {
    let unlimited = (angmin <= -360.0 && angmax >= 360.0) || (angmin == 0.0 && angmax == 0.0);
    if unlimited {
        return 2.0 * std::f64::consts::PI;
    }
    let lim = (-angmin).min(angmax);
    if lim <= 0.0 {
        log::warn!("asymmetric angle limits [{angmin}, {angmax}] treated as unlimited");
        return 2.0 * std::f64::consts::PI;
    }
    lim.to_radians()
}

/// Writes the supported subset back out as a case file.
pub fn write_case(network: &Network) -> String {
    let base = network.base_power;
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", network.name);
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {base:?};");
    let _ = writeln!(out, "\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &network.buses {
        let kind = if b.id == network.slack {
            3
        } else if b.is_generator {
            2
        } else {
            1
        };
        let _ = writeln!(
            out,
            "\t{}\t{kind}\t{:?}\t{:?}\t0\t0\t1\t1\t0\t0\t1\t{:?}\t{:?};",
            b.id,
            b.p_load * base,
            b.q_load * base,
            b.v_max,
            b.v_min
        );
    }
    let _ = writeln!(out, "];\n\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &network.generators {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{:?}\t{base:?}\t1\t{}\t{};",
            g.bus,
            num(g.p_set * base),
            num(g.q_set * base),
            num(g.q_max * base),
            num(g.q_min * base),
            g.v_set,
            num(g.p_max * base),
            num(g.p_min * base)
        );
    }
    let _ = writeln!(
        out,
        "];\n\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax"
    );
    let _ = writeln!(out, "mpc.branch = [");
    for l in &network.lines {
        let rate = if l.s_max.is_infinite() { 0.0 } else { l.s_max * base };
        let ang = if l.theta_max >= 2.0 * std::f64::consts::PI {
            360.0
        } else {
            l.theta_max.to_degrees()
        };
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{rate:?}\t0\t0\t{:?}\t{:?}\t{}\t{:?}\t{ang:?};",
            l.from,
            l.to,
            l.r,
            l.x,
            l.b_charge,
            l.tap_ratio,
            l.phase_shift.to_degrees(),
            u8::from(l.in_service),
            -ang
        );
    }
    let _ = writeln!(out, "];");
    out
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else {
        format!("{v:?}")
    }
}
