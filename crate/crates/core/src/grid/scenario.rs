//! Per-task injection tables and their expansion into batched profiles.
//!
//! A scenario row overrides the case data of one task. Columns are named
//! `bus:<id>:p` / `bus:<id>:q` (bus load in MW / MVAr) or `bus:<id>:vm`
//! (voltage setpoint in p.u. of a PV or slack bus). Buses without a column
//! keep their case values.

use std::collections::HashSet;

use thiserror::Error;

use super::{BusId, BusKind, GridCase};
use crate::tape::BatchTape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario column '{0}' is not of the form bus:<id>:<p|q|vm>")]
    BadHeader(String),
    #[error("scenario column '{0}' appears twice")]
    DuplicateColumn(String),
    #[error("scenario references unknown bus {0}")]
    UnknownBus(BusId),
    #[error("scenario sets a voltage setpoint on bus {0}, which is neither PV nor slack")]
    SetpointOnPq(BusId),
    #[error("scenario row {row} has {found} values, expected {expected}")]
    Width {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("scenario row {row}, column '{column}': invalid value '{value}'")]
    Value {
        row: usize,
        column: String,
        value: String,
    },
    #[error("scenario CSV: {0}")]
    Csv(String),
    #[error("outage list line {line}: {message}")]
    Outage { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    P,
    Q,
    Vm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScenarioColumn {
    pub bus: BusId,
    pub quantity: Quantity,
}

impl ScenarioColumn {
    pub fn parse(header: &str) -> Result<Self, ScenarioError> {
        let bad = || ScenarioError::BadHeader(header.to_string());
        let mut parts = header.trim().split(':');
        if parts.next() != Some("bus") {
            return Err(bad());
        }
        let bus = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let quantity = match parts.next() {
            Some("p") => Quantity::P,
            Some("q") => Quantity::Q,
            Some("vm") => Quantity::Vm,
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self { bus, quantity })
    }

    pub fn header(&self) -> String {
        let q = match self.quantity {
            Quantity::P => "p",
            Quantity::Q => "q",
            Quantity::Vm => "vm",
        };
        format!("bus:{}:{q}", self.bus)
    }
}

/// One row per task.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTable {
    columns: Vec<ScenarioColumn>,
    rows: Vec<Vec<f64>>,
}

impl ScenarioTable {
    pub fn new(columns: Vec<ScenarioColumn>, rows: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(*c) {
                return Err(ScenarioError::DuplicateColumn(c.header()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(ScenarioError::Width {
                    row: i + 1,
                    found: row.len(),
                    expected: columns.len(),
                });
            }
        }
        Ok(Self { columns, rows })
    }

    /// `n_tasks` copies of the base case.
    pub fn base(n_tasks: usize) -> Self {
        Self {
            columns: Vec::new(),
            rows: vec![Vec::new(); n_tasks],
        }
    }

    /// Reads a headed CSV. A `task` column, if present, is ignored.
    pub fn from_csv(text: &str) -> Result<Self, ScenarioError> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| ScenarioError::Csv(e.to_string()))?
            .clone();
        let mut keep = Vec::new();
        let mut columns = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if h == "task" {
                continue;
            }
            columns.push(ScenarioColumn::parse(h)?);
            keep.push(i);
        }
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ScenarioError::Csv(e.to_string()))?;
            if record.len() != headers.len() {
                return Err(ScenarioError::Width {
                    row: r + 1,
                    found: record.len(),
                    expected: headers.len(),
                });
            }
            let mut row = Vec::with_capacity(keep.len());
            for (&i, col) in keep.iter().zip(&columns) {
                let field = &record[i];
                let value = field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ScenarioError::Value {
                        row: r + 1,
                        column: col.header(),
                        value: field.to_string(),
                    })?;
                row.push(value);
            }
            rows.push(row);
        }
        Self::new(columns, rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self
            .columns
            .iter()
            .map(ScenarioColumn::header)
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn columns(&self) -> &[ScenarioColumn] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_tasks(&self) -> usize {
        self.rows.len()
    }
}

/// Starting point of the Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// |V| = 1 on PQ buses, setpoints on PV/slack, every angle at the slack angle.
    #[default]
    Flat,
    /// Magnitudes and angles from the case file (setpoints still apply).
    Case,
}

/// Batched per-bus inputs: specified injections `p0`/`q0` in p.u. and the
/// initial voltage, each as an `n_bus x n_tasks` tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub p0: BatchTape,
    pub q0: BatchTape,
    pub vm0: BatchTape,
    pub va0: BatchTape,
}

impl Profiles {
    pub fn n_bus(&self) -> usize {
        self.p0.n_slots()
    }

    pub fn n_tasks(&self) -> usize {
        self.p0.n_tasks()
    }
}

pub fn assemble_profiles(
    case: &GridCase,
    scenario: &ScenarioTable,
    init: InitMode,
) -> Result<Profiles, ScenarioError> {
    let n_bus = case.n_bus();
    let n_tasks = scenario.n_tasks();
    let mut targets = Vec::with_capacity(scenario.columns().len());
    for col in scenario.columns() {
        let bus = case
            .bus_index(col.bus)
            .ok_or(ScenarioError::UnknownBus(col.bus))?;
        if col.quantity == Quantity::Vm && case.kind(bus) == BusKind::Pq {
            return Err(ScenarioError::SetpointOnPq(col.bus));
        }
        targets.push((bus, col.quantity));
    }

    let base = case.base_mva();
    let pg = case.generation_mw();
    let setpoints = case.voltage_setpoints();
    let slack_angle = case.buses()[case.slack_bus()].va_init.to_radians();

    let mut p0 = BatchTape::zeros(n_bus, n_tasks);
    let mut q0 = BatchTape::zeros(n_bus, n_tasks);
    let mut vm0 = BatchTape::zeros(n_bus, n_tasks);
    let mut va0 = BatchTape::zeros(n_bus, n_tasks);
    let mut pd = vec![0.0; n_bus];
    let mut qd = vec![0.0; n_bus];
    let mut vm = vec![0.0; n_bus];
    for (t, row) in scenario.rows().iter().enumerate() {
        for (b, bus) in case.buses().iter().enumerate() {
            pd[b] = bus.p_load;
            qd[b] = bus.q_load;
            vm[b] = setpoints[b];
        }
        for (&(b, q), &value) in targets.iter().zip(row) {
            match q {
                Quantity::P => pd[b] = value,
                Quantity::Q => qd[b] = value,
                Quantity::Vm => vm[b] = value,
            }
        }
        for (b, bus) in case.buses().iter().enumerate() {
            p0.set(b, t, (pg[b] - pd[b]) / base);
            q0.set(b, t, -qd[b] / base);
            let (m, a) = match (init, bus.kind) {
                (_, BusKind::Slack) => (vm[b], slack_angle),
                (InitMode::Flat, BusKind::Pv) => (vm[b], slack_angle),
                (InitMode::Flat, BusKind::Pq) => (1.0, slack_angle),
                (InitMode::Case, BusKind::Pv) => (vm[b], bus.va_init.to_radians()),
                (InitMode::Case, BusKind::Pq) => (bus.vm_init, bus.va_init.to_radians()),
            };
            vm0.set(b, t, m);
            va0.set(b, t, a);
        }
    }
    Ok(Profiles { p0, q0, vm0, va0 })
}

/// Reads an outage list: one branch per line, either its 1-based position in
/// the branch table or a `from to` bus pair (first matching branch). Blank
/// lines and `#` comments are skipped.
pub fn parse_outage_list(text: &str, case: &GridCase) -> Result<Vec<usize>, ScenarioError> {
    let mut outages = Vec::new();
    for (l, raw) in text.lines().enumerate() {
        let line = l + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| ScenarioError::Outage { line, message };
        let fields: Vec<&str> = content
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        let numbers: Vec<u64> = fields
            .iter()
            .map(|f| {
                f.parse::<u64>()
                    .map_err(|_| err(format!("'{f}' is not an integer")))
            })
            .collect::<Result<_, _>>()?;
        let branch = match *numbers.as_slice() {
            [k] => {
                if k == 0 || k as usize > case.branches().len() {
                    return Err(err(format!("branch {k} does not exist")));
                }
                k as usize - 1
            }
            [from, to] => case
                .branches()
                .iter()
                .position(|b| {
                    let (f, t) = (b.from_bus as u64, b.to_bus as u64);
                    (f, t) == (from, to) || (f, t) == (to, from)
                })
                .ok_or_else(|| err(format!("no branch between buses {from} and {to}")))?,
            _ => return Err(err("expected a branch number or a 'from to' pair".into())),
        };
        outages.push(branch);
    }
    Ok(outages)
}
