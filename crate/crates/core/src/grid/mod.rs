//! Grid case data: buses, branches, generators, bus typing, and the
//! admittance matrix built from them.

mod json;
mod matpower;
mod scenario;
mod ybus;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scenario::{
    assemble_profiles, parse_outage_list, InitMode, Profiles, Quantity, ScenarioColumn,
    ScenarioError, ScenarioTable,
};
pub use ybus::{branch_admittance, build_ybus, BranchAdmittance, Ybus};

/// External bus number as it appears in case files.
pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// MW
    pub p_load: f64,
    /// MVAr
    pub q_load: f64,
    /// MW consumed at 1 p.u. voltage
    pub gs: f64,
    /// MVAr injected at 1 p.u. voltage
    pub bs: f64,
    pub base_kv: f64,
    pub vm_init: f64,
    /// degrees
    pub va_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    /// total line charging susceptance, p.u.
    pub b_charge: f64,
    /// off-nominal turns ratio; 1.0 for lines
    pub tap: f64,
    /// phase shift, degrees
    pub shift: f64,
    pub in_service: bool,
    /// long-term MVA rating, 0 when unrated
    #[serde(default, skip_serializing_if = "is_zero")]
    pub rate_a: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    /// MW
    pub p_set: f64,
    /// p.u.
    pub vm_set: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: malformed number '{token}'")]
    MalformedNumber {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("line {line}: {table} row has {found} columns, expected at least {expected}")]
    ShortRow {
        line: usize,
        table: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("missing '{0}' data")]
    MissingTable(&'static str),
    #[error("invalid JSON case: {0}")]
    Json(String),
    #[error("base MVA must be positive, got {0}")]
    InvalidBase(f64),
    #[error("no slack bus")]
    MissingSlack,
    #[error("duplicate slack: buses {first} and {second} are both slack")]
    DuplicateSlack { first: BusId, second: BusId },
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("bus {id}: {reason}")]
    InvalidBus { id: BusId, reason: String },
    #[error("{item} references unknown bus {bus}")]
    UnknownBus { item: String, bus: BusId },
    #[error("branch {index} ({from}-{to}): {reason}")]
    InvalidBranch {
        index: usize,
        from: BusId,
        to: BusId,
        reason: String,
    },
    #[error(
        "disconnected island: {count} bus(es) unreachable from the slack, first is bus {first}"
    )]
    Disconnected { count: usize, first: BusId },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CaseError>,
    },
}

/// Row of the input tables an error points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RowRef {
    Bus(usize),
    Branch(usize),
    Generator(usize),
}

type Located = (CaseError, Option<RowRef>);

/// A validated single-island grid with internal 0-based bus numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    index: HashMap<BusId, usize>,
    branch_ends: Vec<(usize, usize)>,
    slack: usize,
    pv: Vec<usize>,
    pq: Vec<usize>,
    pvpq: Vec<usize>,
}

impl GridCase {
    /// Validates the tables and derives bus numbering and type sets.
    ///
    /// Non-slack buses with an in-service generator are PV, all other
    /// non-slack buses are PQ, whatever kind the input declared.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        Self::build(base_mva, buses, branches, generators).map_err(|(e, _)| e)
    }

    pub(crate) fn build(
        base_mva: f64,
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, Located> {
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return Err((CaseError::InvalidBase(base_mva), None));
        }
        let mut index = HashMap::with_capacity(buses.len());
        let mut slack: Option<usize> = None;
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err((CaseError::DuplicateBus(bus.id), Some(RowRef::Bus(i))));
            }
            if bus.vm_init.is_nan() || bus.vm_init <= 0.0 || !bus.va_init.is_finite() {
                let e = CaseError::InvalidBus {
                    id: bus.id,
                    reason: "initial voltage must be positive and finite".into(),
                };
                return Err((e, Some(RowRef::Bus(i))));
            }
            if bus.kind == BusKind::Slack {
                if let Some(first) = slack {
                    let e = CaseError::DuplicateSlack {
                        first: buses[first].id,
                        second: bus.id,
                    };
                    return Err((e, Some(RowRef::Bus(i))));
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or((CaseError::MissingSlack, None))?;

        let mut has_gen = vec![false; buses.len()];
        for (g, gen) in generators.iter().enumerate() {
            let Some(&b) = index.get(&gen.bus) else {
                let e = CaseError::UnknownBus {
                    item: format!("generator {}", g + 1),
                    bus: gen.bus,
                };
                return Err((e, Some(RowRef::Generator(g))));
            };
            if gen.in_service {
                if gen.vm_set.is_nan() || gen.vm_set <= 0.0 {
                    let e = CaseError::InvalidBus {
                        id: gen.bus,
                        reason: format!("generator {} has non-positive voltage setpoint", g + 1),
                    };
                    return Err((e, Some(RowRef::Generator(g))));
                }
                has_gen[b] = true;
            }
        }

        let mut branch_ends = Vec::with_capacity(branches.len());
        for (k, br) in branches.iter().enumerate() {
            let lookup = |bus: BusId| {
                index.get(&bus).copied().ok_or_else(|| {
                    let e = CaseError::UnknownBus {
                        item: format!("branch {}", k + 1),
                        bus,
                    };
                    (e, Some(RowRef::Branch(k)))
                })
            };
            let (f, t) = (lookup(br.from_bus)?, lookup(br.to_bus)?);
            let invalid = |reason: &str| {
                let e = CaseError::InvalidBranch {
                    index: k + 1,
                    from: br.from_bus,
                    to: br.to_bus,
                    reason: reason.into(),
                };
                Err((e, Some(RowRef::Branch(k))))
            };
            if f == t {
                return invalid("both ends on the same bus");
            }
            if br.r == 0.0 && br.x == 0.0 {
                return invalid("zero series impedance");
            }
            if br.tap.is_nan() || br.tap <= 0.0 {
                return invalid("tap ratio must be positive");
            }
            if ![br.r, br.x, br.b_charge, br.tap, br.shift]
                .iter()
                .all(|v| v.is_finite())
            {
                return invalid("non-finite parameter");
            }
            branch_ends.push((f, t));
        }

        let mut pv = Vec::new();
        let mut pq = Vec::new();
        let mut pvpq = Vec::new();
        for (i, bus) in buses.iter_mut().enumerate() {
            if i == slack {
                continue;
            }
            bus.kind = if has_gen[i] { BusKind::Pv } else { BusKind::Pq };
            match bus.kind {
                BusKind::Pv => pv.push(i),
                _ => pq.push(i),
            }
            pvpq.push(i);
        }

        let case = Self {
            base_mva,
            buses,
            branches,
            generators,
            index,
            branch_ends,
            slack,
            pv,
            pq,
            pvpq,
        };
        let reached = case.reachable_from_slack(|k| case.branches[k].in_service);
        if let Some(first) = reached.iter().position(|&r| !r) {
            let count = reached.iter().filter(|&&r| !r).count();
            let e = CaseError::Disconnected {
                count,
                first: case.buses[first].id,
            };
            return Err((e, Some(RowRef::Bus(first))));
        }
        Ok(case)
    }

    /// Reads either the MATPOWER subset or the native JSON format.
    pub fn parse(text: &str) -> Result<Self, CaseError> {
        if text.trim_start().starts_with('{') {
            json::parse(text)
        } else {
            matpower::parse(text)
        }
    }

    pub fn to_json(&self) -> String {
        json::serialize(self)
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Internal index of an external bus id.
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Internal (from, to) bus indices of a branch.
    pub fn branch_ends(&self, branch: usize) -> (usize, usize) {
        self.branch_ends[branch]
    }

    pub fn slack_bus(&self) -> usize {
        self.slack
    }

    pub fn pv_buses(&self) -> &[usize] {
        &self.pv
    }

    pub fn pq_buses(&self) -> &[usize] {
        &self.pq
    }

    /// PV and PQ buses in ascending internal order.
    pub fn pvpq_buses(&self) -> &[usize] {
        &self.pvpq
    }

    pub fn kind(&self, bus: usize) -> BusKind {
        self.buses[bus].kind
    }

    /// Buses reachable from the slack through the branches for which
    /// `in_service(k)` holds.
    pub fn reachable_from_slack(&self, in_service: impl Fn(usize) -> bool) -> Vec<bool> {
        let n = self.buses.len();
        let mut adjacency = vec![Vec::new(); n];
        for (k, &(f, t)) in self.branch_ends.iter().enumerate() {
            if in_service(k) {
                adjacency[f].push(t);
                adjacency[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(b) = queue.pop_front() {
            for &nb in &adjacency[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        seen
    }

    /// True when taking `outage` out of service leaves some bus without a
    /// path to the slack.
    pub fn outage_islands(&self, outage: usize) -> bool {
        let reached = self.reachable_from_slack(|k| k != outage && self.branches[k].in_service);
        reached.iter().any(|&r| !r)
    }

    /// Sum of in-service generation per bus, MW.
    pub fn generation_mw(&self) -> Vec<f64> {
        let mut pg = vec![0.0; self.n_bus()];
        for gen in self.generators.iter().filter(|g| g.in_service) {
            pg[self.index[&gen.bus]] += gen.p_set;
        }
        pg
    }

    /// Voltage magnitude setpoint of every bus: the first in-service
    /// generator's setpoint on PV and slack buses, the initial magnitude
    /// elsewhere.
    pub fn voltage_setpoints(&self) -> Vec<f64> {
        let mut vm: Vec<f64> = self.buses.iter().map(|b| b.vm_init).collect();
        let mut set = vec![false; self.n_bus()];
        for gen in self.generators.iter().filter(|g| g.in_service) {
            let b = self.index[&gen.bus];
            if !set[b] {
                vm[b] = gen.vm_set;
                set[b] = true;
            }
        }
        vm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: BusId, kind: BusKind) -> Bus {
        Bus {
            id,
            kind,
            p_load: 0.0,
            q_load: 0.0,
            gs: 0.0,
            bs: 0.0,
            base_kv: 100.0,
            vm_init: 1.0,
            va_init: 0.0,
        }
    }

    fn line(from: BusId, to: BusId) -> Branch {
        Branch {
            from_bus: from,
            to_bus: to,
            r: 0.0,
            x: 0.1,
            b_charge: 0.0,
            tap: 1.0,
            shift: 0.0,
            in_service: true,
            rate_a: 0.0,
        }
    }

    #[test]
    fn two_bus_typing() {
        let case = GridCase::new(
            100.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![line(1, 2)],
            vec![],
        )
        .unwrap();
        assert!(case.pv_buses().is_empty());
        assert_eq!(case.pq_buses(), &[1]);
        assert_eq!(case.slack_bus(), 0);
    }

    #[test]
    fn generator_promotes_to_pv_and_missing_gen_demotes() {
        let gen = Generator {
            bus: 3,
            p_set: 10.0,
            vm_set: 1.02,
            in_service: true,
        };
        let case = GridCase::new(
            100.0,
            vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::Pv),
                bus(3, BusKind::Pq),
            ],
            vec![line(1, 2), line(2, 3)],
            vec![gen],
        )
        .unwrap();
        assert_eq!(case.pv_buses(), &[2]);
        assert_eq!(case.pq_buses(), &[1]);
        assert_eq!(case.voltage_setpoints()[2], 1.02);
    }

    #[test]
    fn rejects_structural_problems() {
        let two_slack = GridCase::new(
            100.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Slack)],
            vec![line(1, 2)],
            vec![],
        );
        assert!(matches!(
            two_slack,
            Err(CaseError::DuplicateSlack {
                first: 1,
                second: 2
            })
        ));
        assert!(two_slack
            .unwrap_err()
            .to_string()
            .contains("duplicate slack"));

        let no_slack = GridCase::new(100.0, vec![bus(1, BusKind::Pq)], vec![], vec![]);
        assert_eq!(no_slack, Err(CaseError::MissingSlack));

        let dup = GridCase::new(
            100.0,
            vec![bus(1, BusKind::Slack), bus(1, BusKind::Pq)],
            vec![],
            vec![],
        );
        assert_eq!(dup, Err(CaseError::DuplicateBus(1)));

        let island = GridCase::new(
            100.0,
            vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::Pq),
                bus(3, BusKind::Pq),
            ],
            vec![line(1, 2)],
            vec![],
        );
        assert_eq!(island, Err(CaseError::Disconnected { count: 1, first: 3 }));

        let unknown = GridCase::new(
            100.0,
            vec![bus(1, BusKind::Slack)],
            vec![line(1, 9)],
            vec![],
        );
        assert!(matches!(unknown, Err(CaseError::UnknownBus { bus: 9, .. })));
    }

    #[test]
    fn outage_island_detection() {
        let case = GridCase::new(
            100.0,
            vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::Pq),
                bus(3, BusKind::Pq),
            ],
            vec![line(1, 2), line(2, 3), line(1, 2)],
            vec![],
        )
        .unwrap();
        assert!(
            !case.outage_islands(0),
            "parallel branch keeps bus 2 connected"
        );
        assert!(case.outage_islands(1));
    }
}
