//! Per-phase busy time accounting.

use std::ops::AddAssign;
use std::time::Instant;

use serde::Serialize;

/// Seconds spent in each pipeline phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub init: f64,
    pub scatter: f64,
    pub npm: f64,
    pub jacobian: f64,
    pub refactorize: f64,
    pub fsbs: f64,
    pub flows: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Scatter,
    Npm,
    Jacobian,
    Refactorize,
    Fsbs,
    Flows,
}

impl PhaseTimes {
    pub const NAMES: [&'static str; 7] = [
        "init",
        "scatter",
        "npm",
        "jacobian",
        "refactorize",
        "fsbs",
        "flows",
    ];

    pub fn get_mut(&mut self, phase: Phase) -> &mut f64 {
        match phase {
            Phase::Init => &mut self.init,
            Phase::Scatter => &mut self.scatter,
            Phase::Npm => &mut self.npm,
            Phase::Jacobian => &mut self.jacobian,
            Phase::Refactorize => &mut self.refactorize,
            Phase::Fsbs => &mut self.fsbs,
            Phase::Flows => &mut self.flows,
        }
    }

    /// Runs `f` and charges its duration to `phase`.
    #[inline]
    pub fn time<R>(&mut self, phase: Phase, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        *self.get_mut(phase) += start.elapsed().as_secs_f64();
        out
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.init,
            self.scatter,
            self.npm,
            self.jacobian,
            self.refactorize,
            self.fsbs,
            self.flows,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let v = self.values().map(|t| t * factor);
        Self {
            init: v[0],
            scatter: v[1],
            npm: v[2],
            jacobian: v[3],
            refactorize: v[4],
            fsbs: v[5],
            flows: v[6],
        }
    }
}

impl AddAssign for PhaseTimes {
    fn add_assign(&mut self, rhs: Self) {
        self.init += rhs.init;
        self.scatter += rhs.scatter;
        self.npm += rhs.npm;
        self.jacobian += rhs.jacobian;
        self.refactorize += rhs.refactorize;
        self.fsbs += rhs.fsbs;
        self.flows += rhs.flows;
    }
}
