//! Pipeline orchestration: one-time initialization, scenario expansion,
//! batched solving on a worker pool, fallback accounting and reporting.

mod montecarlo;
mod output;

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{
    assemble_profiles, build_ybus, CaseError, GridCase, InitMode, Profiles, ScenarioError,
    ScenarioTable, Ybus,
};
use crate::lu::{factorize_initial, LuConfig, LuError, SymbolicLu};
use crate::newton::{
    branch_flows, reduced_jacobian_lane, solve_minibatch, BatchInputs, BranchFlow, ConfigError,
    JacobianPattern, LinearPlan, NrConfig, NrSetup, SlotMap, TaskOutcome, TaskStatus, YbusPolar,
};
use crate::sparse::SparseError;
use crate::tape::minibatch_ranges;
use crate::timing::PhaseTimes;

pub use montecarlo::{
    sample_factors, sample_montecarlo, BusSelector, Distribution, SampleEntry, SamplingError,
    SamplingSpec,
};
pub use output::{report_json, write_flows_csv, write_results_csv};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("initial factorization failed: {0}")]
    Lu(#[from] LuError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Nr(#[from] ConfigError),
    #[error("invalid job: {0}")]
    Config(String),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    MonteCarlo,
    TimeSeries,
    Contingency,
}

/// What the tasks of a job are.
#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// One task per row; every task shares the case admittance values.
    Table(ScenarioTable),
    /// One task per branch index taken out of service; every task shares
    /// the case loads.
    Outages(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecConfig {
    pub workers: usize,
    /// Tasks handed to the pool at a time.
    pub batch_size: usize,
    pub direct_scatter: bool,
    /// Fraction of tasks whose frozen pivots may fail in the first
    /// iteration before the permutations are re-derived.
    pub rederive_fraction: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            workers: default_workers(),
            batch_size: 4096,
            direct_scatter: true,
            rederive_fraction: 0.05,
        }
    }
}

/// Physical core count.
pub fn default_workers() -> usize {
    num_cpus::get_physical().max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub mode: Mode,
    pub workload: Workload,
    pub init: InitMode,
    pub exec: ExecConfig,
    pub flows: bool,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.exec.batch_size == 0 {
            return Err(RuntimeError::Config("batch size must be at least 1".into()));
        }
        if self.exec.workers == 0 {
            return Err(RuntimeError::Config(
                "worker count must be at least 1".into(),
            ));
        }
        match (&self.mode, &self.workload) {
            (Mode::Contingency, Workload::Outages(_)) => Ok(()),
            (Mode::Contingency, _) => Err(RuntimeError::Config(
                "contingency mode needs an outage list".into(),
            )),
            (_, Workload::Outages(_)) => Err(RuntimeError::Config(
                "outage lists are only valid in contingency mode".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    pub task: usize,
    /// 0-based branch index taken out of service, in contingency mode.
    pub outage: Option<usize>,
    pub status: TaskStatus,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub vm: Vec<f64>,
    /// Radians.
    pub va: Vec<f64>,
    pub flows: Vec<BranchFlow>,
    /// The frozen refactorization failed for this task at some iteration.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Structure {
    pub n_bus: usize,
    pub n_branch: usize,
    pub ybus_nnz: usize,
    pub jacobian_dim: usize,
    pub jacobian_nnz: usize,
    pub lu_nnz: usize,
    pub fill_in: usize,
    pub levels: Vec<usize>,
    /// Levels tagged bulk, narrow and scalar.
    pub stage_counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSummary {
    pub task: usize,
    pub status: TaskStatus,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub n_tasks: usize,
    pub workers: usize,
    pub minibatch_width: usize,
    pub batch_size: usize,
    /// "task" or "column" level parallelism.
    pub execution: &'static str,
    pub direct_scatter: bool,
    pub rederived: bool,
    pub tol: f64,
    pub max_iter: usize,
    /// Wall time of initialization plus the run, seconds.
    pub total_seconds: f64,
    /// Busy seconds per phase, averaged over workers.
    pub phases: PhaseTimes,
    pub status_counts: BTreeMap<&'static str, usize>,
    pub structure: Structure,
    pub tasks: Vec<TaskSummary>,
}

impl RunReport {
    pub fn count(&self, status: TaskStatus) -> usize {
        self.status_counts
            .get(status.as_str())
            .copied()
            .unwrap_or(0)
    }
}

/// Outcomes of one pass over all tasks.
#[derive(Debug, Clone)]
pub struct Solved {
    pub outcomes: Vec<TaskOutcome>,
    pub times: PhaseTimes,
    pub column_level: bool,
}

/// Everything derived once per case and shared read-only by every task.
#[derive(Debug, Clone)]
pub struct Pipeline {
    case: GridCase,
    ybus: Ybus,
    jacobian: JacobianPattern,
    symbolic: SymbolicLu,
    lu_map: SlotMap,
    lu: LuConfig,
    nr: NrConfig,
    init_seconds: f64,
    /// Reduced Jacobian values the current structure was derived from.
    frozen_from: Vec<f64>,
}

impl Pipeline {
    /// Builds admittance and Jacobian patterns and freezes the LU structure
    /// from the base case at flat start.
    pub fn initialize(case: GridCase, nr: NrConfig, lu: LuConfig) -> Result<Self, RuntimeError> {
        nr.validate()?;
        let start = Instant::now();
        let ybus = build_ybus(&case);
        let jacobian = JacobianPattern::new(&case, ybus.pattern())?;
        let profiles = assemble_profiles(&case, &ScenarioTable::base(1), InitMode::Flat)?;
        let polar = YbusPolar::shared(&ybus);
        let values = reduced_jacobian_lane(
            &jacobian,
            &polar,
            0,
            &profiles.vm0.task(0),
            &profiles.va0.task(0),
        );
        let (symbolic, _) = factorize_initial(jacobian.reduced(), &values, &lu)?;
        let lu_map = jacobian.lu_map(&symbolic)?;
        Ok(Self {
            case,
            ybus,
            jacobian,
            symbolic,
            lu_map,
            lu,
            nr,
            init_seconds: start.elapsed().as_secs_f64(),
            frozen_from: values,
        })
    }

    pub fn case(&self) -> &GridCase {
        &self.case
    }

    pub fn ybus(&self) -> &Ybus {
        &self.ybus
    }

    pub fn jacobian(&self) -> &JacobianPattern {
        &self.jacobian
    }

    pub fn symbolic(&self) -> &SymbolicLu {
        &self.symbolic
    }

    pub fn lu_config(&self) -> &LuConfig {
        &self.lu
    }

    pub fn nr_config(&self) -> &NrConfig {
        &self.nr
    }

    pub fn init_seconds(&self) -> f64 {
        self.init_seconds
    }

    /// Re-derives permutations and patterns from the given reduced
    /// Jacobian values.
    pub fn refreeze(&mut self, values: &[f64]) -> Result<(), RuntimeError> {
        let (symbolic, _) = factorize_initial(self.jacobian.reduced(), values, &self.lu)?;
        self.lu_map = self.jacobian.lu_map(&symbolic)?;
        self.symbolic = symbolic;
        self.frozen_from = values.to_vec();
        Ok(())
    }

    /// Reduced Jacobian of task `task` of `ybus` at the given voltages.
    pub fn reduced_jacobian(
        &self,
        ybus: &YbusPolar,
        task: usize,
        vm: &[f64],
        va: &[f64],
    ) -> Vec<f64> {
        reduced_jacobian_lane(&self.jacobian, ybus, task, vm, va)
    }

    pub fn structure(&self) -> Structure {
        let sched = self.symbolic.schedule();
        Structure {
            n_bus: self.case.n_bus(),
            n_branch: self.case.branches().len(),
            ybus_nnz: self.ybus.pattern().nnz(),
            jacobian_dim: self.jacobian.dim(),
            jacobian_nnz: self.jacobian.reduced().nnz(),
            lu_nnz: self.symbolic.lu_nnz(),
            fill_in: self.symbolic.fill_in(),
            levels: sched.histogram(),
            stage_counts: sched.stage_counts(),
        }
    }

    pub fn setup(&self, direct_scatter: bool) -> NrSetup<'_> {
        NrSetup {
            jacobian: &self.jacobian,
            symbolic: &self.symbolic,
            lu_map: &self.lu_map,
            lu: self.lu,
            nr: self.nr,
            direct_scatter,
        }
    }

    /// One pass over all tasks with the current frozen structure.
    pub fn solve(
        &self,
        ybus: &YbusPolar,
        profiles: &Profiles,
        preset: &[Option<TaskStatus>],
        exec: &ExecConfig,
        pool: &ThreadPool,
    ) -> Solved {
        let n = profiles.n_tasks();
        let setup = self.setup(exec.direct_scatter);
        let inputs = BatchInputs {
            ybus,
            profiles,
            preset,
        };
        let width = self.nr.minibatch_width;
        let mut outcomes = Vec::with_capacity(n);
        let mut busy = PhaseTimes::default();
        let mut coordinator = PhaseTimes::default();
        let mut column_level = false;
        let mut start = 0;
        while start < n {
            let end = n.min(start + exec.batch_size);
            let ranges: Vec<Range<usize>> = minibatch_ranges(end - start, width)
                .into_iter()
                .map(|r| r.start + start..r.end + start)
                .collect();
            if exec.workers > 1 && end - start < 2 * exec.workers {
                column_level = true;
                for r in ranges {
                    outcomes.extend(solve_minibatch(
                        &setup,
                        &inputs,
                        r,
                        LinearPlan::Scheduled(pool),
                        &mut coordinator,
                    ));
                }
            } else {
                let results: Vec<(Vec<TaskOutcome>, PhaseTimes)> = pool.install(|| {
                    ranges
                        .into_par_iter()
                        .map(|r| {
                            let mut t = PhaseTimes::default();
                            let o =
                                solve_minibatch(&setup, &inputs, r, LinearPlan::Sequential, &mut t);
                            (o, t)
                        })
                        .collect()
                });
                for (o, t) in results {
                    outcomes.extend(o);
                    busy += t;
                }
            }
            start = end;
        }
        let mut times = busy.scaled(1.0 / exec.workers as f64);
        times += coordinator;
        Solved {
            outcomes,
            times,
            column_level,
        }
    }

    /// [`Pipeline::solve`], re-deriving the frozen structure from the task
    /// with the largest starting mismatch and solving once more when more
    /// than `exec.rederive_fraction` of the tasks hit an unstable pivot in
    /// their first iteration. Returns whether that happened.
    pub fn solve_adaptive(
        &mut self,
        ybus: &YbusPolar,
        profiles: &Profiles,
        preset: &[Option<TaskStatus>],
        exec: &ExecConfig,
        pool: &ThreadPool,
    ) -> (Solved, bool) {
        let first = self.solve(ybus, profiles, preset, exec, pool);
        let candidates: Vec<usize> = (0..profiles.n_tasks())
            .filter(|&t| preset[t].is_none())
            .collect();
        let unstable = candidates
            .iter()
            .filter(|&&t| first.outcomes[t].flagged_first)
            .count();
        if candidates.is_empty()
            || unstable as f64 <= exec.rederive_fraction * candidates.len() as f64
        {
            return (first, false);
        }
        let worst = candidates
            .iter()
            .copied()
            .filter(|&t| first.outcomes[t].initial_mismatch.is_finite())
            .max_by(|&a, &b| {
                first.outcomes[a]
                    .initial_mismatch
                    .total_cmp(&first.outcomes[b].initial_mismatch)
            });
        let Some(worst) = worst else {
            return (first, false);
        };
        let start = Instant::now();
        let values = self.reduced_jacobian(
            ybus,
            worst,
            &profiles.vm0.task(worst),
            &profiles.va0.task(worst),
        );
        if self.refreeze(&values).is_err() {
            return (first, false);
        }
        let refreeze_seconds = start.elapsed().as_secs_f64();
        let mut second = self.solve(ybus, profiles, preset, exec, pool);
        second.times += first.times;
        second.times.init += refreeze_seconds;
        (second, true)
    }

    /// Runs a job end to end.
    pub fn run(&mut self, job: &JobSpec) -> Result<(Vec<TaskResult>, RunReport), RuntimeError> {
        job.validate()?;
        let start = Instant::now();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(job.exec.workers)
            .build()
            .map_err(|e| RuntimeError::Pool(e.to_string()))?;

        let case = &self.case;
        let (ybus, profiles, preset, outages) = match &job.workload {
            Workload::Table(table) => {
                let profiles = assemble_profiles(case, table, job.init)?;
                let preset = vec![None; table.n_tasks()];
                (YbusPolar::shared(&self.ybus), profiles, preset, None)
            }
            Workload::Outages(list) => {
                if let Some(&bad) = list.iter().find(|&&k| k >= case.branches().len()) {
                    return Err(RuntimeError::Config(format!(
                        "outage branch index {bad} out of range"
                    )));
                }
                let profiles = assemble_profiles(case, &ScenarioTable::base(list.len()), job.init)?;
                let values: Vec<(Vec<f64>, Vec<f64>)> = list
                    .iter()
                    .map(|&out| {
                        self.ybus
                            .values_with(|k| k != out && case.branches()[k].in_service)
                    })
                    .collect();
                let preset = list
                    .iter()
                    .map(|&k| case.outage_islands(k).then_some(TaskStatus::Islanded))
                    .collect();
                (
                    YbusPolar::per_task(&values),
                    profiles,
                    preset,
                    Some(list.clone()),
                )
            }
        };

        // scenario tables freeze the structure from their first task at its
        // starting point; outage lists keep the intact base case. A failing
        // factorization keeps the current structure.
        let rep_start = Instant::now();
        let representative = match outages {
            None => (0..profiles.n_tasks()).find(|&t| preset[t].is_none()),
            Some(_) => None,
        };
        if let Some(t) = representative {
            let values =
                self.reduced_jacobian(&ybus, t, &profiles.vm0.task(t), &profiles.va0.task(t));
            if values != self.frozen_from {
                let _ = self.refreeze(&values);
            }
        }
        let rep_seconds = rep_start.elapsed().as_secs_f64();

        let (solved, rederived) = self.solve_adaptive(&ybus, &profiles, &preset, &job.exec, &pool);
        let mut times = solved.times;
        times.init += self.init_seconds + rep_seconds;

        let flows_start = Instant::now();
        let case = &self.case;
        let results: Vec<TaskResult> = pool.install(|| {
            solved
                .outcomes
                .into_par_iter()
                .enumerate()
                .map(|(task, o)| {
                    let outage = outages.as_ref().map(|l| l[task]);
                    let flows = if job.flows && o.status != TaskStatus::Islanded {
                        branch_flows(case, &o.vm, &o.va, |k| {
                            Some(k) != outage && case.branches()[k].in_service
                        })
                    } else {
                        Vec::new()
                    };
                    TaskResult {
                        task,
                        outage,
                        status: o.status,
                        iterations: o.iterations,
                        max_mismatch: o.max_mismatch,
                        vm: o.vm,
                        va: o.va,
                        flows,
                        flagged: o.flagged,
                    }
                })
                .collect()
        });
        times.flows += flows_start.elapsed().as_secs_f64();

        let mut status_counts = BTreeMap::new();
        for r in &results {
            *status_counts.entry(r.status.as_str()).or_insert(0) += 1;
        }
        let report = RunReport {
            mode: job.mode,
            n_tasks: results.len(),
            workers: job.exec.workers,
            minibatch_width: self.nr.minibatch_width,
            batch_size: job.exec.batch_size,
            execution: if solved.column_level {
                "column"
            } else {
                "task"
            },
            direct_scatter: job.exec.direct_scatter,
            rederived,
            tol: self.nr.tol,
            max_iter: self.nr.max_iter,
            total_seconds: self.init_seconds + start.elapsed().as_secs_f64(),
            phases: times,
            status_counts,
            structure: self.structure(),
            tasks: results
                .iter()
                .map(|r| TaskSummary {
                    task: r.task,
                    status: r.status,
                    iterations: r.iterations,
                    max_mismatch: r.max_mismatch,
                })
                .collect(),
        };
        Ok((results, report))
    }
}
