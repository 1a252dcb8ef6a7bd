//! Newton-Raphson driver for one mini-batch of lanes.
//!
//! Lanes that converge, diverge or hit an unstable frozen pivot are masked:
//! their voltages stop changing while the other lanes keep iterating, so a
//! lane's arithmetic never depends on its neighbours. A lane whose pivot
//! collapses leaves the mini-batch and continues alone on fresh pivoting
//! factorizations.

use rayon::ThreadPool;
use serde::Serialize;

use super::kernels::{jacobian_lanes, npm_lanes, update_voltage_lanes, LaneState};
use super::{max_abs_lane, JacobianPattern, NrConfig, SlotMap, YbusPolar};
use crate::grid::Profiles;
use crate::lu::refactor::refactorize_slice;
use crate::lu::solve::fs_bs_slice;
use crate::lu::{
    execute_schedule, fs_bs_scheduled, refactorize_batch, second_chance_refactorize, LuConfig,
    SymbolicLu,
};
use crate::tape::{minibatch_ranges, BatchTape};
use crate::timing::{Phase, PhaseTimes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Converged,
    Diverged,
    Islanded,
    Singular,
    FallbackConverged,
}

impl TaskStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskStatus::Converged => "converged",
            TaskStatus::Diverged => "diverged",
            TaskStatus::Islanded => "islanded",
            TaskStatus::Singular => "singular",
            TaskStatus::FallbackConverged => "fallback_converged",
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, TaskStatus::Converged | TaskStatus::FallbackConverged)
    }
}

/// Frozen state shared by all mini-batches.
#[derive(Clone, Copy)]
pub struct NrSetup<'a> {
    pub jacobian: &'a JacobianPattern,
    pub symbolic: &'a SymbolicLu,
    /// Admittance slot to L+U slot map of `symbolic`.
    pub lu_map: &'a SlotMap,
    pub lu: LuConfig,
    pub nr: NrConfig,
    /// Write the Jacobian straight into the LU tape instead of a separate
    /// A tape that is copied in by the refactorization.
    pub direct_scatter: bool,
}

/// How the linear algebra of one mini-batch runs.
#[derive(Clone, Copy)]
pub enum LinearPlan<'p> {
    Sequential,
    /// Column-level parallel refactorization and level-parallel FS-BS.
    Scheduled(&'p ThreadPool),
}

#[derive(Clone, Copy)]
pub struct BatchInputs<'a> {
    pub ybus: &'a YbusPolar,
    pub profiles: &'a Profiles,
    /// Tasks already settled before solving (for example islanded).
    pub preset: &'a [Option<TaskStatus>],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskOutcome {
    pub status: TaskStatus,
    pub iterations: usize,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Mismatch infinity norm at the returned voltages.
    pub max_mismatch: f64,
    /// Mismatch infinity norm at the starting point.
    pub initial_mismatch: f64,
    /// The frozen refactorization flagged this task at some iteration.
    pub flagged: bool,
    /// ... at the first iteration.
    pub flagged_first: bool,
}

/// Solves every task, one mini-batch after another.
pub fn nr_solve_batch(
    setup: &NrSetup,
    inputs: &BatchInputs,
    plan: LinearPlan,
) -> (Vec<TaskOutcome>, PhaseTimes) {
    let mut times = PhaseTimes::default();
    let mut out = Vec::with_capacity(inputs.profiles.n_tasks());
    for range in minibatch_ranges(inputs.profiles.n_tasks(), setup.nr.minibatch_width) {
        out.extend(solve_minibatch(setup, inputs, range, plan, &mut times));
    }
    (out, times)
}

/// Runs the Newton iteration for the tasks in `range` as one mini-batch.
pub fn solve_minibatch(
    setup: &NrSetup,
    inputs: &BatchInputs,
    range: std::ops::Range<usize>,
    plan: LinearPlan,
    times: &mut PhaseTimes,
) -> Vec<TaskOutcome> {
    let jac = setup.jacobian;
    let ybus = jac.ybus_pattern();
    let sym = setup.symbolic;
    let w = range.len();
    let n = jac.n_bus();
    let dim = jac.dim();
    let nr = setup.nr;

    let (ymag, yang, p0, q0, mut vm, mut va) = times.time(Phase::Scatter, || {
        let nnz = ybus.nnz();
        let mut ymag = vec![0.0; nnz * w];
        let mut yang = vec![0.0; nnz * w];
        inputs.ybus.load_lanes(range.clone(), &mut ymag, &mut yang);
        let pr = inputs.profiles;
        (
            ymag,
            yang,
            pr.p0.extract(range.clone()),
            pr.q0.extract(range.clone()),
            pr.vm0.extract(range.clone()).as_slice().to_vec(),
            pr.va0.extract(range.clone()).as_slice().to_vec(),
        )
    });

    let mut status: Vec<Option<TaskStatus>> = inputs.preset[range.clone()].to_vec();
    let mut active: Vec<bool> = status.iter().map(Option::is_none).collect();
    let mut iterations = vec![0usize; w];
    let mut initial = vec![f64::NAN; w];
    let mut last = vec![f64::NAN; w];
    let mut flagged = vec![false; w];
    let mut flagged_first = vec![false; w];
    let mut fallback: Vec<(usize, usize)> = Vec::new();

    let mut mism = vec![0.0; dim * w];
    let mut lu_tape = BatchTape::zeros(sym.lu_nnz(), w);
    let mut a_tape = if setup.direct_scatter {
        BatchTape::zeros(0, w)
    } else {
        BatchTape::zeros(sym.lu_nnz(), w)
    };
    let mut x = BatchTape::zeros(dim, w);
    let mut work = vec![0.0; dim * w];
    let mut acc = vec![0.0; 4 * w];
    let mut unstable = vec![false; w];

    for iter in 0..=nr.max_iter {
        times.time(Phase::Npm, || {
            let st = LaneState {
                w,
                ymag: &ymag,
                yang: &yang,
                vm: &vm,
                va: &va,
            };
            npm_lanes(
                ybus,
                jac,
                &st,
                p0.as_slice(),
                q0.as_slice(),
                &mut mism,
                &mut acc,
            );
        });
        for lane in 0..w {
            if !active[lane] {
                continue;
            }
            let m = max_abs_lane(&mism, w, lane);
            if iter == 0 {
                initial[lane] = m;
            }
            last[lane] = m;
            let settled = if m < nr.tol {
                Some(TaskStatus::Converged)
            } else if !m.is_finite() || iter == nr.max_iter {
                Some(TaskStatus::Diverged)
            } else {
                None
            };
            if let Some(s) = settled {
                status[lane] = Some(s);
                iterations[lane] = iter;
                active[lane] = false;
            }
        }
        if !active.iter().any(|&a| a) {
            break;
        }

        times.time(Phase::Jacobian, || {
            let st = LaneState {
                w,
                ymag: &ymag,
                yang: &yang,
                vm: &vm,
                va: &va,
            };
            let target = if setup.direct_scatter {
                &mut lu_tape
            } else {
                &mut a_tape
            };
            jacobian_lanes(
                ybus,
                jac,
                setup.lu_map,
                &st,
                target.as_mut_slice(),
                &mut acc,
            );
        });

        times.time(Phase::Refactorize, || {
            unstable.fill(false);
            match plan {
                LinearPlan::Sequential => {
                    if setup.direct_scatter {
                        refactorize_slice(
                            sym,
                            lu_tape.as_mut_slice(),
                            w,
                            work_for(&mut work, sym.n() * w),
                            setup.lu.singular_tol,
                            &mut unstable,
                        );
                    } else {
                        let out =
                            refactorize_batch(sym, &a_tape, &mut lu_tape, setup.lu.singular_tol);
                        unstable.copy_from_slice(&out.unstable);
                    }
                }
                LinearPlan::Scheduled(pool) => {
                    if !setup.direct_scatter {
                        lu_tape.as_mut_slice().copy_from_slice(a_tape.as_slice());
                    }
                    let out = execute_schedule(sym, &mut lu_tape, setup.lu.singular_tol, pool);
                    unstable.copy_from_slice(&out.unstable);
                }
            }
        });
        for lane in 0..w {
            if active[lane] && unstable[lane] {
                flagged[lane] = true;
                flagged_first[lane] |= iter == 0;
                active[lane] = false;
                fallback.push((lane, iter));
            }
        }

        times.time(Phase::Fsbs, || match plan {
            LinearPlan::Sequential => {
                fs_bs_slice(
                    sym,
                    lu_tape.as_slice(),
                    w,
                    &mism,
                    &mut work,
                    x.as_mut_slice(),
                );
            }
            LinearPlan::Scheduled(pool) => {
                let b = BatchTape::from_element_major(dim, w, mism.clone());
                x = fs_bs_scheduled(sym, &lu_tape, &b, pool);
            }
        });
        update_voltage_lanes(jac, w, x.as_slice(), &mut va, &mut vm, &active);
        for lane in 0..w {
            if active[lane]
                && jac
                    .pq()
                    .iter()
                    .any(|&b| vm[b * w + lane].is_nan() || vm[b * w + lane] <= 0.0)
            {
                status[lane] = Some(TaskStatus::Diverged);
                iterations[lane] = iter + 1;
                last[lane] = f64::NAN;
                active[lane] = false;
            }
        }
    }

    let lane_vec = |v: &[f64], lane: usize| (0..n).map(|b| v[b * w + lane]).collect::<Vec<f64>>();
    let mut outcomes: Vec<TaskOutcome> = (0..w)
        .map(|lane| TaskOutcome {
            status: status[lane].unwrap_or(TaskStatus::Diverged),
            iterations: iterations[lane],
            vm: lane_vec(&vm, lane),
            va: lane_vec(&va, lane),
            max_mismatch: last[lane],
            initial_mismatch: initial[lane],
            flagged: flagged[lane],
            flagged_first: flagged_first[lane],
        })
        .collect();

    for (lane, iter) in fallback {
        let solo = Solo {
            ymag: lane_vec_nnz(&ymag, w, lane),
            yang: lane_vec_nnz(&yang, w, lane),
            p0: lane_vec(p0.as_slice(), lane),
            q0: lane_vec(q0.as_slice(), lane),
        };
        let o = &mut outcomes[lane];
        let (s, it, m) = solo.run(setup, &mut o.vm, &mut o.va, iter, times);
        o.status = s;
        o.iterations = it;
        o.max_mismatch = m;
    }
    outcomes
}

fn work_for(work: &mut Vec<f64>, len: usize) -> &mut [f64] {
    if work.len() < len {
        work.resize(len, 0.0);
    }
    let out = &mut work[..len];
    out.fill(0.0);
    out
}

fn lane_vec_nnz(v: &[f64], w: usize, lane: usize) -> Vec<f64> {
    v.iter().skip(lane).step_by(w).copied().collect()
}

/// One task continuing alone after its frozen pivot collapsed.
struct Solo {
    ymag: Vec<f64>,
    yang: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
}

impl Solo {
    /// Continues the iteration from `start_iter` with the voltages at which
    /// the mini-batch gave up. The fresh row permutation is kept for the
    /// rest of the loop and re-derived only if it fails again.
    fn run(
        &self,
        setup: &NrSetup,
        vm: &mut [f64],
        va: &mut [f64],
        start_iter: usize,
        times: &mut PhaseTimes,
    ) -> (TaskStatus, usize, f64) {
        let jac = setup.jacobian;
        let ybus = jac.ybus_pattern();
        let dim = jac.dim();
        let tol = setup.nr.tol;
        let mut private: Option<SymbolicLu> = None;
        let mut lu = Vec::new();
        let mut j_values = vec![0.0; jac.reduced().nnz()];
        let mut mism = vec![0.0; dim];
        let mut acc = vec![0.0; 4];
        let mut y = vec![0.0; dim];
        let mut x = vec![0.0; dim];
        let mut unstable = [false];

        let mut iter = start_iter;
        let mut m = self.mismatch(setup, vm, va, &mut mism, &mut acc, times);
        loop {
            times.time(Phase::Jacobian, || {
                let st = LaneState {
                    w: 1,
                    ymag: &self.ymag,
                    yang: &self.yang,
                    vm,
                    va,
                };
                jacobian_lanes(ybus, jac, jac.reduced_map(), &st, &mut j_values, &mut acc);
            });
            let factored = times.time(Phase::Refactorize, || {
                if let Some(sym) = &private {
                    sym.scatter().scatter(&j_values, &mut lu);
                    let mut xw = vec![0.0; sym.n()];
                    unstable[0] = false;
                    refactorize_slice(
                        sym,
                        &mut lu,
                        1,
                        &mut xw,
                        setup.lu.singular_tol,
                        &mut unstable,
                    );
                    if !unstable[0] {
                        return true;
                    }
                }
                match second_chance_refactorize(setup.symbolic, &j_values, &setup.lu) {
                    Ok((sym, values)) => {
                        private = Some(sym);
                        lu = values;
                        true
                    }
                    Err(_) => false,
                }
            });
            if !factored {
                return (TaskStatus::Singular, iter, m);
            }
            let sym = private.as_ref().expect("factored above");
            times.time(Phase::Fsbs, || {
                fs_bs_slice(sym, &lu, 1, &mism, &mut y, &mut x)
            });
            update_voltage_lanes(jac, 1, &x, va, vm, &[true]);
            iter += 1;
            if jac.pq().iter().any(|&b| vm[b].is_nan() || vm[b] <= 0.0) {
                return (TaskStatus::Diverged, iter, f64::NAN);
            }
            m = self.mismatch(setup, vm, va, &mut mism, &mut acc, times);
            if m < tol {
                return (TaskStatus::FallbackConverged, iter, m);
            }
            if !m.is_finite() || iter >= setup.nr.max_iter {
                return (TaskStatus::Diverged, iter, m);
            }
        }
    }

    fn mismatch(
        &self,
        setup: &NrSetup,
        vm: &[f64],
        va: &[f64],
        out: &mut [f64],
        acc: &mut [f64],
        times: &mut PhaseTimes,
    ) -> f64 {
        times.time(Phase::Npm, || {
            let st = LaneState {
                w: 1,
                ymag: &self.ymag,
                yang: &self.yang,
                vm,
                va,
            };
            npm_lanes(
                setup.jacobian.ybus_pattern(),
                setup.jacobian,
                &st,
                &self.p0,
                &self.q0,
                out,
                acc,
            );
            max_abs_lane(out, 1, 0)
        })
    }
}
