//! Column dependency levels and the multi-stage parallel execution plan.
//!
//! Columns of one level only depend on columns of earlier levels. Wide
//! levels factor their columns in parallel. When a level gets narrow, the
//! idle workers also run the updates of later columns whose dependencies
//! are already done, remembering how far each column got. When a level has
//! a single column, the updates inside that column are split into strips.
//!
//! Every step reads a snapshot of finished columns and writes privatized
//! column results back after the step, so the floating-point sequence of
//! every column is the sequential one regardless of the worker count.

use rayon::prelude::*;
use rayon::ThreadPool;

use super::refactor::{apply_dependency, dependency_strip, load_column, store_column};
use super::{LuError, SymbolicLu};
use crate::sparse::SparseCcs;
use crate::tape::BatchTape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Bulk,
    Narrow,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSchedule {
    levels: Vec<Vec<u32>>,
    stages: Vec<Stage>,
    level_of: Vec<u32>,
    vmad_width: usize,
}

impl LevelSchedule {
    /// `level(c) = 1 + max level(r)` over the U rows `r` of column `c`.
    pub fn build(
        pattern: &SparseCcs,
        narrow_threshold: usize,
        scalar_threshold: usize,
        vmad_width: usize,
    ) -> Result<Self, LuError> {
        let n = pattern.n_cols();
        let mut level_of = vec![0u32; n];
        let mut levels: Vec<Vec<u32>> = Vec::new();
        for c in 0..n {
            let start = pattern.col_ptr()[c] as usize;
            let diag = pattern.diag_ptr()[c] as usize;
            let mut level = 0;
            for &r in &pattern.row_ix()[start..diag] {
                let r = r as usize;
                if r >= c {
                    return Err(LuError::InvalidSchedule { column: c, row: r });
                }
                level = level.max(level_of[r] + 1);
            }
            level_of[c] = level;
            if levels.len() <= level as usize {
                levels.resize(level as usize + 1, Vec::new());
            }
            levels[level as usize].push(c as u32);
        }
        let stages = levels
            .iter()
            .map(|cols| {
                if cols.len() < scalar_threshold {
                    Stage::Scalar
                } else if cols.len() < narrow_threshold {
                    Stage::Narrow
                } else {
                    Stage::Bulk
                }
            })
            .collect();
        Ok(Self {
            levels,
            stages,
            level_of,
            vmad_width: vmad_width.max(1),
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Vec<u32>] {
        &self.levels
    }

    pub fn stage(&self, level: usize) -> Stage {
        self.stages[level]
    }

    pub fn level_of(&self, col: usize) -> usize {
        self.level_of[col] as usize
    }

    pub fn vmad_width(&self) -> usize {
        self.vmad_width
    }

    /// Number of columns per level.
    pub fn histogram(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Number of levels tagged bulk, narrow and scalar.
    pub fn stage_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.stages {
            counts[*s as usize] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleOutcome {
    pub unstable: Vec<bool>,
    /// Number of synchronized steps that did work.
    pub steps: usize,
}

struct Job {
    col: usize,
    first_dep: usize,
}

struct JobResult {
    col: usize,
    values: Vec<f64>,
    next_dep: usize,
    finished: bool,
    unstable: Vec<bool>,
}

/// Refactorizes `lu_tape` (input already scattered into it) on `pool`.
/// The result is bit-identical to [`super::refactorize_in_place`].
pub fn execute_schedule(
    symbolic: &SymbolicLu,
    lu_tape: &mut BatchTape,
    singular_tol: f64,
    pool: &ThreadPool,
) -> ScheduleOutcome {
    let n = symbolic.n();
    let w = lu_tape.n_tasks();
    let schedule = symbolic.schedule();
    let pat = symbolic.lu_pattern();
    let n_deps: Vec<usize> = (0..n).map(|c| symbolic.u_slots(c).len()).collect();
    let mut next_dep = vec![0usize; n];
    let mut finished = vec![false; n];
    let mut unstable = vec![false; w];
    let mut steps = 0;

    for (level, cols) in schedule.levels().iter().enumerate() {
        let pending: Vec<usize> = cols
            .iter()
            .map(|&c| c as usize)
            .filter(|&c| !finished[c])
            .collect();
        if pending.is_empty() {
            continue;
        }
        steps += 1;
        let stage = schedule.stage(level);

        let mut jobs: Vec<Job> = Vec::new();
        if stage != Stage::Scalar {
            jobs.extend(pending.iter().map(|&col| Job {
                col,
                first_dep: next_dep[col],
            }));
        }
        if stage != Stage::Bulk {
            // eager partial work on later columns
            for col in 0..n {
                if finished[col] || schedule.level_of(col) <= level || next_dep[col] == n_deps[col]
                {
                    continue;
                }
                let r = pat.row_ix()[symbolic.u_slots(col).start + next_dep[col]] as usize;
                if finished[r] {
                    jobs.push(Job {
                        col,
                        first_dep: next_dep[col],
                    });
                }
            }
        }

        let snapshot = lu_tape.as_slice();
        let mut results: Vec<JobResult> = pool.install(|| {
            jobs.par_iter()
                .map_init(
                    || vec![0.0; n * w],
                    |x, job| run_job(symbolic, snapshot, w, job, &finished, singular_tol, x),
                )
                .collect()
        });
        if stage == Stage::Scalar {
            for &col in &pending {
                results.push(run_split(
                    symbolic,
                    snapshot,
                    w,
                    col,
                    next_dep[col],
                    singular_tol,
                    schedule.vmad_width(),
                    pool,
                ));
            }
        }

        let lu = lu_tape.as_mut_slice();
        for res in results {
            let range = pat.col_range(res.col);
            lu[range.start * w..range.end * w].copy_from_slice(&res.values);
            next_dep[res.col] = res.next_dep;
            finished[res.col] = res.finished;
            for (u, r) in unstable.iter_mut().zip(&res.unstable) {
                *u |= *r;
            }
        }
        debug_assert!(pending.iter().all(|&c| finished[c]));
    }
    ScheduleOutcome { unstable, steps }
}

fn run_job(
    symbolic: &SymbolicLu,
    lu: &[f64],
    w: usize,
    job: &Job,
    finished: &[bool],
    singular_tol: f64,
    x: &mut [f64],
) -> JobResult {
    let pat = symbolic.lu_pattern();
    let deps = symbolic.u_slots(job.col);
    load_column(symbolic, job.col, w, lu, x);
    let mut next = job.first_dep;
    while deps.start + next < deps.end {
        let r = pat.row_ix()[deps.start + next] as usize;
        if !finished[r] {
            break;
        }
        apply_dependency(symbolic, r, w, lu, x);
        next += 1;
    }
    let done = deps.start + next == deps.end;
    let range = pat.col_range(job.col);
    let mut values = vec![0.0; range.len() * w];
    let mut unstable = vec![false; w];
    store_column(
        symbolic,
        job.col,
        w,
        x,
        &mut values,
        done.then_some(singular_tol),
        &mut unstable,
    );
    JobResult {
        col: job.col,
        values,
        next_dep: next,
        finished: done,
        unstable,
    }
}

/// Single-column level: every dependency update is split into strips of
/// L rows that run concurrently.
#[allow(clippy::too_many_arguments)]
fn run_split(
    symbolic: &SymbolicLu,
    lu: &[f64],
    w: usize,
    col: usize,
    first_dep: usize,
    singular_tol: f64,
    vmad_width: usize,
    pool: &ThreadPool,
) -> JobResult {
    let pat = symbolic.lu_pattern();
    let mut x = vec![0.0; symbolic.n() * w];
    load_column(symbolic, col, w, lu, &mut x);
    for s in symbolic.u_slots(col).skip(first_dep) {
        let r = pat.row_ix()[s] as usize;
        let l = symbolic.l_slots(r);
        let strip = l.len().div_ceil(vmad_width).max(1);
        let starts: Vec<usize> = l.clone().step_by(strip).collect();
        let x_ref = &x;
        let updates: Vec<Vec<(usize, Vec<f64>)>> = pool.install(|| {
            starts
                .par_iter()
                .map(|&a| dependency_strip(symbolic, r, w, lu, x_ref, a..(a + strip).min(l.end)))
                .collect()
        });
        for (i, v) in updates.into_iter().flatten() {
            x[i * w..(i + 1) * w].copy_from_slice(&v);
        }
    }
    let range = pat.col_range(col);
    let mut values = vec![0.0; range.len() * w];
    let mut unstable = vec![false; w];
    store_column(
        symbolic,
        col,
        w,
        &mut x,
        &mut values,
        Some(singular_tol),
        &mut unstable,
    );
    JobResult {
        col,
        values,
        next_dep: symbolic.u_slots(col).len(),
        finished: true,
        unstable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(n: usize, entries: &[(usize, usize)]) -> SparseCcs {
        SparseCcs::from_coordinates(n, n, entries.iter().copied()).unwrap()
    }

    #[test]
    fn diagonal_is_one_bulk_level() {
        let s = LevelSchedule::build(&pattern(8, &[]), 4, 2, 4).unwrap();
        assert_eq!(s.histogram(), vec![8]);
        assert_eq!(s.stage(0), Stage::Bulk);
    }

    #[test]
    fn chain_is_all_scalar() {
        let entries: Vec<_> = (0..4).map(|i| (i, i + 1)).collect();
        let s = LevelSchedule::build(&pattern(5, &entries), 32, 2, 4).unwrap();
        assert_eq!(s.histogram(), vec![1; 5]);
        assert_eq!(s.stage_counts(), [0, 0, 5]);
    }

    #[test]
    fn dependencies_precede() {
        let s = LevelSchedule::build(&pattern(4, &[(0, 2), (1, 3), (2, 3)]), 32, 2, 4).unwrap();
        assert_eq!(s.level_of(2), 1);
        assert_eq!(s.level_of(3), 2);
    }
}
