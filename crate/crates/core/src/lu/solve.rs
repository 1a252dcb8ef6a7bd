//! Batched forward and backward substitution with the frozen permutations.

use rayon::prelude::*;
use rayon::ThreadPool;

use super::SymbolicLu;
use crate::sparse::SparseCcs;
use crate::tape::BatchTape;

/// Row-oriented views of L and U with their dependency levels, for the
/// level-parallel substitution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionLevels {
    /// (column, slot) of the strictly lower entries of every row, ascending
    l_rows: Vec<Vec<(u32, u32)>>,
    /// (column, slot) of the strictly upper entries of every row, descending
    u_rows: Vec<Vec<(u32, u32)>>,
    forward: Vec<Vec<u32>>,
    backward: Vec<Vec<u32>>,
}

impl SubstitutionLevels {
    pub fn build(pattern: &SparseCcs) -> Self {
        let n = pattern.n_cols();
        let mut l_rows = vec![Vec::new(); n];
        let mut u_rows = vec![Vec::new(); n];
        for (r, c, s) in pattern.entries() {
            if r > c {
                l_rows[r].push((c as u32, s as u32));
            } else if r < c {
                u_rows[r].push((c as u32, s as u32));
            }
        }
        for row in &mut l_rows {
            row.sort_unstable();
        }
        for row in &mut u_rows {
            row.sort_unstable_by(|a, b| b.cmp(a));
        }
        let mut level = vec![0usize; n];
        let mut forward: Vec<Vec<u32>> = Vec::new();
        for i in 0..n {
            level[i] = l_rows[i]
                .iter()
                .map(|&(j, _)| level[j as usize] + 1)
                .max()
                .unwrap_or(0);
            push_level(&mut forward, level[i], i);
        }
        let mut backward: Vec<Vec<u32>> = Vec::new();
        for i in (0..n).rev() {
            level[i] = u_rows[i]
                .iter()
                .map(|&(j, _)| level[j as usize] + 1)
                .max()
                .unwrap_or(0);
            push_level(&mut backward, level[i], i);
        }
        Self {
            l_rows,
            u_rows,
            forward,
            backward,
        }
    }

    pub fn forward_levels(&self) -> &[Vec<u32>] {
        &self.forward
    }

    pub fn backward_levels(&self) -> &[Vec<u32>] {
        &self.backward
    }
}

fn push_level(levels: &mut Vec<Vec<u32>>, level: usize, row: usize) {
    if levels.len() <= level {
        levels.resize(level + 1, Vec::new());
    }
    levels[level].push(row as u32);
}

/// Solves `J x = b` for every lane. `b` is indexed by rows of the input
/// matrix and the result by its columns.
pub fn fs_bs_batch(symbolic: &SymbolicLu, lu_tape: &BatchTape, b: &BatchTape) -> BatchTape {
    let w = b.n_tasks();
    assert_eq!(lu_tape.n_tasks(), w);
    let mut x = BatchTape::zeros(symbolic.n(), w);
    let mut work = vec![0.0; symbolic.n() * w];
    fs_bs_slice(
        symbolic,
        lu_tape.as_slice(),
        w,
        b.as_slice(),
        &mut work,
        x.as_mut_slice(),
    );
    x
}

/// Allocation-free core of [`fs_bs_batch`].
pub(crate) fn fs_bs_slice(
    symbolic: &SymbolicLu,
    lu: &[f64],
    w: usize,
    b: &[f64],
    y: &mut [f64],
    x: &mut [f64],
) {
    let n = symbolic.n();
    let pat = symbolic.lu_pattern();
    for i in 0..n {
        let src = symbolic.perm_row().old_of(i);
        y[i * w..(i + 1) * w].copy_from_slice(&b[src * w..(src + 1) * w]);
    }
    for j in 0..n {
        for p in symbolic.l_slots(j) {
            let i = pat.row_ix()[p] as usize;
            for lane in 0..w {
                y[i * w + lane] -= lu[p * w + lane] * y[j * w + lane];
            }
        }
    }
    for j in (0..n).rev() {
        let d = pat.diag_ptr()[j] as usize;
        for lane in 0..w {
            y[j * w + lane] /= lu[d * w + lane];
        }
        for p in symbolic.u_slots(j) {
            let i = pat.row_ix()[p] as usize;
            for lane in 0..w {
                y[i * w + lane] -= lu[p * w + lane] * y[j * w + lane];
            }
        }
    }
    for j in 0..n {
        let dst = symbolic.perm_col().old_of(j);
        x[dst * w..(dst + 1) * w].copy_from_slice(&y[j * w..(j + 1) * w]);
    }
}

/// Level-parallel variant of [`fs_bs_batch`]. Each row gathers its
/// contributions in the same order the sequential sweep applies them, so
/// the result is bit-identical.
pub fn fs_bs_scheduled(
    symbolic: &SymbolicLu,
    lu_tape: &BatchTape,
    b: &BatchTape,
    pool: &ThreadPool,
) -> BatchTape {
    let n = symbolic.n();
    let w = b.n_tasks();
    let lu = lu_tape.as_slice();
    let levels = symbolic.substitution_levels();
    let pat = symbolic.lu_pattern();
    let mut y = vec![0.0; n * w];
    for i in 0..n {
        let src = symbolic.perm_row().old_of(i);
        y[i * w..(i + 1) * w].copy_from_slice(b.slot(src));
    }
    for rows in &levels.forward {
        let y_ref = &y;
        let out: Vec<Vec<f64>> = pool.install(|| {
            rows.par_iter()
                .map(|&i| {
                    let i = i as usize;
                    let mut v = y_ref[i * w..(i + 1) * w].to_vec();
                    for &(j, p) in &levels.l_rows[i] {
                        let (j, p) = (j as usize, p as usize);
                        for lane in 0..w {
                            v[lane] -= lu[p * w + lane] * y_ref[j * w + lane];
                        }
                    }
                    v
                })
                .collect()
        });
        for (&i, v) in rows.iter().zip(out) {
            y[i as usize * w..(i as usize + 1) * w].copy_from_slice(&v);
        }
    }
    for rows in &levels.backward {
        let y_ref = &y;
        let out: Vec<Vec<f64>> = pool.install(|| {
            rows.par_iter()
                .map(|&i| {
                    let i = i as usize;
                    let mut v = y_ref[i * w..(i + 1) * w].to_vec();
                    for &(j, p) in &levels.u_rows[i] {
                        let (j, p) = (j as usize, p as usize);
                        for lane in 0..w {
                            v[lane] -= lu[p * w + lane] * y_ref[j * w + lane];
                        }
                    }
                    let d = pat.diag_ptr()[i] as usize;
                    for lane in 0..w {
                        v[lane] /= lu[d * w + lane];
                    }
                    v
                })
                .collect()
        });
        for (&i, v) in rows.iter().zip(out) {
            y[i as usize * w..(i as usize + 1) * w].copy_from_slice(&v);
        }
    }
    let mut x = BatchTape::zeros(n, w);
    for j in 0..n {
        x.slot_mut(symbolic.perm_col().old_of(j))
            .copy_from_slice(&y[j * w..(j + 1) * w]);
    }
    x
}
