//! Pattern-frozen left-looking refactorization over a mini-batch.
//!
//! The working space holds one dense column per lane, `x[row * w + lane]`.
//! Every scalar operation of the single-task algorithm is applied across
//! the `w` lanes of the mini-batch.

use super::SymbolicLu;
use crate::tape::BatchTape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefactorOutcome {
    /// Lanes whose pivot collapsed under the frozen permutation.
    pub unstable: Vec<bool>,
}

impl RefactorOutcome {
    pub fn any(&self) -> bool {
        self.unstable.iter().any(|&u| u)
    }
}

/// Refactorizes from a separate A tape laid out in `lu_pattern` slots, with
/// fill slots holding zero. `lu_tape` is overwritten.
pub fn refactorize_batch(
    symbolic: &SymbolicLu,
    a_tape: &BatchTape,
    lu_tape: &mut BatchTape,
    singular_tol: f64,
) -> RefactorOutcome {
    assert_eq!(a_tape.n_slots(), symbolic.lu_nnz());
    assert_eq!(a_tape.n_tasks(), lu_tape.n_tasks());
    let w = a_tape.n_tasks();
    let mut x = vec![0.0; symbolic.n() * w];
    let mut unstable = vec![false; w];
    for col in 0..symbolic.n() {
        load_column(symbolic, col, w, a_tape.as_slice(), &mut x);
        factor_loaded(
            symbolic,
            col,
            w,
            lu_tape.as_mut_slice(),
            &mut x,
            singular_tol,
            &mut unstable,
        );
    }
    RefactorOutcome { unstable }
}

/// Refactorizes a tape into which the input matrix was scattered directly.
pub fn refactorize_in_place(
    symbolic: &SymbolicLu,
    lu_tape: &mut BatchTape,
    singular_tol: f64,
) -> RefactorOutcome {
    let w = lu_tape.n_tasks();
    let mut x = vec![0.0; symbolic.n() * w];
    let mut unstable = vec![false; w];
    refactorize_slice(
        symbolic,
        lu_tape.as_mut_slice(),
        w,
        &mut x,
        singular_tol,
        &mut unstable,
    );
    RefactorOutcome { unstable }
}

/// Allocation-free core of [`refactorize_in_place`]. `x` must be zero.
pub(crate) fn refactorize_slice(
    symbolic: &SymbolicLu,
    lu: &mut [f64],
    w: usize,
    x: &mut [f64],
    singular_tol: f64,
    unstable: &mut [bool],
) {
    debug_assert_eq!(lu.len(), symbolic.lu_nnz() * w);
    for col in 0..symbolic.n() {
        load_column(symbolic, col, w, lu, x);
        factor_loaded(symbolic, col, w, lu, x, singular_tol, unstable);
    }
}

fn factor_loaded(
    symbolic: &SymbolicLu,
    col: usize,
    w: usize,
    lu: &mut [f64],
    x: &mut [f64],
    singular_tol: f64,
    unstable: &mut [bool],
) {
    for s in symbolic.u_slots(col) {
        let r = symbolic.lu_pattern().row_ix()[s] as usize;
        apply_dependency(symbolic, r, w, lu, x);
    }
    let range = symbolic.lu_pattern().col_range(col);
    let out = &mut lu[range.start * w..range.end * w];
    store_column(symbolic, col, w, x, out, Some(singular_tol), unstable);
}

/// Copies the column's current slot values from `src` into the working space.
#[inline]
pub(crate) fn load_column(symbolic: &SymbolicLu, col: usize, w: usize, src: &[f64], x: &mut [f64]) {
    let pat = symbolic.lu_pattern();
    for s in pat.col_range(col) {
        let row = pat.row_ix()[s] as usize;
        x[row * w..(row + 1) * w].copy_from_slice(&src[s * w..(s + 1) * w]);
    }
}

/// `x(i) -= x(r) * L(i, r)` for every L row `i` of finished column `r`.
#[inline]
pub(crate) fn apply_dependency(
    symbolic: &SymbolicLu,
    r: usize,
    w: usize,
    lu: &[f64],
    x: &mut [f64],
) {
    let pat = symbolic.lu_pattern();
    let (head, tail) = x.split_at_mut((r + 1) * w);
    let m = &head[r * w..];
    for p in symbolic.l_slots(r) {
        let i = pat.row_ix()[p] as usize;
        let xi = &mut tail[(i - r - 1) * w..(i - r) * w];
        let l = &lu[p * w..(p + 1) * w];
        for lane in 0..w {
            xi[lane] -= m[lane] * l[lane];
        }
    }
}

/// Updates of one strip of L rows of column `r`, returned rather than applied.
pub(crate) fn dependency_strip(
    symbolic: &SymbolicLu,
    r: usize,
    w: usize,
    lu: &[f64],
    x: &[f64],
    slots: std::ops::Range<usize>,
) -> Vec<(usize, Vec<f64>)> {
    let pat = symbolic.lu_pattern();
    let m = &x[r * w..(r + 1) * w];
    slots
        .map(|p| {
            let i = pat.row_ix()[p] as usize;
            let l = &lu[p * w..(p + 1) * w];
            let xi = &x[i * w..(i + 1) * w];
            (i, (0..w).map(|lane| xi[lane] - m[lane] * l[lane]).collect())
        })
        .collect()
}

/// Writes the working space back into the column's slots (`out` covers
/// exactly those slots) and clears it. With `finalize`, L is divided by the
/// pivot and lanes with a collapsed pivot are flagged; otherwise the partial
/// state is stored unchanged.
pub(crate) fn store_column(
    symbolic: &SymbolicLu,
    col: usize,
    w: usize,
    x: &mut [f64],
    out: &mut [f64],
    finalize: Option<f64>,
    unstable: &mut [bool],
) {
    let pat = symbolic.lu_pattern();
    let range = pat.col_range(col);
    let diag_local = pat.diag_ptr()[col] as usize - range.start;
    let Some(singular_tol) = finalize else {
        for (k, s) in range.enumerate() {
            let row = pat.row_ix()[s] as usize;
            out[k * w..(k + 1) * w].copy_from_slice(&x[row * w..(row + 1) * w]);
            x[row * w..(row + 1) * w].fill(0.0);
        }
        return;
    };
    for lane in 0..w {
        let mut col_max = 0.0f64;
        for s in range.clone() {
            let row = pat.row_ix()[s] as usize;
            col_max = col_max.max(x[row * w + lane].abs());
        }
        let pivot = x[col * w + lane];
        if !(pivot.is_finite() && col_max > 0.0 && pivot.abs() >= singular_tol * col_max) {
            unstable[lane] = true;
        }
    }
    let pivot: Vec<f64> = x[col * w..(col + 1) * w].to_vec();
    for (k, s) in range.enumerate() {
        let row = pat.row_ix()[s] as usize;
        let dst = &mut out[k * w..(k + 1) * w];
        let src = &mut x[row * w..(row + 1) * w];
        if k <= diag_local {
            dst.copy_from_slice(src);
        } else {
            for lane in 0..w {
                dst[lane] = src[lane] / pivot[lane];
            }
        }
        src.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lu::{factorize_initial, LuConfig};
    use crate::sparse::SparseCrs;

    fn scatter_batch(sym: &SymbolicLu, tasks: &[Vec<f64>]) -> BatchTape {
        let lu_tasks: Vec<Vec<f64>> = tasks
            .iter()
            .map(|t| {
                let mut lu = vec![0.0; sym.lu_nnz()];
                sym.scatter().scatter(t, &mut lu);
                lu
            })
            .collect();
        BatchTape::from_task_major(&lu_tasks)
    }

    fn tridiagonal(n: usize) -> SparseCrs {
        let entries = (0..n - 1).flat_map(|i| [(i, i + 1), (i + 1, i)]);
        SparseCrs::from_coordinates(n, n, entries).unwrap()
    }

    #[test]
    fn identity_batch() {
        let p = SparseCrs::from_coordinates(4, 4, std::iter::empty()).unwrap();
        let (sym, _) = factorize_initial(&p, &[1.0; 4], &LuConfig::default()).unwrap();
        let mut tape = scatter_batch(&sym, &vec![vec![1.0; 4]; 3]);
        let out = refactorize_in_place(&sym, &mut tape, 1e-14);
        assert!(!out.any());
        assert!(tape.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matches_initial_factorization() {
        let p = tridiagonal(6);
        let vals: Vec<f64> = (0..p.nnz())
            .map(|s| {
                if p.col_ix()[s] as usize == row_of(&p, s) {
                    4.0
                } else {
                    -1.0 - 0.1 * s as f64
                }
            })
            .collect();
        let (sym, lu0) = factorize_initial(&p, &vals, &LuConfig::default()).unwrap();
        let mut tape = scatter_batch(&sym, &[vals.clone(), vals]);
        refactorize_in_place(&sym, &mut tape, 1e-14);
        assert_eq!(tape.task(0), lu0);
        assert_eq!(tape.task(1), lu0);
    }

    #[test]
    fn a_tape_path_equals_direct_path() {
        let p = tridiagonal(5);
        let vals: Vec<f64> = (0..p.nnz()).map(|s| 1.0 + s as f64).collect();
        let (sym, _) = factorize_initial(&p, &vals, &LuConfig::default()).unwrap();
        let a = scatter_batch(&sym, std::slice::from_ref(&vals));
        let mut direct = a.clone();
        let mut via = BatchTape::zeros(sym.lu_nnz(), 1);
        refactorize_in_place(&sym, &mut direct, 1e-14);
        refactorize_batch(&sym, &a, &mut via, 1e-14);
        assert_eq!(direct, via);
    }

    #[test]
    fn singular_lane_is_flagged_alone() {
        let p = tridiagonal(3);
        let good: Vec<f64> = (0..p.nnz())
            .map(|s| {
                if p.col_ix()[s] as usize == row_of(&p, s) {
                    3.0
                } else {
                    1.0
                }
            })
            .collect();
        let (sym, _) = factorize_initial(&p, &good, &LuConfig::default()).unwrap();
        let mut bad = good.clone();
        // zero the last column
        for (v, &c) in bad.iter_mut().zip(p.col_ix()) {
            if c == 2 {
                *v = 0.0;
            }
        }
        let mut tape = scatter_batch(&sym, &[good.clone(), bad, good.clone()]);
        let out = refactorize_in_place(&sym, &mut tape, 1e-14);
        assert_eq!(out.unstable, vec![false, true, false]);
        let mut solo = scatter_batch(&sym, &[good]);
        refactorize_in_place(&sym, &mut solo, 1e-14);
        assert_eq!(tape.task(0), solo.task(0));
        assert_eq!(tape.task(2), solo.task(0));
    }

    fn row_of(p: &SparseCrs, slot: usize) -> usize {
        p.row_ptr().partition_point(|&start| start as usize <= slot) - 1
    }
}
