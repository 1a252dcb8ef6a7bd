//! Left-looking Gilbert-Peierls factorization with threshold partial
//! pivoting. Discovers the row permutation and the complete L+U pattern.

use super::{amd_order, LuConfig, LuError, Ordering, SymbolicLu};
use crate::sparse::{Permutation, SparseCcs, SparseCrs, SparseError};

const NONE: usize = usize::MAX;

/// Orders the columns per `cfg.ordering`, then factorizes `values` (laid out
/// in the CRS slots of `pattern`). Returns the frozen structure and the LU
/// values of this matrix in `lu_pattern` slot order.
pub fn factorize_initial(
    pattern: &SparseCrs,
    values: &[f64],
    cfg: &LuConfig,
) -> Result<(SymbolicLu, Vec<f64>), LuError> {
    let perm_col = match cfg.ordering {
        Ordering::Amd => amd_order(pattern),
        Ordering::Natural => Permutation::identity(pattern.n_rows()),
    };
    factorize_with_columns(pattern, values, perm_col, cfg)
}

/// Fresh pivoting factorization of one task that failed under the frozen
/// row permutation. The column ordering is kept; rows are pivoted anew.
pub fn second_chance_refactorize(
    symbolic: &SymbolicLu,
    task_values: &[f64],
    cfg: &LuConfig,
) -> Result<(SymbolicLu, Vec<f64>), LuError> {
    factorize_with_columns(
        symbolic.input_pattern(),
        task_values,
        symbolic.perm_col().clone(),
        cfg,
    )
}

/// Factorization with a given column ordering (`forward[old] = new`).
pub fn factorize_with_columns(
    pattern: &SparseCrs,
    values: &[f64],
    perm_col: Permutation,
    cfg: &LuConfig,
) -> Result<(SymbolicLu, Vec<f64>), LuError> {
    let n = pattern.n_rows();
    if pattern.n_cols() != n {
        return Err(SparseError::NotSquare {
            n_rows: n,
            n_cols: pattern.n_cols(),
        }
        .into());
    }
    if values.len() != pattern.nnz() || perm_col.len() != n {
        return Err(SparseError::DimensionMismatch(
            "values or ordering do not match the pattern".into(),
        )
        .into());
    }
    let (ccs, map) = pattern.to_ccs();
    let mut ccs_values = vec![0.0; values.len()];
    for (&dst, &v) in map.iter().zip(values) {
        ccs_values[dst as usize] = v;
    }

    // pinv[original row] = pivot step
    let mut pinv = vec![NONE; n];
    let mut l_cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut x = vec![0.0; n];
    let mut seen = vec![NONE; n];
    let mut stack = Vec::new();
    let mut reach = Vec::new();
    let mut pivotal: Vec<(usize, usize)> = Vec::new();
    let mut candidates = Vec::new();

    for k in 0..n {
        let col = perm_col.old_of(k);
        reach.clear();
        for s in ccs.col_range(col) {
            let i = ccs.row_ix()[s] as usize;
            if seen[i] == k {
                continue;
            }
            seen[i] = k;
            stack.push(i);
            while let Some(v) = stack.pop() {
                reach.push(v);
                if pinv[v] != NONE {
                    for &(r, _) in &l_cols[pinv[v]] {
                        if seen[r] != k {
                            seen[r] = k;
                            stack.push(r);
                        }
                    }
                }
            }
        }

        for &i in &reach {
            x[i] = 0.0;
        }
        for s in ccs.col_range(col) {
            x[ccs.row_ix()[s] as usize] = ccs_values[s];
        }

        // ascending pivot order matches the refactorization exactly
        pivotal.clear();
        candidates.clear();
        for &i in &reach {
            if pinv[i] == NONE {
                candidates.push(i);
            } else {
                pivotal.push((pinv[i], i));
            }
        }
        pivotal.sort_unstable();
        candidates.sort_unstable();
        for &(step, row) in &pivotal {
            let xr = x[row];
            for &(i, l) in &l_cols[step] {
                x[i] -= xr * l;
            }
        }

        if candidates.is_empty() {
            return Err(LuError::StructurallySingular { column: k });
        }
        let mut best = candidates[0];
        let mut max = x[best].abs();
        for &i in &candidates[1..] {
            let a = x[i].abs();
            if a > max {
                best = i;
                max = a;
            }
        }
        if max == 0.0 || !max.is_finite() || candidates.iter().any(|&i| !x[i].is_finite()) {
            return Err(LuError::NumericallySingular { column: k });
        }
        // the entry of J on its own diagonal is preferred
        let pivot_row =
            if pinv[col] == NONE && seen[col] == k && x[col].abs() >= cfg.pivot_tol * max {
                col
            } else {
                best
            };
        pinv[pivot_row] = k;
        let pivot = x[pivot_row];

        let mut u: Vec<(usize, f64)> = pivotal.iter().map(|&(step, row)| (step, x[row])).collect();
        u.push((k, pivot));
        u_cols.push(u);
        l_cols.push(
            candidates
                .iter()
                .filter(|&&i| i != pivot_row)
                .map(|&i| (i, x[i] / pivot))
                .collect(),
        );
    }

    let perm_row = Permutation::from_forward(pinv.clone())?;
    let entries = (0..n).flat_map(|k| {
        let u = u_cols[k].iter().map(move |&(step, _)| (step, k));
        let l = l_cols[k].iter().map(|&(i, _)| (pinv[i], k));
        u.chain(l).collect::<Vec<_>>()
    });
    let lu_pattern = SparseCcs::from_coordinates(n, n, entries)?;
    let mut lu_values = vec![0.0; lu_pattern.nnz()];
    for k in 0..n {
        for &(step, v) in &u_cols[k] {
            lu_values[lu_pattern.find(step, k).expect("entry inserted above")] = v;
        }
        for &(i, v) in &l_cols[k] {
            lu_values[lu_pattern.find(pinv[i], k).expect("entry inserted above")] = v;
        }
    }
    let symbolic = SymbolicLu::assemble(pattern, perm_row, perm_col, lu_pattern, cfg)?;
    Ok((symbolic, lu_values))
}
