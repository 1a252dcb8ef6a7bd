//! Approximate minimum degree ordering on a quotient graph.
//!
//! Variables that are eliminated become elements; the adjacency of a live
//! variable is the union of its remaining variable neighbours and the
//! variables of its adjacent elements. Degrees are upper bounds computed
//! from element set differences, without supervariable detection. Ties go
//! to the lower degree in the original graph, then to the lowest index, so
//! the ordering is reproducible.

use std::collections::BTreeSet;

use crate::sparse::{Permutation, SparseCrs};

/// Adjacency lists of the pattern of `A + Aᵀ` without the diagonal.
pub fn symmetrized(pattern: &SparseCrs) -> Vec<Vec<usize>> {
    let n = pattern.n_rows();
    let mut adj = vec![Vec::new(); n];
    for (r, c, _) in pattern.entries() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Fill-reducing ordering of the square pattern, as a permutation with
/// `forward[old] = new`.
pub fn amd_order(pattern: &SparseCrs) -> Permutation {
    let order = eliminate(symmetrized(pattern));
    Permutation::from_order(order).expect("every variable is eliminated exactly once")
}

fn eliminate(mut var_adj: Vec<Vec<usize>>) -> Vec<usize> {
    let n = var_adj.len();
    let mut elem_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut elem_vars: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut alive = vec![true; n];
    let mut absorbed = vec![false; n];
    let mut degree: Vec<usize> = var_adj.iter().map(Vec::len).collect();
    let initial = degree.clone();
    let mut queue: BTreeSet<(usize, usize, usize)> =
        degree.iter().enumerate().map(|(i, &d)| (d, d, i)).collect();

    let mut mark = vec![usize::MAX; n];
    let mut external = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);

    for step in 0..n {
        let (_, _, p) = queue.pop_first().expect("queue holds every live variable");
        alive[p] = false;
        order.push(p);

        // pattern of the new element p
        let mut lp = Vec::new();
        mark[p] = step;
        for &v in &var_adj[p] {
            if alive[v] && mark[v] != step {
                mark[v] = step;
                lp.push(v);
            }
        }
        for &e in &elem_adj[p] {
            if absorbed[e] {
                continue;
            }
            for &v in &elem_vars[e] {
                if alive[v] && mark[v] != step {
                    mark[v] = step;
                    lp.push(v);
                }
            }
            absorbed[e] = true;
            elem_vars[e] = Vec::new();
        }
        lp.sort_unstable();
        var_adj[p] = Vec::new();
        elem_adj[p] = Vec::new();

        for &i in &lp {
            elem_adj[i].retain(|&e| !absorbed[e]);
            elem_adj[i].push(p);
            var_adj[i].retain(|&v| alive[v] && mark[v] != step);
        }

        // |Le \ Lp| for every element touching Lp
        let mut touched = Vec::new();
        for &i in &lp {
            for &e in &elem_adj[i] {
                if e == p {
                    continue;
                }
                if external[e] == usize::MAX {
                    elem_vars[e].retain(|&v| alive[v]);
                    external[e] = elem_vars[e].len();
                    touched.push(e);
                }
                external[e] -= 1;
            }
        }

        let remaining = n - step - 1;
        let lp_len = lp.len();
        for &i in &lp {
            let mut bound = var_adj[i].len() + lp_len - 1;
            for &e in &elem_adj[i] {
                if e != p && !absorbed[e] {
                    if external[e] == 0 {
                        // element is a subset of Lp
                        absorbed[e] = true;
                    } else {
                        bound += external[e];
                    }
                }
            }
            let d = bound
                .min(degree[i] + lp_len - 1)
                .min(remaining.saturating_sub(1));
            if d != degree[i] {
                queue.remove(&(degree[i], initial[i], i));
                degree[i] = d;
                queue.insert((d, initial[i], i));
            }
        }
        for e in touched {
            external[e] = usize::MAX;
            if absorbed[e] {
                elem_vars[e] = Vec::new();
            }
        }
        elem_vars[p] = lp;
    }
    order
}
