//! Dense reference implementations shared by the integration tests. None of
//! them call into the crate's numerical code; they only read case data.
#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use gridbatch::grid::{BusKind, GridCase};
use num_complex::Complex64;

pub const FIXTURES: [&str; 5] = ["case2", "case14", "case30", "case118", "case300"];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.m"))
}

pub fn load(name: &str) -> GridCase {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    GridCase::parse(&text).unwrap()
}

/// Dense admittance matrix from the pi model of each branch for which
/// `in_service(k)` holds, plus bus shunts.
pub fn dense_ybus(case: &GridCase, in_service: impl Fn(usize) -> bool) -> Vec<Vec<Complex64>> {
    let n = case.n_bus();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let idx = |id| case.bus_index(id).unwrap();
    for (k, br) in case.branches().iter().enumerate() {
        if !in_service(k) {
            continue;
        }
        let (f, t) = (idx(br.from_bus), idx(br.to_bus));
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let charge = Complex64::new(0.0, br.b_charge / 2.0);
        let ratio = if br.tap == 0.0 { 1.0 } else { br.tap };
        let tap = Complex64::from_polar(ratio, br.shift.to_radians());
        y[f][f] += (ys + charge) / (ratio * ratio);
        y[f][t] -= ys / tap.conj();
        y[t][f] -= ys / tap;
        y[t][t] += ys + charge;
    }
    for (b, bus) in case.buses().iter().enumerate() {
        y[b][b] += Complex64::new(bus.gs, bus.bs) / case.base_mva();
    }
    y
}

/// Specified complex injection per bus in p.u., with optional per-bus load
/// overrides in MW / MVAr.
pub fn injections(case: &GridCase, pd: Option<&[f64]>, qd: Option<&[f64]>) -> Vec<Complex64> {
    let mut pg = vec![0.0; case.n_bus()];
    for g in case.generators().iter().filter(|g| g.in_service) {
        pg[case.bus_index(g.bus).unwrap()] += g.p_set;
    }
    case.buses()
        .iter()
        .enumerate()
        .map(|(b, bus)| {
            let p = pd.map_or(bus.p_load, |v| v[b]);
            let q = qd.map_or(bus.q_load, |v| v[b]);
            Complex64::new(pg[b] - p, -q) / case.base_mva()
        })
        .collect()
}

/// Flat start: generator setpoints on slack and PV buses, 1 p.u. on PQ
/// buses, every angle at the slack's.
pub fn flat_start(case: &GridCase) -> (Vec<f64>, Vec<f64>) {
    let n = case.n_bus();
    let mut vm = vec![1.0; n];
    let mut set = vec![false; n];
    for g in case.generators().iter().filter(|g| g.in_service) {
        let b = case.bus_index(g.bus).unwrap();
        if !set[b] && case.kind(b) != BusKind::Pq {
            vm[b] = g.vm_set;
            set[b] = true;
        }
    }
    let slack = case.slack_bus();
    (vm, vec![case.buses()[slack].va_init.to_radians(); n])
}

/// Solves a dense system by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                let (top, bottom) = a.split_at_mut(i);
                for (x, p) in bottom[0][k..].iter_mut().zip(&top[k][k..]) {
                    *x -= f * p;
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

pub struct DenseSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
}

fn mismatch_vector(
    y: &[Vec<Complex64>],
    s: &[Complex64],
    v: &[Complex64],
    pvpq: &[usize],
    pq: &[usize],
) -> Vec<f64> {
    let n = v.len();
    let calc: Vec<Complex64> = (0..n)
        .map(|i| v[i] * (0..n).map(|k| y[i][k] * v[k]).sum::<Complex64>().conj())
        .collect();
    let mis: Vec<Complex64> = calc.iter().zip(s).map(|(c, s)| c - s).collect();
    pvpq.iter()
        .map(|&i| mis[i].re)
        .chain(pq.iter().map(|&i| mis[i].im))
        .collect()
}

/// Complex-form Newton-Raphson on dense matrices with the textbook
/// derivatives `dS/dθ = j diag(V) conj(diag(I) − Y diag(V))` and
/// `dS/d|V| = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)`.
pub fn dense_newton(
    case: &GridCase,
    y: &[Vec<Complex64>],
    s: &[Complex64],
    vm0: &[f64],
    va0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<DenseSolution> {
    let n = case.n_bus();
    let pvpq: Vec<usize> = (0..n).filter(|&b| case.kind(b) != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&b| case.kind(b) == BusKind::Pq).collect();
    let (mut vm, mut va) = (vm0.to_vec(), va0.to_vec());
    let j = Complex64::new(0.0, 1.0);
    for it in 0..=max_iter {
        let v: Vec<Complex64> = (0..n)
            .map(|b| Complex64::from_polar(vm[b], va[b]))
            .collect();
        let f = mismatch_vector(y, s, &v, &pvpq, &pq);
        let norm = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !norm.is_finite() {
            return None;
        }
        if norm < tol {
            return Some(DenseSolution {
                vm,
                va,
                iterations: it,
                mismatch: norm,
            });
        }
        if it == max_iter {
            return None;
        }
        let current: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|k| y[i][k] * v[k]).sum())
            .collect();
        let unit: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
        let mut ds_dth = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        let mut ds_dv = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for r in 0..n {
            for c in 0..n {
                let diag_i = if r == c {
                    current[r]
                } else {
                    Complex64::new(0.0, 0.0)
                };
                ds_dth[r][c] = j * v[r] * (diag_i - y[r][c] * v[c]).conj();
                ds_dv[r][c] = v[r] * (y[r][c] * unit[c]).conj();
                if r == c {
                    ds_dv[r][c] += current[r].conj() * unit[r];
                }
            }
        }
        let dim = pvpq.len() + pq.len();
        let mut jac = vec![vec![0.0; dim]; dim];
        for (a, &r) in pvpq.iter().enumerate() {
            for (b, &c) in pvpq.iter().enumerate() {
                jac[a][b] = ds_dth[r][c].re;
            }
            for (b, &c) in pq.iter().enumerate() {
                jac[a][pvpq.len() + b] = ds_dv[r][c].re;
            }
        }
        for (a, &r) in pq.iter().enumerate() {
            for (b, &c) in pvpq.iter().enumerate() {
                jac[pvpq.len() + a][b] = ds_dth[r][c].im;
            }
            for (b, &c) in pq.iter().enumerate() {
                jac[pvpq.len() + a][pvpq.len() + b] = ds_dv[r][c].im;
            }
        }
        let dx = dense_solve(jac, f);
        for (a, &b) in pvpq.iter().enumerate() {
            va[b] -= dx[a];
        }
        for (a, &b) in pq.iter().enumerate() {
            vm[b] -= dx[pvpq.len() + a];
        }
    }
    None
}

/// Dense NR of the case as given, from flat start.
pub fn solve_case(case: &GridCase) -> DenseSolution {
    let y = dense_ybus(case, |k| case.branches()[k].in_service);
    let s = injections(case, None, None);
    let (vm, va) = flat_start(case);
    dense_newton(case, &y, &s, &vm, &va, 1e-11, 30).expect("dense oracle converges")
}

/// Structural LU of a dense boolean pattern without pivoting: the number of
/// nonzeros of L + U (unit diagonal of L not counted).
pub fn symbolic_lu_nnz(mut nz: Vec<Vec<bool>>) -> usize {
    let n = nz.len();
    for k in 0..n {
        for i in k + 1..n {
            if nz[i][k] {
                for j in k + 1..n {
                    if nz[k][j] {
                        nz[i][j] = true;
                    }
                }
            }
        }
    }
    nz.iter().flatten().filter(|&&b| b).count()
}

/// Buses connected to the slack, by union-find over in-service branches.
pub fn islands(case: &GridCase, in_service: impl Fn(usize) -> bool) -> bool {
    let n = case.n_bus();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (k, br) in case.branches().iter().enumerate() {
        if in_service(k) {
            let a = root(&mut parent, case.bus_index(br.from_bus).unwrap());
            let b = root(&mut parent, case.bus_index(br.to_bus).unwrap());
            parent[a] = b;
        }
    }
    let r0 = root(&mut parent, 0);
    (1..n).any(|b| root(&mut parent, b) != r0)
}

/// Random square pattern with a full diagonal and about `per_row` extra
/// entries per row, with values whose diagonal is of the same magnitude as
/// its row.
pub fn random_system(
    rng: &mut impl rand::Rng,
    n: usize,
    per_row: usize,
) -> (gridbatch::sparse::SparseCrs, Vec<f64>) {
    let mut coords = Vec::new();
    for r in 0..n {
        for _ in 0..per_row {
            coords.push((r, rng.random_range(0..n)));
        }
    }
    let pattern = gridbatch::sparse::SparseCrs::from_coordinates(n, n, coords).unwrap();
    let values = random_values(rng, &pattern);
    (pattern, values)
}

pub fn random_values(rng: &mut impl rand::Rng, pattern: &gridbatch::sparse::SparseCrs) -> Vec<f64> {
    let mut values: Vec<f64> = (0..pattern.nnz())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    for r in 0..pattern.n_rows() {
        let sum: f64 = pattern.row_range(r).map(|s| values[s].abs()).sum();
        let d = pattern.diag_ptr()[r] as usize;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        values[d] = sign * (0.5 + sum * rng.random_range(0.5..1.5));
    }
    values
}

/// `‖P A Q − L U‖_F / ‖A‖_F` for one task, where `A[i][j]` of the permuted
/// matrix is `values[perm_row.old_of(i), perm_col.old_of(j)]`, L has a unit
/// diagonal and both factors share `lu_pattern` column by column.
pub fn lu_relative_residual(sym: &gridbatch::lu::SymbolicLu, values: &[f64], lu: &[f64]) -> f64 {
    let n = sym.n();
    let pat = sym.lu_pattern();
    let mut dense_a = vec![vec![0.0; n]; n];
    for (r, c, s) in sym.input_pattern().entries() {
        dense_a[sym.perm_row().new_of(r)][sym.perm_col().new_of(c)] = values[s];
    }
    let a_norm: f64 = dense_a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    // column j of L U is the sum over k of U[k][j] times column k of L
    let mut err = 0.0;
    let mut col = vec![0.0; n];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = dense_a[i][j];
        }
        for s in pat.col_range(j) {
            let k = pat.row_ix()[s] as usize;
            if k > j {
                continue;
            }
            let ukj = lu[s];
            col[k] -= ukj;
            for t in pat.col_range(k) {
                let i = pat.row_ix()[t] as usize;
                if i > k {
                    col[i] -= lu[t] * ukj;
                }
            }
        }
        err += col.iter().map(|v| v * v).sum::<f64>();
    }
    err.sqrt() / a_norm
}
