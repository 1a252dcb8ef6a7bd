//! Nodal admittance matrix under the MATPOWER branch model.

use num_complex::Complex64;

use super::{Branch, GridCase};
use crate::sparse::SparseCrs;

/// The four entries a branch contributes to the admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

/// Series admittance `ys = 1/(r + jx)`, charging split half per end, and the
/// complex ratio `t = tap * e^{j shift}` on the from side.
pub fn branch_admittance(branch: &Branch) -> BranchAdmittance {
    let ys = series_admittance(branch.r, branch.x);
    let charging = Complex64::new(0.0, branch.b_charge / 2.0);
    let t = Complex64::from_polar(branch.tap, branch.shift.to_radians());
    BranchAdmittance {
        yff: (ys + charging) / (branch.tap * branch.tap),
        yft: -ys / t.conj(),
        ytf: -ys / t,
        ytt: ys + charging,
    }
}

/// `1 / (r + jx)` by Smith's method, exact for pure reactances.
fn series_admittance(r: f64, x: f64) -> Complex64 {
    if x.abs() >= r.abs() {
        let ratio = r / x;
        let den = r * ratio + x;
        Complex64::new(ratio / den, -1.0 / den)
    } else {
        let ratio = x / r;
        let den = r + x * ratio;
        Complex64::new(1.0 / den, -ratio / den)
    }
}

/// Admittance pattern and values. Out-of-service branches keep their
/// structural slots (with zero contribution) so every outage variant of a
/// case shares one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Ybus {
    pattern: SparseCrs,
    re: Vec<f64>,
    im: Vec<f64>,
    /// (ff, ft, tf, tt) slots of every branch
    branch_slots: Vec<[u32; 4]>,
    shunt: Vec<Complex64>,
    admittances: Vec<BranchAdmittance>,
}

pub fn build_ybus(case: &GridCase) -> Ybus {
    let n = case.n_bus();
    let entries = (0..case.branches().len()).flat_map(|k| {
        let (f, t) = case.branch_ends(k);
        [(f, t), (t, f)]
    });
    let pattern =
        SparseCrs::from_coordinates(n, n, entries).expect("branch ends validated by GridCase");
    let branch_slots = (0..case.branches().len())
        .map(|k| {
            let (f, t) = case.branch_ends(k);
            let slot = |r, c| pattern.find(r, c).expect("slot inserted above") as u32;
            [slot(f, f), slot(f, t), slot(t, f), slot(t, t)]
        })
        .collect();
    let shunt = case
        .buses()
        .iter()
        .map(|b| Complex64::new(b.gs, b.bs) / case.base_mva())
        .collect();
    let admittances = case.branches().iter().map(branch_admittance).collect();
    let mut ybus = Ybus {
        re: vec![0.0; pattern.nnz()],
        im: vec![0.0; pattern.nnz()],
        pattern,
        branch_slots,
        shunt,
        admittances,
    };
    let (re, im) = ybus.values_with(|k| case.branches()[k].in_service);
    ybus.re = re;
    ybus.im = im;
    ybus
}

impl Ybus {
    pub fn pattern(&self) -> &SparseCrs {
        &self.pattern
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn value(&self, slot: usize) -> Complex64 {
        Complex64::new(self.re[slot], self.im[slot])
    }

    pub fn branch_slots(&self, branch: usize) -> [u32; 4] {
        self.branch_slots[branch]
    }

    pub fn branch_admittance(&self, branch: usize) -> BranchAdmittance {
        self.admittances[branch]
    }

    /// Values on the shared pattern with only the branches for which
    /// `in_service(k)` holds contributing. Entries are summed from scratch so
    /// an outaged branch leaves exact zeros behind.
    pub fn values_with(&self, in_service: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<f64>) {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.pattern.nnz()];
        for (k, slots) in self.branch_slots.iter().enumerate() {
            if !in_service(k) {
                continue;
            }
            let y = &self.admittances[k];
            acc[slots[0] as usize] += y.yff;
            acc[slots[1] as usize] += y.yft;
            acc[slots[2] as usize] += y.ytf;
            acc[slots[3] as usize] += y.ytt;
        }
        for (bus, &d) in self.pattern.diag_ptr().iter().enumerate() {
            acc[d as usize] += self.shunt[bus];
        }
        acc.iter().map(|z| (z.re, z.im)).unzip()
    }
}
