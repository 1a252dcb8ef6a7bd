//! Branch power flows from solved bus voltages.

use num_complex::Complex64;
use serde::Serialize;

use super::PolarVoltageBatch;
use crate::grid::{branch_admittance, GridCase};

/// Flows at both ends of a branch in MW / MVAr, positive into the branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    /// Larger end apparent power as percent of `rate_a`, when rated.
    pub loading: Option<f64>,
}

/// `S_from = V_f (Y_ff V_f + Y_ft V_t)*`, `S_to = V_t (Y_tf V_f + Y_tt V_t)*`
/// for one task. Branches for which `in_service` is false carry no flow.
pub fn branch_flows(
    case: &GridCase,
    vm: &[f64],
    va: &[f64],
    in_service: impl Fn(usize) -> bool,
) -> Vec<BranchFlow> {
    let base = case.base_mva();
    case.branches()
        .iter()
        .enumerate()
        .map(|(k, br)| {
            if !in_service(k) {
                return BranchFlow {
                    p_from: 0.0,
                    q_from: 0.0,
                    p_to: 0.0,
                    q_to: 0.0,
                    loading: (br.rate_a > 0.0).then_some(0.0),
                };
            }
            let (f, t) = case.branch_ends(k);
            let vf = Complex64::from_polar(vm[f], va[f]);
            let vt = Complex64::from_polar(vm[t], va[t]);
            let y = branch_admittance(br);
            let sf = vf * (y.yff * vf + y.yft * vt).conj() * base;
            let st = vt * (y.ytf * vf + y.ytt * vt).conj() * base;
            BranchFlow {
                p_from: sf.re,
                q_from: sf.im,
                p_to: st.re,
                q_to: st.im,
                loading: (br.rate_a > 0.0).then(|| 100.0 * sf.norm().max(st.norm()) / br.rate_a),
            }
        })
        .collect()
}

/// Flows of every task; `in_service(task, branch)` selects the branches
/// present in each task.
pub fn calc_branch_flows(
    case: &GridCase,
    v: &PolarVoltageBatch,
    in_service: impl Fn(usize, usize) -> bool,
) -> Vec<Vec<BranchFlow>> {
    (0..v.n_tasks())
        .map(|t| branch_flows(case, &v.vm.task(t), &v.va.task(t), |k| in_service(t, k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 100 1 1.1 0.9;
2 1 50 20 0 0 1 1 0 100 1 1.1 0.9;
];
mpc.gen = [
1 0 0 0 0 1 100 1 100 0;
];
mpc.branch = [
1 2 0 0.1 0 100 0 0 0 0 1 -360 360;
];
";

    #[test]
    fn lossless_line_conserves_active_power() {
        let case = GridCase::parse(TWO_BUS).unwrap();
        let f = branch_flows(&case, &[1.0, 0.97], &[0.0, -0.05], |_| true);
        assert!(f[0].p_from > 0.0);
        assert!((f[0].p_from + f[0].p_to).abs() < 1e-12);
        assert!(f[0].loading.unwrap() > 0.0);
    }

    #[test]
    fn open_branch_has_zero_flow() {
        let case = GridCase::parse(TWO_BUS).unwrap();
        let f = branch_flows(&case, &[1.0, 0.97], &[0.0, -0.05], |_| false);
        assert_eq!(
            (f[0].p_from, f[0].q_from, f[0].p_to, f[0].q_to),
            (0.0, 0.0, 0.0, 0.0)
        );
    }
}
