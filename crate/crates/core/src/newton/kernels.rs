//! Mismatch, Jacobian and voltage-update kernels over `w` lanes.
//! All slices are element-major: value `s` of lane `l` sits at `s * w + l`.

use super::{JacobianPattern, MismatchBatch, PolarVoltageBatch, YbusPolar};
use crate::sparse::{SparseCrs, DROPPED};
use crate::tape::BatchTape;

/// Lane-wise inputs shared by the mismatch and Jacobian kernels.
pub(crate) struct LaneState<'a> {
    pub w: usize,
    pub ymag: &'a [f64],
    pub yang: &'a [f64],
    pub vm: &'a [f64],
    pub va: &'a [f64],
}

/// `ΔP_r = Σ_k |V_r||Y_rk||V_k| cos(θ_r − θ_k − φ_rk) − P0_r` for PV and PQ
/// rows, `ΔQ_r` with `sin` for PQ rows, written in reduced row order.
pub(crate) fn npm_lanes(
    ybus: &SparseCrs,
    jac: &JacobianPattern,
    st: &LaneState,
    p0: &[f64],
    q0: &[f64],
    out: &mut [f64],
    acc: &mut [f64],
) {
    let w = st.w;
    let (acc_p, acc_q) = acc[..2 * w].split_at_mut(w);
    for r in 0..ybus.n_rows() {
        let pr = jac.p_index()[r];
        if pr == DROPPED {
            continue;
        }
        for lane in 0..w {
            acc_p[lane] = -p0[r * w + lane];
            acc_q[lane] = -q0[r * w + lane];
        }
        for s in ybus.row_range(r) {
            let k = ybus.col_ix()[s] as usize;
            for lane in 0..w {
                let a = st.vm[r * w + lane] * st.ymag[s * w + lane] * st.vm[k * w + lane];
                let theta = st.va[r * w + lane] - st.va[k * w + lane] - st.yang[s * w + lane];
                let (sin, cos) = theta.sin_cos();
                acc_p[lane] += a * cos;
                acc_q[lane] += a * sin;
            }
        }
        let pr = pr as usize;
        out[pr * w..(pr + 1) * w].copy_from_slice(acc_p);
        let qr = jac.q_index()[r];
        if qr != DROPPED {
            let qr = qr as usize;
            out[qr * w..(qr + 1) * w].copy_from_slice(acc_q);
        }
    }
}

/// Writes the Jacobian through `map` into `out`, zero-filling every other
/// slot first. The diagonal is seeded from the admittance diagonal and
/// corrected while sweeping the off-diagonal entries of the row.
pub(crate) fn jacobian_lanes(
    ybus: &SparseCrs,
    jac: &JacobianPattern,
    map: &[[u32; 4]],
    st: &LaneState,
    out: &mut [f64],
    acc: &mut [f64],
) {
    let w = st.w;
    out.fill(0.0);
    let (dpdth, rest) = acc.split_at_mut(w);
    let (dqdth, rest) = rest.split_at_mut(w);
    let (dpdv, dqdv) = rest[..2 * w].split_at_mut(w);
    for r in 0..ybus.n_rows() {
        if jac.p_index()[r] == DROPPED {
            continue;
        }
        let d = ybus.diag_ptr()[r] as usize;
        for lane in 0..w {
            let vm_r = st.vm[r * w + lane];
            let (sin, cos) = (-st.yang[d * w + lane]).sin_cos();
            let g = 2.0 * vm_r * st.ymag[d * w + lane];
            dpdth[lane] = 0.0;
            dqdth[lane] = 0.0;
            dpdv[lane] = g * cos;
            dqdv[lane] = g * sin;
        }
        for s in ybus.row_range(r) {
            let k = ybus.col_ix()[s] as usize;
            if k == r {
                continue;
            }
            let slots = map[s];
            for lane in 0..w {
                let vm_r = st.vm[r * w + lane];
                let yv = st.ymag[s * w + lane] * st.vm[k * w + lane];
                let a = vm_r * yv;
                let theta = st.va[r * w + lane] - st.va[k * w + lane] - st.yang[s * w + lane];
                let (sin, cos) = theta.sin_cos();
                let vals = [
                    a * sin,
                    vm_r * st.ymag[s * w + lane] * cos,
                    -a * cos,
                    vm_r * st.ymag[s * w + lane] * sin,
                ];
                for (slot, v) in slots.iter().zip(vals) {
                    if *slot != DROPPED {
                        out[*slot as usize * w + lane] = v;
                    }
                }
                dpdth[lane] -= a * sin;
                dqdth[lane] += a * cos;
                dpdv[lane] += yv * cos;
                dqdv[lane] += yv * sin;
            }
        }
        let slots = map[d];
        for (slot, vals) in slots.iter().zip([&*dpdth, &*dpdv, &*dqdth, &*dqdv]) {
            if *slot != DROPPED {
                let slot = *slot as usize;
                out[slot * w..(slot + 1) * w].copy_from_slice(vals);
            }
        }
    }
}

/// `θ[pv ∪ pq] −= Δθ`, `|V|[pq] −= Δ|V|` on active lanes.
pub(crate) fn update_voltage_lanes(
    jac: &JacobianPattern,
    w: usize,
    x: &[f64],
    va: &mut [f64],
    vm: &mut [f64],
    active: &[bool],
) {
    for (i, &b) in jac.pvpq().iter().enumerate() {
        for lane in 0..w {
            if active[lane] {
                va[b * w + lane] -= x[i * w + lane];
            }
        }
    }
    let off = jac.n_pvpq();
    for (j, &b) in jac.pq().iter().enumerate() {
        for lane in 0..w {
            if active[lane] {
                vm[b * w + lane] -= x[(off + j) * w + lane];
            }
        }
    }
}

/// Reduced Jacobian values of one task at the given voltages.
pub(crate) fn reduced_jacobian_lane(
    jac: &JacobianPattern,
    ybus: &YbusPolar,
    task: usize,
    vm: &[f64],
    va: &[f64],
) -> Vec<f64> {
    let nnz = ybus.mag.n_slots();
    let (mut ymag, mut yang) = (vec![0.0; nnz], vec![0.0; nnz]);
    ybus.load_lanes(task..task + 1, &mut ymag, &mut yang);
    let st = LaneState {
        w: 1,
        ymag: &ymag,
        yang: &yang,
        vm,
        va,
    };
    let mut out = vec![0.0; jac.reduced().nnz()];
    let mut acc = [0.0; 4];
    jacobian_lanes(
        jac.ybus_pattern(),
        jac,
        jac.reduced_map(),
        &st,
        &mut out,
        &mut acc,
    );
    out
}

fn lanes_of(y: &YbusPolar, n_tasks: usize) -> (Vec<f64>, Vec<f64>) {
    let nnz = y.mag.n_slots();
    let mut mag = vec![0.0; nnz * n_tasks];
    let mut ang = vec![0.0; nnz * n_tasks];
    if y.is_shared() {
        y.load_lanes(0..1, &mut mag[..nnz], &mut ang[..nnz]);
        let (m1, a1) = (mag[..nnz].to_vec(), ang[..nnz].to_vec());
        for s in 0..nnz {
            mag[s * n_tasks..(s + 1) * n_tasks].fill(m1[s]);
            ang[s * n_tasks..(s + 1) * n_tasks].fill(a1[s]);
        }
    } else {
        y.load_lanes(0..n_tasks, &mut mag, &mut ang);
    }
    (mag, ang)
}

/// Mismatch of every task of the batch.
pub fn compute_npm(
    jac: &JacobianPattern,
    ybus: &YbusPolar,
    v: &PolarVoltageBatch,
    p0: &BatchTape,
    q0: &BatchTape,
    out: &mut MismatchBatch,
) {
    let w = v.n_tasks();
    let (ymag, yang) = lanes_of(ybus, w);
    let st = LaneState {
        w,
        ymag: &ymag,
        yang: &yang,
        vm: v.vm.as_slice(),
        va: v.va.as_slice(),
    };
    let mut acc = vec![0.0; 2 * w];
    npm_lanes(
        jac.ybus_pattern(),
        jac,
        &st,
        p0.as_slice(),
        q0.as_slice(),
        out.values.as_mut_slice(),
        &mut acc,
    );
}

/// Jacobian values of every task, written through `map` (for example
/// [`JacobianPattern::lu_map`] or [`JacobianPattern::reduced_map`]) into
/// `out`, whose slot count is the target's.
pub fn update_jacobian(
    jac: &JacobianPattern,
    ybus: &YbusPolar,
    v: &PolarVoltageBatch,
    map: &[[u32; 4]],
    out: &mut BatchTape,
) {
    let w = v.n_tasks();
    let (ymag, yang) = lanes_of(ybus, w);
    let st = LaneState {
        w,
        ymag: &ymag,
        yang: &yang,
        vm: v.vm.as_slice(),
        va: v.va.as_slice(),
    };
    let mut acc = vec![0.0; 4 * w];
    jacobian_lanes(
        jac.ybus_pattern(),
        jac,
        map,
        &st,
        out.as_mut_slice(),
        &mut acc,
    );
}

/// Applies the solution `x` (reduced column order) to every task.
pub fn update_voltage(jac: &JacobianPattern, v: &mut PolarVoltageBatch, x: &BatchTape) {
    let w = v.n_tasks();
    let active = vec![true; w];
    update_voltage_lanes(
        jac,
        w,
        x.as_slice(),
        v.va.as_mut_slice(),
        v.vm.as_mut_slice(),
        &active,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_ybus, GridCase};

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
1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
";

    fn setup() -> (JacobianPattern, YbusPolar, PolarVoltageBatch) {
        let case = GridCase::parse(TWO_BUS).unwrap();
        let y = build_ybus(&case);
        let jac = JacobianPattern::new(&case, y.pattern()).unwrap();
        let v = PolarVoltageBatch {
            va: BatchTape::zeros(2, 1),
            vm: BatchTape::broadcast(&[1.0, 1.0], 1),
        };
        (jac, YbusPolar::shared(&y), v)
    }

    #[test]
    fn flat_start_lossless_without_load_has_no_mismatch() {
        let (jac, y, v) = setup();
        let zero = BatchTape::zeros(2, 1);
        let mut out = MismatchBatch::zeros(&jac, 1);
        compute_npm(&jac, &y, &v, &zero, &zero, &mut out);
        assert!(out.max_abs(0) < 1e-14);
    }

    #[test]
    fn two_bus_flat_start_jacobian() {
        // J = [[∂P2/∂θ2, ∂P2/∂V2], [∂Q2/∂θ2, ∂Q2/∂V2]] at flat start with
        // Y22 = -10j: [[10, 0], [0, 10]] up to rounding of the angle
        let (jac, y, v) = setup();
        let mut out = BatchTape::zeros(jac.reduced().nnz(), 1);
        update_jacobian(&jac, &y, &v, jac.reduced_map(), &mut out);
        let dense = jac.reduced().to_dense(out.as_slice());
        assert!((dense[0][0] - 10.0).abs() < 1e-12);
        assert!((dense[1][1] - 10.0).abs() < 1e-12);
        assert!(dense[0][1].abs() < 1e-12 && dense[1][0].abs() < 1e-12);
    }

    #[test]
    fn zero_step_keeps_voltages() {
        let (jac, _, mut v) = setup();
        let before = v.clone();
        update_voltage(&jac, &mut v, &BatchTape::zeros(jac.dim(), 1));
        assert_eq!(v, before);
    }

    #[test]
    fn magnitude_step_lowers_pq_voltage() {
        let (jac, _, mut v) = setup();
        let x = BatchTape::broadcast(&[0.0, 0.05], 1);
        update_voltage(&jac, &mut v, &x);
        assert_eq!(v.vm.get(1, 0), 0.95);
        assert_eq!(v.vm.get(0, 0), 1.0);
    }
}
