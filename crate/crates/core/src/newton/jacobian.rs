//! Jacobian sparsity: the full `2n x 2n` block pattern, the reduced system
//! and the lookups that send every admittance slot to its four Jacobian
//! entries.

use crate::grid::GridCase;
use crate::lu::SymbolicLu;
use crate::sparse::{Permutation, ScatterLookup, SparseCrs, SparseError, Subset, DROPPED};

/// For every admittance slot `(r, k)`, the target slots of
/// `[∂P_r/∂θ_k, ∂P_r/∂|V_k|, ∂Q_r/∂θ_k, ∂Q_r/∂|V_k|]`, or [`DROPPED`].
pub type SlotMap = Vec<[u32; 4]>;

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianPattern {
    n_bus: usize,
    ybus: SparseCrs,
    full: SparseCrs,
    full_slots: Vec<[u32; 4]>,
    rows: Subset,
    cols: Subset,
    reduced: SparseCrs,
    reduced_map: SlotMap,
    /// reduced index of P_r / θ_r per bus, or DROPPED
    p_index: Vec<u32>,
    /// reduced index of Q_r / |V_r| per bus, or DROPPED
    q_index: Vec<u32>,
    pvpq: Vec<usize>,
    pq: Vec<usize>,
}

impl JacobianPattern {
    pub fn new(case: &GridCase, ybus: &SparseCrs) -> Result<Self, SparseError> {
        let n = case.n_bus();
        let entries = ybus
            .entries()
            .flat_map(|(r, k, _)| [(r, k), (r, n + k), (n + r, k), (n + r, n + k)]);
        let full = SparseCrs::from_coordinates(2 * n, 2 * n, entries)?;
        let full_slots: Vec<[u32; 4]> = ybus
            .entries()
            .map(|(r, k, _)| {
                let f = |a, b| full.find(a, b).expect("inserted above") as u32;
                [f(r, k), f(r, n + k), f(n + r, k), f(n + r, n + k)]
            })
            .collect();

        let pvpq = case.pvpq_buses().to_vec();
        let pq = case.pq_buses().to_vec();
        let kept: Vec<usize> = pvpq
            .iter()
            .copied()
            .chain(pq.iter().map(|&b| n + b))
            .collect();
        let rows = Subset::from_kept(2 * n, &kept)?;
        let cols = rows.clone();

        let reduced_entries = full
            .entries()
            .filter_map(|(r, c, _)| Some((rows.map(r)?, cols.map(c)?)));
        let reduced = SparseCrs::from_coordinates(kept.len(), kept.len(), reduced_entries)?;
        let reduced_map = full_slots
            .iter()
            .map(|slots| {
                slots.map(|fs| {
                    let (r, c) = full_entry(&full, fs as usize);
                    match (rows.map(r), cols.map(c)) {
                        (Some(rr), Some(cc)) => reduced
                            .find(rr, cc)
                            .expect("reduced pattern covers kept entries")
                            as u32,
                        _ => DROPPED,
                    }
                })
            })
            .collect();

        let mut p_index = vec![DROPPED; n];
        let mut q_index = vec![DROPPED; n];
        for b in 0..n {
            p_index[b] = rows.map(b).map_or(DROPPED, |i| i as u32);
            q_index[b] = rows.map(n + b).map_or(DROPPED, |i| i as u32);
        }
        Ok(Self {
            n_bus: n,
            ybus: ybus.clone(),
            full,
            full_slots,
            rows,
            cols,
            reduced,
            reduced_map,
            p_index,
            q_index,
            pvpq,
            pq,
        })
    }

    pub fn n_bus(&self) -> usize {
        self.n_bus
    }

    /// Dimension of the reduced system.
    pub fn dim(&self) -> usize {
        self.reduced.n_rows()
    }

    pub fn n_pvpq(&self) -> usize {
        self.pvpq.len()
    }

    pub fn pvpq(&self) -> &[usize] {
        &self.pvpq
    }

    pub fn pq(&self) -> &[usize] {
        &self.pq
    }

    pub fn ybus_pattern(&self) -> &SparseCrs {
        &self.ybus
    }

    pub fn full(&self) -> &SparseCrs {
        &self.full
    }

    pub fn reduced(&self) -> &SparseCrs {
        &self.reduced
    }

    pub fn row_filter(&self) -> &Subset {
        &self.rows
    }

    pub fn col_filter(&self) -> &Subset {
        &self.cols
    }

    /// Map from admittance slots into the reduced CRS value array.
    pub fn reduced_map(&self) -> &SlotMap {
        &self.reduced_map
    }

    pub(crate) fn p_index(&self) -> &[u32] {
        &self.p_index
    }

    pub(crate) fn q_index(&self) -> &[u32] {
        &self.q_index
    }

    /// Lookup from the full Jacobian into the permuted, reduced L+U slots.
    pub fn full_to_lu(&self, symbolic: &SymbolicLu) -> Result<ScatterLookup, SparseError> {
        ScatterLookup::build(
            &self.full,
            &self.rows,
            &self.cols,
            symbolic.perm_row(),
            symbolic.perm_col(),
            symbolic.lu_pattern(),
        )
    }

    /// Map from admittance slots straight into L+U slots of `symbolic`.
    pub fn lu_map(&self, symbolic: &SymbolicLu) -> Result<SlotMap, SparseError> {
        let lookup = self.full_to_lu(symbolic)?;
        Ok(self
            .full_slots
            .iter()
            .map(|slots| slots.map(|fs| lookup.positions()[fs as usize]))
            .collect())
    }

    /// Lookup from the full Jacobian into the unpermuted reduced system in
    /// compressed-column form, for inspection.
    pub fn full_to_reduced_ccs(&self) -> Result<ScatterLookup, SparseError> {
        let target = self.reduced.to_ccs().0;
        let id = Permutation::identity(self.dim());
        ScatterLookup::build(&self.full, &self.rows, &self.cols, &id, &id, &target)
    }
}

fn full_entry(m: &SparseCrs, slot: usize) -> (usize, usize) {
    let row = m.row_ptr().partition_point(|&p| p as usize <= slot) - 1;
    (row, m.col_ix()[slot] as usize)
}
