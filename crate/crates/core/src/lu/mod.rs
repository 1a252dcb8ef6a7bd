//! Batched sparse LU with a frozen symbolic structure.
//!
//! One pivoting Gilbert-Peierls factorization of a representative matrix
//! fixes the row and column permutations and the complete L+U pattern.
//! Every later factorization of a matrix with the same pattern is a
//! refactorization: values are scattered into the frozen slots and the
//! left-looking column updates run without any symbolic work or pivot
//! search, for a whole mini-batch of tasks at once.

mod amd;
mod factor;
pub(crate) mod refactor;
mod schedule;
pub(crate) mod solve;

use thiserror::Error;

use crate::sparse::{Permutation, ScatterLookup, SparseCcs, SparseCrs, SparseError};

pub use amd::{amd_order, symmetrized};
pub use factor::{factorize_initial, factorize_with_columns, second_chance_refactorize};
pub use refactor::{refactorize_batch, refactorize_in_place, RefactorOutcome};
pub use schedule::{execute_schedule, LevelSchedule, ScheduleOutcome, Stage};
pub use solve::{fs_bs_batch, fs_bs_scheduled, SubstitutionLevels};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LuError {
    #[error("matrix is structurally singular: no pivot candidate in column {column}")]
    StructurallySingular { column: usize },
    #[error("matrix is numerically singular: column {column} has no nonzero pivot candidate")]
    NumericallySingular { column: usize },
    #[error("dependency order violated: column {column} depends on row {row}")]
    InvalidSchedule { column: usize, row: usize },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Fill-reducing column pre-ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    #[default]
    Amd,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuConfig {
    /// Threshold partial pivoting: keep the diagonal unless it is smaller
    /// than `pivot_tol` times the column maximum.
    pub pivot_tol: f64,
    /// A refactorization pivot below `singular_tol` times its column
    /// maximum marks the task unstable.
    pub singular_tol: f64,
    /// Levels with fewer columns than this use eager partial updates.
    pub narrow_threshold: usize,
    /// Levels with fewer columns than this also split VMAD updates.
    pub scalar_threshold: usize,
    /// Strip width of the split VMAD updates.
    pub vmad_width: usize,
    pub ordering: Ordering,
}

impl Default for LuConfig {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-3,
            singular_tol: 1e-14,
            narrow_threshold: 32,
            scalar_threshold: 2,
            vmad_width: 4,
            ordering: Ordering::Amd,
        }
    }
}

/// Everything a refactorization reuses: permutations, the L+U pattern with
/// all fill-ins, the scatter map from the input matrix, and the column
/// schedule.
///
/// The factored matrix is `A[i][j] = J[perm_row.old_of(i)][perm_col.old_of(j)]`.
/// Column `c` of the pattern stores rows in ascending order; the rows above
/// the diagonal are the U dependencies of `c` and the rows below it hold L.
#[derive(Debug, Clone)]
pub struct SymbolicLu {
    n: usize,
    perm_row: Permutation,
    perm_col: Permutation,
    lu_pattern: SparseCcs,
    scatter: ScatterLookup,
    schedule: LevelSchedule,
    substitution: SubstitutionLevels,
    input: SparseCrs,
}

impl SymbolicLu {
    pub(crate) fn assemble(
        input: &SparseCrs,
        perm_row: Permutation,
        perm_col: Permutation,
        lu_pattern: SparseCcs,
        cfg: &LuConfig,
    ) -> Result<Self, LuError> {
        let scatter = ScatterLookup::build(
            input,
            &crate::sparse::Subset::all(input.n_rows()),
            &crate::sparse::Subset::all(input.n_cols()),
            &perm_row,
            &perm_col,
            &lu_pattern,
        )?;
        let schedule = LevelSchedule::build(
            &lu_pattern,
            cfg.narrow_threshold,
            cfg.scalar_threshold,
            cfg.vmad_width,
        )?;
        let substitution = SubstitutionLevels::build(&lu_pattern);
        Ok(Self {
            n: input.n_rows(),
            perm_row,
            perm_col,
            lu_pattern,
            scatter,
            schedule,
            substitution,
            input: input.clone(),
        })
    }

    /// Pattern of the matrix this structure factors.
    pub fn input_pattern(&self) -> &SparseCrs {
        &self.input
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perm_row(&self) -> &Permutation {
        &self.perm_row
    }

    pub fn perm_col(&self) -> &Permutation {
        &self.perm_col
    }

    pub fn lu_pattern(&self) -> &SparseCcs {
        &self.lu_pattern
    }

    /// Map from input CRS slots to L+U slots.
    pub fn scatter(&self) -> &ScatterLookup {
        &self.scatter
    }

    pub fn schedule(&self) -> &LevelSchedule {
        &self.schedule
    }

    pub fn substitution_levels(&self) -> &SubstitutionLevels {
        &self.substitution
    }

    /// Ascending U rows (above the diagonal) of column `col`.
    #[inline]
    pub fn u_rows(&self, col: usize) -> &[u32] {
        let start = self.lu_pattern.col_ptr()[col] as usize;
        let diag = self.lu_pattern.diag_ptr()[col] as usize;
        &self.lu_pattern.row_ix()[start..diag]
    }

    /// Slot range of the U part of `col`, diagonal excluded.
    #[inline]
    pub(crate) fn u_slots(&self, col: usize) -> std::ops::Range<usize> {
        self.lu_pattern.col_ptr()[col] as usize..self.lu_pattern.diag_ptr()[col] as usize
    }

    /// Slot range of the L part of `col`, diagonal excluded.
    #[inline]
    pub(crate) fn l_slots(&self, col: usize) -> std::ops::Range<usize> {
        self.lu_pattern.diag_ptr()[col] as usize + 1..self.lu_pattern.col_ptr()[col + 1] as usize
    }

    /// Entries of L+U that are structurally absent from the input.
    pub fn fill_in(&self) -> usize {
        self.lu_pattern.nnz() - self.input.nnz()
    }

    pub fn lu_nnz(&self) -> usize {
        self.lu_pattern.nnz()
    }
}
