//! Compressed sparse patterns, permutations and the static scatter lookups
//! that let every numerical stage skip symbolic work.
//!
//! Patterns never own values. A pattern is built once, shared read-only by
//! every task, and the numbers live in batch tapes indexed by pattern slot.
//! All index arrays are 32-bit; construction rejects anything that would not
//! fit (the largest grids of interest give Jacobians well below 2^31).

use std::ops::Range;

use thiserror::Error;

/// Sentinel stored in a [`ScatterLookup`] for source entries whose row or
/// column was filtered out.
pub const DROPPED: u32 = u32::MAX;

/// Largest dimension or nonzero count representable by the 32-bit indices.
pub const MAX_INDEX: usize = (u32::MAX - 1) as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SparseError {
    #[error("entry ({row}, {col}) lies outside the {n_rows}x{n_cols} matrix")]
    OutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("a structural diagonal needs a square matrix, got {n_rows}x{n_cols}")]
    NotSquare { n_rows: usize, n_cols: usize },
    #[error("size {0} exceeds the 32-bit index limit")]
    IndexOverflow(usize),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error(
        "source entry ({row}, {col}) maps to ({target_row}, {target_col}), which is not in the target pattern"
    )]
    PatternMismatch {
        row: usize,
        col: usize,
        target_row: usize,
        target_col: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, SparseError>;

fn check_index_width(n: usize) -> Result<()> {
    if n > MAX_INDEX {
        Err(SparseError::IndexOverflow(n))
    } else {
        Ok(())
    }
}

/// Shared compressed layout: `ptr` over the major dimension, sorted minor
/// indices, and the slot of the diagonal in every major line.
fn compress(n_major: usize, mut entries: Vec<(usize, usize)>) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    entries.extend((0..n_major).map(|i| (i, i)));
    entries.sort_unstable();
    entries.dedup();

    let mut ptr = vec![0u32; n_major + 1];
    let mut ix = Vec::with_capacity(entries.len());
    let mut diag = vec![0u32; n_major];
    for &(major, minor) in &entries {
        if major == minor {
            diag[major] = ix.len() as u32;
        }
        ix.push(minor as u32);
        ptr[major + 1] += 1;
    }
    for i in 0..n_major {
        ptr[i + 1] += ptr[i];
    }
    (ptr, ix, diag)
}

/// Transposes a compressed pattern, returning the new pointer/index arrays
/// and, for every old slot, its slot in the transposed layout.
fn transpose_pattern(n_minor: usize, ptr: &[u32], ix: &[u32]) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    let mut t_ptr = vec![0u32; n_minor + 1];
    for &m in ix {
        t_ptr[m as usize + 1] += 1;
    }
    for i in 0..n_minor {
        t_ptr[i + 1] += t_ptr[i];
    }
    let mut next: Vec<u32> = t_ptr[..n_minor].to_vec();
    let mut t_ix = vec![0u32; ix.len()];
    let mut map = vec![0u32; ix.len()];
    for major in 0..ptr.len() - 1 {
        for slot in ptr[major] as usize..ptr[major + 1] as usize {
            let m = ix[slot] as usize;
            let dst = next[m];
            next[m] += 1;
            t_ix[dst as usize] = major as u32;
            map[slot] = dst;
        }
    }
    (t_ptr, t_ix, map)
}

fn diag_positions(ptr: &[u32], ix: &[u32]) -> Vec<u32> {
    (0..ptr.len() - 1)
        .map(|i| {
            let range = ptr[i] as usize..ptr[i + 1] as usize;
            let k = ix[range.clone()]
                .binary_search(&(i as u32))
                .expect("structural diagonal present");
            (range.start + k) as u32
        })
        .collect()
}

/// Compressed-row pattern with an explicit diagonal pointer per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCrs {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<u32>,
    col_ix: Vec<u32>,
    diag_ptr: Vec<u32>,
}

impl SparseCrs {
    /// Builds a canonical pattern from (row, col) pairs. Duplicates collapse
    /// and every diagonal entry is inserted if absent.
    pub fn from_coordinates<I>(n_rows: usize, n_cols: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n_rows != n_cols {
            return Err(SparseError::NotSquare { n_rows, n_cols });
        }
        check_index_width(n_rows)?;
        let mut list = Vec::new();
        for (row, col) in entries {
            if row >= n_rows || col >= n_cols {
                return Err(SparseError::OutOfRange {
                    row,
                    col,
                    n_rows,
                    n_cols,
                });
            }
            list.push((row, col));
        }
        check_index_width(list.len() + n_rows)?;
        let (row_ptr, col_ix, diag_ptr) = compress(n_rows, list);
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_ix,
            diag_ptr,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_ix.len()
    }

    pub fn row_ptr(&self) -> &[u32] {
        &self.row_ptr
    }

    pub fn col_ix(&self) -> &[u32] {
        &self.col_ix
    }

    pub fn diag_ptr(&self) -> &[u32] {
        &self.diag_ptr
    }

    #[inline]
    pub fn row_range(&self, row: usize) -> Range<usize> {
        self.row_ptr[row] as usize..self.row_ptr[row + 1] as usize
    }

    /// Column indices of one row.
    #[inline]
    pub fn row(&self, row: usize) -> &[u32] {
        &self.col_ix[self.row_range(row)]
    }

    /// Slot of entry (row, col), if structurally present.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_range(row);
        self.col_ix[range.clone()]
            .binary_search(&(col as u32))
            .ok()
            .map(|k| range.start + k)
    }

    /// Iterates `(row, col, slot)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            self.row_range(r)
                .map(move |s| (r, self.col_ix[s] as usize, s))
        })
    }

    /// Converts to compressed-column layout. The returned map sends every CRS
    /// slot to the CCS slot holding the same entry.
    pub fn to_ccs(&self) -> (SparseCcs, Vec<u32>) {
        let (col_ptr, row_ix, map) = transpose_pattern(self.n_cols, &self.row_ptr, &self.col_ix);
        let diag_ptr = diag_positions(&col_ptr, &row_ix);
        (
            SparseCcs {
                n_rows: self.n_rows,
                n_cols: self.n_cols,
                col_ptr,
                row_ix,
                diag_ptr,
            },
            map,
        )
    }

    /// Dense row-major materialization, for diagnostics and small oracles.
    pub fn to_dense(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, c, s) in self.entries() {
            dense[r][c] = values[s];
        }
        dense
    }
}

/// Compressed-column pattern with an explicit diagonal pointer per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCcs {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<u32>,
    row_ix: Vec<u32>,
    diag_ptr: Vec<u32>,
}

impl SparseCcs {
    pub fn from_coordinates<I>(n_rows: usize, n_cols: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n_rows != n_cols {
            return Err(SparseError::NotSquare { n_rows, n_cols });
        }
        check_index_width(n_cols)?;
        let mut list = Vec::new();
        for (row, col) in entries {
            if row >= n_rows || col >= n_cols {
                return Err(SparseError::OutOfRange {
                    row,
                    col,
                    n_rows,
                    n_cols,
                });
            }
            list.push((col, row));
        }
        check_index_width(list.len() + n_cols)?;
        let (col_ptr, row_ix, diag_ptr) = compress(n_cols, list);
        Ok(Self {
            n_rows,
            n_cols,
            col_ptr,
            row_ix,
            diag_ptr,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_ix.len()
    }

    pub fn col_ptr(&self) -> &[u32] {
        &self.col_ptr
    }

    pub fn row_ix(&self) -> &[u32] {
        &self.row_ix
    }

    pub fn diag_ptr(&self) -> &[u32] {
        &self.diag_ptr
    }

    #[inline]
    pub fn col_range(&self, col: usize) -> Range<usize> {
        self.col_ptr[col] as usize..self.col_ptr[col + 1] as usize
    }

    /// Row indices of one column.
    #[inline]
    pub fn col(&self, col: usize) -> &[u32] {
        &self.row_ix[self.col_range(col)]
    }

    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_range(col);
        self.row_ix[range.clone()]
            .binary_search(&(row as u32))
            .ok()
            .map(|k| range.start + k)
    }

    /// Iterates `(row, col, slot)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_cols).flat_map(move |c| {
            self.col_range(c)
                .map(move |s| (self.row_ix[s] as usize, c, s))
        })
    }

    /// Converts back to compressed-row layout; the map sends every CCS slot
    /// to its CRS slot.
    pub fn to_crs(&self) -> (SparseCrs, Vec<u32>) {
        let (row_ptr, col_ix, map) = transpose_pattern(self.n_rows, &self.col_ptr, &self.row_ix);
        let diag_ptr = diag_positions(&row_ptr, &col_ix);
        (
            SparseCrs {
                n_rows: self.n_rows,
                n_cols: self.n_cols,
                row_ptr,
                col_ix,
                diag_ptr,
            },
            map,
        )
    }

    pub fn to_dense(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, c, s) in self.entries() {
            dense[r][c] = values[s];
        }
        dense
    }
}

/// A bijection on `0..n`. `forward[old] = new`, `inverse[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        let forward: Vec<u32> = (0..n as u32).collect();
        Self {
            inverse: forward.clone(),
            forward,
        }
    }

    /// From the new position of every old index.
    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let inverse = invert(&forward)?;
        Ok(Self {
            forward: forward.into_iter().map(|i| i as u32).collect(),
            inverse,
        })
    }

    /// From an elimination order: `order[k]` is the old index placed at `k`.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let forward = invert(&order)?;
        Ok(Self {
            inverse: order.into_iter().map(|i| i as u32).collect(),
            forward,
        })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[u32] {
        &self.forward
    }

    pub fn inverse(&self) -> &[u32] {
        &self.inverse
    }

    #[inline]
    pub fn new_of(&self, old: usize) -> usize {
        self.forward[old] as usize
    }

    #[inline]
    pub fn old_of(&self, new: usize) -> usize {
        self.inverse[new] as usize
    }

    pub fn inverted(&self) -> Self {
        Self {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.forward
            .iter()
            .enumerate()
            .all(|(i, &f)| i == f as usize)
    }
}

fn invert(map: &[usize]) -> Result<Vec<u32>> {
    check_index_width(map.len())?;
    let mut inv = vec![u32::MAX; map.len()];
    for (i, &m) in map.iter().enumerate() {
        if m >= map.len() {
            return Err(SparseError::InvalidPermutation(format!(
                "index {m} out of range 0..{}",
                map.len()
            )));
        }
        if inv[m] != u32::MAX {
            return Err(SparseError::InvalidPermutation(format!(
                "index {m} repeated"
            )));
        }
        inv[m] = i as u32;
    }
    Ok(inv)
}

/// Selection of a subset of `0..n`, renumbered compactly in the order given.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subset {
    map: Vec<u32>,
    kept: Vec<u32>,
}

impl Subset {
    pub fn all(n: usize) -> Self {
        let kept: Vec<u32> = (0..n as u32).collect();
        Self {
            map: kept.clone(),
            kept,
        }
    }

    /// Keeps `kept` (distinct, `< n`); `kept[k]` becomes compact index `k`.
    pub fn from_kept(n: usize, kept: &[usize]) -> Result<Self> {
        check_index_width(n)?;
        let mut map = vec![DROPPED; n];
        for (k, &i) in kept.iter().enumerate() {
            if i >= n {
                return Err(SparseError::DimensionMismatch(format!(
                    "kept index {i} >= {n}"
                )));
            }
            if map[i] != DROPPED {
                return Err(SparseError::DimensionMismatch(format!(
                    "kept index {i} repeated"
                )));
            }
            map[i] = k as u32;
        }
        Ok(Self {
            map,
            kept: kept.iter().map(|&i| i as u32).collect(),
        })
    }

    #[inline]
    pub fn map(&self, full: usize) -> Option<usize> {
        match self.map[full] {
            DROPPED => None,
            k => Some(k as usize),
        }
    }

    pub fn full_len(&self) -> usize {
        self.map.len()
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn kept(&self) -> &[u32] {
        &self.kept
    }
}

/// Static map from every nonzero of a source CRS pattern to its slot in a
/// filtered, permuted CCS target. Entry `(r, c)` of the source lands at
/// `(perm_row.new_of(rows.map(r)), perm_col.new_of(cols.map(c)))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScatterLookup {
    target_positions: Vec<u32>,
    target_len: usize,
}

impl ScatterLookup {
    pub fn build(
        source: &SparseCrs,
        rows: &Subset,
        cols: &Subset,
        perm_row: &Permutation,
        perm_col: &Permutation,
        target: &SparseCcs,
    ) -> Result<Self> {
        if rows.full_len() != source.n_rows() || cols.full_len() != source.n_cols() {
            return Err(SparseError::DimensionMismatch(
                "filters do not match the source dimensions".into(),
            ));
        }
        if perm_row.len() != rows.len()
            || perm_col.len() != cols.len()
            || target.n_rows() != rows.len()
            || target.n_cols() != cols.len()
        {
            return Err(SparseError::DimensionMismatch(
                "permutations or target do not match the filtered dimensions".into(),
            ));
        }
        let mut target_positions = Vec::with_capacity(source.nnz());
        for (r, c, _) in source.entries() {
            let pos = match (rows.map(r), cols.map(c)) {
                (Some(rr), Some(cc)) => {
                    let (tr, tc) = (perm_row.new_of(rr), perm_col.new_of(cc));
                    target.find(tr, tc).ok_or(SparseError::PatternMismatch {
                        row: r,
                        col: c,
                        target_row: tr,
                        target_col: tc,
                    })? as u32
                }
                _ => DROPPED,
            };
            target_positions.push(pos);
        }
        Ok(Self {
            target_positions,
            target_len: target.nnz(),
        })
    }

    pub fn source_len(&self) -> usize {
        self.target_positions.len()
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn positions(&self) -> &[u32] {
        &self.target_positions
    }

    #[inline]
    pub fn position(&self, source_slot: usize) -> Option<usize> {
        match self.target_positions[source_slot] {
            DROPPED => None,
            p => Some(p as usize),
        }
    }

    /// Zero-fills `target` and writes every retained source value into its slot.
    pub fn scatter(&self, source: &[f64], target: &mut [f64]) {
        debug_assert_eq!(source.len(), self.source_len());
        debug_assert_eq!(target.len(), self.target_len);
        target.fill(0.0);
        for (&pos, &v) in self.target_positions.iter().zip(source) {
            if pos != DROPPED {
                target[pos as usize] = v;
            }
        }
    }
}
