//! Sequential-graph construction: sparse adjacency over items and users,
//! symmetric normalization with self-loops, and sparse-dense multiplication.
//!
//! Node layout: items occupy rows [0, m), users occupy rows [m, m+n).

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Coordinate-list sparse matrix. Entries are sorted by (row, col) and
/// deduplicated, which fixes the summation order of every product.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn from_entries(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, w) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::IndexRange(format!(
                    "sparse entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("sparse entry ({r}, {c})")));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if entries.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Dimension("duplicate sparse coordinates".into()));
        }
        Ok(SparseMatrix { rows, cols, entries })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix { rows: n, cols: n, entries: (0..n).map(|i| (i, i, 1.0)).collect() }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries: Vec<(usize, usize, f64)> =
            self.entries.iter().map(|&(r, c, w)| (c, r, w)).collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        SparseMatrix { rows: self.cols, cols: self.rows, entries }
    }

    pub fn to_dense(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.rows, self.cols);
        for &(r, c, w) in &self.entries {
            out.set(r, c, w);
        }
        out
    }

    /// Sparse × dense product. Entries are visited in (row, col) order, so
    /// each output row accumulates in sorted column order.
    pub fn spmm(&self, e: &Tensor2) -> Result<Tensor2> {
        if self.cols != e.rows {
            return Err(Error::Dimension(format!(
                "spmm: {}x{} times {}x{}",
                self.rows, self.cols, e.rows, e.cols
            )));
        }
        let mut out = Tensor2::zeros(self.rows, e.cols);
        for &(r, c, w) in &self.entries {
            let src = e.row(c);
            let dst = out.row_mut(r);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        Ok(out)
    }
}

/// The training graph: raw adjacency, its symmetric normalization with
/// self-loops, and the per-node degrees.
#[derive(Debug, Clone)]
pub struct SequentialGraph {
    pub m_items: usize,
    pub n_users: usize,
    pub raw: SparseMatrix,
    pub normalized: SparseMatrix,
    /// Row sums of (raw + I); strictly positive thanks to the self-loops.
    pub degree: Vec<f64>,
}

impl SequentialGraph {
    pub fn node_count(&self) -> usize {
        self.m_items + self.n_users
    }
}

/// Build the binary adjacency over m items and n users from training
/// sequences.
///
/// For every interaction (user u, item v) both directions get weight 1:
/// (v, m+u) and (m+u, v). For every adjacent pair (prev, next) within a
/// sequence only the forward direction is recorded, as entry
/// (row = next, col = prev), so messages flow prev -> next when the matrix
/// multiplies embeddings from the left. Duplicates collapse to weight 1 and
/// the user-user block stays empty.
pub fn build_adjacency(train: &[SequenceRecord], m: usize, n: usize) -> Result<SparseMatrix> {
    let size = m + n;
    let mut coords: BTreeSet<(usize, usize)> = BTreeSet::new();
    for seq in train {
        if seq.user_index >= n {
            return Err(Error::IndexRange(format!("user index {} >= {n}", seq.user_index)));
        }
        let u = m + seq.user_index;
        for &v in &seq.items {
            if v >= m {
                return Err(Error::IndexRange(format!("item index {v} >= {m}")));
            }
            coords.insert((v, u));
            coords.insert((u, v));
        }
        for w in seq.items.windows(2) {
            coords.insert((w[1], w[0]));
        }
    }
    let entries = coords.into_iter().map(|(r, c)| (r, c, 1.0)).collect();
    SparseMatrix::from_entries(size, size, entries)
}

/// Symmetric normalization of a square adjacency:
/// `D^{-1/2} (A + I) D^{-1/2}` with D the diagonal of row sums of (A + I).
/// Returns the normalized matrix and the degree vector. Every output weight
/// lies in (0, 1].
pub fn normalize(raw: &SparseMatrix) -> Result<(SparseMatrix, Vec<f64>)> {
    if raw.rows != raw.cols {
        return Err(Error::Dimension(format!("normalize needs square, got {}x{}", raw.rows, raw.cols)));
    }
    let size = raw.rows;
    // (A + I) in coordinate form.
    let mut with_loops: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.nnz() + size);
    let mut has_diag = vec![false; size];
    for &(r, c, w) in &raw.entries {
        if r == c {
            has_diag[r] = true;
            with_loops.push((r, c, w + 1.0));
        } else {
            with_loops.push((r, c, w));
        }
    }
    for (i, seen) in has_diag.iter().enumerate() {
        if !seen {
            with_loops.push((i, i, 1.0));
        }
    }
    with_loops.sort_by_key(|&(r, c, _)| (r, c));

    let mut degree = vec![0.0; size];
    for &(r, _, w) in &with_loops {
        degree[r] += w;
    }

    let entries = with_loops
        .into_iter()
        .map(|(r, c, w)| (r, c, w / (degree[r] * degree[c]).sqrt()))
        .collect();
    Ok((SparseMatrix { rows: size, cols: size, entries }, degree))
}

/// Build the full training graph: adjacency plus its normalization.
pub fn build_graph(train: &[SequenceRecord], m: usize, n: usize) -> Result<SequentialGraph> {
    let raw = build_adjacency(train, m, n)?;
    let (normalized, degree) = normalize(&raw)?;
    Ok(SequentialGraph { m_items: m, n_users: n, raw, normalized, degree })
}

/// Dump the normalized matrix as `row \t col \t weight` lines.
pub fn write_graph_tsv(graph: &SequentialGraph, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for &(r, c, w) in &graph.normalized.entries {
        writeln!(out, "{r}\t{c}\t{w}")?;
    }
    std::fs::write(path, out)?;
    Ok(())
}
