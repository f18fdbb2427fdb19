//! Global weighting mechanisms: self-attention, linear attention, and
//! external attention over two small learnable memory units, plus the
//! multi-head external variant and exact multiply-add accounting.

use crate::error::{Error, Result};
use crate::tensor::{
    l2_normalize_rows_backward, l2_normalize_rows_cached, softmax_rows, softmax_rows_backward,
    Tensor2,
};

/// The two learnable memory units of external attention. Both are
/// alpha x d_head; one plays the key role, the other the value role.
#[derive(Debug, Clone)]
pub struct ExternalMemory {
    pub m_k: Tensor2,
    pub m_v: Tensor2,
}

impl ExternalMemory {
    pub fn new(m_k: Tensor2, m_v: Tensor2) -> Result<Self> {
        if (m_k.rows, m_k.cols) != (m_v.rows, m_v.cols) {
            return Err(Error::Dimension("memory unit shapes differ".into()));
        }
        if m_k.rows < 1 {
            return Err(Error::Config("memory dimension alpha must be >= 1".into()));
        }
        Ok(ExternalMemory { m_k, m_v })
    }

    pub fn alpha(&self) -> usize {
        self.m_k.rows
    }

    pub fn d_head(&self) -> usize {
        self.m_k.cols
    }
}

/// Which mechanism a FLOP count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Sa,
    La,
    Ea,
}

impl Mechanism {
    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Sa => "SA",
            Mechanism::La => "LA",
            Mechanism::Ea => "EA",
        }
    }
}

/// Exact operation count of one attention application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    pub mechanism: Mechanism,
    pub multiply_adds: u64,
}

/// Closed-form multiply-add counts of the two matrix products in each
/// mechanism: SA 4*N^2*d, LA 4*N*d^2, EA 4*N*alpha*d (per-head counts sum to
/// the same total).
pub fn flop_count(mechanism: Mechanism, n: usize, d: usize, alpha: usize) -> FlopCount {
    assert!(n >= 1 && d >= 1 && alpha >= 1, "flop_count needs positive sizes");
    let (n, d, alpha) = (n as u64, d as u64, alpha as u64);
    let multiply_adds = match mechanism {
        Mechanism::Sa => 4 * n * n * d,
        Mechanism::La => 4 * n * d * d,
        Mechanism::Ea => 4 * n * alpha * d,
    };
    FlopCount { mechanism, multiply_adds }
}

// ---------------------------------------------------------------------------
// Self-attention
// ---------------------------------------------------------------------------

/// Self-attention over the input features themselves:
/// `A = softmax(E Eᵀ / sqrt(d))`, `Z = A E`. Returns (Z, A) with A of shape
/// N x N.
pub fn self_attention(e: &Tensor2) -> (Tensor2, Tensor2) {
    let (z, cache) = self_attention_cached(e);
    (z, cache.a)
}

pub(crate) struct SaCache {
    pub e: Tensor2,
    pub a: Tensor2,
}

pub(crate) fn self_attention_cached(e: &Tensor2) -> (Tensor2, SaCache) {
    let scale = 1.0 / (e.cols as f64).sqrt();
    let mut scores = e.matmul_bt(e);
    scores.scale_in_place(scale);
    let a = softmax_rows(&scores);
    let z = a.matmul(e);
    (z, SaCache { e: e.clone(), a })
}

/// Backward of self-attention; returns dL/dE.
pub(crate) fn self_attention_backward(cache: &SaCache, dz: &Tensor2) -> Tensor2 {
    let scale = 1.0 / (cache.e.cols as f64).sqrt();
    // Z = A E
    let mut de = cache.a.t_matmul(dz);
    let da = dz.matmul_bt(&cache.e);
    // A = softmax(S), S = E Eᵀ scale
    let ds = softmax_rows_backward(&cache.a, &da);
    // S symmetric product: dE += (dS + dSᵀ) E * scale
    let mut sym = ds.matmul(&cache.e);
    sym.add_scaled(&ds.t_matmul(&cache.e), 1.0);
    de.add_scaled(&sym, scale);
    de
}

// ---------------------------------------------------------------------------
// Linear attention
// ---------------------------------------------------------------------------

/// Linear attention: `A = softmax(Eᵀ E / sqrt(d))` (d x d), `Z = E A`.
/// Returns (Z, A).
pub fn linear_attention(e: &Tensor2) -> (Tensor2, Tensor2) {
    let (z, cache) = linear_attention_cached(e);
    (z, cache.a)
}

pub(crate) struct LaCache {
    pub e: Tensor2,
    pub a: Tensor2,
}

pub(crate) fn linear_attention_cached(e: &Tensor2) -> (Tensor2, LaCache) {
    let scale = 1.0 / (e.cols as f64).sqrt();
    let mut scores = e.t_matmul(e);
    scores.scale_in_place(scale);
    let a = softmax_rows(&scores);
    let z = e.matmul(&a);
    (z, LaCache { e: e.clone(), a })
}

/// Backward of linear attention; returns dL/dE.
pub(crate) fn linear_attention_backward(cache: &LaCache, dz: &Tensor2) -> Tensor2 {
    let scale = 1.0 / (cache.e.cols as f64).sqrt();
    // Z = E A
    let mut de = dz.matmul_bt(&cache.a);
    let da = cache.e.t_matmul(dz);
    let ds = softmax_rows_backward(&cache.a, &da);
    // S = Eᵀ E scale: dE += E (dS + dSᵀ) scale
    let mut sym = cache.e.matmul(&ds);
    sym.add_scaled(&cache.e.matmul_bt(&ds), 1.0);
    de.add_scaled(&sym, scale);
    de
}

// ---------------------------------------------------------------------------
// External attention
// ---------------------------------------------------------------------------

/// External attention against the two memory units:
/// `A = l2norm_rows(E M_kᵀ / sqrt(d))`, `Z = A M_v`. Returns (Z, A) with A of
/// shape N x alpha. Zero input rows stay zero through the normalization.
pub fn external_attention(e: &Tensor2, mem: &ExternalMemory) -> Result<(Tensor2, Tensor2)> {
    if mem.d_head() != e.cols {
        return Err(Error::Dimension(format!(
            "external attention: input width {} vs memory width {}",
            e.cols,
            mem.d_head()
        )));
    }
    let (z, cache) = external_attention_cached(e, &mem.m_k, &mem.m_v);
    Ok((z, cache.a))
}

pub(crate) struct EaCache {
    pub e: Tensor2,
    /// Row norms of the pre-normalization scores.
    pub norms: Vec<f64>,
    pub a: Tensor2,
}

pub(crate) fn external_attention_cached(e: &Tensor2, m_k: &Tensor2, m_v: &Tensor2) -> (Tensor2, EaCache) {
    let scale = 1.0 / (e.cols as f64).sqrt();
    let mut scores = e.matmul_bt(m_k);
    scores.scale_in_place(scale);
    let (a, norms) = l2_normalize_rows_cached(&scores);
    let z = a.matmul(m_v);
    (z, EaCache { e: e.clone(), norms, a })
}

/// Backward of external attention; returns (dE, dM_k, dM_v).
pub(crate) fn external_attention_backward(
    cache: &EaCache,
    m_k: &Tensor2,
    m_v: &Tensor2,
    dz: &Tensor2,
) -> (Tensor2, Tensor2, Tensor2) {
    let scale = 1.0 / (cache.e.cols as f64).sqrt();
    // Z = A M_v
    let dm_v = cache.a.t_matmul(dz);
    let da = dz.matmul_bt(m_v);
    // A = l2norm_rows(S)
    let ds = l2_normalize_rows_backward(&cache.a, &cache.norms, &da);
    // S = E M_kᵀ * scale
    let mut de = ds.matmul(m_k);
    de.scale_in_place(scale);
    let mut dm_k = ds.t_matmul(&cache.e);
    dm_k.scale_in_place(scale);
    (de, dm_k, dm_v)
}

// ---------------------------------------------------------------------------
// Multi-head external attention
// ---------------------------------------------------------------------------

/// Multi-head external attention: the input columns are split into
/// `mems.len()` equal blocks, each refined against its own memory pair, the
/// head outputs concatenated column-wise and mixed by `w1` (d x d).
pub fn multi_head_external_attention(
    e: &Tensor2,
    mems: &[ExternalMemory],
    w1: &Tensor2,
) -> Result<Tensor2> {
    let beta = mems.len();
    if beta == 0 || e.cols % beta != 0 {
        return Err(Error::Config(format!(
            "head count {beta} must divide embedding size {}",
            e.cols
        )));
    }
    let pairs: Vec<(&Tensor2, &Tensor2)> = mems.iter().map(|m| (&m.m_k, &m.m_v)).collect();
    let d_head = e.cols / beta;
    for (mk, _) in &pairs {
        if mk.cols != d_head {
            return Err(Error::Dimension(format!(
                "memory width {} vs head width {d_head}",
                mk.cols
            )));
        }
    }
    if (w1.rows, w1.cols) != (e.cols, e.cols) {
        return Err(Error::Dimension("w1 must be d x d".into()));
    }
    let (z, _) = mhea_cached(e, &pairs, w1);
    Ok(z)
}

pub(crate) struct MheaCache {
    pub heads: Vec<EaCache>,
    /// Column-wise concatenation of the per-head outputs, pre-mixing.
    pub concat: Tensor2,
}

pub(crate) fn mhea_cached(
    e: &Tensor2,
    mems: &[(&Tensor2, &Tensor2)],
    w1: &Tensor2,
) -> (Tensor2, MheaCache) {
    let beta = mems.len();
    let d_head = e.cols / beta;
    let mut concat = Tensor2::zeros(e.rows, e.cols);
    let mut heads = Vec::with_capacity(beta);
    for (h, (m_k, m_v)) in mems.iter().enumerate() {
        let mut e_head = Tensor2::zeros(e.rows, d_head);
        for r in 0..e.rows {
            e_head.row_mut(r).copy_from_slice(&e.row(r)[h * d_head..(h + 1) * d_head]);
        }
        let (z_head, cache) = external_attention_cached(&e_head, m_k, m_v);
        for r in 0..e.rows {
            concat.row_mut(r)[h * d_head..(h + 1) * d_head].copy_from_slice(z_head.row(r));
        }
        heads.push(cache);
    }
    let z = concat.matmul(w1);
    (z, MheaCache { heads, concat })
}

/// Backward of multi-head external attention.
/// Returns (dE, per-head (dM_k, dM_v), dW1).
pub(crate) fn mhea_backward(
    cache: &MheaCache,
    mems: &[(&Tensor2, &Tensor2)],
    w1: &Tensor2,
    dz: &Tensor2,
) -> (Tensor2, Vec<(Tensor2, Tensor2)>, Tensor2) {
    let beta = mems.len();
    let rows = dz.rows;
    let d = dz.cols;
    let d_head = d / beta;
    // Z = concat @ W1
    let dw1 = cache.concat.t_matmul(dz);
    let dconcat = dz.matmul_bt(w1);
    let mut de = Tensor2::zeros(rows, d);
    let mut dmems = Vec::with_capacity(beta);
    for (h, (m_k, m_v)) in mems.iter().enumerate() {
        let mut dz_head = Tensor2::zeros(rows, d_head);
        for r in 0..rows {
            dz_head.row_mut(r).copy_from_slice(&dconcat.row(r)[h * d_head..(h + 1) * d_head]);
        }
        let (de_head, dm_k, dm_v) = external_attention_backward(&cache.heads[h], m_k, m_v, &dz_head);
        for r in 0..rows {
            de.row_mut(r)[h * d_head..(h + 1) * d_head].copy_from_slice(de_head.row(r));
        }
        dmems.push((dm_k, dm_v));
    }
    (de, dmems, dw1)
}
