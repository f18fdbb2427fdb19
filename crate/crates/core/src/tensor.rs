//! Dense row-major f64 matrices and the kernel set the model is built on.
//!
//! Everything is deterministic: fixed summation order, no threading, no
//! hidden state. Backward helpers live next to their forward counterparts so
//! the hand-derived gradients stay reviewable.

/// Row-major 2-D tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2 { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Tensor2 { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor2 { rows: r, cols: c, data }
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Tensor2, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add_scaled shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn hadamard_in_place(&mut self, other: &Tensor2) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "hadamard shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self @ b` — standard matrix product.
    pub fn matmul(&self, b: &Tensor2) -> Tensor2 {
        assert_eq!(self.cols, b.rows, "matmul inner dims");
        let mut out = Tensor2::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let av = self.data[i * self.cols + k];
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    /// `selfᵀ @ b` without materializing the transpose.
    pub fn t_matmul(&self, b: &Tensor2) -> Tensor2 {
        assert_eq!(self.rows, b.rows, "t_matmul inner dims");
        let mut out = Tensor2::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (i, av) in arow.iter().enumerate() {
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    /// `self @ bᵀ` without materializing the transpose.
    pub fn matmul_bt(&self, b: &Tensor2) -> Tensor2 {
        assert_eq!(self.cols, b.cols, "matmul_bt inner dims");
        let mut out = Tensor2::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..b.rows {
                let brow = b.row(j);
                let mut acc = 0.0;
                for (av, bv) in arow.iter().zip(brow) {
                    acc += av * bv;
                }
                out.data[i * b.rows + j] = acc;
            }
        }
        out
    }

    /// Stack `a` on top of `b`.
    pub fn vstack(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        assert_eq!(a.cols, b.cols, "vstack cols");
        let mut data = Vec::with_capacity((a.rows + b.rows) * a.cols);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor2 { rows: a.rows + b.rows, cols: a.cols, data }
    }

    /// Split into (rows [0, at), rows [at, rows)).
    pub fn split_rows(&self, at: usize) -> (Tensor2, Tensor2) {
        assert!(at <= self.rows, "split_rows bound");
        let top = Tensor2::from_vec(at, self.cols, self.data[..at * self.cols].to_vec());
        let bottom =
            Tensor2::from_vec(self.rows - at, self.cols, self.data[at * self.cols..].to_vec());
        (top, bottom)
    }

    /// Rows of `self` selected by `idx`, in order (duplicates allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor2 {
        let mut out = Tensor2::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    /// `self[idx[r]] += src[r]` for every row of `src` (duplicates accumulate).
    pub fn scatter_add_rows(&mut self, idx: &[usize], src: &Tensor2) {
        assert_eq!(idx.len(), src.rows, "scatter rows");
        assert_eq!(self.cols, src.cols, "scatter cols");
        for (r, &i) in idx.iter().enumerate() {
            let dst = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (d, s) in dst.iter_mut().zip(src.row(r)) {
                *d += s;
            }
        }
    }

    /// Side-by-side concatenation: out row r = [a row r | b row r].
    pub fn concat_cols(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        assert_eq!(a.rows, b.rows, "concat_cols rows");
        let mut out = Tensor2::zeros(a.rows, a.cols + b.cols);
        for r in 0..a.rows {
            out.row_mut(r)[..a.cols].copy_from_slice(a.row(r));
            out.row_mut(r)[a.cols..].copy_from_slice(b.row(r));
        }
        out
    }

    /// Split into (cols [0, at), cols [at, cols)).
    pub fn split_cols(&self, at: usize) -> (Tensor2, Tensor2) {
        assert!(at <= self.cols, "split_cols bound");
        let mut left = Tensor2::zeros(self.rows, at);
        let mut right = Tensor2::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            left.row_mut(r).copy_from_slice(&self.row(r)[..at]);
            right.row_mut(r).copy_from_slice(&self.row(r)[at..]);
        }
        (left, right)
    }
}

/// Row-wise max-subtracted softmax; each output row sums to 1.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let orow = out.row_mut(r);
        let mut sum = 0.0;
        for (o, v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Backward of `softmax_rows`: given y = softmax(x) and dL/dy, returns dL/dx.
///
/// Per row: dx = (dy - <dy, y>) ∘ y.
pub(crate) fn softmax_rows_backward(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    assert_eq!((y.rows, y.cols), (dy.rows, dy.cols));
    let mut dx = Tensor2::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let yrow = y.row(r);
        let dyrow = dy.row(r);
        let dot: f64 = yrow.iter().zip(dyrow).map(|(a, b)| a * b).sum();
        for (o, (yv, dv)) in dx.row_mut(r).iter_mut().zip(yrow.iter().zip(dyrow)) {
            *o = (dv - dot) * yv;
        }
    }
    dx
}

/// Row-wise l2 normalization; zero rows stay zero.
pub fn l2_normalize_rows(x: &Tensor2) -> Tensor2 {
    l2_normalize_rows_cached(x).0
}

/// Like [`l2_normalize_rows`] but also returns the per-row norms for backward.
pub(crate) fn l2_normalize_rows_cached(x: &Tensor2) -> (Tensor2, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(norm);
        if norm > 0.0 {
            for v in out.row_mut(r) {
                *v /= norm;
            }
        }
    }
    (out, norms)
}

/// Backward of row l2 normalization: y = x/|x| per row, dx = (dy - <dy,y>y)/|x|.
/// Rows with zero norm get zero gradient.
pub(crate) fn l2_normalize_rows_backward(y: &Tensor2, norms: &[f64], dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let norm = norms[r];
        if norm == 0.0 {
            continue;
        }
        let yrow = y.row(r);
        let dyrow = dy.row(r);
        let dot: f64 = yrow.iter().zip(dyrow).map(|(a, b)| a * b).sum();
        for (o, (yv, dv)) in dx.row_mut(r).iter_mut().zip(yrow.iter().zip(dyrow)) {
            *o = (dv - dot * yv) / norm;
        }
    }
    dx
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Per-row standardization (mean 0, variance 1) followed by elementwise
/// gain/bias.
pub fn layer_norm(x: &Tensor2, gain: &[f64], bias: &[f64], eps: f64) -> Tensor2 {
    layer_norm_cached(x, gain, bias, eps).0
}

pub(crate) struct LayerNormCache {
    /// Standardized rows (pre gain/bias).
    pub xhat: Tensor2,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_cached(
    x: &Tensor2,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Tensor2, LayerNormCache) {
    assert_eq!(gain.len(), x.cols, "layer_norm gain length");
    assert_eq!(bias.len(), x.cols, "layer_norm bias length");
    let d = x.cols as f64;
    let mut out = Tensor2::zeros(x.rows, x.cols);
    let mut xhat = Tensor2::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for c in 0..x.cols {
            let xh = (row[c] - mean) * is;
            xhat.set(r, c, xh);
            out.set(r, c, xh * gain[c] + bias[c]);
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Backward of layer_norm. Returns (dx, dgain, dbias).
pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &Tensor2,
) -> (Tensor2, Vec<f64>, Vec<f64>) {
    let (rows, cols) = (cache.xhat.rows, cache.xhat.cols);
    assert_eq!((dy.rows, dy.cols), (rows, cols));
    let d = cols as f64;
    let mut dx = Tensor2::zeros(rows, cols);
    let mut dgain = vec![0.0; cols];
    let mut dbias = vec![0.0; cols];
    for r in 0..rows {
        let xh = cache.xhat.row(r);
        let dyr = dy.row(r);
        let is = cache.inv_std[r];
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for c in 0..cols {
            let dxh = dyr[c] * gain[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
        }
        let mean_dxh = sum_dxh / d;
        let mean_dxh_xh = sum_dxh_xh / d;
        for c in 0..cols {
            let dxh = dyr[c] * gain[c];
            dx.set(r, c, is * (dxh - mean_dxh - xh[c] * mean_dxh_xh));
        }
    }
    (dx, dgain, dbias)
}
