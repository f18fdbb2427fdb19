//! The positional prompt decoder.
//!
//! Per sequence: gather the item rows from the encoder output, project the
//! learnable prompt table rows for the item positions, concatenate and map
//! through a ReLU feedforward into the prompting template, mask a
//! length-proportional number of template rows with the shared mask token
//! (training only; the last row is never masked), weight the rows by
//! exponentiated cosine similarity to the last row, and concatenate the
//! result with the user's embedding. Ablated decoders (max pooling, additive
//! prompts with mean pooling, relative-offset prompts) share this surface.

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DecoderKind, HyperConfig};
use crate::data::SequenceRecord;
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::params::{names, ParamStore};
use crate::tensor::Tensor2;

/// A prompting template before and after sequential masking.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    /// Unmasked template rows.
    pub rows: Tensor2,
    /// Rows with the masked ones replaced by the mask token.
    pub masked_rows: Tensor2,
    pub mask_flags: Vec<bool>,
}

/// Number of rows to mask for a sequence of length `t`:
/// min(floor(gamma * t), t - 1), so the last row always survives.
pub fn mask_count(t: usize, gamma: f64) -> usize {
    if t == 0 {
        return 0;
    }
    ((gamma * t as f64).floor() as usize).min(t - 1)
}

/// Gather prompt rows for 1-based positions and apply the linear projection
/// `E_p = rows @ w_c + b_c` (a kernel-1, stride-1 convolution is exactly this
/// per-row affine map).
pub fn project_prompts(
    positions: &[usize],
    prompt_base: &Tensor2,
    w_c: &Tensor2,
    b_c: &[f64],
) -> Result<Tensor2> {
    let max_len = prompt_base.rows;
    let mut rows = Vec::with_capacity(positions.len());
    for &p in positions {
        if p < 1 || p > max_len {
            return Err(Error::IndexRange(format!(
                "position {p} outside the prompt table (max_len {max_len})"
            )));
        }
        rows.push(p - 1);
    }
    let gathered = prompt_base.gather_rows(&rows);
    let mut out = gathered.matmul(w_c);
    for r in 0..out.rows {
        for (v, b) in out.row_mut(r).iter_mut().zip(b_c) {
            *v += b;
        }
    }
    Ok(out)
}

/// Fuse item rows with their prompts: rows are concatenated side by side
/// (t x 2d) and mapped through `ReLU(concat @ w2 + b2)` back to t x d.
pub fn build_template(e_seq: &Tensor2, e_prompt: &Tensor2, w2: &Tensor2, b2: &[f64]) -> Tensor2 {
    let concat = Tensor2::concat_cols(e_seq, e_prompt);
    let mut pre = concat.matmul(w2);
    for r in 0..pre.rows {
        for (v, b) in pre.row_mut(r).iter_mut().zip(b2) {
            *v += b;
        }
    }
    let mut out = pre;
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Replace a seeded uniform choice of template rows (never the last) by the
/// mask token. Masking only happens in training mode.
pub fn sequential_mask(
    template: &Tensor2,
    gamma: f64,
    mask_token: &[f64],
    seed: u64,
    training: bool,
) -> PromptTemplate {
    let t = template.rows;
    let mut flags = vec![false; t];
    if training && t > 0 {
        let count = mask_count(t, gamma);
        if count > 0 {
            let mut candidates: Vec<usize> = (0..t - 1).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            candidates.shuffle(&mut rng);
            for &i in candidates.iter().take(count) {
                flags[i] = true;
            }
        }
    }
    let mut masked = template.clone();
    for (i, flag) in flags.iter().enumerate() {
        if *flag {
            masked.row_mut(i).copy_from_slice(mask_token);
        }
    }
    PromptTemplate { rows: template.clone(), masked_rows: masked, mask_flags: flags }
}

fn cosine_parts(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos = if nx > 0.0 && ny > 0.0 { dot / (nx * ny) } else { 0.0 };
    (cos, dot, nx, ny)
}

pub(crate) struct SoftAttnCache {
    pub f: Vec<f64>,
    pub sum_exp: f64,
    pub a: Vec<f64>,
}

/// Weight template rows by exponentiated cosine similarity to the last row:
/// `a_i = exp(f_i) / sqrt(sum_j exp(f_j))`, output `sum_i a_i row_i`.
///
/// Note the square-root denominator: the weights sum to
/// sqrt(sum_j exp(f_j)), not to 1. Cosine against a zero row is defined as 0.
pub fn soft_attention(masked: &Tensor2) -> Vec<f64> {
    soft_attention_cached(masked).0
}

pub(crate) fn soft_attention_cached(masked: &Tensor2) -> (Vec<f64>, SoftAttnCache) {
    let t = masked.rows;
    assert!(t >= 1, "soft attention needs at least one row");
    let query = masked.row(t - 1);
    let f: Vec<f64> = (0..t).map(|i| cosine_parts(masked.row(i), query).0).collect();
    let sum_exp: f64 = f.iter().map(|v| v.exp()).sum();
    let denom = sum_exp.sqrt();
    let a: Vec<f64> = f.iter().map(|v| v.exp() / denom).collect();
    let mut out = vec![0.0; masked.cols];
    for i in 0..t {
        for (o, v) in out.iter_mut().zip(masked.row(i)) {
            *o += a[i] * v;
        }
    }
    (out, SoftAttnCache { f, sum_exp, a })
}

/// Backward of the soft attention; returns dL/d(rows).
pub(crate) fn soft_attention_backward(
    cache: &SoftAttnCache,
    rows: &Tensor2,
    d_out: &[f64],
) -> Tensor2 {
    let t = rows.rows;
    let q = t - 1;
    let query = rows.row(q);
    let mut d_rows = Tensor2::zeros(t, rows.cols);

    // Direct path out = sum a_i row_i, plus dL/da_i = <d_out, row_i>.
    let mut da = vec![0.0; t];
    for i in 0..t {
        da[i] = d_out.iter().zip(rows.row(i)).map(|(a, b)| a * b).sum();
        for (d, g) in d_rows.row_mut(i).iter_mut().zip(d_out) {
            *d += cache.a[i] * g;
        }
    }

    // Through the weights into the similarities:
    // df_k = da_k a_k - (exp(f_k)/S) * (1/2) * sum_i da_i a_i.
    let weighted: f64 = da.iter().zip(&cache.a).map(|(x, y)| x * y).sum();
    let mut df = vec![0.0; t];
    for k in 0..t {
        df[k] = da[k] * cache.a[k] - 0.5 * (cache.f[k].exp() / cache.sum_exp) * weighted;
    }

    // Through the cosines. Both arguments contribute; for the query row the
    // two terms cancel exactly (its self-similarity is constant).
    for k in 0..t {
        let (cos, _, nk, nq) = cosine_parts(rows.row(k), query);
        if nk == 0.0 || nq == 0.0 {
            continue;
        }
        let g = df[k];
        let inv = 1.0 / (nk * nq);
        for c in 0..rows.cols {
            let xk = rows.get(k, c);
            let xq = rows.get(q, c);
            d_rows.set(k, c, d_rows.get(k, c) + g * (xq * inv - cos * xk / (nk * nk)));
            d_rows.set(q, c, d_rows.get(q, c) + g * (xk * inv - cos * xq / (nq * nq)));
        }
    }
    d_rows
}

/// Per-sequence decode trace.
enum SeqDetail {
    Prompt {
        prompt_rows: Vec<usize>,
        e_p_hat: Tensor2,
        concat: Tensor2,
        pre: Tensor2,
        masked: Tensor2,
        mask_flags: Vec<bool>,
        soft: SoftAttnCache,
    },
    MaxPool {
        argmax: Vec<usize>,
    },
    AdditiveMean {
        prompt_rows: Vec<usize>,
        e_p_hat: Tensor2,
    },
}

struct SeqDecode {
    items: Vec<usize>,
    user: usize,
    detail: SeqDetail,
}

pub struct DecodeCache {
    kind: DecoderKind,
    per_seq: Vec<SeqDecode>,
}

/// Masking context: per-sequence seeds in training, nothing at eval.
#[derive(Debug, Clone, Copy)]
pub enum DecodeMode<'a> {
    Train { mask_seeds: &'a [u64] },
    Eval,
}

fn prompt_row_indices(kind: DecoderKind, seq: &SequenceRecord, max_len: usize) -> Result<Vec<usize>> {
    let t = seq.len();
    let mut rows = Vec::with_capacity(t);
    for (i, &p) in seq.positions.iter().enumerate() {
        let row = match kind {
            // Absolute position p -> row p - 1.
            DecoderKind::PromptAbsolute | DecoderKind::AdditiveMean => {
                if p < 1 || p > max_len {
                    return Err(Error::IndexRange(format!(
                        "position {p} outside the prompt table (max_len {max_len})"
                    )));
                }
                p - 1
            }
            // Offset from the last item: the last row gets offset 0.
            DecoderKind::PromptRelative => {
                let off = t - p;
                if off >= max_len {
                    return Err(Error::IndexRange(format!(
                        "offset {off} outside the prompt table (max_len {max_len})"
                    )));
                }
                off
            }
            DecoderKind::MaxPool => unreachable!("max pooling uses no prompts"),
        };
        let _ = i;
        rows.push(row);
    }
    Ok(rows)
}

/// Decode sequences into user-specific representations, one 2d-wide row per
/// sequence: the refined sequence embedding concatenated with the user's
/// final embedding.
pub fn decode(
    enc: &EncoderOutput,
    sequences: &[SequenceRecord],
    params: &ParamStore,
    cfg: &HyperConfig,
    mode: DecodeMode,
) -> Result<(Tensor2, DecodeCache)> {
    let kind = cfg.variant.decoder_kind();
    let d = cfg.d;
    let e_s = &enc.e_items_final;
    let e_u = &enc.e_users_final;
    if let DecodeMode::Train { mask_seeds } = mode {
        if mask_seeds.len() != sequences.len() {
            return Err(Error::Config("one mask seed per sequence required".into()));
        }
    }

    let mut h = Tensor2::zeros(sequences.len(), 2 * d);
    let mut per_seq = Vec::with_capacity(sequences.len());

    for (si, seq) in sequences.iter().enumerate() {
        if seq.user_index >= e_u.rows {
            return Err(Error::IndexRange(format!("user index {}", seq.user_index)));
        }
        if seq.items.iter().any(|&v| v >= e_s.rows) {
            return Err(Error::IndexRange("item index outside encoder output".into()));
        }
        let e_sk = e_s.gather_rows(&seq.items);
        let (out_d, detail) = match kind {
            DecoderKind::PromptAbsolute | DecoderKind::PromptRelative => {
                let prompt = params.value(names::PROMPT);
                let w_c = params.value(names::W_C);
                let b_c = params.value(names::B_C);
                let w2 = params.value(names::W2);
                let b2 = params.value(names::B2);
                let mask_token = params.value(names::MASK_TOKEN);

                let prompt_rows = prompt_row_indices(kind, seq, prompt.rows)?;
                let e_p_hat = prompt.gather_rows(&prompt_rows);
                let mut e_p = e_p_hat.matmul(w_c);
                for r in 0..e_p.rows {
                    for (v, b) in e_p.row_mut(r).iter_mut().zip(b_c.row(0)) {
                        *v += b;
                    }
                }
                let concat = Tensor2::concat_cols(&e_sk, &e_p);
                let mut pre = concat.matmul(w2);
                for r in 0..pre.rows {
                    for (v, b) in pre.row_mut(r).iter_mut().zip(b2.row(0)) {
                        *v += b;
                    }
                }
                let mut template = pre.clone();
                for v in &mut template.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let (seed, training) = match mode {
                    DecodeMode::Train { mask_seeds } => (mask_seeds[si], true),
                    DecodeMode::Eval => (0, false),
                };
                let tpl =
                    sequential_mask(&template, cfg.gamma, mask_token.row(0), seed, training);
                let (out_d, soft) = soft_attention_cached(&tpl.masked_rows);
                (
                    out_d,
                    SeqDetail::Prompt {
                        prompt_rows,
                        e_p_hat,
                        concat,
                        pre,
                        masked: tpl.masked_rows,
                        mask_flags: tpl.mask_flags,
                        soft,
                    },
                )
            }
            DecoderKind::MaxPool => {
                let mut out_d = vec![f64::NEG_INFINITY; d];
                let mut argmax = vec![0usize; d];
                for r in 0..e_sk.rows {
                    for (c, v) in e_sk.row(r).iter().enumerate() {
                        if *v > out_d[c] {
                            out_d[c] = *v;
                            argmax[c] = r;
                        }
                    }
                }
                (out_d, SeqDetail::MaxPool { argmax })
            }
            DecoderKind::AdditiveMean => {
                let prompt = params.value(names::PROMPT);
                let w_c = params.value(names::W_C);
                let b_c = params.value(names::B_C);
                let prompt_rows = prompt_row_indices(kind, seq, prompt.rows)?;
                let e_p_hat = prompt.gather_rows(&prompt_rows);
                let mut e_p = e_p_hat.matmul(w_c);
                for r in 0..e_p.rows {
                    for (v, b) in e_p.row_mut(r).iter_mut().zip(b_c.row(0)) {
                        *v += b;
                    }
                }
                let t = e_sk.rows as f64;
                let mut out_d = vec![0.0; d];
                for r in 0..e_sk.rows {
                    for c in 0..d {
                        out_d[c] += (e_sk.get(r, c) + e_p.get(r, c)) / t;
                    }
                }
                (out_d, SeqDetail::AdditiveMean { prompt_rows, e_p_hat })
            }
        };
        h.row_mut(si)[..d].copy_from_slice(&out_d);
        h.row_mut(si)[d..].copy_from_slice(e_u.row(seq.user_index));
        per_seq.push(SeqDecode { items: seq.items.clone(), user: seq.user_index, detail });
    }

    Ok((h, DecodeCache { kind, per_seq }))
}

/// Backward of [`decode`]: accumulates decoder parameter gradients and
/// returns the gradients w.r.t. the encoder's final item and user
/// embeddings.
pub fn decode_backward(
    params: &mut ParamStore,
    cfg: &HyperConfig,
    cache: &DecodeCache,
    dh: &Tensor2,
    d_e_items: &mut Tensor2,
    d_e_users: &mut Tensor2,
) {
    let d = cfg.d;
    let w_c;
    let w2;
    if matches!(cache.kind, DecoderKind::PromptAbsolute | DecoderKind::PromptRelative) {
        w_c = params.value(names::W_C).clone();
        w2 = params.value(names::W2).clone();
    } else if matches!(cache.kind, DecoderKind::AdditiveMean) {
        w_c = params.value(names::W_C).clone();
        w2 = Tensor2::zeros(0, 0);
    } else {
        w_c = Tensor2::zeros(0, 0);
        w2 = Tensor2::zeros(0, 0);
    }

    for (si, seq) in cache.per_seq.iter().enumerate() {
        let d_out = &dh.row(si)[..d];
        let d_user = &dh.row(si)[d..];
        for (g, v) in d_e_users.row_mut(seq.user).iter_mut().zip(d_user) {
            *g += v;
        }

        match &seq.detail {
            SeqDetail::Prompt { prompt_rows, e_p_hat, concat, pre, masked, mask_flags, soft } => {
                let d_masked = soft_attention_backward(soft, masked, d_out);
                // Split masked-row gradients between the mask token and the
                // surviving template rows, then undo the ReLU.
                let t = masked.rows;
                let mut d_pre = Tensor2::zeros(t, d);
                for i in 0..t {
                    if mask_flags[i] {
                        for (g, v) in params
                            .grad_mut(names::MASK_TOKEN)
                            .row_mut(0)
                            .iter_mut()
                            .zip(d_masked.row(i))
                        {
                            *g += v;
                        }
                    } else {
                        for c in 0..d {
                            if pre.get(i, c) > 0.0 {
                                d_pre.set(i, c, d_masked.get(i, c));
                            }
                        }
                    }
                }
                // Template feedforward.
                params.add_grad(names::W2, &concat.t_matmul(&d_pre), 1.0);
                let colsum = d_pre.col_sums();
                for (g, v) in params.grad_mut(names::B2).row_mut(0).iter_mut().zip(&colsum) {
                    *g += v;
                }
                let d_concat = d_pre.matmul_bt(&w2);
                let (d_e_sk, d_e_p) = d_concat.split_cols(d);
                // Prompt projection.
                params.add_grad(names::W_C, &e_p_hat.t_matmul(&d_e_p), 1.0);
                let colsum = d_e_p.col_sums();
                for (g, v) in params.grad_mut(names::B_C).row_mut(0).iter_mut().zip(&colsum) {
                    *g += v;
                }
                let d_e_p_hat = d_e_p.matmul_bt(&w_c);
                params.grad_mut(names::PROMPT).scatter_add_rows(prompt_rows, &d_e_p_hat);
                // Item rows.
                d_e_items.scatter_add_rows(&seq.items, &d_e_sk);
            }
            SeqDetail::MaxPool { argmax } => {
                let mut d_e_sk = Tensor2::zeros(seq.items.len(), d);
                for (c, &r) in argmax.iter().enumerate() {
                    d_e_sk.set(r, c, d_out[c]);
                }
                d_e_items.scatter_add_rows(&seq.items, &d_e_sk);
            }
            SeqDetail::AdditiveMean { prompt_rows, e_p_hat } => {
                let t = seq.items.len();
                let scale = 1.0 / t as f64;
                let mut d_rows = Tensor2::zeros(t, d);
                for r in 0..t {
                    for (g, v) in d_rows.row_mut(r).iter_mut().zip(d_out) {
                        *g = scale * v;
                    }
                }
                d_e_items.scatter_add_rows(&seq.items, &d_rows);
                // Prompt path shares the same row gradients.
                params.add_grad(names::W_C, &e_p_hat.t_matmul(&d_rows), 1.0);
                let colsum = d_rows.col_sums();
                for (g, v) in params.grad_mut(names::B_C).row_mut(0).iter_mut().zip(&colsum) {
                    *g += v;
                }
                let d_e_p_hat = d_rows.matmul_bt(&w_c);
                params.grad_mut(names::PROMPT).scatter_add_rows(prompt_rows, &d_e_p_hat);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::random::xavier_init;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        )
    }

    fn assert_close_slice(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    fn identity(n: usize) -> Tensor2 {
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    #[test]
    fn project_prompts_identity_and_bias_only() {
        let base = random_tensor(6, 3, 1);
        let gathered = project_prompts(&[1, 3, 6], &base, &identity(3), &[0.0; 3]).unwrap();
        assert_eq!(gathered.row(0), base.row(0));
        assert_eq!(gathered.row(1), base.row(2));
        assert_eq!(gathered.row(2), base.row(5));

        let b = [0.5, -1.0, 2.0];
        let only_bias = project_prompts(&[2, 4], &base, &Tensor2::zeros(3, 3), &b).unwrap();
        for r in 0..2 {
            assert_close_slice(only_bias.row(r), &b, 1e-15);
        }
    }

    #[test]
    fn project_prompts_matches_per_row_affine_oracle() {
        let base = random_tensor(8, 3, 2);
        let w_c = random_tensor(3, 4, 3);
        let b_c = [0.1, -0.2, 0.3, 0.4];
        let positions = [2usize, 7, 7, 1];
        let out = project_prompts(&positions, &base, &w_c, &b_c).unwrap();
        for (r, &p) in positions.iter().enumerate() {
            for c in 0..4 {
                let mut acc = b_c[c];
                for k in 0..3 {
                    acc += base.get(p - 1, k) * w_c.get(k, c);
                }
                assert!((out.get(r, c) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn project_prompts_range_error() {
        let base = random_tensor(4, 2, 4);
        let err = project_prompts(&[5], &base, &identity(2), &[0.0; 2]).unwrap_err();
        assert!(matches!(err, Error::IndexRange(_)));
    }

    #[test]
    fn build_template_block_structure() {
        let d = 3;
        let e_seq = random_tensor(4, d, 5);
        let e_prompt = random_tensor(4, d, 6);
        // Zero weights and bias: zero template.
        let zero = build_template(&e_seq, &e_prompt, &Tensor2::zeros(2 * d, d), &[0.0; 3]);
        assert_eq!(zero, Tensor2::zeros(4, d));
        // W2 = [I; 0]: template is ReLU of the item rows.
        let mut w2 = Tensor2::zeros(2 * d, d);
        for i in 0..d {
            w2.set(i, i, 1.0);
        }
        let tpl = build_template(&e_seq, &e_prompt, &w2, &[0.0; 3]);
        for r in 0..4 {
            for c in 0..d {
                assert!((tpl.get(r, c) - e_seq.get(r, c).max(0.0)).abs() < 1e-15);
            }
        }
        // Strongly negative bias: everything clamps to zero.
        let neg = build_template(&e_seq, &e_prompt, &w2, &[-100.0; 3]);
        assert_eq!(neg, Tensor2::zeros(4, d));
    }

    #[test]
    fn mask_counts_and_cap() {
        let token = vec![9.0; 2];
        let tpl10 = random_tensor(10, 2, 7);
        let m = sequential_mask(&tpl10, 0.4, &token, 1, true);
        assert_eq!(m.mask_flags.iter().filter(|f| **f).count(), 4);
        assert!(!m.mask_flags[9]);

        let m = sequential_mask(&tpl10, 0.0, &token, 1, true);
        assert_eq!(m.mask_flags.iter().filter(|f| **f).count(), 0);
        assert_eq!(m.masked_rows, tpl10);

        let tpl5 = random_tensor(5, 2, 8);
        let m = sequential_mask(&tpl5, 1.0, &token, 2, true);
        assert_eq!(m.mask_flags.iter().filter(|f| **f).count(), 4);
        assert!(!m.mask_flags[4]);

        // Eval mode: no masks regardless of gamma.
        let m = sequential_mask(&tpl5, 1.0, &token, 2, false);
        assert_eq!(m.mask_flags.iter().filter(|f| **f).count(), 0);

        // Masked rows carry the token, unmasked rows the template.
        let m = sequential_mask(&tpl10, 0.5, &token, 3, true);
        for i in 0..10 {
            if m.mask_flags[i] {
                assert_eq!(m.masked_rows.row(i), &token[..]);
            } else {
                assert_eq!(m.masked_rows.row(i), tpl10.row(i));
            }
        }
        // Deterministic per seed.
        let m2 = sequential_mask(&tpl10, 0.5, &token, 3, true);
        assert_eq!(m.mask_flags, m2.mask_flags);
    }

    /// Exact mask counts over the whole (length, tenths-of-gamma) grid,
    /// checked against integer arithmetic.
    #[test]
    fn mask_count_grid_matches_exact_rational() {
        for t in 1..=60usize {
            for k in 0..=10usize {
                let gamma = k as f64 / 10.0;
                let expected = (k * t / 10).min(t - 1);
                assert_eq!(mask_count(t, gamma), expected, "t={t} k={k}");
            }
        }
    }

    /// Analytic evaluation for a single row: weight e^{1/2}.
    #[test]
    fn soft_attention_single_row() {
        let row = vec![0.4, -0.3, 0.8];
        let t = Tensor2::from_rows(&[row.clone()]);
        let out = soft_attention(&t);
        let w = 0.5f64.exp();
        for (o, r) in out.iter().zip(&row) {
            assert!((o - w * r).abs() < 1e-12);
        }
    }

    /// Two identical rows: each weight e/sqrt(2e), output about 2.3316x.
    #[test]
    fn soft_attention_identical_rows() {
        let row = vec![0.2, 0.5];
        let t = Tensor2::from_rows(&[row.clone(), row.clone()]);
        let (out, cache) = soft_attention_cached(&t);
        let expected_w = 1f64.exp() / (2.0 * 1f64.exp()).sqrt();
        for a in &cache.a {
            assert!((a - expected_w).abs() < 1e-12);
        }
        for (o, r) in out.iter().zip(&row) {
            assert!((o - 2.0 * expected_w * r).abs() < 1e-12);
        }
    }

    /// Weight-sum identity: sum_i a_i = sqrt(sum_i exp(f_i)).
    #[test]
    fn soft_attention_weight_sum_identity() {
        for seed in 0..20 {
            let t = Tensor2::from_vec(
                5,
                3,
                random_tensor(5, 3, 100 + seed).data,
            );
            let (_, cache) = soft_attention_cached(&t);
            let sum_a: f64 = cache.a.iter().sum();
            assert!((sum_a - cache.sum_exp.sqrt()).abs() < 1e-10);
        }
    }

    /// Cosine scale invariance: scaling all rows by c scales the output by c
    /// and leaves the weights unchanged.
    #[test]
    fn soft_attention_scale_behaviour() {
        let t = random_tensor(4, 3, 9);
        let mut t3 = t.clone();
        t3.scale_in_place(3.0);
        let (out1, c1) = soft_attention_cached(&t);
        let (out3, c3) = soft_attention_cached(&t3);
        assert_close_slice(&c1.a, &c3.a, 1e-12);
        let scaled: Vec<f64> = out1.iter().map(|v| 3.0 * v).collect();
        assert_close_slice(&out3, &scaled, 1e-12);
    }

    #[test]
    fn soft_attention_backward_matches_finite_difference() {
        let rows = random_tensor(4, 3, 10);
        let w = vec![0.3, -0.7, 0.2];
        let loss = |rows: &Tensor2| -> f64 {
            soft_attention(rows).iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = soft_attention_cached(&rows);
        let d_rows = soft_attention_backward(&cache, &rows, &w);
        let h = 1e-6;
        for i in 0..rows.numel() {
            let mut p = rows.clone();
            p.data[i] += h;
            let mut m = rows.clone();
            m.data[i] -= h;
            let num = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((num - d_rows.data[i]).abs() < 1e-7, "coord {i}");
        }
    }

    // Full decode round: fabricate encoder finals and parameters.

    fn decoder_params(cfg: &HyperConfig, m: usize, max_len: usize, seed: u64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert(names::PROMPT, xavier_init(max_len, cfg.d1, seed));
        p.insert(names::W_C, xavier_init(cfg.d1, cfg.d, seed + 1));
        p.insert(names::B_C, Tensor2::zeros(1, cfg.d));
        p.insert(names::W2, xavier_init(2 * cfg.d, cfg.d, seed + 2));
        p.insert(names::B2, Tensor2::zeros(1, cfg.d));
        p.insert(names::MASK_TOKEN, xavier_init(1, cfg.d, seed + 3));
        let _ = m;
        p
    }

    fn fake_encoder_output(m: usize, n: usize, d: usize, seed: u64) -> EncoderOutput {
        EncoderOutput {
            e_items_final: random_tensor(m, d, seed),
            e_users_final: random_tensor(n, d, seed + 1),
            per_layer: Vec::new(),
        }
    }

    fn cfg_for(variant: Variant) -> HyperConfig {
        let mut cfg = HyperConfig::default();
        cfg.d = 4;
        cfg.d1 = 3;
        cfg.alpha = 2;
        cfg.beta = 2;
        cfg.gamma = 0.4;
        cfg.variant = variant;
        cfg
    }

    #[test]
    fn decode_output_layout() {
        let cfg = cfg_for(Variant::EaGps);
        let enc = fake_encoder_output(6, 3, cfg.d, 11);
        let params = decoder_params(&cfg, 6, 10, 12);
        // Two sequences of the same user share the trailing user half.
        let seqs = vec![
            SequenceRecord::new(1, vec![0, 2, 4]),
            SequenceRecord::new(1, vec![5, 3, 1, 0]),
        ];
        let (h, _) = decode(&enc, &seqs, &params, &cfg, DecodeMode::Eval).unwrap();
        assert_eq!((h.rows, h.cols), (2, 2 * cfg.d));
        assert_eq!(&h.row(0)[cfg.d..], &h.row(1)[cfg.d..]);
        assert_eq!(&h.row(0)[cfg.d..], enc.e_users_final.row(1));
        // Eval is deterministic.
        let (h2, _) = decode(&enc, &seqs, &params, &cfg, DecodeMode::Eval).unwrap();
        assert_eq!(h, h2);
    }

    #[test]
    fn decode_max_pool_matches_columnwise_max() {
        let cfg = cfg_for(Variant::GpsBasic);
        let enc = fake_encoder_output(5, 2, cfg.d, 13);
        let params = ParamStore::new(); // max pooling reads no decoder params
        let seqs = vec![SequenceRecord::new(0, vec![0, 3, 2])];
        let (h, _) = decode(&enc, &seqs, &params, &cfg, DecodeMode::Eval).unwrap();
        let rows = enc.e_items_final.gather_rows(&[0, 3, 2]);
        for c in 0..cfg.d {
            let max = (0..3).map(|r| rows.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
            assert!((h.get(0, c) - max).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_additive_mean_matches_hand_rule() {
        let cfg = cfg_for(Variant::GpsOma);
        let enc = fake_encoder_output(5, 2, cfg.d, 14);
        let params = decoder_params(&cfg, 5, 10, 15);
        let seqs = vec![SequenceRecord::new(0, vec![1, 4, 2])];
        let (h, _) = decode(&enc, &seqs, &params, &cfg, DecodeMode::Eval).unwrap();
        let e_sk = enc.e_items_final.gather_rows(&[1, 4, 2]);
        let e_p = project_prompts(
            &[1, 2, 3],
            params.value(names::PROMPT),
            params.value(names::W_C),
            params.value(names::B_C).row(0),
        )
        .unwrap();
        for c in 0..cfg.d {
            let mean: f64 =
                (0..3).map(|r| e_sk.get(r, c) + e_p.get(r, c)).sum::<f64>() / 3.0;
            assert!((h.get(0, c) - mean).abs() < 1e-12);
        }
    }

    /// Finite-difference check of the decoder backward across all kinds,
    /// with training-mode masking frozen by fixed seeds.
    #[test]
    fn decode_backward_matches_finite_difference() {
        for variant in
            [Variant::EaGps, Variant::GpsRpe, Variant::GpsOma, Variant::GpsBasic]
        {
            let cfg = cfg_for(variant);
            let (m, n) = (6, 3);
            let enc = fake_encoder_output(m, n, cfg.d, 16);
            let mut params = decoder_params(&cfg, m, 10, 17);
            let seqs = vec![
                SequenceRecord::new(1, vec![0, 2, 4, 2]),
                SequenceRecord::new(0, vec![5, 3, 1]),
            ];
            let mask_seeds = [91u64, 92];
            let mode = DecodeMode::Train { mask_seeds: &mask_seeds };
            let w = random_tensor(2, 2 * cfg.d, 18);

            let loss =
                |p: &ParamStore, items: &Tensor2, users: &Tensor2| -> f64 {
                    let e = EncoderOutput {
                        e_items_final: items.clone(),
                        e_users_final: users.clone(),
                        per_layer: Vec::new(),
                    };
                    let (h, _) = decode(&e, &seqs, p, &cfg, mode).unwrap();
                    h.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
                };

            let (h, cache) = decode(&enc, &seqs, &params, &cfg, mode).unwrap();
            let _ = h;
            let mut d_items = Tensor2::zeros(m, cfg.d);
            let mut d_users = Tensor2::zeros(n, cfg.d);
            decode_backward(&mut params, &cfg, &cache, &w, &mut d_items, &mut d_users);

            let h_step = 1e-6;
            // Parameter gradients.
            for name in params.names() {
                for i in 0..params.value(&name).numel() {
                    let orig = params.value(&name).data[i];
                    params.param_mut(&name).value.data[i] = orig + h_step;
                    let up = loss(&params, &enc.e_items_final, &enc.e_users_final);
                    params.param_mut(&name).value.data[i] = orig - h_step;
                    let dn = loss(&params, &enc.e_items_final, &enc.e_users_final);
                    params.param_mut(&name).value.data[i] = orig;
                    let num = (up - dn) / (2.0 * h_step);
                    let ana = params.param(&name).grad.data[i];
                    assert!(
                        (num - ana).abs() < 1e-6,
                        "{variant:?} {name}[{i}]: {num} vs {ana}"
                    );
                }
            }
            // Input gradients.
            for i in 0..enc.e_items_final.numel() {
                let mut up_t = enc.e_items_final.clone();
                up_t.data[i] += h_step;
                let mut dn_t = enc.e_items_final.clone();
                dn_t.data[i] -= h_step;
                let num = (loss(&params, &up_t, &enc.e_users_final)
                    - loss(&params, &dn_t, &enc.e_users_final))
                    / (2.0 * h_step);
                assert!((num - d_items.data[i]).abs() < 1e-6, "{variant:?} items[{i}]");
            }
            for i in 0..enc.e_users_final.numel() {
                let mut up_t = enc.e_users_final.clone();
                up_t.data[i] += h_step;
                let mut dn_t = enc.e_users_final.clone();
                dn_t.data[i] -= h_step;
                let num = (loss(&params, &enc.e_items_final, &up_t)
                    - loss(&params, &enc.e_items_final, &dn_t))
                    / (2.0 * h_step);
                assert!((num - d_users.data[i]).abs() < 1e-6, "{variant:?} users[{i}]");
            }
        }
    }
}
