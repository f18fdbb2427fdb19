//! Model assembly: per-variant parameter sets, the prediction head, the
//! cross-entropy objective, and the composed forward/backward pass from base
//! embeddings to loss.

use crate::config::{DecoderKind, EncoderKind, HyperConfig, LossMode};
use crate::data::{SequenceRecord, SequenceSet};
use crate::decoder::{decode, decode_backward, DecodeCache, DecodeMode};
use crate::encoder::{encode, encode_backward, EncodeMode, EncoderOutput};
use crate::error::{Error, Result};
use crate::graph::{build_graph, SequentialGraph, SparseMatrix};
use crate::params::{names, ParamStore};
use crate::random::xavier_init;
use crate::seeds;
use crate::tensor::{softmax_rows, Tensor2};

/// Numerical floor inside the log of the cross entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Everything about a model that is not learnable: dimensions, the training
/// graph, and the sequences that drive the external encoder.
#[derive(Debug, Clone)]
pub struct Wiring {
    pub cfg: HyperConfig,
    pub m: usize,
    pub n: usize,
    pub max_len: usize,
    pub graph: SequentialGraph,
    /// Transpose of the normalized adjacency, for the backward pass.
    pub adj_t: SparseMatrix,
    /// Training sequences; the external encoder refines their item rows.
    pub enc_seqs: Vec<SequenceRecord>,
}

impl Wiring {
    pub fn build(cfg: HyperConfig, set: &SequenceSet) -> Result<Wiring> {
        cfg.validate()?;
        if set.train_ids.is_empty() {
            return Err(Error::EmptyDataset("no training split; run the splitter first".into()));
        }
        let enc_seqs = set.train();
        let graph = build_graph(&enc_seqs, set.m_items, set.n_users)?;
        let adj_t = graph.normalized.transpose();
        Ok(Wiring {
            cfg,
            m: set.m_items,
            n: set.n_users,
            max_len: set.max_len().max(1),
            graph,
            adj_t,
            enc_seqs,
        })
    }
}

/// Shapes of every learnable tensor for a config, in insertion order.
pub fn param_shapes(
    cfg: &HyperConfig,
    m: usize,
    n: usize,
    max_len: usize,
) -> Vec<(String, usize, usize)> {
    let d = cfg.d;
    let mut shapes = vec![
        (names::E_ITEMS.to_string(), m, d),
        (names::E_USERS.to_string(), n, d),
        (names::LN_GAIN.to_string(), 1, d),
        (names::LN_BIAS.to_string(), 1, d),
    ];
    if cfg.variant.encoder_kind() == EncoderKind::External {
        let d_head = d / cfg.beta;
        for h in 0..cfg.beta {
            shapes.push((names::mem_k(h), cfg.alpha, d_head));
            shapes.push((names::mem_v(h), cfg.alpha, d_head));
        }
        shapes.push((names::W1.to_string(), d, d));
    }
    match cfg.variant.decoder_kind() {
        DecoderKind::PromptAbsolute | DecoderKind::PromptRelative => {
            shapes.push((names::PROMPT.to_string(), max_len, cfg.d1));
            shapes.push((names::W_C.to_string(), cfg.d1, d));
            shapes.push((names::B_C.to_string(), 1, d));
            shapes.push((names::W2.to_string(), 2 * d, d));
            shapes.push((names::B2.to_string(), 1, d));
            shapes.push((names::MASK_TOKEN.to_string(), 1, d));
        }
        DecoderKind::AdditiveMean => {
            shapes.push((names::PROMPT.to_string(), max_len, cfg.d1));
            shapes.push((names::W_C.to_string(), cfg.d1, d));
            shapes.push((names::B_C.to_string(), 1, d));
        }
        DecoderKind::MaxPool => {}
    }
    shapes.push((names::W6.to_string(), 2 * d, m));
    shapes.push((names::B6.to_string(), 1, m));
    shapes
}

/// Seeded initialization of every tensor in [`param_shapes`]: Xavier uniform
/// for weights, ones for the layer-norm gain, zeros for biases.
pub fn init_params(cfg: &HyperConfig, m: usize, n: usize, max_len: usize) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, rows, cols) in param_shapes(cfg, m, n, max_len) {
        let value = match name.as_str() {
            names::LN_GAIN => Tensor2::filled(rows, cols, 1.0),
            names::LN_BIAS | names::B_C | names::B2 | names::B6 => Tensor2::zeros(rows, cols),
            _ => xavier_init(rows, cols, seeds::mix(cfg.seed_init, seeds::name_tag(&name))),
        };
        store.insert(&name, value);
    }
    store
}

/// A trainable model: wiring plus parameters plus the optimizer step count.
#[derive(Debug, Clone)]
pub struct Model {
    pub wiring: Wiring,
    pub params: ParamStore,
    pub step: u64,
}

impl Model {
    pub fn new(cfg: HyperConfig, set: &SequenceSet) -> Result<Model> {
        let wiring = Wiring::build(cfg, set)?;
        let params =
            init_params(&wiring.cfg, wiring.m, wiring.n, wiring.max_len);
        Ok(Model { wiring, params, step: 0 })
    }
}

/// One supervised example: a sequence prefix and the item that follows it.
#[derive(Debug, Clone)]
pub struct TrainExample {
    /// Index of the source sequence in the list it was cut from; feeds the
    /// per-sequence mask seed.
    pub seq_id: usize,
    pub prefix: SequenceRecord,
    pub target: usize,
}

/// Cut training examples from sequences. Last-item mode holds out the final
/// item of each sequence; all-prefixes mode predicts every position from its
/// preceding items (prefix length >= 2).
pub fn make_training_examples(seqs: &[SequenceRecord], mode: LossMode) -> Vec<TrainExample> {
    let mut out = Vec::new();
    for (seq_id, seq) in seqs.iter().enumerate() {
        match mode {
            LossMode::LastItem => {
                let t = seq.len();
                out.push(TrainExample {
                    seq_id,
                    prefix: seq.prefix(t - 1),
                    target: seq.items[t - 1],
                });
            }
            LossMode::AllPrefixes => {
                for i in 2..seq.len() {
                    out.push(TrainExample { seq_id, prefix: seq.prefix(i), target: seq.items[i] });
                }
            }
        }
    }
    out
}

/// Prediction head: per-row distribution over all items,
/// `softmax(h @ w6 + b6)`.
pub fn predict(h: &Tensor2, w6: &Tensor2, b6: &[f64]) -> Tensor2 {
    let mut logits = h.matmul(w6);
    for r in 0..logits.rows {
        for (v, b) in logits.row_mut(r).iter_mut().zip(b6) {
            *v += b;
        }
    }
    softmax_rows(&logits)
}

/// Mean negative log-likelihood of the targets.
pub fn ce_loss(probs: &Tensor2, targets: &[usize]) -> f64 {
    assert_eq!(probs.rows, targets.len(), "one target per row");
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        total -= (probs.get(r, t) + LOG_EPS).ln();
    }
    total / targets.len() as f64
}

/// L2 penalty on the external memory units (only they are regularized).
fn memory_l2(params: &ParamStore, cfg: &HyperConfig) -> f64 {
    if cfg.variant.encoder_kind() != EncoderKind::External {
        return 0.0;
    }
    let mut sq = 0.0;
    for h in 0..cfg.beta {
        sq += params.value(&names::mem_k(h)).frob_sq();
        sq += params.value(&names::mem_v(h)).frob_sq();
    }
    cfg.ea_l2 * sq
}

/// Whether a pass is a training pass (dropout + masking active) and which
/// epoch it belongs to; seeds derive from the config.
#[derive(Debug, Clone, Copy)]
pub struct StepCtx {
    pub training: bool,
    pub epoch: u64,
}

impl StepCtx {
    pub fn train(epoch: u64) -> Self {
        StepCtx { training: true, epoch }
    }

    pub fn eval() -> Self {
        StepCtx { training: false, epoch: 0 }
    }
}

fn forward_parts(
    wiring: &Wiring,
    params: &ParamStore,
    examples: &[&TrainExample],
    ctx: StepCtx,
) -> Result<(EncoderOutput, crate::encoder::EncoderCache, Tensor2, DecodeCache, Tensor2)> {
    let cfg = &wiring.cfg;
    let enc_mode =
        if ctx.training { EncodeMode::Train { epoch: ctx.epoch } } else { EncodeMode::Eval };
    let (enc, enc_cache) = encode(&wiring.graph, params, cfg, &wiring.enc_seqs, enc_mode)?;

    let prefixes: Vec<SequenceRecord> = examples.iter().map(|e| e.prefix.clone()).collect();
    let mask_seeds: Vec<u64> = examples
        .iter()
        .map(|e| seeds::mix2(cfg.seed_mask, e.seq_id as u64, ctx.epoch))
        .collect();
    let dec_mode = if ctx.training {
        DecodeMode::Train { mask_seeds: &mask_seeds }
    } else {
        DecodeMode::Eval
    };
    let (h, dec_cache) = decode(&enc, &prefixes, params, cfg, dec_mode)?;
    let probs = predict(&h, params.value(names::W6), params.value(names::B6).row(0));
    Ok((enc, enc_cache, h, dec_cache, probs))
}

/// The full training objective (cross entropy plus the memory L2 term) as a
/// pure function of the parameters.
pub fn batch_loss(
    wiring: &Wiring,
    params: &ParamStore,
    examples: &[&TrainExample],
    ctx: StepCtx,
) -> Result<f64> {
    let (_, _, _, _, probs) = forward_parts(wiring, params, examples, ctx)?;
    let targets: Vec<usize> = examples.iter().map(|e| e.target).collect();
    Ok(ce_loss(&probs, &targets) + memory_l2(params, &wiring.cfg))
}

/// Forward plus hand-derived backward: accumulates gradients for every
/// parameter and returns the objective value. Gradients are added on top of
/// whatever is already stored; callers zero them beforehand.
pub fn batch_loss_and_grads(
    wiring: &Wiring,
    params: &mut ParamStore,
    examples: &[&TrainExample],
    ctx: StepCtx,
) -> Result<f64> {
    let cfg = wiring.cfg.clone();
    let (_enc, enc_cache, h, dec_cache, probs) = forward_parts(wiring, params, examples, ctx)?;
    let targets: Vec<usize> = examples.iter().map(|e| e.target).collect();
    let loss = ce_loss(&probs, &targets) + memory_l2(params, &cfg);

    // Head backward: d(logits) of the mean masked log-likelihood. The floor
    // inside the log contributes the p/(p + eps) factor.
    let b = examples.len() as f64;
    let mut d_logits = Tensor2::zeros(probs.rows, probs.cols);
    for (r, &t) in targets.iter().enumerate() {
        let p_t = probs.get(r, t);
        let scale = p_t / (p_t + LOG_EPS) / b;
        for c in 0..probs.cols {
            let indicator = if c == t { 1.0 } else { 0.0 };
            d_logits.set(r, c, scale * (probs.get(r, c) - indicator));
        }
    }
    let w6 = params.value(names::W6).clone();
    params.add_grad(names::W6, &h.t_matmul(&d_logits), 1.0);
    let colsum = d_logits.col_sums();
    for (g, v) in params.grad_mut(names::B6).row_mut(0).iter_mut().zip(&colsum) {
        *g += v;
    }
    let dh = d_logits.matmul_bt(&w6);

    // Decoder backward into the encoder finals.
    let mut d_items = Tensor2::zeros(wiring.m, cfg.d);
    let mut d_users = Tensor2::zeros(wiring.n, cfg.d);
    decode_backward(params, &cfg, &dec_cache, &dh, &mut d_items, &mut d_users);

    // Encoder backward into embeddings, memories, mixing and norm tensors.
    encode_backward(
        &wiring.graph,
        &wiring.adj_t,
        params,
        &cfg,
        &wiring.enc_seqs,
        &enc_cache,
        &d_items,
        &d_users,
    )?;

    // Memory regularization.
    if cfg.variant.encoder_kind() == EncoderKind::External {
        for hd in 0..cfg.beta {
            for name in [names::mem_k(hd), names::mem_v(hd)] {
                let v = params.value(&name).clone();
                params.add_grad(&name, &v, 2.0 * cfg.ea_l2);
            }
        }
    }

    Ok(loss)
}

/// Read-only scorer: one encoder pass shared across any number of prefix
/// scorings. Safe to share across threads.
pub struct Scorer<'a> {
    wiring: &'a Wiring,
    params: &'a ParamStore,
    enc: EncoderOutput,
}

impl<'a> Scorer<'a> {
    pub fn new(wiring: &'a Wiring, params: &'a ParamStore) -> Result<Self> {
        let (enc, _) =
            encode(&wiring.graph, params, &wiring.cfg, &wiring.enc_seqs, EncodeMode::Eval)?;
        Ok(Scorer { wiring, params, enc })
    }

    /// Probability scores over all items for one prefix.
    pub fn score(&self, prefix: &SequenceRecord) -> Result<Vec<f64>> {
        let (h, _) = decode(
            &self.enc,
            std::slice::from_ref(prefix),
            self.params,
            &self.wiring.cfg,
            DecodeMode::Eval,
        )?;
        let probs =
            predict(&h, self.params.value(names::W6), self.params.value(names::B6).row(0));
        Ok(probs.row(0).to_vec())
    }
}
