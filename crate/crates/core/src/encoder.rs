//! The external attentive graph convolutional encoder.
//!
//! Each layer propagates the stacked [items; users] embedding through the
//! normalized adjacency. In parallel, the configured attention mechanism
//! refines every training sequence's item rows against the shared memory
//! units, the refined rows are scatter-summed over items, and the result is
//! fused into that layer's item half through a residual plus layer norm. The
//! propagation chain itself always continues from the pre-fusion embeddings;
//! fused outputs only enter the final layer combination, which averages all
//! layers uniformly.

use crate::attention::{
    linear_attention_backward, linear_attention_cached, mhea_backward, mhea_cached,
    self_attention_backward, self_attention_cached, LaCache, MheaCache, SaCache,
};
use crate::config::{EncoderKind, HyperConfig};
use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::graph::{SequentialGraph, SparseMatrix};
use crate::params::{names, ParamStore};
use crate::random::dropout_mask;
use crate::seeds;
use crate::tensor::{
    layer_norm, layer_norm_backward, layer_norm_cached, LayerNormCache, Tensor2, LAYER_NORM_EPS,
};

/// Item and user embeddings at one propagation layer.
#[derive(Debug, Clone)]
pub struct NodeEmbeddings {
    pub e_items: Tensor2,
    pub e_users: Tensor2,
    pub layer_index: usize,
}

/// Final embeddings plus the per-layer trace they were combined from.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub e_items_final: Tensor2,
    pub e_users_final: Tensor2,
    pub per_layer: Vec<NodeEmbeddings>,
}

/// Forward-mode switch. Training applies dropout after each propagation,
/// with masks derived purely from (seed, epoch, layer) so a frozen context
/// re-evaluates identically.
#[derive(Debug, Clone, Copy)]
pub enum EncodeMode {
    Train { epoch: u64 },
    Eval,
}

impl EncodeMode {
    fn is_training(self) -> bool {
        matches!(self, EncodeMode::Train { .. })
    }
}

/// One propagation step: multiply the stacked [items; users] embedding by the
/// normalized adjacency.
pub fn propagate_layer(graph: &SequentialGraph, prev: &NodeEmbeddings) -> Result<NodeEmbeddings> {
    if prev.e_items.rows != graph.m_items || prev.e_users.rows != graph.n_users {
        return Err(Error::Dimension(format!(
            "propagate: embeddings {}+{} rows vs graph {}+{}",
            prev.e_items.rows, prev.e_users.rows, graph.m_items, graph.n_users
        )));
    }
    let stacked = Tensor2::vstack(&prev.e_items, &prev.e_users);
    let prop = graph.normalized.spmm(&stacked)?;
    let (e_items, e_users) = prop.split_rows(graph.m_items);
    Ok(NodeEmbeddings { e_items, e_users, layer_index: prev.layer_index + 1 })
}

/// Residual fusion of the external signal into one layer's item embeddings:
/// layer_norm(item_layer + delta * z_hat). User embeddings pass through
/// unfused elsewhere.
pub fn fuse_external(
    item_layer: &Tensor2,
    z_hat: &Tensor2,
    delta: f64,
    gain: &[f64],
    bias: &[f64],
) -> Tensor2 {
    let mut x = item_layer.clone();
    x.add_scaled(z_hat, delta);
    layer_norm(&x, gain, bias, LAYER_NORM_EPS)
}

/// Uniform layer combination: the finals are the arithmetic means of the
/// per-layer embeddings.
pub fn combine_layers(per_layer: &[NodeEmbeddings]) -> EncoderOutput {
    assert!(!per_layer.is_empty(), "combine_layers needs at least one layer");
    let coef = 1.0 / per_layer.len() as f64;
    let mut e_items_final = Tensor2::zeros(per_layer[0].e_items.rows, per_layer[0].e_items.cols);
    let mut e_users_final = Tensor2::zeros(per_layer[0].e_users.rows, per_layer[0].e_users.cols);
    for layer in per_layer {
        e_items_final.add_scaled(&layer.e_items, coef);
        e_users_final.add_scaled(&layer.e_users, coef);
    }
    EncoderOutput { e_items_final, e_users_final, per_layer: per_layer.to_vec() }
}

/// Per-sequence attention cache for one layer.
pub(crate) enum SeqRefineCache {
    External(MheaCache),
    SelfAttn(SaCache),
    LinearAttn(LaCache),
}

/// Cache of one layer's refinement (attention + fusion).
pub(crate) struct LayerRefineCache {
    pub per_seq: Vec<SeqRefineCache>,
    /// Scatter-summed refined item rows; zero outside the sequences' support.
    pub z_hat_s: Tensor2,
    pub ln: LayerNormCache,
}

/// Everything the backward pass needs from one encode call.
pub struct EncoderCache {
    pub(crate) training: bool,
    /// Dropout masks for layers 1..=eta (empty at eval).
    pub(crate) dropout_masks: Vec<Tensor2>,
    /// Refinement caches for layers 1..=eta (empty when the external path is
    /// disabled).
    pub(crate) layers: Vec<LayerRefineCache>,
}

impl EncoderCache {
    /// Scatter-summed refined item rows of layer `l` (1-based); test hook.
    pub fn z_hat_at_layer(&self, l: usize) -> Option<&Tensor2> {
        self.layers.get(l - 1).map(|c| &c.z_hat_s)
    }
}

fn memory_pairs(params: &ParamStore, beta: usize) -> Vec<(Tensor2, Tensor2)> {
    (0..beta)
        .map(|h| (params.value(&names::mem_k(h)).clone(), params.value(&names::mem_v(h)).clone()))
        .collect()
}

/// Full encoder forward pass over the training sequences.
pub fn encode(
    graph: &SequentialGraph,
    params: &ParamStore,
    cfg: &HyperConfig,
    sequences: &[SequenceRecord],
    mode: EncodeMode,
) -> Result<(EncoderOutput, EncoderCache)> {
    let (m, n) = (graph.m_items, graph.n_users);
    let kind = cfg.variant.encoder_kind();
    let e_items = params.value(names::E_ITEMS);
    let e_users = params.value(names::E_USERS);
    if e_items.rows != m || e_users.rows != n || e_items.cols != cfg.d {
        return Err(Error::Dimension("embedding shapes do not match graph/config".into()));
    }

    let mems;
    let w1;
    if kind == EncoderKind::External {
        mems = memory_pairs(params, cfg.beta);
        w1 = params.value(names::W1).clone();
    } else {
        mems = Vec::new();
        w1 = Tensor2::zeros(0, 0);
    }
    let (gain, bias) = if kind == EncoderKind::Disabled {
        (Tensor2::zeros(1, 0), Tensor2::zeros(1, 0))
    } else {
        (params.value(names::LN_GAIN).clone(), params.value(names::LN_BIAS).clone())
    };

    let mut stacked = Tensor2::vstack(e_items, e_users);
    let mut per_layer = vec![NodeEmbeddings {
        e_items: e_items.clone(),
        e_users: e_users.clone(),
        layer_index: 0,
    }];
    let mut dropout_masks = Vec::new();
    let mut layers = Vec::new();

    for l in 1..=cfg.eta {
        let mut prop = graph.normalized.spmm(&stacked)?;
        if let EncodeMode::Train { epoch } = mode {
            let mask = dropout_mask(
                prop.rows,
                prop.cols,
                cfg.dropout,
                seeds::mix2(cfg.seed_dropout, epoch, l as u64),
                true,
            );
            prop.hadamard_in_place(&mask);
            dropout_masks.push(mask);
        }
        let (hat_items, hat_users) = prop.split_rows(m);

        if kind == EncoderKind::Disabled {
            per_layer.push(NodeEmbeddings { e_items: hat_items, e_users: hat_users, layer_index: l });
        } else {
            let mut z_hat_s = Tensor2::zeros(m, cfg.d);
            let mut per_seq = Vec::with_capacity(sequences.len());
            for seq in sequences {
                let slice = hat_items.gather_rows(&seq.items);
                match kind {
                    EncoderKind::External => {
                        let pairs: Vec<(&Tensor2, &Tensor2)> =
                            mems.iter().map(|(k, v)| (k, v)).collect();
                        let (z, cache) = mhea_cached(&slice, &pairs, &w1);
                        z_hat_s.scatter_add_rows(&seq.items, &z);
                        per_seq.push(SeqRefineCache::External(cache));
                    }
                    EncoderKind::SelfAttn => {
                        let (z, cache) = self_attention_cached(&slice);
                        z_hat_s.scatter_add_rows(&seq.items, &z);
                        per_seq.push(SeqRefineCache::SelfAttn(cache));
                    }
                    EncoderKind::LinearAttn => {
                        let (z, cache) = linear_attention_cached(&slice);
                        z_hat_s.scatter_add_rows(&seq.items, &z);
                        per_seq.push(SeqRefineCache::LinearAttn(cache));
                    }
                    EncoderKind::Disabled => unreachable!(),
                }
            }
            let mut x = hat_items.clone();
            x.add_scaled(&z_hat_s, cfg.delta);
            let (fused, ln) = layer_norm_cached(&x, gain.row(0), bias.row(0), LAYER_NORM_EPS);
            per_layer.push(NodeEmbeddings { e_items: fused, e_users: hat_users, layer_index: l });
            layers.push(LayerRefineCache { per_seq, z_hat_s, ln });
        }

        stacked = prop;
    }

    let out = combine_layers(&per_layer);
    Ok((out, EncoderCache { training: mode.is_training(), dropout_masks, layers }))
}

/// Backward pass of [`encode`]: accumulates parameter gradients from the
/// gradients of the final item/user embeddings.
///
/// `adj_t` must be the transpose of `graph.normalized`.
pub fn encode_backward(
    graph: &SequentialGraph,
    adj_t: &SparseMatrix,
    params: &mut ParamStore,
    cfg: &HyperConfig,
    sequences: &[SequenceRecord],
    cache: &EncoderCache,
    d_items_final: &Tensor2,
    d_users_final: &Tensor2,
) -> Result<()> {
    let (m, n) = (graph.m_items, graph.n_users);
    let kind = cfg.variant.encoder_kind();
    let coef = 1.0 / (cfg.eta + 1) as f64;

    let mems;
    let w1;
    if kind == EncoderKind::External {
        mems = memory_pairs(params, cfg.beta);
        w1 = params.value(names::W1).clone();
    } else {
        mems = Vec::new();
        w1 = Tensor2::zeros(0, 0);
    }
    let gain = if kind == EncoderKind::Disabled {
        Tensor2::zeros(1, 0)
    } else {
        params.value(names::LN_GAIN).clone()
    };

    // Gradient w.r.t. the stacked embedding of the current layer, flowing
    // down the propagation chain.
    let mut d_stacked = Tensor2::zeros(m + n, cfg.d);

    for l in (1..=cfg.eta).rev() {
        // This layer's contribution from the layer combination.
        let mut d_hat_items = Tensor2::zeros(m, cfg.d);
        if kind == EncoderKind::Disabled {
            d_hat_items.add_scaled(d_items_final, coef);
        } else {
            let layer_cache = &cache.layers[l - 1];
            let mut dy = Tensor2::zeros(m, cfg.d);
            dy.add_scaled(d_items_final, coef);
            let (dx, dgain, dbias) = layer_norm_backward(&layer_cache.ln, gain.row(0), &dy);
            for (g, v) in params.grad_mut(names::LN_GAIN).row_mut(0).iter_mut().zip(&dgain) {
                *g += v;
            }
            for (g, v) in params.grad_mut(names::LN_BIAS).row_mut(0).iter_mut().zip(&dbias) {
                *g += v;
            }
            // Residual path.
            d_hat_items.add_scaled(&dx, 1.0);
            // External path: through the scatter-sum and each sequence's
            // attention back into the same item rows.
            let mut d_z_hat = dx;
            d_z_hat.scale_in_place(cfg.delta);
            for (seq, seq_cache) in sequences.iter().zip(&layer_cache.per_seq) {
                let dz_slice = d_z_hat.gather_rows(&seq.items);
                let de_slice = match seq_cache {
                    SeqRefineCache::External(c) => {
                        let pairs: Vec<(&Tensor2, &Tensor2)> =
                            mems.iter().map(|(k, v)| (k, v)).collect();
                        let (de, dmems, dw1) = mhea_backward(c, &pairs, &w1, &dz_slice);
                        for (h, (dm_k, dm_v)) in dmems.iter().enumerate() {
                            params.add_grad(&names::mem_k(h), dm_k, 1.0);
                            params.add_grad(&names::mem_v(h), dm_v, 1.0);
                        }
                        params.add_grad(names::W1, &dw1, 1.0);
                        de
                    }
                    SeqRefineCache::SelfAttn(c) => self_attention_backward(c, &dz_slice),
                    SeqRefineCache::LinearAttn(c) => linear_attention_backward(c, &dz_slice),
                };
                d_hat_items.scatter_add_rows(&seq.items, &de_slice);
            }
        }

        // Assemble the stacked gradient at layer l: the item part from this
        // layer's outputs plus whatever already flowed down, users likewise.
        for r in 0..m {
            let src = d_hat_items.row(r);
            let dst = d_stacked.row_mut(r);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for r in 0..n {
            let dst = d_stacked.row_mut(m + r);
            for (dv, s) in dst.iter_mut().zip(d_users_final.row(r)) {
                *dv += coef * s;
            }
        }

        // Through dropout, then through the propagation.
        if cache.training {
            d_stacked.hadamard_in_place(&cache.dropout_masks[l - 1]);
        }
        d_stacked = adj_t.spmm(&d_stacked)?;
    }

    // Layer 0 enters the combination directly.
    let (mut d_items0, mut d_users0) = d_stacked.split_rows(m);
    d_items0.add_scaled(d_items_final, coef);
    d_users0.add_scaled(d_users_final, coef);
    params.add_grad(names::E_ITEMS, &d_items0, 1.0);
    params.add_grad(names::E_USERS, &d_users0, 1.0);
    Ok(())
}
