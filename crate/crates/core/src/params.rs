//! Named parameter storage and the Adam optimizer.

use std::collections::BTreeMap;

/// Canonical tensor names used across the model.
pub mod names {
    /// Base item embeddings, m x d.
    pub const E_ITEMS: &str = "e_items";
    /// Base user embeddings, n x d.
    pub const E_USERS: &str = "e_users";
    /// Head-mixing matrix of the external encoder, d x d.
    pub const W1: &str = "w1";
    /// Fusion layer-norm gain/bias, 1 x d each, shared across layers.
    pub const LN_GAIN: &str = "ln_gain";
    pub const LN_BIAS: &str = "ln_bias";
    /// Prompt table, max_len x d1 (row = absolute position - 1, or offset).
    pub const PROMPT: &str = "prompt";
    /// Prompt projection, d1 x d plus 1 x d bias.
    pub const W_C: &str = "w_c";
    pub const B_C: &str = "b_c";
    /// Template feedforward, 2d x d plus 1 x d bias.
    pub const W2: &str = "w2";
    pub const B2: &str = "b2";
    /// Shared mask token, 1 x d.
    pub const MASK_TOKEN: &str = "mask_token";
    /// Prediction head, 2d x m plus 1 x m bias.
    pub const W6: &str = "w6";
    pub const B6: &str = "b6";

    /// Key memory unit of head `h`, alpha x (d / heads).
    pub fn mem_k(h: usize) -> String {
        format!("mem_k.{h}")
    }

    /// Value memory unit of head `h`.
    pub fn mem_v(h: usize) -> String {
        format!("mem_v.{h}")
    }
}

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// One learnable tensor with its gradient and Adam moment estimates.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
    pub adam_m: Tensor2,
    pub adam_v: Tensor2,
}

impl Param {
    fn new(value: Tensor2) -> Self {
        let (r, c) = (value.rows, value.cols);
        Param {
            value,
            grad: Tensor2::zeros(r, c),
            adam_m: Tensor2::zeros(r, c),
            adam_v: Tensor2::zeros(r, c),
        }
    }
}

/// Map from tensor name to parameter state. Iteration order is the sorted
/// name order, which keeps every enumeration (updates, checkpoints, gradient
/// checks) deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor2) {
        assert!(!self.map.contains_key(name), "duplicate parameter {name}");
        self.map.insert(name.to_string(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters (values only, not optimizer state).
    pub fn total_scalars(&self) -> u64 {
        self.map.values().map(|p| p.value.numel() as u64).sum()
    }

    pub fn param(&self, name: &str) -> &Param {
        self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        self.map.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn value(&self, name: &str) -> &Tensor2 {
        &self.param(name).value
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor2 {
        &mut self.param_mut(name).grad
    }

    /// Accumulate `s * g` into the named gradient.
    pub fn add_grad(&mut self, name: &str, g: &Tensor2, s: f64) {
        self.grad_mut(name).add_scaled(g, s);
    }

    pub fn zero_grads(&mut self) {
        for p in self.map.values_mut() {
            p.grad.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }
}

/// One bias-corrected Adam update over every parameter in the store.
///
/// `t` is the 1-based step index. Gradients are zeroed after the update.
/// A non-finite gradient aborts with the offending parameter's name.
pub fn adam_step(
    store: &mut ParamStore,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) -> Result<()> {
    assert!(t >= 1, "adam step index is 1-based");
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for (name, p) in store.iter_mut() {
        if !p.grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        for i in 0..p.grad.data.len() {
            let g = p.grad.data[i];
            let m = beta1 * p.adam_m.data[i] + (1.0 - beta1) * g;
            let v = beta2 * p.adam_v.data[i] + (1.0 - beta2) * g * g;
            p.adam_m.data[i] = m;
            p.adam_v.data[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            p.grad.data[i] = 0.0;
        }
    }
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor2::from_vec(1, 1, vec![value]));
        s
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut s = scalar_store(0.5);
        adam_step(&mut s, 0.1, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, 1).unwrap();
        assert_eq!(s.value("theta").data[0], 0.5);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_about_lr() {
        // One-step hand evaluation: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1,
        // so the update is -lr / (1 + eps).
        let mut s = scalar_store(0.0);
        s.grad_mut("theta").data[0] = 1.0;
        let lr = 0.05;
        adam_step(&mut s, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, 1).unwrap();
        let expected = -lr / (1.0 + ADAM_EPS);
        assert!((s.value("theta").data[0] - expected).abs() < 1e-12);
        // Gradient zeroed afterwards.
        assert_eq!(s.param("theta").grad.data[0], 0.0);
    }

    #[test]
    fn constant_gradient_drifts_monotonically() {
        // Scalar simulation: repeated unit gradients must keep the parameter
        // moving in the negative direction every step.
        let mut s = scalar_store(1.0);
        let mut prev = 1.0;
        for t in 1..=100 {
            s.grad_mut("theta").data[0] = 1.0;
            adam_step(&mut s, 0.01, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, t).unwrap();
            let cur = s.value("theta").data[0];
            assert!(cur < prev, "step {t}: {cur} !< {prev}");
            prev = cur;
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = scalar_store(0.0);
        s.grad_mut("theta").data[0] = f64::NAN;
        let err = adam_step(&mut s, 0.1, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, 1).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }
}
