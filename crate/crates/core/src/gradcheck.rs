//! Finite-difference validation of analytic gradients.
//!
//! The loss closure must be a pure function of the parameter store: any
//! dropout or masking it performs has to be frozen by fixed seeds. The check
//! verifies that first, then compares central differences against the
//! analytic gradients already present in the store.

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
/// Minimum number of coordinates sampled per tensor (all of them when the
/// tensor is smaller).
pub const GRAD_CHECK_COORDS: usize = 32;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (parameter name, max relative error over sampled coordinates)
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compare the analytic gradients stored in `store` against central
/// differences of `loss_fn`, sampling at least [`GRAD_CHECK_COORDS`]
/// coordinates per tensor. Relative error per coordinate is
/// |a - n| / max(1, |a|, |n|).
pub fn finite_diff_grad_check(
    loss_fn: &dyn Fn(&ParamStore) -> f64,
    store: &mut ParamStore,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    // Determinism precondition: two evaluations at the same point must agree.
    let l0 = loss_fn(store);
    let l1 = loss_fn(store);
    if l0 != l1 {
        return Err(Error::GradCheck(format!(
            "loss is not deterministic ({l0} vs {l1}); freeze dropout/mask seeds"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = store.names();
    let mut per_param = Vec::with_capacity(names.len());
    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();

    for name in names {
        let numel = store.param(&name).value.numel();
        let coords: Vec<usize> = if numel <= GRAD_CHECK_COORDS {
            (0..numel).collect()
        } else {
            let mut all: Vec<usize> = (0..numel).collect();
            all.shuffle(&mut rng);
            all.truncate(GRAD_CHECK_COORDS);
            all.sort_unstable();
            all
        };

        let mut param_err = 0.0f64;
        for &i in &coords {
            let original = store.param(&name).value.data[i];
            store.param_mut(&name).value.data[i] = original + h;
            let plus = loss_fn(store);
            store.param_mut(&name).value.data[i] = original - h;
            let minus = loss_fn(store);
            store.param_mut(&name).value.data[i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = store.param(&name).grad.data[i];
            let rel = (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs());
            if rel > param_err {
                param_err = rel;
            }
        }
        if param_err > max_rel_err {
            max_rel_err = param_err;
            worst_param = name.clone();
        }
        per_param.push((name, param_err));
    }

    Ok(GradCheckReport { per_param, max_rel_err, worst_param, tolerance })
}
