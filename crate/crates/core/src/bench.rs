//! Parameter accounting and the wall-clock scaling benchmark.

use std::path::Path;
use std::time::Instant;

use crate::attention::{flop_count, FlopCount, Mechanism};
use crate::config::{DecoderKind, EncoderKind, HyperConfig};
use crate::data::SequenceSet;
use crate::error::{Error, Result};
use crate::model::{make_training_examples, Model};
use crate::trainer::train;

/// Closed-form scalar count of a model, kept independent of the runtime
/// tensor enumeration so the two can check each other.
pub fn param_count(cfg: &HyperConfig, m: usize, n: usize, max_len: usize) -> u64 {
    let d = cfg.d as u64;
    let d1 = cfg.d1 as u64;
    let (m, n, max_len) = (m as u64, n as u64, max_len as u64);

    // Base embeddings and the fusion norm (the norm pair is allocated for
    // every variant, used or not).
    let mut count = (m + n) * d + 2 * d;
    if cfg.variant.encoder_kind() == EncoderKind::External {
        let heads = cfg.beta as u64;
        let alpha = cfg.alpha as u64;
        count += 2 * heads * alpha * (d / heads); // memory units
        count += d * d; // head mixer
    }
    match cfg.variant.decoder_kind() {
        DecoderKind::PromptAbsolute | DecoderKind::PromptRelative => {
            count += max_len * d1 + d1 * d + d; // prompt table + projection
            count += 2 * d * d + d; // template feedforward
            count += d; // mask token
        }
        DecoderKind::AdditiveMean => {
            count += max_len * d1 + d1 * d + d;
        }
        DecoderKind::MaxPool => {}
    }
    count += 2 * d * m + m; // prediction head
    count
}

/// One benchmark measurement.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub data_ratio: f64,
    /// Median wall time of the repeated runs, seconds.
    pub wall_seconds: f64,
    pub param_count: u64,
    /// Counts for all three mechanisms at the subset's mean sequence length.
    pub flops: Vec<FlopCount>,
}

/// Train a fixed small epoch budget on prefix fractions of the training
/// split and record wall time (median of `repeats`), the closed-form
/// parameter count, and attention operation counts at the subset's mean
/// sequence length. Single-threaded by construction.
pub fn benchmark(
    cfg: &HyperConfig,
    set: &SequenceSet,
    ratios: &[f64],
    bench_epochs: usize,
    repeats: usize,
) -> Result<Vec<BenchRecord>> {
    if set.train_ids.is_empty() {
        return Err(Error::EmptyDataset("benchmark needs a training split".into()));
    }
    if ratios.is_empty() {
        return Err(Error::Config("benchmark needs at least one ratio".into()));
    }
    let repeats = repeats.max(1);
    let full_count = param_count(cfg, set.m_items, set.n_users, set.max_len().max(1));

    let mut records = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!("ratio {ratio} must be in (0, 1]")));
        }
        let n_sub =
            ((ratio * set.train_ids.len() as f64).ceil() as usize).clamp(1, set.train_ids.len());
        let mut subset = set.clone();
        subset.train_ids = set.train_ids[..n_sub].to_vec();

        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let started = Instant::now();
            let mut model = Model::new(cfg.clone(), &subset)?;
            let examples =
                make_training_examples(&model.wiring.enc_seqs, cfg.loss_mode);
            train(&mut model, &examples, bench_epochs)?;
            times.push(started.elapsed().as_secs_f64());
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let wall_seconds = times[times.len() / 2];

        let total_items: usize = subset.train().iter().map(|s| s.len()).sum();
        let mean_len = ((total_items as f64 / n_sub as f64).round() as usize).max(1);
        let flops = vec![
            flop_count(Mechanism::Sa, mean_len, cfg.d, cfg.alpha),
            flop_count(Mechanism::La, mean_len, cfg.d, cfg.alpha),
            flop_count(Mechanism::Ea, mean_len, cfg.d, cfg.alpha),
        ];
        records.push(BenchRecord { data_ratio: ratio, wall_seconds, param_count: full_count, flops });
    }
    Ok(records)
}

/// One JSON object per record.
pub fn write_bench_jsonl(records: &[BenchRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let flops: Vec<serde_json::Value> = r
            .flops
            .iter()
            .map(|f| {
                serde_json::json!({"mechanism": f.mechanism.label(), "multiply_adds": f.multiply_adds})
            })
            .collect();
        let obj = serde_json::json!({
            "data_ratio": r.data_ratio,
            "wall_seconds": r.wall_seconds,
            "param_count": r.param_count,
            "flops": flops,
        });
        out.push_str(&obj.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Flat CSV mirror.
pub fn write_bench_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    let mut out = String::from("data_ratio,wall_seconds,param_count,flops_sa,flops_la,flops_ea\n");
    for r in records {
        let find = |mech: Mechanism| {
            r.flops
                .iter()
                .find(|f| f.mechanism == mech)
                .map(|f| f.multiply_adds)
                .unwrap_or(0)
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.data_ratio,
            r.wall_seconds,
            r.param_count,
            find(Mechanism::Sa),
            find(Mechanism::La),
            find(Mechanism::Ea),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Variant, ALL_VARIANTS};
    use crate::data::{build_sequences, split_train_test, synth_dataset};
    use crate::model::init_params;

    /// The closed form and the runtime tensor enumeration must agree for
    /// every variant over a grid of configurations.
    #[test]
    fn closed_form_matches_runtime_enumeration() {
        let mut checked = 0;
        for variant in ALL_VARIANTS {
            for (d, alpha, beta) in [(8, 4, 1), (8, 8, 2), (16, 16, 2), (16, 4, 4), (32, 8, 8)] {
                let mut cfg = HyperConfig::default();
                cfg.d = d;
                cfg.d1 = d;
                cfg.alpha = alpha;
                cfg.beta = beta;
                cfg.variant = variant;
                cfg.validate().unwrap();
                let (m, n, max_len) = (40 + d, 11, 17);
                let closed = param_count(&cfg, m, n, max_len);
                let enumerated = init_params(&cfg, m, n, max_len).total_scalars();
                assert_eq!(closed, enumerated, "{variant:?} d={d} alpha={alpha} beta={beta}");
                checked += 1;
            }
        }
        assert_eq!(checked, 40);
    }

    /// Worked example: 7476 scalars for the full model at d=16, alpha=16,
    /// beta=2, m=100, n=10, max_len=50.
    #[test]
    fn closed_form_hand_example() {
        let mut cfg = HyperConfig::default();
        cfg.d = 16;
        cfg.d1 = 16;
        cfg.alpha = 16;
        cfg.beta = 2;
        assert_eq!(param_count(&cfg, 100, 10, 50), 7476);
        cfg.variant = Variant::GpsOea;
        assert_eq!(param_count(&cfg, 100, 10, 50), 7476 - 512 - 256);
    }

    /// Doubling d only quadruples the d^2 terms while embedding terms double.
    #[test]
    fn doubling_d_changes_the_polynomial_terms() {
        let mut cfg = HyperConfig::default();
        cfg.d = 16;
        cfg.d1 = 16;
        cfg.alpha = 16;
        cfg.beta = 2;
        let (m, n, max_len) = (100u64, 10u64, 50u64);
        let base = param_count(&cfg, m as usize, n as usize, max_len as usize);
        let mut cfg2 = cfg.clone();
        cfg2.d = 32;
        cfg2.d1 = 32;
        let doubled = param_count(&cfg2, m as usize, n as usize, max_len as usize);
        // Term-by-term: embeddings, memories, biases double; the mixer,
        // projection, and feedforward quadruple.
        let d = 16u64;
        let expected_delta = (m + n) * d // embeddings
            + 2 * d // norm pair
            + 2 * 16 * d // memories (alpha * d doubles)
            + 3 * d * d // mixer d^2 -> 4d^2
            + max_len * d // prompt table
            + 3 * d * d + d // projection d1*d -> 4*d1*d, bias doubles
            + 6 * d * d + d // feedforward 2d*d -> 8d^2, bias doubles
            + d // mask token
            + 2 * d * m + 0; // head weight doubles, head bias fixed
        assert_eq!(doubled - base, expected_delta);
    }

    #[test]
    fn benchmark_records_are_consistent() {
        let log = synth_dataset(20, 30, 6, 0.2, 8).unwrap();
        let mut set = build_sequences(&log, 3, 1, crate::data::DEFAULT_WINDOW_SECONDS).unwrap();
        split_train_test(&mut set, 0.8, 8).unwrap();
        let mut cfg = HyperConfig::default();
        cfg.d = 8;
        cfg.d1 = 8;
        cfg.alpha = 4;
        cfg.beta = 2;
        cfg.batch_size = 8;
        let records = benchmark(&cfg, &set, &[0.5, 1.0], 1, 1).unwrap();
        assert_eq!(records.len(), 2);
        // Parameters do not depend on the data ratio.
        assert_eq!(records[0].param_count, records[1].param_count);
        assert!(records.iter().all(|r| r.wall_seconds >= 0.0));
        for r in &records {
            assert_eq!(r.flops.len(), 3);
        }
        let dir = tempfile::tempdir().unwrap();
        write_bench_jsonl(&records, &dir.path().join("bench.jsonl")).unwrap();
        write_bench_csv(&records, &dir.path().join("bench.csv")).unwrap();
    }
}
