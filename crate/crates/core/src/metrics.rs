//! Ranking metrics (Recall@N, MRR@N) and the hold-out evaluation loop.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::SequenceRecord;
use crate::error::{Error, Result};

/// 1-based rank of the target under a deterministic tie rule: items with
/// strictly higher scores rank first, then equal-scored items with smaller
/// index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let ts = scores[target];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s > ts || (s == ts && i < target) {
            rank += 1;
        }
    }
    rank
}

/// 1 if the target ranks within the top n, else 0.
pub fn recall_at_n(scores: &[f64], target: usize, n: usize) -> f64 {
    assert!(n >= 1);
    if rank_of(scores, target) <= n {
        1.0
    } else {
        0.0
    }
}

/// Reciprocal rank truncated at depth n.
pub fn mrr_at_n(scores: &[f64], target: usize, n: usize) -> f64 {
    assert!(n >= 1);
    let rank = rank_of(scores, target);
    if rank <= n {
        1.0 / rank as f64
    } else {
        0.0
    }
}

/// Averaged metrics over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr_at: BTreeMap<usize, f64>,
    pub n_evaluated: usize,
}

pub const DEFAULT_NS: [usize; 2] = [5, 10];

/// Evaluate a scorer over the hold-out protocol: for each test sequence the
/// prefix (all but the last item) is scored against every item and the final
/// item is the target. Work is split over `threads` chunks whose results are
/// merged in index order, so the outcome does not depend on the thread
/// count.
pub fn evaluate<F>(
    score_fn: &F,
    test: &[SequenceRecord],
    ns: &[usize],
    threads: usize,
) -> Result<MetricsReport>
where
    F: Fn(&SequenceRecord) -> Result<Vec<f64>> + Sync,
{
    if test.is_empty() {
        return Err(Error::EmptyDataset("no test sequences".into()));
    }
    let threads = threads.max(1).min(test.len());

    // Per-sequence (hit, reciprocal rank) per cutoff, in test order.
    let run_chunk = |chunk: &[SequenceRecord]| -> Result<Vec<Vec<(f64, f64)>>> {
        let mut out = Vec::with_capacity(chunk.len());
        for seq in chunk {
            let t = seq.len();
            let prefix = seq.prefix(t - 1);
            let target = seq.items[t - 1];
            let scores = score_fn(&prefix)?;
            out.push(
                ns.iter()
                    .map(|&n| (recall_at_n(&scores, target, n), mrr_at_n(&scores, target, n)))
                    .collect(),
            );
        }
        Ok(out)
    };

    let chunk_size = test.len().div_ceil(threads);
    let per_seq: Vec<Vec<(f64, f64)>> = if threads == 1 {
        run_chunk(test)?
    } else {
        let chunks: Vec<&[SequenceRecord]> = test.chunks(chunk_size).collect();
        let mut results: Vec<Result<Vec<Vec<(f64, f64)>>>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                chunks.iter().map(|chunk| scope.spawn(move || run_chunk(chunk))).collect();
            for h in handles {
                results.push(h.join().expect("evaluation worker panicked"));
            }
        });
        let mut merged = Vec::with_capacity(test.len());
        for r in results {
            merged.extend(r?);
        }
        merged
    };

    let count = per_seq.len() as f64;
    let mut recall_at = BTreeMap::new();
    let mut mrr_at = BTreeMap::new();
    for (k, &n) in ns.iter().enumerate() {
        let recall: f64 = per_seq.iter().map(|row| row[k].0).sum::<f64>() / count;
        let mrr: f64 = per_seq.iter().map(|row| row[k].1).sum::<f64>() / count;
        recall_at.insert(n, recall);
        mrr_at.insert(n, mrr);
    }
    Ok(MetricsReport { recall_at, mrr_at, n_evaluated: per_seq.len() })
}

/// One JSON object per (metric, N) pair.
pub fn write_report_jsonl(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (n, v) in &report.recall_at {
        let obj = serde_json::json!({
            "metric": "recall", "n": n, "value": v, "n_evaluated": report.n_evaluated,
        });
        out.push_str(&obj.to_string());
        out.push('\n');
    }
    for (n, v) in &report.mrr_at {
        let obj = serde_json::json!({
            "metric": "mrr", "n": n, "value": v, "n_evaluated": report.n_evaluated,
        });
        out.push_str(&obj.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Flat CSV mirror of the JSON-lines report.
pub fn write_report_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out = String::from("metric,n,value,n_evaluated\n");
    for (n, v) in &report.recall_at {
        out.push_str(&format!("recall,{n},{v},{}\n", report.n_evaluated));
    }
    for (n, v) in &report.mrr_at {
        out.push_str(&format!("mrr,{n},{v},{}\n", report.n_evaluated));
    }
    std::fs::write(path, out)?;
    Ok(())
}
