//! Evaluation statistics.

mod bootstrap;
mod cindex;
mod classification;
mod correlation;
mod ranking;
mod survival;
mod wilcoxon;

pub use bootstrap::{bootstrap_ci, MetricReport};
pub use cindex::{concordance_index, concordance_index_brute_force};
pub use classification::{classification_metrics, ClassificationMetrics};
pub use correlation::pcc;
pub use ranking::{
    load_benchmark_dir, load_benchmark_tables, rank_aggregate, BenchmarkRow, BenchmarkTable, RankPolicy, RankSummary,
};
pub use survival::{kaplan_meier, km_logrank, logrank_test, median_split, KmCurve, KmLogRank};
pub use wilcoxon::{wilcoxon_signed_rank, Alternative, WilcoxonResult};

/// Mean ranks with 1 for the largest value; ties share the mean rank.
pub fn rank_descending(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}
