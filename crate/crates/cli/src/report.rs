use std::path::Path;

use anyhow::Result;
use shazam_core::metrics::RankPolicy;
use shazam_core::report::build_report;

pub fn run(input: &Path, out: &Path, policy: RankPolicy) -> Result<()> {
    if !input.is_dir() {
        anyhow::bail!("{} is not a directory", input.display());
    }
    let r = build_report(input, out, policy)?;
    let mut order: Vec<usize> = (0..r.summary.models.len()).collect();
    order.sort_by(|&a, &b| r.summary.mean_rank[a].total_cmp(&r.summary.mean_rank[b]));
    println!("{} tasks", r.summary.tasks.len());
    for i in order {
        println!("{:<16} mean rank {:.3}  first on {}", r.summary.models[i], r.summary.mean_rank[i], r.summary.firsts[i]);
    }
    for w in &r.wilcoxon {
        log::info!("{} {} {} vs {}: p = {:.4}", w.group, w.comparison, w.reference, w.other, w.p_value);
    }
    println!("wrote {} files to {}", r.files.len(), out.display());
    Ok(())
}
