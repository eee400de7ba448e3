use std::fs;
use std::path::Path;

use anyhow::Result;
use shazam_core::ablation::{run_ablation, AblationKind, AblationPlan};
use shazam_core::FeatureSet;

use crate::settings::Settings;

fn file_name(config: &str) -> String {
    let safe: String = config.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect();
    format!("{safe}.csv")
}

pub fn run(fs: &FeatureSet, kind: AblationKind, s: &Settings, out: &Path, seed: u64, jobs: usize) -> Result<()> {
    let plan = AblationPlan::new(kind, fs, &s.arch)?;
    log::info!("{} configurations for {}", plan.schedule.len(), kind.name());
    let result = run_ablation(fs, &plan, &s.arch, &s.train, s.folds, seed, jobs)?;
    fs::create_dir_all(out)?;
    for row in &result.rows {
        fs::write(out.join(file_name(&row.config)), row.folds_csv())?;
        println!("{:<32} {} = {:.4} ± {:.4}", row.config, row.metric, row.mean, row.sd);
    }
    fs::write(out.join("summary.csv"), result.summary_csv())?;
    Ok(())
}
