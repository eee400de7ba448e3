use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use shazam_core::feature_store::{split_units, TaskKind};
use shazam_core::tasks::{
    build_units, fusion_model_config, predict, probe_model_config, rebin, save_checkpoint, train, ModelConfig,
    ShazamModel, Unit,
};
use shazam_core::FeatureSet;

use crate::settings::Settings;

pub const SPLIT_FILE: &str = "split.csv";

pub fn model_config(fs: &FeatureSet, s: &Settings, seed: u64) -> Result<ModelConfig> {
    Ok(match &s.probe {
        Some(name) => {
            let t = fs.teacher_index(name).with_context(|| format!("no teacher named '{name}'"))?;
            probe_model_config(fs, t, s.probe_scale, &s.arch, seed)?
        }
        None => fusion_model_config(fs, &s.arch, seed)?,
    })
}

/// Train/test unit indices for the configured fold.
pub fn fold_split(units: &[Unit], s: &Settings, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let patients: Vec<&str> = units.iter().map(|u| u.patient.as_str()).collect();
    let folds = split_units(&patients, s.folds, seed)?;
    let f = folds.get(s.fold).with_context(|| format!("only {} folds available", folds.len()))?;
    Ok((f.train.clone(), f.test.clone()))
}

pub fn split_csv(units: &[Unit], train: &[usize], test: &[usize]) -> String {
    let mut out = String::from("unit_id,role\n");
    for (role, idx) in [("train", train), ("test", test)] {
        for &i in idx {
            let _ = writeln!(out, "{},{role}", units[i].id);
        }
    }
    out
}

pub fn run(fs: &FeatureSet, s: &Settings, out: &Path, seed: u64) -> Result<()> {
    let mut units = build_units(fs, None)?;
    let (train_idx, test_idx) = fold_split(&units, s, seed)?;
    if train_idx.is_empty() {
        bail!("the training split is empty");
    }
    if fs.manifest.task_kind == TaskKind::Survival {
        units = rebin(&units, &train_idx)?;
    }
    let mut model = ShazamModel::new(model_config(fs, s, seed)?)?;
    log::info!(
        "training {} ({} parameters) on {} units, preset {}",
        fs.manifest.task_kind.name(),
        model.store.num_scalars(),
        train_idx.len(),
        s.preset
    );
    let report = train(&mut model, fs, &units, &train_idx, &s.train)?;
    fs::create_dir_all(out)?;
    save_checkpoint(&model, out)?;
    fs::write(out.join("train_log.csv"), report.log_csv())?;
    let names: Vec<String> = fs.teachers.iter().map(|t| t.name.clone()).collect();
    let scales = model.fusion().map(|f| f.cfg.scales.clone()).unwrap_or_default();
    fs::write(out.join("loss_terms.csv"), report.loss_terms_csv(&names, &scales))?;
    fs::write(out.join(SPLIT_FILE), split_csv(&units, &train_idx, &test_idx))?;
    if model.fusion().is_some() {
        let diag = if test_idx.is_empty() { &train_idx } else { &test_idx };
        let p = predict(&model, fs, &units, diag)?;
        fs::write(out.join("gates.csv"), p.gates_csv(fs.n_teachers()))?;
    }
    let last = report.epochs.iter().rev().find(|e| e.split == "train");
    if let Some(e) = last {
        println!(
            "trained {} epochs ({} steps), final train loss {:.6}; checkpoint in {}",
            report.epochs.iter().filter(|e| e.split == "train").count(),
            report.steps.len(),
            e.total,
            out.display()
        );
    }
    Ok(())
}
