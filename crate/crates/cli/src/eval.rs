use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use shazam_core::feature_store::{TaskKind, TaskLabel};
use shazam_core::metrics::{bootstrap_ci, km_logrank, MetricReport};
use shazam_core::tasks::{build_units, load_checkpoint, predict, rebin, risk_score, score, EvalMetrics, Predictions, Unit};
use shazam_core::FeatureSet;

use crate::train::SPLIT_FILE;

fn read_split(dir: &Path, units: &[Unit]) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
    let path = dir.join(SPLIT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let index: HashMap<&str, usize> = units.iter().enumerate().map(|(i, u)| (u.id.as_str(), i)).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for line in fs::read_to_string(&path)?.lines().skip(1) {
        let (id, role) = line.split_once(',').with_context(|| format!("bad line in {}: '{line}'", path.display()))?;
        let &i = index.get(id).with_context(|| format!("unit '{id}' from {} is not in the data", path.display()))?;
        match role {
            "train" => train.push(i),
            "test" => test.push(i),
            other => bail!("unknown role '{other}' in {}", path.display()),
        }
    }
    Ok(Some((train, test)))
}

fn subset(p: &Predictions, idx: &[usize]) -> Predictions {
    Predictions {
        unit_ids: idx.iter().map(|&i| p.unit_ids[i].clone()).collect(),
        outputs: idx.iter().map(|&i| p.outputs[i].clone()).collect(),
        gates: idx.iter().map(|&i| p.gates[i].clone()).collect(),
    }
}

fn metric_names(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Tile => &["balanced_acc", "weighted_f1", "top1"],
        TaskKind::Expression => &["pcc"],
        TaskKind::Survival => &["c_index"],
    }
}

fn pick(m: &EvalMetrics, name: &str) -> f64 {
    match (m, name) {
        (EvalMetrics::Tile(c), "weighted_f1") => c.weighted_f1,
        (EvalMetrics::Tile(c), "top1") => c.top1,
        _ => m.primary(),
    }
}

pub fn run(fs: &FeatureSet, checkpoint: &Path, out: &Path, all: bool, replicates: usize, seed: u64) -> Result<()> {
    let model = load_checkpoint(checkpoint).with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let task = fs.manifest.task_kind;
    if model.task() != task {
        bail!("checkpoint predicts {} but the data is labelled for {}", model.task().name(), task.name());
    }
    let mut units = build_units(fs, None)?;
    let split = if all { None } else { read_split(checkpoint, &units)? };
    let which: Vec<usize> = match &split {
        Some((train, test)) => {
            if task == TaskKind::Survival {
                units = rebin(&units, train)?;
            }
            test.clone()
        }
        None => (0..units.len()).collect(),
    };
    if which.is_empty() {
        bail!("nothing to evaluate");
    }
    let preds = predict(&model, fs, &units, &which)?;
    let classes = fs.manifest.num_classes;
    let mut reports: Vec<MetricReport> = Vec::new();
    // resamples often miss a class
    let level = log::max_level();
    log::set_max_level(level.min(log::LevelFilter::Error));
    for name in metric_names(task) {
        let stat = |idx: &[usize]| -> shazam_core::Result<f64> {
            let sub: Vec<usize> = idx.iter().map(|&i| which[i]).collect();
            Ok(pick(&score(task, classes, &subset(&preds, idx), &units, &sub)?, name))
        };
        let r = bootstrap_ci(name, which.len(), stat, replicates, 0.95, seed);
        if r.is_err() {
            log::set_max_level(level);
        }
        reports.push(r?);
    }
    log::set_max_level(level);
    fs::create_dir_all(out)?;
    let mut m = format!("{}\n", MetricReport::CSV_HEADER);
    for r in &reports {
        m.push_str(&r.csv_row());
        m.push('\n');
        println!("{} = {:.4} [{:.4}, {:.4}] (n = {})", r.metric, r.point, r.ci_low, r.ci_high, r.n);
    }
    fs::write(out.join("metrics.csv"), m)?;
    let mut p = String::from("unit_id,output\n");
    for (id, o) in preds.unit_ids.iter().zip(&preds.outputs) {
        let joined: Vec<String> = o.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(p, "{id},{}", joined.join(";"));
    }
    fs::write(out.join("predictions.csv"), p)?;
    if model.fusion().is_some() {
        fs::write(out.join("gates.csv"), preds.gates_csv(fs.n_teachers()))?;
    }
    if task == TaskKind::Survival {
        let mut r = String::from("unit_id,risk,time,event\n");
        let (mut risk, mut time, mut event) = (Vec::new(), Vec::new(), Vec::new());
        for (k, &u) in which.iter().enumerate() {
            if let TaskLabel::Survival { time: t, event: e } = units[u].label {
                let s = risk_score(&preds.outputs[k]);
                let _ = writeln!(r, "{},{s},{t},{}", units[u].id, u8::from(e));
                risk.push(s);
                time.push(f64::from(t));
                event.push(e);
            }
        }
        fs::write(out.join("risk.csv"), r)?;
        match km_logrank(&risk, &time, &event) {
            Ok(km) => {
                fs::write(out.join("km.csv"), km.curves_csv())?;
                println!("log-rank chi2 = {:.4}, p = {:.4}", km.chi2, km.p_value);
            }
            Err(e) => log::warn!("no KM stratification: {e}"),
        }
    }
    Ok(())
}
