use std::path::Path;

use anyhow::{Context, Result};
use shazam_core::feature_store::{
    default_teachers, import_csv_dir, synth_teacher_set, write_feature_set, PlantedMode, ScaleMode, SynthConfig,
    TaskKind, TeacherSpec,
};

use crate::config::KeyValues;

/// `name:dim:depth` entries separated by commas.
fn parse_teachers(s: &str) -> Result<Vec<TeacherSpec>> {
    s.split(',')
        .map(|t| {
            let parts: Vec<&str> = t.trim().split(':').collect();
            let [name, dim, depth] = parts[..] else {
                anyhow::bail!("teacher '{t}' is not name:dim:depth");
            };
            Ok(TeacherSpec::new(name, dim.parse().context("teacher dim")?, depth.parse().context("teacher depth")?)?)
        })
        .collect()
}

fn scale_mode(s: &str) -> Result<ScaleMode> {
    match s {
        "shared" => Ok(ScaleMode::Shared),
        "split" => Ok(ScaleMode::Split),
        other => anyhow::bail!("unknown scale_mode '{other}'"),
    }
}

pub fn run(config: &Path, out: &Path, seed: u64) -> Result<()> {
    let mut kv = KeyValues::read(config)?;
    let task = TaskKind::parse(&kv.require("task")?)?;
    let fs = if let Some(dir) = kv.take("import_dir") {
        let dir = config.parent().unwrap_or(Path::new(".")).join(dir);
        let classes = kv.parsed("num_classes")?.unwrap_or(0);
        kv.finish()?;
        import_csv_dir(&dir, task, classes)?
    } else {
        let n = kv.required("n_samples")?;
        let teachers = match kv.take("teachers") {
            Some(t) => parse_teachers(&t)?,
            None => default_teachers(),
        };
        let mut c = SynthConfig::new(teachers, n, task);
        macro_rules! set {
            ($($key:ident),*) => {
                $(if let Some(v) = kv.parsed(stringify!($key))? {
                    c.$key = v;
                })*
            };
        }
        set!(num_classes, num_genes, latent_dim, noise, label_noise, n_patients, n_unassigned, tiles_per_slide, tile_jitter, censor_fraction);
        if let Some(p) = kv.take("planted") {
            c.planted = PlantedMode::parse(&p)?;
        }
        if let Some(m) = kv.take("scale_mode") {
            c.scale_mode = scale_mode(&m)?;
        }
        kv.finish()?;
        synth_teacher_set(&c, seed)?
    };
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_feature_set(&fs, out)?;
    println!(
        "wrote {} ({} samples, {} teachers, task {})",
        out.display(),
        fs.len(),
        fs.n_teachers(),
        fs.manifest.task_kind.name()
    );
    Ok(())
}
