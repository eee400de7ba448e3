//! Model checkpoints: a key=value manifest plus raw little-endian parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature_store::{ScaleLevel, TaskKind};
use crate::fusion::FusionConfig;
use crate::tape::Mat;

use super::heads::HeadConfig;
use super::model::{BackboneConfig, ModelConfig, ShazamModel};

pub const MANIFEST_FILE: &str = "model.manifest";
pub const PARAMS_FILE: &str = "model.params";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split_usize(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| x.parse().map_err(|_| Error::invalid(format!("bad integer '{x}'")))).collect()
}

pub fn encode_config(cfg: &ModelConfig) -> Vec<(String, String)> {
    let mut kv = vec![("seed".to_string(), cfg.seed.to_string())];
    kv.push(("head.task".into(), cfg.head.task.name().into()));
    kv.push(("head.hidden".into(), join(&cfg.head.hidden)));
    kv.push(("head.dropout".into(), cfg.head.dropout.to_string()));
    kv.push(("head.output".into(), cfg.head.output.to_string()));
    match &cfg.backbone {
        BackboneConfig::Fusion { fusion, mil_hidden } => {
            kv.push(("backbone".into(), "fusion".into()));
            kv.push(("fusion.teachers".into(), fusion.teacher_names.join(",")));
            kv.push(("fusion.native_dims".into(), join(&fusion.native_dims)));
            kv.push(("fusion.d".into(), fusion.d.to_string()));
            kv.push(("fusion.heads".into(), fusion.heads.to_string()));
            kv.push(("fusion.layers".into(), fusion.layers.to_string()));
            kv.push(("fusion.gate_hidden".into(), fusion.gate_hidden.to_string()));
            kv.push(("fusion.moe".into(), fusion.moe.to_string()));
            kv.push(("fusion.scales".into(), fusion.scales.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")));
            kv.push(("fusion.seed".into(), fusion.seed.to_string()));
            if let Some(h) = mil_hidden {
                kv.push(("mil.hidden".into(), h.to_string()));
            }
        }
        BackboneConfig::Probe { teacher, scale, native_dim } => {
            kv.push(("backbone".into(), "probe".into()));
            kv.push(("probe.teacher".into(), teacher.to_string()));
            kv.push(("probe.scale".into(), scale.name().into()));
            kv.push(("probe.native_dim".into(), native_dim.to_string()));
        }
    }
    kv
}

fn parse<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = kv.get(key).ok_or_else(|| Error::CorruptContainer(format!("checkpoint is missing '{key}'")))?;
    v.parse().map_err(|_| Error::CorruptContainer(format!("checkpoint key '{key}' has bad value '{v}'")))
}

pub fn decode_config(kv: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let head = HeadConfig {
        task: TaskKind::parse(kv.get("head.task").map_or("", String::as_str))?,
        hidden: split_usize(kv.get("head.hidden").map_or("", String::as_str))?,
        dropout: parse(kv, "head.dropout")?,
        output: parse(kv, "head.output")?,
    };
    let backbone = match kv.get("backbone").map(String::as_str) {
        Some("fusion") => {
            let mut fusion = FusionConfig::new(
                split_usize(kv.get("fusion.native_dims").map_or("", String::as_str))?,
                parse(kv, "fusion.d")?,
                parse(kv, "fusion.seed")?,
            );
            fusion.teacher_names =
                kv.get("fusion.teachers").map(|s| s.split(',').map(str::to_string).collect()).unwrap_or_default();
            fusion.heads = parse(kv, "fusion.heads")?;
            fusion.layers = parse(kv, "fusion.layers")?;
            fusion.gate_hidden = parse(kv, "fusion.gate_hidden")?;
            fusion.moe = parse(kv, "fusion.moe")?;
            fusion.scales = ScaleLevel::parse_list(kv.get("fusion.scales").map_or("", String::as_str))?;
            let mil_hidden = if kv.contains_key("mil.hidden") { Some(parse(kv, "mil.hidden")?) } else { None };
            BackboneConfig::Fusion { fusion, mil_hidden }
        }
        Some("probe") => BackboneConfig::Probe {
            teacher: parse(kv, "probe.teacher")?,
            scale: ScaleLevel::parse(kv.get("probe.scale").map_or("", String::as_str))?,
            native_dim: parse(kv, "probe.native_dim")?,
        },
        _ => return Err(Error::CorruptContainer("checkpoint has no valid backbone".into())),
    };
    Ok(ModelConfig { backbone, head, seed: parse(kv, "seed")? })
}

/// Writes `model.manifest` and `model.params` into `dir`.
pub fn save_checkpoint(model: &ShazamModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = String::from("format_version=1\n");
    for (k, v) in encode_config(&model.cfg) {
        text.push_str(&format!("{k}={v}\n"));
    }
    let mut bytes = Vec::with_capacity(model.store.num_scalars() * 8);
    for (name, m) in model.store.iter() {
        text.push_str(&format!("section={name}:{}:{}\n", m.rows, m.cols));
        for x in &m.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), text)?;
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ShazamModel> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut kv = BTreeMap::new();
    let mut sections = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::CorruptContainer(format!("bad manifest line '{line}'")))?;
        if k == "section" {
            let parts: Vec<&str> = v.rsplitn(3, ':').collect();
            if parts.len() != 3 {
                return Err(Error::CorruptContainer(format!("bad section '{v}'")));
            }
            let rows: usize = parts[1].parse().map_err(|_| Error::CorruptContainer(format!("bad section '{v}'")))?;
            let cols: usize = parts[0].parse().map_err(|_| Error::CorruptContainer(format!("bad section '{v}'")))?;
            sections.push((parts[2].to_string(), rows, cols));
        } else {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    if kv.get("format_version").map(String::as_str) != Some("1") {
        return Err(Error::UnsupportedFormat("checkpoint format_version must be 1".into()));
    }
    let mut model = ShazamModel::new(decode_config(&kv)?)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    let expected: usize = sections.iter().map(|(_, r, c)| r * c * 8).sum();
    if bytes.len() != expected || sections.len() != model.store.len() {
        return Err(Error::InconsistentContainer("parameter file does not match the manifest".into()));
    }
    let mut off = 0;
    for (id, (name, rows, cols)) in model.store.ids().collect::<Vec<_>>().into_iter().zip(sections) {
        let m = model.store.get(id);
        if model.store.name(id) != name || m.rows != rows || m.cols != cols {
            return Err(Error::InconsistentContainer(format!("section '{name}' does not match the model")));
        }
        let data: Vec<f64> = bytes[off..off + rows * cols * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        off += rows * cols * 8;
        *model.store.get_mut(id) = Mat::from_vec(rows, cols, data);
    }
    Ok(model)
}
