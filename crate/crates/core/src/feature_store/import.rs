//! Import of externally extracted features from CSV files.
//!
//! A directory holds three files:
//!
//! * `teachers.csv`: `name,native_dim,depth`
//! * `features.csv`: `sample_id,teacher,scale,v0,v1,...` with one row per
//!   (sample, teacher, scale)
//! * `labels.csv`: `sample_id,patient_id,slide_id,label` where `label` is a
//!   class index, a `;`-separated expression vector, or `time:event`
//!
//! Whether the vectors come from a class token or pooled patch tokens is up
//! to the caller; they are stored as given.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{FeatureSet, Manifest, MultiScaleFeature, Sample, ScaleLevel, TaskKind, TaskLabel, TeacherSpec, UNASSIGNED};
use crate::error::{Error, Result};

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new().flexible(true).comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?)
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, what: &str) -> Result<&'a str> {
    rec.get(i).ok_or_else(|| Error::invalid(format!("missing column '{what}' in record {:?}", rec.position())))
}

fn parse_label(kind: TaskKind, raw: &str) -> Result<TaskLabel> {
    let bad = || Error::invalid(format!("cannot parse label '{raw}' for task {}", kind.name()));
    match kind {
        TaskKind::Tile => raw.parse().map(TaskLabel::Class).map_err(|_| bad()),
        TaskKind::Expression => {
            let v: std::result::Result<Vec<f32>, _> = raw.split(';').map(|x| x.trim().parse()).collect();
            let v = v.map_err(|_| bad())?;
            if v.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::invalid(format!("expression values must be finite and >= 0: '{raw}'")));
            }
            Ok(TaskLabel::Expression(v))
        }
        TaskKind::Survival => {
            let (t, e) = raw.split_once(':').ok_or_else(bad)?;
            let time: f32 = t.trim().parse().map_err(|_| bad())?;
            if time.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::invalid(format!("survival time must be > 0: '{raw}'")));
            }
            let event = match e.trim() {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            Ok(TaskLabel::Survival { time, event })
        }
    }
}

pub fn import_csv_dir(dir: impl AsRef<Path>, kind: TaskKind, num_classes: usize) -> Result<FeatureSet> {
    let dir = dir.as_ref();
    let mut teachers = Vec::new();
    for rec in reader(&dir.join("teachers.csv"))?.records() {
        let rec = rec?;
        let dim = field(&rec, 1, "native_dim")?.parse().map_err(|_| Error::invalid("bad native_dim"))?;
        let depth = field(&rec, 2, "depth")?.parse().map_err(|_| Error::invalid("bad depth"))?;
        teachers.push(TeacherSpec::new(field(&rec, 0, "name")?, dim, depth)?);
    }
    let t_index: HashMap<String, usize> = teachers.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();

    let mut order = Vec::new();
    let mut feats: HashMap<String, Vec<[Option<Vec<f32>>; 3]>> = HashMap::new();
    for rec in reader(&dir.join("features.csv"))?.records() {
        let rec = rec?;
        let sid = field(&rec, 0, "sample_id")?.to_string();
        let t = *t_index
            .get(field(&rec, 1, "teacher")?)
            .ok_or_else(|| Error::invalid(format!("unknown teacher in features.csv: {:?}", rec.get(1))))?;
        let s = ScaleLevel::parse(field(&rec, 2, "scale")?)?;
        let v: std::result::Result<Vec<f32>, _> = rec.iter().skip(3).map(str::parse).collect();
        let v = v.map_err(|_| Error::invalid(format!("bad feature value for sample '{sid}'")))?;
        let slot = feats.entry(sid.clone()).or_insert_with(|| {
            order.push(sid.clone());
            vec![[None, None, None]; teachers.len()]
        });
        if slot[t][s.index()].replace(v).is_some() {
            return Err(Error::invalid(format!("duplicate feature row for sample '{sid}'")));
        }
    }

    let mut manifest = Manifest::new(kind);
    manifest.num_classes = num_classes;
    manifest.planted = "imported".into();
    manifest.provenance = format!("imported from {}", dir.display());
    let mut labels: BTreeMap<String, TaskLabel> = BTreeMap::new();
    for rec in reader(&dir.join("labels.csv"))?.records() {
        let rec = rec?;
        let sid = field(&rec, 0, "sample_id")?.to_string();
        let patient = field(&rec, 1, "patient_id")?;
        let slide = field(&rec, 2, "slide_id")?;
        let label = parse_label(kind, field(&rec, 3, "label")?)?;
        manifest.patients.insert(sid.clone(), if patient.is_empty() { UNASSIGNED.into() } else { patient.into() });
        if !slide.is_empty() {
            manifest.slides.insert(sid.clone(), slide.into());
        }
        labels.insert(sid, label);
    }
    manifest.bags = !manifest.slides.is_empty() && kind == TaskKind::Survival;

    let mut samples = Vec::with_capacity(order.len());
    for sid in order {
        let per_teacher = feats.remove(&sid).expect("inserted above");
        let mut features = Vec::with_capacity(teachers.len());
        for (t, scales) in per_teacher.into_iter().enumerate() {
            let [l, m, h] = scales;
            match (l, m, h) {
                (Some(l), Some(m), Some(h)) => features.push(MultiScaleFeature::new(l, m, h)),
                _ => {
                    return Err(Error::invalid(format!(
                        "sample '{sid}' lacks a scale for teacher '{}'",
                        teachers[t].name
                    )))
                }
            }
        }
        let label = labels.remove(&sid).ok_or_else(|| Error::invalid(format!("no label for sample '{sid}'")))?;
        samples.push(Sample { id: sid, label, features });
    }
    if let Some(extra) = labels.keys().next() {
        return Err(Error::invalid(format!("label for unknown sample '{extra}'")));
    }
    FeatureSet::new(teachers, samples, manifest)
}
