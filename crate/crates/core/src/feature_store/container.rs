//! Binary feature container plus its text manifest (`<path>.manifest`).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{FeatureSet, Manifest, MultiScaleFeature, Sample, TaskKind, TaskLabel, TeacherSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SHZF";
pub const FORMAT_VERSION: u16 = 1;

const TAG_CLASS: u8 = 0;
const TAG_EXPRESSION: u8 = 1;
const TAG_SURVIVAL: u8 = 2;

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

pub fn write_feature_set(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs.validate()?;
    fs::write(path, encode(fs))?;
    let mut f = fs::File::create(manifest_path(path))?;
    f.write_all(encode_manifest(fs).as_bytes())?;
    Ok(())
}

pub fn read_feature_set(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let text = fs::read_to_string(manifest_path(path))?;
    let (mut teachers, samples) = decode(&bytes)?;
    let (manifest, declared) = decode_manifest(&text, &mut teachers)?;
    if declared.n_samples != samples.len() {
        return Err(Error::InconsistentContainer(format!(
            "manifest declares {} samples, payload holds {}",
            declared.n_samples,
            samples.len()
        )));
    }
    if declared.n_teachers != teachers.len() {
        return Err(Error::InconsistentContainer(format!(
            "manifest declares {} teachers, payload holds {}",
            declared.n_teachers,
            teachers.len()
        )));
    }
    let fs = FeatureSet { teachers, samples, manifest };
    fs.validate().map_err(|e| Error::InconsistentContainer(e.to_string()))?;
    Ok(fs)
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub(crate) fn encode(fs: &FeatureSet) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut buf, fs.teachers.len());
    put_u32(&mut buf, fs.samples.len());
    for t in &fs.teachers {
        put_str(&mut buf, &t.name);
        put_u32(&mut buf, t.native_dim);
        put_u32(&mut buf, t.depth);
    }
    for s in &fs.samples {
        put_str(&mut buf, &s.id);
        match &s.label {
            TaskLabel::Class(c) => {
                buf.push(TAG_CLASS);
                put_u32(&mut buf, *c as usize);
            }
            TaskLabel::Expression(v) => {
                buf.push(TAG_EXPRESSION);
                put_u32(&mut buf, v.len());
                put_f32s(&mut buf, v);
            }
            TaskLabel::Survival { time, event } => {
                buf.push(TAG_SURVIVAL);
                buf.extend_from_slice(&time.to_le_bytes());
                buf.push(u8::from(*event));
            }
        }
        for f in &s.features {
            for v in &f.vectors {
                put_f32s(&mut buf, v);
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptContainer(format!("truncated payload at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::CorruptContainer("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::CorruptContainer("invalid UTF-8 string".into()))
    }
}

fn decode(bytes: &[u8]) -> Result<(Vec<TeacherSpec>, Vec<Sample>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::CorruptContainer("missing magic".into()))? != MAGIC {
        return Err(Error::CorruptContainer("wrong magic bytes".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!("container version {version}, expected {FORMAT_VERSION}")));
    }
    let n_teachers = r.u32()?;
    let n_samples = r.u32()?;
    let mut teachers = Vec::with_capacity(n_teachers.min(1024));
    for _ in 0..n_teachers {
        let name = r.string()?;
        let dim = r.u32()?;
        let depth = r.u32()?;
        teachers.push(TeacherSpec::new(name, dim, depth).map_err(|e| Error::CorruptContainer(e.to_string()))?);
    }
    let mut samples = Vec::with_capacity(n_samples.min(1 << 16));
    for _ in 0..n_samples {
        let id = r.string()?;
        let label = match r.u8()? {
            TAG_CLASS => TaskLabel::Class(r.u32()? as u32),
            TAG_EXPRESSION => {
                let n = r.u32()?;
                TaskLabel::Expression(r.f32s(n)?)
            }
            TAG_SURVIVAL => {
                let time = r.f32()?;
                let event = match r.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(Error::CorruptContainer(format!("bad event flag {b}"))),
                };
                TaskLabel::Survival { time, event }
            }
            t => return Err(Error::CorruptContainer(format!("unknown label tag {t}"))),
        };
        let mut features = Vec::with_capacity(teachers.len());
        for t in &teachers {
            let low = r.f32s(t.native_dim)?;
            let mid = r.f32s(t.native_dim)?;
            let high = r.f32s(t.native_dim)?;
            features.push(MultiScaleFeature::new(low, mid, high));
        }
        samples.push(Sample { id, label, features });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptContainer(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((teachers, samples))
}

fn encode_manifest(fs: &FeatureSet) -> String {
    let m = &fs.manifest;
    let mut out = String::new();
    let mut line = |k: &str, v: &str| {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    };
    line("format_version", &FORMAT_VERSION.to_string());
    line("task_kind", m.task_kind.name());
    line("seed", &m.seed.to_string());
    line("n_samples", &fs.samples.len().to_string());
    line("n_teachers", &fs.teachers.len().to_string());
    line("num_classes", &m.num_classes.to_string());
    line("bags", if m.bags { "1" } else { "0" });
    line("planted", &m.planted);
    for (t, s) in fs.teachers.iter().zip(&m.planted_strengths) {
        line(&format!("planted.strength.{}", t.name), &s.to_string());
    }
    for t in &fs.teachers {
        if let Some(s) = t.standalone_score {
            line(&format!("standalone.{}", t.name), &s.to_string());
        }
    }
    line("provenance", &m.provenance.replace('\n', " "));
    for (k, v) in &m.patients {
        line(&format!("patient.{k}"), v);
    }
    for (k, v) in &m.slides {
        line(&format!("slide.{k}"), v);
    }
    out
}

struct Declared {
    n_samples: usize,
    n_teachers: usize,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::CorruptContainer(format!("manifest key '{key}' has bad value '{v}'")))
}

fn decode_manifest(text: &str, teachers: &mut Vec<TeacherSpec>) -> Result<(Manifest, Declared)> {
    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    let mut patients = BTreeMap::new();
    let mut slides = BTreeMap::new();
    let mut strengths: BTreeMap<&str, f64> = BTreeMap::new();
    for raw in text.lines() {
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Error::CorruptContainer(format!("manifest line without '=': {raw}")))?;
        if let Some(sid) = k.strip_prefix("patient.") {
            patients.insert(sid.to_string(), v.to_string());
        } else if let Some(sid) = k.strip_prefix("slide.") {
            slides.insert(sid.to_string(), v.to_string());
        } else if let Some(t) = k.strip_prefix("planted.strength.") {
            strengths.insert(t, parse_num(k, v)?);
        } else if let Some(t) = k.strip_prefix("standalone.") {
            let score: f64 = parse_num(k, v)?;
            match teachers.iter_mut().find(|x| x.name == t) {
                Some(spec) => spec.standalone_score = Some(score),
                None => return Err(Error::InconsistentContainer(format!("manifest names unknown teacher '{t}'"))),
            }
        } else {
            kv.insert(k, v);
        }
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::CorruptContainer(format!("manifest lacks '{k}'")));
    let version: u16 = parse_num("format_version", get("format_version")?)?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!("manifest version {version}, expected {FORMAT_VERSION}")));
    }
    let task_kind = TaskKind::parse(get("task_kind")?).map_err(|e| Error::CorruptContainer(e.to_string()))?;
    let planted_strengths = if strengths.is_empty() {
        Vec::new()
    } else {
        teachers
            .iter()
            .map(|t| {
                strengths
                    .get(t.name.as_str())
                    .copied()
                    .ok_or_else(|| Error::InconsistentContainer(format!("no planted strength for '{}'", t.name)))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let manifest = Manifest {
        task_kind,
        seed: parse_num("seed", get("seed")?)?,
        num_classes: parse_num("num_classes", get("num_classes")?)?,
        patients,
        slides,
        bags: get("bags")? == "1",
        planted: get("planted")?.to_string(),
        planted_strengths,
        provenance: kv.get("provenance").copied().unwrap_or("").to_string(),
    };
    let declared = Declared {
        n_samples: parse_num("n_samples", get("n_samples")?)?,
        n_teachers: parse_num("n_teachers", get("n_teachers")?)?,
    };
    Ok((manifest, declared))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{default_teachers, synth_teacher_set, SynthConfig};

    fn small() -> FeatureSet {
        let teachers = default_teachers()[..2].to_vec();
        let mut cfg = SynthConfig::new(teachers, 3, TaskKind::Survival);
        cfg.n_patients = 2;
        synth_teacher_set(&cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.shzf");
        let fs = small();
        write_feature_set(&fs, &p).unwrap();
        assert_eq!(read_feature_set(&p).unwrap(), fs);
    }

    #[test]
    fn wrong_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.shzf");
        write_feature_set(&small(), &p).unwrap();
        let mut b = fs::read(&p).unwrap();
        b[0] = b'X';
        fs::write(&p, b).unwrap();
        assert!(matches!(read_feature_set(&p), Err(Error::CorruptContainer(_))));
    }

    #[test]
    fn truncation_and_version_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.shzf");
        write_feature_set(&small(), &p).unwrap();
        let b = fs::read(&p).unwrap();
        fs::write(&p, &b[..b.len() - 3]).unwrap();
        assert!(matches!(read_feature_set(&p), Err(Error::CorruptContainer(_))));
        let mut v = b.clone();
        v[4] = 9;
        fs::write(&p, v).unwrap();
        assert!(matches!(read_feature_set(&p), Err(Error::UnsupportedFormat(_))));
    }
}
