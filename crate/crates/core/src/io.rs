//! On-disk formats: signal files, the dataset manifest, the feature cache and
//! the model file. All binary formats are little-endian.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{MssiImage, Signal, MSSI_LEN};
use crate::nn::{Architecture, CnnModel, Real, Tensor};

pub const CACHE_MAGIC: &[u8; 4] = b"MSSI";
pub const CACHE_VERSION: u32 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"MSDN";
pub const MODEL_VERSION: u32 = 1;
/// Label written for images that carry none.
pub const UNLABELED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalFormat {
    /// One decimal sample per line.
    Text,
    /// Raw little-endian f64, no header.
    F64le,
}

/// Class label as written in a manifest: a name or a numeric index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Index(u32),
    Name(String),
}

impl LabelValue {
    pub fn name(&self) -> String {
        match self {
            Self::Index(i) => i.to_string(),
            Self::Name(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub format: SignalFormat,
    pub sampling_rate_hz: f64,
    pub label: LabelValue,
    pub source_id: String,
}

/// Writes to a sibling temporary file and renames it into place, so a failed
/// write never leaves a partial artifact behind.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn read_signal_text(path: &Path) -> Result<Vec<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 =
            t.parse().map_err(|_| Error::Format(format!("{}:{}: not a number: '{t}'", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_signal_f64le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of f64 samples",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn write_signal(path: &Path, samples: &[f64], format: SignalFormat) -> Result<()> {
    write_atomic(path, |w| {
        match format {
            // `{:?}` prints the shortest representation that round-trips.
            SignalFormat::Text => samples.iter().try_for_each(|v| writeln!(w, "{v:?}"))?,
            SignalFormat::F64le => samples.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?,
        }
        Ok(())
    })
}

pub fn read_signal(path: &Path, format: SignalFormat) -> Result<Vec<f64>> {
    match format {
        SignalFormat::Text => read_signal_text(path),
        SignalFormat::F64le => read_signal_f64le(path),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path)?;
    let values: Vec<serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: manifest must be a JSON array: {e}", path.display())))?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let id = v.get("source_id").and_then(|s| s.as_str()).unwrap_or("<missing source_id>").to_owned();
            serde_json::from_value(v).map_err(|e| Error::Format(format!("manifest record {i} ('{id}'): {e}")))
        })
        .collect()
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, records)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Loads every signal a manifest lists. Relative paths resolve against the
/// manifest's directory. Class indices follow numeric labels directly;
/// named labels are numbered in order of first appearance.
pub fn load_manifest(path: &Path) -> Result<(Vec<Signal>, Vec<String>)> {
    let records = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let names = class_names_for(&records)?;
    let index: HashMap<String, u32> = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
    let signals = records
        .iter()
        .map(|r| {
            let file = if r.path.is_absolute() { r.path.clone() } else { base.join(&r.path) };
            let samples = read_signal(&file, r.format).map_err(|e| Error::Signal {
                source_id: r.source_id.clone(),
                message: format!("{}: {e}", file.display()),
            })?;
            let s = Signal::new(samples, r.sampling_rate_hz, Some(index[&r.label.name()]), r.source_id.clone());
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((signals, names))
}

fn class_names_for(records: &[ManifestRecord]) -> Result<Vec<String>> {
    let numeric = records.iter().all(|r| matches!(r.label, LabelValue::Index(_)));
    if numeric && !records.is_empty() {
        let max = records
            .iter()
            .map(|r| match r.label {
                LabelValue::Index(i) => i,
                LabelValue::Name(_) => unreachable!(),
            })
            .max()
            .expect("non-empty");
        return Ok((0..=max).map(|i| i.to_string()).collect());
    }
    if records.iter().any(|r| matches!(r.label, LabelValue::Index(_))) {
        return Err(Error::Format("manifest mixes numeric and named labels".into()));
    }
    let mut names: Vec<String> = Vec::new();
    for r in records {
        let n = r.label.name();
        if !names.contains(&n) {
            names.push(n);
        }
    }
    Ok(names)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!("not a {what} file (magic {b:?})")));
    }
    Ok(())
}

/// Feature cache: `"MSSI"`, version, count, then per image a label and
/// 1792 f32 pixels in row-major 32×56 order.
pub fn write_feature_cache(path: &Path, images: &[MssiImage]) -> Result<()> {
    let count = u32::try_from(images.len()).map_err(|_| Error::Format("too many images for cache".into()))?;
    write_atomic(path, |w| {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        for img in images {
            w.write_all(&img.label.unwrap_or(UNLABELED).to_le_bytes())?;
            for &p in img.pixels() {
                w.write_all(&(p as f32).to_le_bytes())?;
            }
        }
        Ok(())
    })
}

pub fn read_feature_cache(path: &Path) -> Result<Vec<MssiImage>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, CACHE_MAGIC, "feature cache")?;
    let version = read_u32(&mut r)?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported feature cache version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut buf = vec![0u8; MSSI_LEN * 4];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let label = read_u32(&mut r)?;
        r.read_exact(&mut buf)?;
        let pixels =
            buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64).collect();
        out.push(MssiImage::new(pixels, (label != UNLABELED).then_some(label))?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after feature cache records".into()));
    }
    Ok(out)
}

/// Class names stored next to a cache as `<cache>.classes.json`.
pub fn classes_sidecar(cache: &Path) -> PathBuf {
    let mut p = cache.as_os_str().to_owned();
    p.push(".classes.json");
    PathBuf::from(p)
}

pub fn write_class_names(cache: &Path, names: &[String]) -> Result<()> {
    write_atomic(&classes_sidecar(cache), |w| Ok(serde_json::to_writer(w, names)?))
}

/// Class names for a cache: the sidecar when present, otherwise `0..=max label`.
pub fn read_class_names(cache: &Path, images: &[MssiImage]) -> Result<Vec<String>> {
    let side = classes_sidecar(cache);
    if side.exists() {
        return Ok(serde_json::from_str(&fs::read_to_string(side)?)?);
    }
    let max = images.iter().filter_map(|m| m.label).max().unwrap_or(0);
    Ok((0..=max).map(|i| i.to_string()).collect())
}

/// Model file: `"MSDN"`, version, class count, then each parameter tensor
/// as rank, dims and f32 values.
pub fn write_model<T: Real>(path: &Path, model: &CnnModel<T>) -> Result<()> {
    write_atomic(path, |w| {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(model.classes() as u32).to_le_bytes())?;
        for p in model.params() {
            w.write_all(&(p.shape().len() as u32).to_le_bytes())?;
            for &d in p.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in p.data() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    })
}

pub fn read_model(path: &Path) -> Result<CnnModel<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, MODEL_MAGIC, "model")?;
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let classes = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(8);
    for _ in 0..8 {
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!("bad tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        params.push(Tensor::from_vec(&shape, data)?);
    }
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let arch = Architecture::from_param_shapes(&shapes)?;
    if arch.classes != classes {
        return Err(Error::Format(format!("header says {classes} classes but output layer has {}", arch.classes)));
    }
    CnnModel::from_params(arch, params)
}
