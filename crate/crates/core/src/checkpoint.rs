//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "REMN"
//! version    u32
//! meta_len   u32, then meta_len bytes of UTF-8 `key=value` lines
//! count      u32, then `count` directory entries:
//!              name_len u32, name bytes, dtype u8 (0 = f32, 1 = f64),
//!              rank u32, rank x u64 dims, offset u64, length u64, crc32 u32
//! payload    u64 length, then raw tensor data
//! ```
//!
//! Offsets are relative to the start of the payload.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{model_from_pairs, model_to_pairs, RunConfig, MODEL_KEYS};
use crate::data::RngState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ResEmoteNet};
use crate::optim::{PlateauMode, PlateauScheduler, SgdState};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"REMN";
pub const VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "optim.velocity.";

/// Progress recorded alongside the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub run_config: Option<RunConfig>,
}

/// Everything beyond the weights needed to continue training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Resume<T: Element> {
    pub sgd: SgdState<T>,
    pub scheduler: PlateauScheduler,
    pub rng: RngState,
}

#[derive(Debug)]
pub struct Loaded<T: Element> {
    pub model: ResEmoteNet<T>,
    pub info: CheckpointInfo,
    pub resume: Option<Resume<T>>,
    /// Element type the tensors were stored in.
    pub dtype: DType,
}

struct Entry<'a, T: Element> {
    name: String,
    dims: &'a [usize],
    values: &'a [T],
}

fn metadata<T: Element>(model: &ResEmoteNet<T>, info: &CheckpointInfo, resume: Option<&Resume<T>>) -> String {
    let mut meta: Vec<(String, String)> = vec![
        ("dtype".into(), T::DTYPE.name().into()),
        ("epoch".into(), info.epoch.to_string()),
        (
            "best_metric".into(),
            info.best_metric.map_or("none".into(), |m| format!("{m:?}")),
        ),
    ];
    for (k, v) in model_to_pairs(model.config()) {
        meta.push((format!("model.{k}"), v));
    }
    if let Some(run) = &info.run_config {
        for k in RunConfig::keys().filter(|k| !MODEL_KEYS.contains(k)) {
            meta.push((format!("run.{k}"), run.get(k).unwrap_or_default()));
        }
    }
    meta.push(("has_optimizer".into(), resume.is_some().to_string()));
    if let Some(r) = resume {
        let s = &r.scheduler;
        meta.extend([
            ("optim.lr".into(), format!("{:?}", r.sgd.lr)),
            ("optim.momentum".into(), format!("{:?}", r.sgd.momentum)),
            ("optim.weight_decay".into(), format!("{:?}", r.sgd.weight_decay)),
            ("sched.factor".into(), format!("{:?}", s.factor)),
            ("sched.patience".into(), s.patience.to_string()),
            ("sched.min_lr".into(), format!("{:?}", s.min_lr)),
            (
                "sched.mode".into(),
                match s.mode {
                    PlateauMode::Maximize => "maximize".into(),
                    PlateauMode::Minimize => "minimize".into(),
                },
            ),
            ("sched.best".into(), s.best.map_or("none".into(), |b| format!("{b:?}"))),
            ("sched.epochs_since_improve".into(), s.epochs_since_improve.to_string()),
            ("rng.seed".into(), r.rng.seed.to_string()),
            ("rng.word_pos".into(), r.rng.word_pos.to_string()),
        ]);
    }
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn entries<'a, T: Element>(model: &'a ResEmoteNet<T>, resume: Option<&'a Resume<T>>) -> Result<Vec<Entry<'a, T>>> {
    let mut out: Vec<Entry<T>> = model
        .named_tensors()
        .into_iter()
        .map(|(name, _, t)| Entry {
            name,
            dims: t.dims(),
            values: t.values(),
        })
        .collect();
    if let Some(r) = resume {
        let params: BTreeMap<String, &Tensor<T>> = model.parameters().into_iter().collect();
        for (name, v) in &r.sgd.velocity {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("velocity for unknown parameter {name}")))?;
            if p.numel() != v.len() {
                return Err(Error::Checkpoint(format!(
                    "velocity for {name} has {} values, parameter has {}",
                    v.len(),
                    p.numel()
                )));
            }
            out.push(Entry {
                name: format!("{VELOCITY_PREFIX}{name}"),
                dims: p.dims(),
                values: v,
            });
        }
    }
    Ok(out)
}

/// Serializes a checkpoint into `w`.
pub fn write_to<T: Element, W: Write>(
    w: &mut W,
    model: &ResEmoteNet<T>,
    info: &CheckpointInfo,
    resume: Option<&Resume<T>>,
) -> Result<()> {
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    let meta = metadata(model, info, resume);
    let entries = entries(model, resume)?;
    let elem = T::DTYPE.size() as u64;

    let mut header = Vec::new();
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    header.extend_from_slice(meta.as_bytes());
    header.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    let mut buf = Vec::new();
    for e in &entries {
        buf.clear();
        T::write_le(e.values, &mut buf);
        let length = e.values.len() as u64 * elem;
        header.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        header.extend_from_slice(e.name.as_bytes());
        header.push(T::DTYPE.code());
        header.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for &d in e.dims {
            header.extend_from_slice(&(d as u64).to_le_bytes());
        }
        header.extend_from_slice(&offset.to_le_bytes());
        header.extend_from_slice(&length.to_le_bytes());
        header.extend_from_slice(&crc32fast::hash(&buf).to_le_bytes());
        offset += length;
    }
    header.extend_from_slice(&offset.to_le_bytes());
    w.write_all(&header).map_err(io)?;
    for e in &entries {
        buf.clear();
        T::write_le(e.values, &mut buf);
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

pub fn to_bytes<T: Element>(
    model: &ResEmoteNet<T>,
    info: &CheckpointInfo,
    resume: Option<&Resume<T>>,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_to(&mut out, model, info, resume)?;
    Ok(out)
}

/// Writes to a temporary sibling file and renames it over `path`.
pub fn save<T: Element>(
    path: &Path,
    model: &ResEmoteNet<T>,
    info: &CheckpointInfo,
    resume: Option<&Resume<T>>,
) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    write_to(&mut w, model, info, resume).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", tmp.display())),
        other => other,
    })?;
    let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

struct RawTensor<'a> {
    dtype: DType,
    dims: Vec<usize>,
    bytes: &'a [u8],
}

impl RawTensor<'_> {
    fn to_tensor<T: Element>(&self) -> Result<Tensor<T>> {
        match self.dtype {
            DType::F32 => Ok(Tensor::from_vec(self.dims.clone(), f32::read_le(self.bytes))?.cast()),
            DType::F64 => Ok(Tensor::from_vec(self.dims.clone(), f64::read_le(self.bytes))?.cast()),
        }
    }
}

/// Parsed but unvalidated file contents.
pub struct RawCheckpoint<'a> {
    pub meta: BTreeMap<String, String>,
    tensors: BTreeMap<String, RawTensor<'a>>,
}

impl RawCheckpoint<'_> {
    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }
}

/// Parses the container and verifies every checksum.
pub fn parse(bytes: &[u8]) -> Result<RawCheckpoint<'_>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let mut meta = BTreeMap::new();
    for line in meta_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }

    let count = r.u32("tensor count")?;
    let mut directory = Vec::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype =
            DType::from_code(r.u8("dtype")?).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype code")))?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::new();
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
            dims.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("{name}: dimension too large")))?);
        }
        let offset = r.u64("offset")?;
        let length = r.u64("length")?;
        let crc = r.u32("checksum")?;
        if numel.checked_mul(dtype.size() as u64) != Some(length) {
            return Err(Error::Checkpoint(format!(
                "{name}: length {length} does not match shape {dims:?}"
            )));
        }
        directory.push((name, dtype, dims, offset, length, crc));
    }
    let payload_len = r.u64("payload length")?;
    let payload = r.take(
        usize::try_from(payload_len).map_err(|_| Error::Checkpoint("payload too large".into()))?,
        "payload",
    )?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }

    let mut spans: Vec<(u64, u64)> = directory.iter().map(|d| (d.3, d.4)).collect();
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[0].0.saturating_add(pair[0].1) > pair[1].0 {
            return Err(Error::Checkpoint("tensor data regions overlap".into()));
        }
    }
    let mut tensors = BTreeMap::new();
    for (name, dtype, dims, offset, length, crc) in directory {
        let end = offset
            .checked_add(length)
            .filter(|&e| e <= payload_len)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: data outside payload")))?;
        let data = &payload[offset as usize..end as usize];
        if crc32fast::hash(data) != crc {
            return Err(Error::ChecksumMismatch { name });
        }
        if dims.contains(&0) {
            return Err(Error::Checkpoint(format!("{name}: zero dimension")));
        }
        if tensors
            .insert(
                name.clone(),
                RawTensor {
                    dtype,
                    dims,
                    bytes: data,
                },
            )
            .is_some()
        {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    Ok(RawCheckpoint { meta, tensors })
}

fn field<'m>(meta: &'m BTreeMap<String, String>, key: &str) -> Result<&'m str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Checkpoint(format!("metadata key {key} missing")))
}

fn number<N: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<N> {
    let v = field(meta, key)?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("metadata {key}={v:?} is not a valid number")))
}

fn optional(meta: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match field(meta, key)? {
        "none" => Ok(None),
        _ => number(meta, key).map(Some),
    }
}

/// Architecture recorded in a checkpoint.
pub fn stored_model_config(raw: &RawCheckpoint) -> Result<ModelConfig> {
    let mut pairs = Vec::new();
    for k in MODEL_KEYS {
        pairs.push((k, field(&raw.meta, &format!("model.{k}"))?));
    }
    model_from_pairs(pairs).map_err(|e| Error::Checkpoint(format!("stored architecture: {e}")))
}

/// Errors on the first architecture field that differs; the init seed is not compared.
pub fn check_config(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    let found_pairs = model_to_pairs(found);
    for ((key, want), (_, got)) in model_to_pairs(expected).into_iter().zip(found_pairs) {
        if key != "seed" && want != got {
            return Err(Error::ConfigMismatch {
                field: key.to_string(),
                found: got,
                expected: want,
            });
        }
    }
    Ok(())
}

/// Decodes a checkpoint. With `expected`, the stored architecture must match it.
/// Optimizer state is returned when present; inference callers may ignore it.
pub fn from_bytes<T: Element>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Loaded<T>> {
    let mut raw = parse(bytes)?;
    let meta = &raw.meta;
    let dtype = match field(meta, "dtype")? {
        "f32" => DType::F32,
        "f64" => DType::F64,
        other => return Err(Error::Checkpoint(format!("unknown dtype {other:?}"))),
    };
    let config = stored_model_config(&raw)?;
    if let Some(exp) = expected {
        check_config(&config, exp)?;
    }
    let run_config = if meta.keys().any(|k| k.starts_with("run.")) {
        let mut run = RunConfig::default();
        for k in RunConfig::keys().filter(|k| !MODEL_KEYS.contains(k)) {
            run.set(k, field(meta, &format!("run.{k}"))?)
                .map_err(|e| Error::Checkpoint(format!("stored run config: {e}")))?;
        }
        run.model = config.clone();
        run.seed = config.seed;
        Some(run)
    } else {
        None
    };
    let info = CheckpointInfo {
        epoch: number(meta, "epoch")?,
        best_metric: optional(meta, "best_metric")?,
        run_config,
    };
    let has_optimizer = field(meta, "has_optimizer")? == "true";
    let resume_meta = if has_optimizer {
        let mode = match field(meta, "sched.mode")? {
            "maximize" => PlateauMode::Maximize,
            "minimize" => PlateauMode::Minimize,
            other => return Err(Error::Checkpoint(format!("unknown scheduler mode {other:?}"))),
        };
        let mut scheduler = PlateauScheduler::new(
            number(meta, "sched.factor")?,
            number(meta, "sched.patience")?,
            number(meta, "sched.min_lr")?,
            mode,
        )?;
        scheduler.best = optional(meta, "sched.best")?;
        scheduler.epochs_since_improve = number(meta, "sched.epochs_since_improve")?;
        let sgd = SgdState::<T>::new(
            number(meta, "optim.lr")?,
            number(meta, "optim.momentum")?,
            number(meta, "optim.weight_decay")?,
        )?;
        let rng = RngState {
            seed: number(meta, "rng.seed")?,
            word_pos: number(meta, "rng.word_pos")?,
        };
        Some((sgd, scheduler, rng))
    } else {
        None
    };

    let stored = raw
        .tensors
        .values()
        .fold(0usize, |n, t| n.saturating_add(t.dims.iter().product()));
    let needed = config.parameter_count();
    if needed > stored {
        return Err(Error::Checkpoint(format!(
            "stored architecture needs {needed} parameters but the file holds {stored} values"
        )));
    }
    let mut model =
        ResEmoteNet::<T>::build(&config).map_err(|e| Error::Checkpoint(format!("stored architecture: {e}")))?;
    let mut failure = None;
    model.for_each_tensor_mut(|name, _, t| {
        if failure.is_some() {
            return;
        }
        match raw.tensors.remove(name) {
            None => failure = Some(Error::Checkpoint(format!("tensor {name} missing"))),
            Some(rt) if rt.dims != t.dims() => {
                failure = Some(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    rt.dims,
                    t.dims()
                )))
            }
            Some(rt) => match rt.to_tensor::<T>() {
                Ok(loaded) => t.values_mut().copy_from_slice(loaded.values()),
                Err(e) => failure = Some(e),
            },
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let resume = match resume_meta {
        Some((mut sgd, scheduler, rng)) => {
            let params: BTreeMap<String, Vec<usize>> = model
                .parameters()
                .into_iter()
                .map(|(n, t)| (n, t.dims().to_vec()))
                .collect();
            let names: Vec<String> = raw.tensors.keys().cloned().collect();
            for name in names {
                let Some(pname) = name.strip_prefix(VELOCITY_PREFIX) else {
                    continue;
                };
                let dims = params
                    .get(pname)
                    .ok_or_else(|| Error::Checkpoint(format!("velocity for unknown parameter {pname}")))?;
                let rt = raw.tensors.remove(&name).unwrap();
                if &rt.dims != dims {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {dims:?}",
                        rt.dims
                    )));
                }
                sgd.velocity
                    .insert(pname.to_string(), rt.to_tensor::<T>()?.into_values());
            }
            Some(Resume { sgd, scheduler, rng })
        }
        None => None,
    };
    if let Some(extra) = raw.tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Loaded {
        model,
        info,
        resume,
        dtype,
    })
}

pub fn load<T: Element>(path: &Path, expected: Option<&ModelConfig>) -> Result<Loaded<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
