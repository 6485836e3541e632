use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{class_index, conform, decode_pnm, loader_threads, Dataset, Sample, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub line: usize,
}

/// Parses `relative-path<TAB>class-name` lines. Blank lines are skipped.
pub fn parse_manifest(text: &str, source_name: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::Data {
            source_name: source_name.to_string(),
            line: Some(line),
            message,
        };
        if raw.trim().is_empty() {
            continue;
        }
        let (path, class) = raw
            .split_once('\t')
            .ok_or_else(|| err("expected path<TAB>class".into()))?;
        if path.is_empty() {
            return Err(err("empty path".into()));
        }
        let label = class_index(class).ok_or_else(|| err(format!("unknown class name {class:?}")))?;
        entries.push(ManifestEntry {
            path: path.to_string(),
            label,
            line,
        });
    }
    Ok(entries)
}

/// Loads every pixmap listed in `manifest`, relative to `root`, conformed to
/// `(channels, size)` when a target is given. Decoding runs on
/// `RESEMOTE_THREADS` workers; output order follows the manifest.
pub fn load_image_dir(root: &Path, manifest: &Path, split: Split, target: Option<(usize, usize)>) -> Result<Dataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let source = manifest.display().to_string();
    let entries = parse_manifest(&text, &source)?;
    let decode = |e: &ManifestEntry| -> Result<Sample> {
        let path = root.join(&e.path);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        let pixels = decode_pnm(&bytes)
            .and_then(|img| img.to_tensor())
            .and_then(|t| match target {
                Some((c, size)) => conform(&t, c, size),
                None => Ok(t),
            })
            .map_err(|err| Error::Data {
                source_name: source.clone(),
                line: Some(e.line),
                message: format!("{}: {err}", e.path),
            })?;
        Ok(Sample {
            pixels,
            label: e.label,
            source_id: e.path.clone(),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(loader_threads())
        .build()
        .map_err(|e| Error::Data {
            source_name: source.clone(),
            line: None,
            message: format!("cannot start loader pool: {e}"),
        })?;
    let samples = pool.install(|| entries.par_iter().map(decode).collect::<Result<Vec<_>>>())?;
    Ok(Dataset {
        name: "dir".into(),
        split,
        samples,
    })
}
