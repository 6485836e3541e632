//! Dataset ingestion, label mapping, augmentation and batching.
//!
//! Classes are always indexed in the order of [`CLASS_NAMES`]. Pixels are
//! stored as `f32` in `[0, 1]`; anything not already at the model input
//! shape is brought there by [`conform`] when a batch is assembled.

mod batch;
mod fer;
mod image;
mod manifest;
mod pnm;
mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use batch::{make_batches, Batch, DataRng, RngState};
pub use fer::{fer_csv_row, load_fer_csv, parse_fer_csv, FER_NATIVE_TO_INDEX, FER_PIXELS, FER_SIDE};
pub use image::{conform, hflip, random_horizontal_flip, resize_bilinear};
pub use manifest::{load_image_dir, parse_manifest, ManifestEntry};
pub use pnm::{decode_pnm, encode_pnm, PnmImage};
pub use synthetic::synthetic_dataset;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 7;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprise"];

/// Case-insensitive lookup of a class name.
pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|c| c.eq_ignore_ascii_case(name.trim()))
}

pub fn class_name(index: usize) -> Option<&'static str> {
    CLASS_NAMES.get(index).copied()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Fer2013,
    RafDb,
    AffectNet,
    Dir,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Fer2013,
        DatasetKind::RafDb,
        DatasetKind::AffectNet,
        DatasetKind::Dir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Fer2013 => "fer2013",
            DatasetKind::RafDb => "rafdb",
            DatasetKind::AffectNet => "affectnet",
            DatasetKind::Dir => "dir",
        }
    }

    /// Published per-class counts in class-index order, where known.
    pub fn reference_counts(self, split: Split) -> Option<[usize; NUM_CLASSES]> {
        let counts = match (self, split) {
            (DatasetKind::Fer2013, Split::Train) => [3995, 436, 4097, 7215, 4965, 4830, 3171],
            (DatasetKind::Fer2013, Split::Test) => [491, 416, 626, 594, 528, 879, 55],
            (DatasetKind::RafDb, Split::Train) => [705, 717, 281, 4772, 2524, 1982, 1290],
            (DatasetKind::RafDb, Split::Test) => [162, 160, 74, 1185, 680, 478, 329],
            (DatasetKind::AffectNet, Split::Train) => [24882, 3803, 6378, 134415, 74874, 25459, 14090],
            (DatasetKind::AffectNet, Split::Test) => [500; NUM_CLASSES],
            (DatasetKind::Dir, _) => return None,
        };
        Some(counts)
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown dataset {s:?}; expected fer2013, rafdb, affectnet or dir"
                ))
            })
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[C, H, W]` in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub label: usize,
    pub source_id: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Loaded per-class counts next to the published ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountComparison {
    pub split: Split,
    pub loaded: [usize; NUM_CLASSES],
    pub reference: [usize; NUM_CLASSES],
}

impl CountComparison {
    pub fn matches(&self) -> bool {
        self.loaded == self.reference
    }
}

impl fmt::Display for CountComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<9} {:>8} {:>9}", self.split, "loaded", "reference")?;
        for (k, name) in CLASS_NAMES.iter().enumerate() {
            let mark = if self.loaded[k] == self.reference[k] {
                ""
            } else {
                "  differs"
            };
            writeln!(f, "{name:<9} {:>8} {:>9}{mark}", self.loaded[k], self.reference[k])?;
        }
        Ok(())
    }
}

pub fn compare_counts(kind: DatasetKind, ds: &Dataset) -> Option<CountComparison> {
    kind.reference_counts(ds.split).map(|reference| CountComparison {
        split: ds.split,
        loaded: ds.class_counts(),
        reference,
    })
}

/// Resolves the FER CSV path: `root` itself if it is a file, else `root/fer2013.csv`.
pub fn fer_csv_path(root: &Path) -> PathBuf {
    if root.is_file() {
        root.to_path_buf()
    } else {
        root.join("fer2013.csv")
    }
}

/// Manifest for an image-directory split: `root/train.tsv` or `root/test.tsv`.
pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
    root.join(format!("{}.tsv", split.name()))
}

/// Loads one split of any supported dataset layout. Image directories are
/// conformed to `target` while loading; FER rows stay at 1x48x48.
pub fn load_split(kind: DatasetKind, root: &Path, split: Split, target: Option<(usize, usize)>) -> Result<Dataset> {
    let mut ds = match kind {
        DatasetKind::Fer2013 => load_fer_csv(&fer_csv_path(root), Some(split))?,
        _ => load_image_dir(root, &manifest_path(root, split), split, target)?,
    };
    ds.name = kind.name().to_string();
    if ds.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{kind} {split} split under {}",
            root.display()
        )));
    }
    Ok(ds)
}

/// Worker count for loaders: `RESEMOTE_THREADS` if set and positive, else rayon's default.
pub fn loader_threads() -> usize {
    std::env::var("RESEMOTE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}
