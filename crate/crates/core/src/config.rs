//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! List values are comma separated. Residual blocks are written as
//! `in:out:stride` triples, for example `256:512:2, 512:1024:2`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ResidualSpec};
use crate::optim::{PlateauMode, PlateauScheduler, SgdState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got {s:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Quantity watched by the plateau scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauMetric {
    TestAccuracy,
    TrainAccuracy,
    TrainLoss,
}

impl PlateauMetric {
    pub fn mode(self) -> PlateauMode {
        match self {
            PlateauMetric::TrainLoss => PlateauMode::Minimize,
            _ => PlateauMode::Maximize,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlateauMetric::TestAccuracy => "test_accuracy",
            PlateauMetric::TrainAccuracy => "train_accuracy",
            PlateauMetric::TrainLoss => "train_loss",
        }
    }
}

impl FromStr for PlateauMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PlateauMetric::TestAccuracy,
            PlateauMetric::TrainAccuracy,
            PlateauMetric::TrainLoss,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| {
            Error::Config(format!(
                "plateau_metric must be test_accuracy, train_accuracy or train_loss, got {s:?}"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_root: PathBuf,
    /// Architecture; its `seed` mirrors [`RunConfig::seed`].
    pub model: ModelConfig,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub plateau_metric: PlateauMetric,
    pub augment_flip: bool,
    pub flip_prob: f64,
    pub out_dir: PathBuf,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Fer2013,
            data_root: PathBuf::from("data"),
            model: ModelConfig::default(),
            seed: 0,
            batch_size: 16,
            epochs: 80,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            plateau_factor: crate::optim::DEFAULT_FACTOR,
            patience: crate::optim::DEFAULT_PATIENCE,
            min_lr: crate::optim::DEFAULT_MIN_LR,
            plateau_metric: PlateauMetric::TestAccuracy,
            augment_flip: true,
            flip_prob: 0.5,
            out_dir: PathBuf::from("runs"),
            precision: Precision::F32,
        }
    }
}

/// Every recognized key, in echo order.
pub const KEYS: [&str; 23] = [
    "dataset",
    "data_root",
    "input_channels",
    "input_size",
    "stem_channels",
    "se_reduction",
    "residual_channels",
    "num_classes",
    "aap_output",
    "seed",
    "batch_size",
    "epochs",
    "lr",
    "momentum",
    "weight_decay",
    "plateau_factor",
    "patience",
    "min_lr",
    "plateau_metric",
    "augment_flip",
    "flip_prob",
    "out_dir",
    "precision",
];

/// Keys describing the architecture, a subset of [`KEYS`].
pub const MODEL_KEYS: [&str; 8] = [
    "input_channels",
    "input_size",
    "stem_channels",
    "se_reduction",
    "residual_channels",
    "num_classes",
    "aap_output",
    "seed",
];

/// Architecture settings as `(key, value)` pairs in config syntax.
pub fn model_to_pairs(model: &ModelConfig) -> Vec<(&'static str, String)> {
    let run = RunConfig {
        model: model.clone(),
        seed: model.seed,
        ..RunConfig::default()
    };
    MODEL_KEYS
        .iter()
        .map(|&k| (k, run.get(k).unwrap_or_default()))
        .collect()
}

/// Rebuilds an architecture from pairs produced by [`model_to_pairs`].
pub fn model_from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<ModelConfig> {
    let mut run = RunConfig::default();
    for (k, v) in pairs {
        if !MODEL_KEYS.contains(&k) {
            return Err(Error::Config(format!("{k:?} is not an architecture key")));
        }
        run.set(k, v)?;
    }
    Ok(run.model)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn parse_residual(value: &str) -> Result<Vec<ResidualSpec>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            match parts.as_slice() {
                [i, o, s] => Ok(ResidualSpec::new(
                    parse_num("residual_channels", i)?,
                    parse_num("residual_channels", o)?,
                    parse_num("residual_channels", s)?,
                )),
                _ => Err(Error::Config(format!(
                    "residual_channels: expected in:out:stride, got {:?}",
                    item.trim()
                ))),
            }
        })
        .collect()
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let (h, w) = value
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("{key}: expected HxW, got {value:?}")))?;
    Ok((parse_num(key, h.trim())?, parse_num(key, w.trim())?))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = v.parse()?,
            "data_root" => self.data_root = PathBuf::from(v),
            "input_channels" => self.model.input_channels = parse_num(key, v)?,
            "input_size" => self.model.input_size = parse_num(key, v)?,
            "stem_channels" => self.model.stem_channels = parse_list(key, v)?,
            "se_reduction" => self.model.se_reduction = parse_num(key, v)?,
            "residual_channels" => self.model.residual = parse_residual(v)?,
            "num_classes" => self.model.num_classes = parse_num(key, v)?,
            "aap_output" => self.model.aap_output = parse_pair(key, v)?,
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.model.seed = self.seed;
            }
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "plateau_factor" => self.plateau_factor = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "min_lr" => self.min_lr = parse_num(key, v)?,
            "plateau_metric" => self.plateau_metric = v.parse()?,
            "augment_flip" => self.augment_flip = parse_num(key, v)?,
            "flip_prob" => self.flip_prob = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "precision" => self.precision = v.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// The resolved value of `key` in config syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        Some(match key {
            "dataset" => self.dataset.to_string(),
            "data_root" => self.data_root.display().to_string(),
            "input_channels" => m.input_channels.to_string(),
            "input_size" => m.input_size.to_string(),
            "stem_channels" => join(&m.stem_channels),
            "se_reduction" => m.se_reduction.to_string(),
            "residual_channels" => join(
                &m.residual
                    .iter()
                    .map(|r| format!("{}:{}:{}", r.in_channels, r.out_channels, r.stride))
                    .collect::<Vec<_>>(),
            ),
            "num_classes" => m.num_classes.to_string(),
            "aap_output" => format!("{}x{}", m.aap_output.0, m.aap_output.1),
            "seed" => self.seed.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "plateau_factor" => self.plateau_factor.to_string(),
            "patience" => self.patience.to_string(),
            "min_lr" => self.min_lr.to_string(),
            "plateau_metric" => self.plateau_metric.name().to_string(),
            "augment_flip" => self.augment_flip.to_string(),
            "flip_prob" => self.flip_prob.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "precision" => self.precision.to_string(),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies config text on top of `self`; errors carry the line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigLine {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            self.set(key, value).map_err(|e| Error::ConfigLine {
                line,
                message: match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                },
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Checks the architecture and every optimizer and scheduler setting.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        SgdState::<f64>::new(self.lr, self.momentum, self.weight_decay)?;
        PlateauScheduler::new(
            self.plateau_factor,
            self.patience,
            self.min_lr,
            self.plateau_metric.mode(),
        )?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip_prob must be in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().copied()
    }

    /// Every tunable with its resolved value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        Self::keys()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo() {
        let text = RunConfig::default().to_text();
        for line in [
            "batch_size = 16",
            "epochs = 80",
            "lr = 0.001",
            "plateau_factor = 0.1",
            "augment_flip = true",
        ] {
            assert!(text.lines().any(|l| l == line), "{line} missing from\n{text}");
        }
        assert_eq!(text.lines().count(), RunConfig::keys().count());
    }

    #[test]
    fn echo_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.set("residual_channels", "256:512:2, 512:512:1").unwrap();
        cfg.set("lr", "3.3e-7").unwrap();
        cfg.set("seed", "99").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.seed, 99);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse("# run\n\nepochs = 2 # short\n  dataset=dir\n").unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.dataset, DatasetKind::Dir);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match RunConfig::parse("epochs = 2\nlr = fast\n") {
            Err(Error::ConfigLine { line: 2, message }) => assert!(message.contains("lr"), "{message}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RunConfig::parse("\n\nnonsense\n"),
            Err(Error::ConfigLine { line: 3, .. })
        ));
        assert!(matches!(
            RunConfig::parse("colour = red"),
            Err(Error::ConfigLine { line: 1, .. })
        ));
    }

    #[test]
    fn model_pairs_roundtrip() {
        let mut m = ModelConfig::tiny();
        m.seed = 12;
        m.aap_output = (2, 1);
        let pairs = model_to_pairs(&m);
        assert_eq!(
            model_from_pairs(pairs.iter().map(|(k, v)| (*k, v.as_str()))).unwrap(),
            m
        );
        assert!(model_from_pairs([("lr", "0.1")]).is_err());
    }

    #[test]
    fn validation() {
        RunConfig::default().validate().unwrap();
        let mut cfg = RunConfig::default();
        cfg.momentum = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("stem_channels", "64, 128").unwrap();
        assert!(cfg.validate().is_err());
    }
}
