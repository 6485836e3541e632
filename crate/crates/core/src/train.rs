//! Epoch loop: shuffled mini-batches, SGD steps, evaluation and the plateau schedule.

use std::fmt;
use std::path::Path;

use crate::autodiff::Graph;
use crate::checkpoint::{self, CheckpointInfo, Loaded, Resume};
use crate::config::{PlateauMetric, RunConfig};
use crate::data::{make_batches, DataRng, Dataset};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::ResEmoteNet;
use crate::nn::Mode;
use crate::optim::{cross_entropy, PlateauScheduler, SgdState};
use crate::tensor::{Element, Tensor};

/// Offset separating the data stream from the weight-initialization stream.
const DATA_STREAM: u64 = 0x5eed_da7a;

pub const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the train-mode predictions made while stepping.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Learning rate in effect after the scheduler step.
    pub lr: f64,
    pub reduced: bool,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} train_acc={:.2}",
            self.epoch, self.train_loss, self.train_accuracy
        )?;
        if let Some(acc) = self.test_accuracy {
            write!(f, " test_acc={acc:.2}")?;
        }
        write!(f, " lr={:e}", self.lr)
    }
}

pub struct Trainer<T: Element> {
    pub config: RunConfig,
    pub model: ResEmoteNet<T>,
    pub sgd: SgdState<T>,
    pub scheduler: PlateauScheduler,
    pub rng: DataRng,
    /// Completed epochs.
    pub epoch: usize,
    pub best_metric: Option<f64>,
}

impl<T: Element> Trainer<T> {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut model_cfg = config.model.clone();
        model_cfg.seed = config.seed;
        Ok(Trainer {
            model: ResEmoteNet::build(&model_cfg)?,
            sgd: SgdState::new(config.lr, config.momentum, config.weight_decay)?,
            scheduler: PlateauScheduler::new(
                config.plateau_factor,
                config.patience,
                config.min_lr,
                config.plateau_metric.mode(),
            )?,
            rng: DataRng::new(config.seed ^ DATA_STREAM),
            epoch: 0,
            best_metric: None,
            config: config.clone(),
        })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(config: &RunConfig, loaded: Loaded<T>) -> Result<Self> {
        let resume = loaded
            .resume
            .ok_or_else(|| Error::Checkpoint("no optimizer state; cannot resume training".into()))?;
        let mut t = Trainer::new(config)?;
        t.model = loaded.model;
        t.sgd = resume.sgd;
        t.scheduler = resume.scheduler;
        t.rng = DataRng::from_state(resume.rng);
        t.epoch = loaded.info.epoch;
        t.best_metric = loaded.info.best_metric;
        Ok(t)
    }

    fn input_shape(&self) -> (usize, usize) {
        let m = self.model.config();
        (m.input_channels, m.input_size)
    }

    /// One forward/backward/update on a batch. Returns the mean loss and the
    /// train-mode predictions.
    pub fn step(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<usize>)> {
        let mut g = Graph::new();
        let xv = g.leaf(x);
        let logits = self.model.forward(&mut g, xv, Mode::Train)?;
        let loss = cross_entropy(&mut g, logits, labels)?;
        let preds = loss.prob_rows().map(crate::metrics::argmax).collect();
        let value = loss.loss.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "training loss".into(),
                index: self.epoch,
            });
        }
        g.backward(loss.var)?;
        self.model.absorb_grads(&mut g)?;
        // The graph shares parameter buffers; release it so the update writes in place.
        drop(g);
        self.sgd.step(&mut self.model)?;
        Ok((value, preds))
    }

    /// One pass over `train` in a freshly shuffled order. Returns the
    /// sample-weighted mean loss and train-mode accuracy.
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<(f64, f64)> {
        let (channels, size) = self.input_shape();
        let batches = make_batches(train.len(), self.config.batch_size, &mut self.rng, true)?;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in &batches {
            let flip = if self.config.augment_flip {
                Some((&mut self.rng, self.config.flip_prob))
            } else {
                None
            };
            let (x, labels) = batch.assemble::<T, _>(train, channels, size, flip)?;
            let (loss, preds) = self.step(&x, &labels)?;
            loss_sum += loss * labels.len() as f64;
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        let n = train.len() as f64;
        Ok((loss_sum / n, 100.0 * correct as f64 / n))
    }

    /// Eval-mode confusion matrix over `ds`.
    pub fn evaluate(&self, ds: &Dataset) -> Result<ConfusionMatrix> {
        evaluate(&self.model, ds)
    }

    /// Trains one epoch, evaluates, and steps the scheduler.
    pub fn run_epoch(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<EpochStats> {
        let (train_loss, train_accuracy) = self.train_epoch(train)?;
        self.epoch += 1;
        let test_accuracy = test.map(|t| self.evaluate(t)?.accuracy()).transpose()?;
        let metric = match (self.config.plateau_metric, test_accuracy) {
            (PlateauMetric::TestAccuracy, Some(acc)) => acc,
            (PlateauMetric::TrainLoss, _) => train_loss,
            _ => train_accuracy,
        };
        let reduced = self.scheduler.step(metric, &mut self.sgd)?;
        Ok(EpochStats {
            epoch: self.epoch,
            train_loss,
            train_accuracy,
            test_accuracy,
            lr: self.sgd.lr,
            reduced,
        })
    }

    pub fn checkpoint_info(&self) -> CheckpointInfo {
        CheckpointInfo {
            epoch: self.epoch,
            best_metric: self.best_metric,
            run_config: Some(self.config.clone()),
        }
    }

    pub fn resume_state(&self) -> Resume<T> {
        Resume {
            sgd: self.sgd.clone(),
            scheduler: self.scheduler.clone(),
            rng: self.rng.state(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.model, &self.checkpoint_info(), Some(&self.resume_state()))
    }

    /// Runs the remaining configured epochs. Writes `best.ckpt` whenever the
    /// held-out accuracy (train accuracy without a test set) improves and
    /// `last.ckpt` at the end when `out_dir` is given.
    pub fn fit(
        &mut self,
        train: &Dataset,
        test: Option<&Dataset>,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(train, test)?;
            let score = stats.test_accuracy.unwrap_or(stats.train_accuracy);
            if self.best_metric.is_none_or(|b| score > b) {
                self.best_metric = Some(score);
                if let Some(dir) = out_dir {
                    self.save(&dir.join("best.ckpt"))?;
                }
            }
            on_epoch(&stats);
            history.push(stats);
        }
        if let Some(dir) = out_dir {
            self.save(&dir.join("last.ckpt"))?;
        }
        Ok(history)
    }
}

/// Eval-mode confusion matrix of `model` over `ds`, in fixed batches.
pub fn evaluate<T: Element>(model: &ResEmoteNet<T>, ds: &Dataset) -> Result<ConfusionMatrix> {
    let m = model.config();
    let mut cm = ConfusionMatrix::new(m.num_classes);
    let batches = make_batches(ds.len(), EVAL_BATCH, &mut DataRng::new(0), false)?;
    for batch in &batches {
        let (x, labels) = batch.assemble::<T, DataRng>(ds, m.input_channels, m.input_size, None)?;
        let preds = model.infer(&x)?.predictions();
        cm.update(&labels, &preds)?;
    }
    Ok(cm)
}
