//! Cross-entropy loss value, SGD with momentum, and reduce-on-plateau.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::ResEmoteNet;
use crate::nn::TensorRole;
use crate::tensor::{Element, Tensor};

/// Mean cross-entropy over a batch plus the softmax rows that produced it.
#[derive(Clone, Debug)]
pub struct LossValue<T: Element> {
    pub var: Var,
    pub loss: T,
    /// Row-major `[N, K]` probabilities.
    pub probs: Vec<T>,
    pub classes: usize,
}

impl<T: Element> LossValue<T> {
    pub fn prob_rows(&self) -> impl Iterator<Item = &[T]> {
        self.probs.chunks_exact(self.classes)
    }
}

/// `-(1/N) * sum_i log softmax(logits)[i, label_i]`.
pub fn cross_entropy<T: Element>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<LossValue<T>> {
    let classes = g.dims(logits).get(1).copied().unwrap_or(0);
    let (var, probs) = g.cross_entropy(logits, labels)?;
    Ok(LossValue {
        var,
        loss: g.value(var).values()[0],
        probs,
        classes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T: Element> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Velocity buffers keyed by parameter name, created on first use.
    pub velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Element> SgdState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(SgdState {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        })
    }

    /// `v <- momentum * v + grad; p <- p - lr * v`, then clears the grad.
    pub fn step_param(&mut self, name: &str, param: &mut Tensor<T>) -> Result<()> {
        let mut grad = param
            .take_grad()
            .ok_or_else(|| Error::MissingGrad { name: name.to_string() })?;
        let lr = T::from_float(self.lr);
        let mu = T::from_float(self.momentum);
        if self.weight_decay != 0.0 {
            let wd = T::from_float(self.weight_decay);
            for (gr, &p) in grad.iter_mut().zip(param.values()) {
                *gr = *gr + wd * p;
            }
        }
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![T::zero(); grad.len()]);
        if v.len() != grad.len() {
            return Err(Error::shape(
                "sgd_step",
                "velocity",
                format!("{name}: {} vs {}", v.len(), grad.len()),
            ));
        }
        for ((vi, &gi), p) in v.iter_mut().zip(&grad).zip(param.values_mut()) {
            *vi = mu * *vi + gi;
            *p = *p - lr * *vi;
        }
        Ok(())
    }

    /// Steps every learnable tensor of the model.
    pub fn step(&mut self, model: &mut ResEmoteNet<T>) -> Result<()> {
        let mut result = Ok(());
        model.for_each_tensor_mut(|name, role, t| {
            if role == TensorRole::Param && result.is_ok() {
                result = self.step_param(name, t);
            }
        });
        result
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauMode {
    Maximize,
    Minimize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub mode: PlateauMode,
    pub best: Option<f64>,
    pub epochs_since_improve: usize,
}

pub const DEFAULT_FACTOR: f64 = 0.1;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_MIN_LR: f64 = 1e-6;
const IMPROVEMENT: f64 = 1e-12;

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler::new(DEFAULT_FACTOR, DEFAULT_PATIENCE, DEFAULT_MIN_LR, PlateauMode::Maximize).unwrap()
    }
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64, mode: PlateauMode) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::Config(format!("plateau factor must be in (0, 1), got {factor}")));
        }
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(min_lr >= 0.0 && min_lr.is_finite()) {
            return Err(Error::Config(format!("min_lr must be non-negative, got {min_lr}")));
        }
        Ok(PlateauScheduler {
            factor,
            patience,
            min_lr,
            mode,
            best: None,
            epochs_since_improve: 0,
        })
    }

    fn improves(&self, metric: f64) -> bool {
        match (self.best, self.mode) {
            (None, _) => true,
            (Some(b), PlateauMode::Maximize) => metric > b + IMPROVEMENT,
            (Some(b), PlateauMode::Minimize) => metric < b - IMPROVEMENT,
        }
    }

    /// Records one epoch's metric and returns whether the learning rate was reduced.
    pub fn step<T: Element>(&mut self, metric: f64, sgd: &mut SgdState<T>) -> Result<bool> {
        if !metric.is_finite() {
            return Err(Error::NonFinite {
                what: "scheduler metric".into(),
                index: 0,
            });
        }
        if self.improves(metric) {
            self.best = Some(metric);
            self.epochs_since_improve = 0;
            return Ok(false);
        }
        self.epochs_since_improve += 1;
        if self.epochs_since_improve > self.patience {
            self.epochs_since_improve = 0;
            let reduced = (sgd.lr * self.factor).max(self.min_lr);
            let changed = reduced < sgd.lr;
            sgd.lr = reduced.min(sgd.lr);
            return Ok(changed);
        }
        Ok(false)
    }
}
