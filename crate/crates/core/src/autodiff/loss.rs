use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape};

/// Row-wise softmax of a `[rows, k]` buffer with max subtraction.
pub fn softmax_rows<T: Element>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let total: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|p| *p = *p / total);
    }
    out
}

pub(crate) fn cross_entropy_backward<T: Element>(probs: &[T], labels: &[usize], k: usize, g: T) -> Vec<T> {
    let scale = g / T::from_usize(labels.len()).unwrap();
    let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (i, &label) in labels.iter().enumerate() {
        dx[i * k + label] = dx[i * k + label] - scale;
    }
    dx
}

impl<T: Element> Graph<T> {
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    ///
    /// Returns the `[1]` loss and the softmax probabilities.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Vec<T>)> {
        let li = self.index(logits)?;
        let x = self.node_value(li);
        let &[n, k] = x.dims() else {
            return Err(Error::shape(
                "cross_entropy",
                "logits rank",
                format!("expected 2, got {:?}", x.dims()),
            ));
        };
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                "batch",
                format!("{n} rows of logits, {} labels", labels.len()),
            ));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes: k,
            });
        }
        let mut total = T::zero();
        for (row, &label) in x.values().chunks_exact(k).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total = total + lse - row[label];
        }
        let loss = total / T::from_usize(n).unwrap();
        let probs = softmax_rows(x.values(), k);
        let var = self.push(
            Shape::new([1])?,
            vec![loss],
            Op::CrossEntropy {
                logits: li,
                labels: labels.to_vec(),
                probs: probs.clone(),
            },
        );
        Ok((var, probs))
    }
}
