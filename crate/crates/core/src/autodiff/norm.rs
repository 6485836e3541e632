use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Per-channel statistics of one training batch (variance is the biased estimate).
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel, `N * H * W`.
    pub count: usize,
}

pub(crate) struct BatchNormGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

fn for_channel<T: Element>(data: &[T], dims: &[usize], c: usize, mut f: impl FnMut(usize, T)) {
    let (ch, hw) = (dims[1], dims[2] * dims[3]);
    for b in 0..dims[0] {
        let base = (b * ch + c) * hw;
        for (i, &v) in data[base..base + hw].iter().enumerate() {
            f(base + i, v);
        }
    }
}

pub(crate) fn batch_norm_backward<T: Element>(
    dims: &[usize],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    dy: &[T],
    batch_stats: bool,
    need_dx: bool,
) -> BatchNormGrads<T> {
    let channels = dims[1];
    let m = T::from_usize(dims[0] * dims[2] * dims[3]).unwrap();
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        for_channel(dy, dims, c, |i, g| {
            dgamma[c] = dgamma[c] + g * xhat[i];
            dbeta[c] = dbeta[c] + g;
        });
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); dy.len()];
        for c in 0..channels {
            let scale = gamma[c] * inv_std[c];
            if batch_stats {
                let k = scale / m;
                for_channel(dy, dims, c, |i, g| {
                    dx[i] = k * (m * g - dbeta[c] - xhat[i] * dgamma[c]);
                });
            } else {
                for_channel(dy, dims, c, |i, g| dx[i] = g * scale);
            }
        }
        dx
    });
    BatchNormGrads { dx, dgamma, dbeta }
}

impl<T: Element> Graph<T> {
    fn check_bn(&self, xi: usize, params: &[usize]) -> Result<[usize; 4]> {
        let dims = self.node_value(xi).dims();
        let &[n, c, h, w] = dims else {
            return Err(Error::shape(
                "batch_norm",
                "input rank",
                format!("expected 4, got {dims:?}"),
            ));
        };
        for &p in params {
            let pd = self.node_value(p).dims();
            if pd != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    "channels",
                    format!("input has {c} channels, parameter has shape {pd:?}"),
                ));
            }
        }
        Ok([n, c, h, w])
    }

    fn bn_apply(
        &mut self,
        xi: usize,
        gi: usize,
        bi: usize,
        mean: &[T],
        inv_std: Vec<T>,
        batch_stats: bool,
    ) -> Result<Var> {
        let x = self.node_value(xi);
        let dims = x.dims().to_vec();
        let (gamma, beta) = (self.node_value(gi).values(), self.node_value(bi).values());
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for c in 0..dims[1] {
            for_channel(x.values(), &dims, c, |i, v| {
                let h = (v - mean[c]) * inv_std[c];
                xhat[i] = h;
                out[i] = gamma[c] * h + beta[c];
            });
        }
        let shape = x.shape().clone();
        Ok(self.push(
            shape,
            out,
            Op::BatchNorm {
                input: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Normalizes with the batch's own per-channel mean and biased variance.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let (xi, gi, bi) = (self.index(input)?, self.index(gamma)?, self.index(beta)?);
        let dims = self.check_bn(xi, &[gi, bi])?;
        let count = dims[0] * dims[2] * dims[3];
        let m = T::from_usize(count).unwrap();
        let x = self.node_value(xi).values();
        let mut mean = vec![T::zero(); dims[1]];
        let mut var = vec![T::zero(); dims[1]];
        for c in 0..dims[1] {
            let mut s = T::zero();
            for_channel(x, &dims, c, |_, v| s = s + v);
            mean[c] = s / m;
            let mut q = T::zero();
            for_channel(x, &dims, c, |_, v| q = q + (v - mean[c]) * (v - mean[c]));
            var[c] = q / m;
        }
        let eps = T::from_float(eps);
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(xi, gi, bi, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, var, count }))
    }

    /// Normalizes with fixed statistics (running estimates in eval mode).
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var> {
        let (xi, gi, bi) = (self.index(input)?, self.index(gamma)?, self.index(beta)?);
        let dims = self.check_bn(xi, &[gi, bi])?;
        if mean.dims() != [dims[1]] || var.dims() != [dims[1]] {
            return Err(Error::shape(
                "batch_norm",
                "running statistics",
                format!("expected [{}]", dims[1]),
            ));
        }
        let eps = T::from_float(eps);
        let inv_std = var.values().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(xi, gi, bi, mean.values(), inv_std, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::full([2, 1, 2, 2], 7.0).unwrap());
        let gamma = g.leaf(&Tensor::ones([1]).unwrap());
        let beta = g.leaf(&Tensor::zeros([1]).unwrap());
        let (y, stats) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        assert_eq!(g.value(y).values(), &[0.0; 8]);
        assert_eq!(stats.mean, vec![7.0]);
        assert_eq!(stats.var, vec![0.0]);
        assert_eq!(stats.count, 8);
    }

    #[test]
    fn unit_running_stats_scale_by_eps() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::from_vec([1, 1, 1, 2], vec![2.0, -4.0]).unwrap());
        let gamma = g.leaf(&Tensor::ones([1]).unwrap());
        let beta = g.leaf(&Tensor::zeros([1]).unwrap());
        let mean = Tensor::zeros([1]).unwrap();
        let var = Tensor::ones([1]).unwrap();
        let y = g.batch_norm_eval(x, gamma, beta, &mean, &var, 1e-5).unwrap();
        let k = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert_eq!(g.value(y).values(), &[2.0 * k, -4.0 * k]);
    }

    #[test]
    fn channel_count_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::zeros([1, 2, 2, 2]).unwrap());
        let gamma = g.leaf(&Tensor::ones([3]).unwrap());
        let beta = g.leaf(&Tensor::zeros([3]).unwrap());
        assert!(g.batch_norm_train(x, gamma, beta, 1e-5).is_err());
    }
}
