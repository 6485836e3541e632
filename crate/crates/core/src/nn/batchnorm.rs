use super::{join, Mode, Parameterized, TensorRole};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `[N, C, H, W]`.
///
/// In [`Mode::Train`] the batch mean and biased variance normalize the input
/// and the running estimates move by `running = (1 - momentum) * running +
/// momentum * batch`, using the unbiased batch variance. In [`Mode::Eval`]
/// the running estimates are used unchanged.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: Mode,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Tensor::ones([channels])?.with_requires_grad(true),
            beta: Tensor::zeros([channels])?.with_requires_grad(true),
            running_mean: Tensor::zeros([channels])?,
            running_var: Tensor::ones([channels])?,
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode: Mode::Train,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if self.mode == Mode::Eval {
            return self.forward_eval(g, x);
        }
        if self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "batch norm eps must be positive, got {}",
                self.eps
            )));
        }
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        let (y, stats) = g.batch_norm_train(x, gamma, beta, self.eps)?;
        let m = T::from_float(self.momentum);
        let keep = T::one() - m;
        let n = stats.count;
        let unbias = if n > 1 {
            T::from_usize(n).unwrap() / T::from_usize(n - 1).unwrap()
        } else {
            T::one()
        };
        for (r, &b) in self.running_mean.values_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &v) in self.running_var.values_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * v * unbias;
        }
        Ok(y)
    }

    pub fn forward_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.batch_norm_eval(x, gamma, beta, &self.running_mean, &self.running_var, self.eps)
    }
}

impl<T: Element> Parameterized<T> for BatchNorm2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>)) {
        f(join(prefix, "gamma"), TensorRole::Param, &self.gamma);
        f(join(prefix, "beta"), TensorRole::Param, &self.beta);
        f(join(prefix, "running_mean"), TensorRole::Buffer, &self.running_mean);
        f(join(prefix, "running_var"), TensorRole::Buffer, &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>)) {
        f(join(prefix, "gamma"), TensorRole::Param, &mut self.gamma);
        f(join(prefix, "beta"), TensorRole::Param, &mut self.beta);
        f(join(prefix, "running_mean"), TensorRole::Buffer, &mut self.running_mean);
        f(join(prefix, "running_var"), TensorRole::Buffer, &mut self.running_var);
    }
}
