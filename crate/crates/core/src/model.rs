//! The assembled classifier: convolutional stem, channel gate, residual
//! stack, adaptive pooling and a linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_rows, Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::nn::{ConvBlock, LinearLayer, Mode, Parameterized, ResidualBlock, SeBlock, TensorRole, DEFAULT_REDUCTION};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ResidualSpec {
    pub const fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ResidualSpec {
            in_channels,
            out_channels,
            stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Square input side length.
    pub input_size: usize,
    /// Output channels of each stem conv block; each block is followed by a 2x2 max-pool.
    pub stem_channels: Vec<usize>,
    pub se_reduction: usize,
    pub residual: Vec<ResidualSpec>,
    pub num_classes: usize,
    pub aap_output: (usize, usize),
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 64,
            stem_channels: vec![64, 128, 256],
            se_reduction: DEFAULT_REDUCTION,
            residual: vec![
                ResidualSpec::new(256, 512, 2),
                ResidualSpec::new(512, 1024, 2),
                ResidualSpec::new(1024, 2048, 2),
            ],
            num_classes: 7,
            aap_output: (1, 1),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A small configuration for gradient checks and quick tests.
    pub fn tiny() -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 16,
            stem_channels: vec![4, 8, 8],
            se_reduction: 4,
            residual: vec![ResidualSpec::new(8, 8, 1)],
            num_classes: 3,
            aap_output: (1, 1),
            seed: 0,
        }
    }

    /// Spatial side length after the stem pools and each residual stride.
    pub fn final_spatial(&self) -> usize {
        let mut s = self.input_size >> self.stem_channels.len();
        for r in &self.residual {
            s = s.saturating_sub(1) / r.stride.max(1) + 1;
        }
        s
    }

    /// Learned values the configuration implies, saturating instead of
    /// overflowing so it is safe on untrusted configs.
    pub fn parameter_count(&self) -> usize {
        let mul = |a: usize, b: usize| a.saturating_mul(b);
        let conv = |cin: usize, cout: usize, k: usize| mul(mul(cin, cout), k * k).saturating_add(cout);
        let mut total = 0usize;
        let mut c = self.input_channels;
        for &s in &self.stem_channels {
            total = total.saturating_add(conv(c, s, 3)).saturating_add(mul(2, s));
            c = s;
        }
        total = total.saturating_add(mul(2, mul(c, c / self.se_reduction.max(1))));
        for r in &self.residual {
            let (i, o) = (r.in_channels, r.out_channels);
            total = total
                .saturating_add(conv(i, o, 3))
                .saturating_add(conv(o, o, 3))
                .saturating_add(mul(4, o));
            if i != o || r.stride != 1 {
                total = total.saturating_add(conv(i, o, 1)).saturating_add(mul(2, o));
            }
        }
        let features = mul(self.final_channels(), mul(self.aap_output.0, self.aap_output.1));
        total
            .saturating_add(mul(features, self.num_classes))
            .saturating_add(self.num_classes)
    }

    pub fn final_channels(&self) -> usize {
        self.residual
            .last()
            .map(|r| r.out_channels)
            .or_else(|| self.stem_channels.last().copied())
            .unwrap_or(self.input_channels)
    }

    pub fn classifier_inputs(&self) -> usize {
        self.final_channels() * self.aap_output.0 * self.aap_output.1
    }

    /// Checks every structural constraint, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_channels == 0 {
            problems.push("input_channels must be positive".to_string());
        }
        if self.num_classes < 2 {
            problems.push(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.stem_channels.is_empty() || self.stem_channels.contains(&0) {
            problems.push("stem_channels must be non-empty and positive".to_string());
        }
        let pools = self.stem_channels.len() as u32;
        let divisor = 1usize.checked_shl(pools).unwrap_or(usize::MAX);
        if self.input_size == 0 || !self.input_size.is_multiple_of(divisor) {
            problems.push(format!(
                "input_size {} is not divisible by {divisor} ({} stem max-pools)",
                self.input_size, pools
            ));
        }
        let stem_out = self.stem_channels.last().copied().unwrap_or(0);
        if self.se_reduction == 0 || stem_out % self.se_reduction != 0 || stem_out < self.se_reduction {
            problems.push(format!(
                "SE channels {stem_out} not divisible by se_reduction {}",
                self.se_reduction
            ));
        }
        let mut prev = stem_out;
        for (i, r) in self.residual.iter().enumerate() {
            if r.in_channels != prev {
                let from = if i == 0 {
                    "stem/SE output".to_string()
                } else {
                    format!("residual {} output", i - 1)
                };
                problems.push(format!(
                    "channel chain break: {from} has {prev} channels but residual {i} expects {}",
                    r.in_channels
                ));
            }
            if r.stride == 0 || r.out_channels == 0 {
                problems.push(format!("residual {i} needs positive stride and channels"));
            }
            prev = r.out_channels;
        }
        let (ah, aw) = self.aap_output;
        let side = self.final_spatial();
        if ah == 0 || aw == 0 || ah > side || aw > side {
            problems.push(format!(
                "aap_output {ah}x{aw} does not fit the final {side}x{side} feature map"
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Raw classifier outputs, `[batch, classes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<T: Element> {
    pub values: Tensor<T>,
}

impl<T: Element> Logits<T> {
    pub fn classes(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.values().chunks_exact(self.classes())
    }

    /// Softmax probabilities per row.
    pub fn probabilities(&self) -> Vec<Vec<T>> {
        let k = self.classes();
        softmax_rows(self.values.values(), k)
            .chunks_exact(k)
            .map(<[T]>::to_vec)
            .collect()
    }

    /// Predicted class per row; ties go to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ResEmoteNet<T: Element> {
    config: ModelConfig,
    pub stem: Vec<ConvBlock<T>>,
    pub se: SeBlock<T>,
    pub residuals: Vec<ResidualBlock<T>>,
    pub classifier: LinearLayer<T>,
}

impl<T: Element> ResEmoteNet<T> {
    /// Builds and initializes every layer deterministically from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stem = Vec::with_capacity(config.stem_channels.len());
        let mut channels = config.input_channels;
        for &out in &config.stem_channels {
            stem.push(ConvBlock::new(channels, out, &mut rng)?);
            channels = out;
        }
        let se = SeBlock::new(channels, config.se_reduction, &mut rng)?;
        let residuals = config
            .residual
            .iter()
            .map(|r| ResidualBlock::new(r.in_channels, r.out_channels, r.stride, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let classifier = LinearLayer::new(config.classifier_inputs(), config.num_classes, &mut rng)?;
        Ok(ResEmoteNet {
            config: config.clone(),
            stem,
            se,
            residuals,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for block in &mut self.stem {
            block.bn.mode = mode;
        }
        for block in &mut self.residuals {
            block.set_mode(mode);
        }
    }

    fn check_input(&self, dims: &[usize]) -> Result<()> {
        let c = &self.config;
        let ok = dims.len() == 4 && dims[1] == c.input_channels && dims[2] == c.input_size && dims[3] == c.input_size;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "forward",
                "input",
                format!(
                    "expected [N, {}, {}, {}], got {dims:?}",
                    c.input_channels, c.input_size, c.input_size
                ),
            )
            .in_stage("input"))
        }
    }

    /// Runs the network in `mode` and returns the logits variable.
    ///
    /// Train mode normalizes with batch statistics and updates running estimates.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        self.set_mode(mode);
        if mode == Mode::Eval {
            return self.forward_eval(g, x);
        }
        self.check_input(g.dims(x))?;
        let mut h = x;
        for (i, block) in self.stem.iter_mut().enumerate() {
            h = block
                .forward(g, h)
                .and_then(|y| g.max_pool2d(y, 2, 2))
                .map_err(|e| e.in_stage(format!("stem.{i}")))?;
        }
        h = self.se.forward(g, h).map_err(|e| e.in_stage("se"))?;
        for (i, block) in self.residuals.iter_mut().enumerate() {
            h = block.forward(g, h).map_err(|e| e.in_stage(format!("residual.{i}")))?;
        }
        self.head(g, h)
    }

    /// Eval-mode forward pass; never mutates the model.
    pub fn forward_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.check_input(g.dims(x))?;
        let mut h = x;
        for (i, block) in self.stem.iter().enumerate() {
            h = block
                .forward_eval(g, h)
                .and_then(|y| g.max_pool2d(y, 2, 2))
                .map_err(|e| e.in_stage(format!("stem.{i}")))?;
        }
        h = self.se.forward(g, h).map_err(|e| e.in_stage("se"))?;
        for (i, block) in self.residuals.iter().enumerate() {
            h = block
                .forward_eval(g, h)
                .map_err(|e| e.in_stage(format!("residual.{i}")))?;
        }
        self.head(g, h)
    }

    fn head(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        let (ah, aw) = self.config.aap_output;
        let pooled = g.adaptive_avg_pool(h, ah, aw).map_err(|e| e.in_stage("aap"))?;
        let flat = g.flatten(pooled)?;
        self.classifier.forward(g, flat).map_err(|e| e.in_stage("classifier"))
    }

    /// Eval-mode logits for a batch, without recording gradients.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Logits<T>> {
        let mut g = Graph::no_grad();
        let xv = g.leaf(x);
        let out = self.forward_eval(&mut g, xv)?;
        Ok(Logits {
            values: g.value(out).clone(),
        })
    }

    fn visit_all<'a>(&'a self, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>)) {
        for (i, block) in self.stem.iter().enumerate() {
            block.visit(&format!("stem.{i}"), f);
        }
        self.se.visit("se", f);
        for (i, block) in self.residuals.iter().enumerate() {
            block.visit(&format!("residual.{i}"), f);
        }
        self.classifier.visit("classifier", f);
    }

    fn visit_all_mut(&mut self, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>)) {
        for (i, block) in self.stem.iter_mut().enumerate() {
            block.visit_mut(&format!("stem.{i}"), f);
        }
        self.se.visit_mut("se", f);
        for (i, block) in self.residuals.iter_mut().enumerate() {
            block.visit_mut(&format!("residual.{i}"), f);
        }
        self.classifier.visit_mut("classifier", f);
    }

    /// Learnable tensors in order: stem, SE, residuals, classifier.
    /// Batch-norm running statistics are excluded.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        self.tensors_with_role(TensorRole::Param)
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.tensors_with_role(TensorRole::Buffer)
    }

    fn tensors_with_role(&self, role: TensorRole) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_all(&mut |name, r, t| {
            if r == role {
                out.push((name, t));
            }
        });
        out
    }

    /// Every named tensor, parameters and buffers, with its role.
    pub fn named_tensors(&self) -> Vec<(String, TensorRole, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_all(&mut |name, r, t| out.push((name, r, t)));
        out
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, TensorRole, &mut Tensor<T>)) {
        self.visit_all_mut(&mut |name, r, t| f(&name, r, t));
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Moves gradients computed by `g.backward` into the parameters.
    pub fn absorb_grads(&mut self, g: &mut Graph<T>) -> Result<()> {
        let mut result = Ok(());
        self.visit_all_mut(&mut |_, role, t| {
            if role == TensorRole::Param && result.is_ok() {
                if let Some(grad) = g.take_param_grad(t) {
                    result = t.accumulate_grad(grad);
                }
            }
        });
        result
    }

    pub fn zero_grads(&mut self) {
        self.visit_all_mut(&mut |_, _, t| t.zero_grad());
    }
}
