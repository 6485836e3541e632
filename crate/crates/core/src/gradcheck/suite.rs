//! Randomized gradient checks over every primitive operation, every layer
//! and a miniature end-to-end network.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradCheck, GradCheckReport};
use crate::autodiff::{Fault, Graph, Var};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ResEmoteNet};
use crate::nn::{ConvBlock, LinearLayer, Mode, Parameterized, ResidualBlock, SeBlock, ShortcutKind, TensorRole};
use crate::tensor::Tensor;

/// Largest magnitude tolerated for a gradient that must vanish exactly.
pub const ZERO_GRAD_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Tiny,
    Small,
}

impl Scale {
    /// Random trials per primitive or layer.
    pub fn trials(self) -> usize {
        match self {
            Scale::Tiny => 5,
            Scale::Small => 50,
        }
    }

    /// Random trials for the end-to-end network checks.
    pub fn model_trials(self) -> usize {
        match self {
            Scale::Tiny => 1,
            Scale::Small => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scale::Tiny => "tiny",
            Scale::Small => "small",
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Scale::Tiny),
            "small" => Ok(Scale::Small),
            _ => Err(Error::Config(format!(
                "unknown grad-check scale {s:?} (expected tiny or small)"
            ))),
        }
    }
}

type Component = fn(&mut ChaCha8Rng, &GradCheck) -> Result<Trial>;

struct Trial {
    report: GradCheckReport,
    problems: Vec<String>,
}

impl From<GradCheckReport> for Trial {
    fn from(report: GradCheckReport) -> Self {
        Trial {
            report,
            problems: Vec::new(),
        }
    }
}

const PRIMITIVES: [(&str, Component); 15] = [
    ("conv2d", conv2d),
    ("max_pool2d", max_pool2d),
    ("global_avg_pool", global_avg_pool),
    ("adaptive_avg_pool", adaptive_avg_pool),
    ("linear", linear),
    ("relu", relu),
    ("sigmoid", sigmoid),
    ("add", add),
    ("mul", mul),
    ("mul_broadcast_channel", mul_broadcast_channel),
    ("batch_norm_train", batch_norm_train),
    ("batch_norm_eval", batch_norm_eval),
    ("reshape", reshape),
    ("sum", sum),
    ("cross_entropy", cross_entropy),
];

const LAYERS: [(&str, Component); 8] = [
    ("conv_block_eval", |r, c| conv_block(r, c, Mode::Eval)),
    ("conv_block_train", |r, c| conv_block(r, c, Mode::Train)),
    ("se_block", se_block),
    ("residual_identity_eval", |r, c| {
        residual(r, c, ShortcutKind::Identity, Mode::Eval)
    }),
    ("residual_identity_train", |r, c| {
        residual(r, c, ShortcutKind::Identity, Mode::Train)
    }),
    ("residual_projection_eval", |r, c| {
        residual(r, c, ShortcutKind::Projection, Mode::Eval)
    }),
    ("residual_projection_train", |r, c| {
        residual(r, c, ShortcutKind::Projection, Mode::Train)
    }),
    ("classifier", classifier),
];

const NETWORK: [(&str, Component); 2] = [
    ("network_eval", |r, c| network(r, c, Mode::Eval)),
    ("network_train", |r, c| network(r, c, Mode::Train)),
];

/// Names of every component, in run order.
pub fn component_names() -> Vec<&'static str> {
    PRIMITIVES
        .iter()
        .chain(&LAYERS)
        .chain(&NETWORK)
        .map(|(n, _)| *n)
        .collect()
}

#[derive(Clone, Debug)]
pub struct ComponentReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    /// Description of the worst element over all trials.
    pub worst: String,
    pub problems: Vec<String>,
    pub passed: bool,
}

impl fmt::Display for ComponentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<27} trials={:<3} max_rel_err={:.3e} {}",
            self.name,
            self.trials,
            self.max_rel_error,
            if self.passed { "ok" } else { "FAIL" }
        )?;
        if !self.passed {
            write!(f, "  worst: {}", self.worst)?;
            for p in &self.problems {
                write!(f, "; {p}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub scale: Scale,
    pub tol: f64,
    pub fault: Option<Fault>,
    pub components: Vec<ComponentReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ComponentReport> {
        self.components.iter().filter(|c| !c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.components.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.components {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "{} of {} components passed (scale {}, tol {:e}",
            self.components.len() - failed,
            self.components.len(),
            self.scale.name(),
            self.tol
        )?;
        if let Some(fault) = self.fault {
            write!(f, ", fault {}x{}", fault.op, fault.scale)?;
        }
        write!(f, ")")
    }
}

/// Runs every component at `scale` with the default step and tolerance.
pub fn run_suite(scale: Scale, fault: Option<Fault>) -> Result<SuiteReport> {
    run_suite_with(&GradCheck::default().with_fault(fault), scale)
}

pub fn run_suite_with(check: &GradCheck, scale: Scale) -> Result<SuiteReport> {
    let components = component_names()
        .into_iter()
        .map(|name| run_component(check, name, scale))
        .collect::<Result<_>>()?;
    Ok(SuiteReport {
        scale,
        tol: check.tol,
        fault: check.fault,
        components,
    })
}

/// Runs one named component. Trials are seeded from the component's
/// position so that every run is reproducible.
pub fn run_component(check: &GradCheck, name: &str, scale: Scale) -> Result<ComponentReport> {
    let all: Vec<_> = PRIMITIVES.iter().chain(&LAYERS).chain(&NETWORK).collect();
    let (index, &(_, component)) = all
        .iter()
        .enumerate()
        .find(|(_, (n, _))| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown grad-check component {name:?}")))?;
    let trials = if NETWORK.iter().any(|(n, _)| *n == name) {
        scale.model_trials()
    } else {
        scale.trials()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x0006_c4ec_0000 + index as u64);
    let mut out = ComponentReport {
        name: name.to_string(),
        trials,
        max_rel_error: 0.0,
        worst: String::new(),
        problems: Vec::new(),
        passed: true,
    };
    for t in 0..trials {
        let trial =
            component(&mut rng, check).map_err(|e| Error::Config(format!("grad check {name}, trial {t}: {e}")))?;
        for e in &trial.report.entries {
            if e.max_rel_error > out.max_rel_error || out.worst.is_empty() {
                out.max_rel_error = e.max_rel_error;
                out.worst = format!(
                    "trial {t} {}[{}] analytic {:.6e} numeric {:.6e}",
                    e.name, e.worst_index, e.analytic, e.numeric
                );
            }
        }
        out.passed &= trial.report.passed() && trial.problems.is_empty();
        out.problems
            .extend(trial.problems.into_iter().map(|p| format!("trial {t} {p}")));
    }
    Ok(out)
}

fn randn(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    Tensor::randn(dims.to_vec(), 1.0, rng)
}

/// Values kept at least 0.05 away from zero.
fn away_from_zero(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    Ok(randn(dims, rng)?.map(|v| v + 0.05f64.copysign(v)))
}

/// A shuffled ladder of distinct values, so pooling windows never tie.
fn distinct(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let n: usize = dims.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05).collect();
    v.shuffle(rng);
    Tensor::from_vec(dims.to_vec(), v)
}

/// `sum(y * r)` for a fixed random `r` derived from `seed`.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = randn(g.dims(y), &mut rng)?;
    let rv = g.leaf(&r);
    let p = g.mul(y, rv)?;
    g.sum(p)
}

fn named(inputs: &[(String, Tensor<f64>)]) -> Vec<(&str, Tensor<f64>)> {
    inputs.iter().map(|(n, t)| (n.as_str(), t.clone())).collect()
}

fn conv2d(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
    let (k, stride, pad) = (rng.gen_range(1..=3), rng.gen_range(1..=2), rng.gen_range(0..=1));
    let with_bias = rng.gen_bool(0.5);
    let seed = rng.gen();
    let mut inputs = vec![
        ("x", randn(&[n, cin, h, w], rng)?),
        ("weight", randn(&[cout, cin, k, k], rng)?),
    ];
    if with_bias {
        inputs.push(("bias", randn(&[cout], rng)?));
    }
    Ok(check
        .run(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)?;
                project(g, y, seed)
            },
            &inputs,
        )?
        .into())
}

fn max_pool2d(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (n, c) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(2..=7), rng.gen_range(2..=7));
    let seed = rng.gen();
    let x = distinct(&[n, c, h, w], rng)?;
    Ok(check
        .run(
            |g, v| {
                let y = g.max_pool2d(v[0], 2, 2)?;
                project(g, y, seed)
            },
            &[("x", x)],
        )?
        .into())
}

fn global_avg_pool(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let dims = [
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(1..=5),
        rng.gen_range(1..=5),
    ];
    let seed = rng.gen();
    let x = randn(&dims, rng)?;
    Ok(check
        .run(
            |g, v| {
                let y = g.global_avg_pool(v[0])?;
                project(g, y, seed)
            },
            &[("x", x)],
        )?
        .into())
}

fn adaptive_avg_pool(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (h, w) = (rng.gen_range(1..=7), rng.gen_range(1..=7));
    let (oh, ow) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
    let dims = [rng.gen_range(1..=2), rng.gen_range(1..=3), h, w];
    let seed = rng.gen();
    let x = randn(&dims, rng)?;
    Ok(check
        .run(
            |g, v| {
                let y = g.adaptive_avg_pool(v[0], oh, ow)?;
                project(g, y, seed)
            },
            &[("x", x)],
        )?
        .into())
}

fn linear(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (n, din, dout) = (rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=4));
    let with_bias = rng.gen_bool(0.5);
    let seed = rng.gen();
    let mut inputs = vec![("x", randn(&[n, din], rng)?), ("weight", randn(&[dout, din], rng)?)];
    if with_bias {
        inputs.push(("bias", randn(&[dout], rng)?));
    }
    Ok(check
        .run(
            |g, v| {
                let y = g.linear(v[0], v[1], v.get(2).copied())?;
                project(g, y, seed)
            },
            &inputs,
        )?
        .into())
}

fn small_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=4);
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

fn relu(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let dims = small_dims(rng);
    let seed = rng.gen();
    let x = away_from_zero(&dims, rng)?;
    Ok(check
        .run(
            |g, v| {
                let y = g.relu(v[0])?;
                project(g, y, seed)
            },
            &[("x", x)],
        )?
        .into())
}

fn sigmoid(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let dims = small_dims(rng);
    let seed = rng.gen();
    let x = Tensor::randn(dims, 3.0, rng)?;
    Ok(check
        .run(
            |g, v| {
                let y = g.sigmoid(v[0])?;
                project(g, y, seed)
            },
            &[("x", x)],
        )?
        .into())
}

fn binary(rng: &mut ChaCha8Rng, check: &GradCheck, multiply: bool) -> Result<Trial> {
    let dims = small_dims(rng);
    let seed = rng.gen();
    let (a, b) = (randn(&dims, rng)?, randn(&dims, rng)?);
    Ok(check
        .run(
            |g, v| {
                let y = if multiply {
                    g.mul(v[0], v[1])?
                } else {
                    g.add(v[0], v[1])?
                };
                project(g, y, seed)
            },
            &[("a", a), ("b", b)],
        )?
        .into())
}

fn add(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    binary(rng, check, false)
}

fn mul(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    binary(rng, check, true)
}

fn mul_broadcast_channel(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (n, c) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
    let dims = [n, c, rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let seed = rng.gen();
    let (x, s) = (randn(&dims, rng)?, randn(&[n, c], rng)?);
    Ok(check
        .run(
            |g, v| {
                let y = g.mul_broadcast_channel(v[0], v[1])?;
                project(g, y, seed)
            },
            &[("x", x), ("scale", s)],
        )?
        .into())
}

fn bn_inputs(rng: &mut ChaCha8Rng) -> Result<(Vec<(&'static str, Tensor<f64>)>, usize)> {
    let c = rng.gen_range(1..=3);
    let dims = [rng.gen_range(2..=3), c, rng.gen_range(1..=3), rng.gen_range(2..=3)];
    Ok((
        vec![
            ("x", Tensor::randn(dims, 2.0, rng)?.map(|v| v + 0.5)),
            ("gamma", randn(&[c], rng)?.map(|v| 1.0 + 0.3 * v)),
            ("beta", randn(&[c], rng)?),
        ],
        c,
    ))
}

fn batch_norm_train(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (inputs, _) = bn_inputs(rng)?;
    let seed = rng.gen();
    Ok(check
        .run(
            |g, v| {
                let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                project(g, y, seed)
            },
            &inputs,
        )?
        .into())
}

fn batch_norm_eval(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (inputs, c) = bn_inputs(rng)?;
    let seed = rng.gen();
    let mean = randn(&[c], rng)?;
    let var = Tensor::from_vec([c], (0..c).map(|_| rng.gen_range(0.2..2.0)).collect())?;
    Ok(check
        .run(
            |g, v| {
                let y = g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
                project(g, y, seed)
            },
            &inputs,
        )?
        .into())
}

fn reshape(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let dims: Vec<usize> = (0..rng.gen_range(2..=4)).map(|_| rng.gen_range(1..=4)).collect();
    let seed = rng.gen();
    let x = randn(&dims, rng)?;
    Ok(check
        .run(
            |g, v| {
                let y = g.flatten(v[0])?;
                project(g, y, seed)
            },
            &[("x", x)],
        )?
        .into())
}

fn sum(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let dims = small_dims(rng);
    let x = randn(&dims, rng)?;
    Ok(check.run(|g, v| g.sum(v[0]), &[("x", x)])?.into())
}

fn cross_entropy(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (n, k) = (rng.gen_range(1..=4), rng.gen_range(2..=7));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let logits = Tensor::randn([n, k], 2.0, rng)?;
    Ok(check
        .run(|g, v| Ok(g.cross_entropy(v[0], &labels)?.0), &[("logits", logits)])?
        .into())
}

/// Gives batch-norm affine parameters, running statistics and biases
/// non-trivial random values.
fn randomize(name: &str, t: &mut Tensor<f64>, rng: &mut ChaCha8Rng) {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    let fill = |t: &mut Tensor<f64>, f: &mut dyn FnMut() -> f64| t.values_mut().iter_mut().for_each(|v| *v = f());
    match leaf {
        "gamma" => fill(t, &mut || rng.gen_range(0.7..1.3)),
        "beta" | "bias" | "running_mean" => fill(t, &mut || rng.gen_range(-0.3..0.3)),
        "running_var" => fill(t, &mut || rng.gen_range(0.5..1.5)),
        _ => {}
    }
}

/// Convolution biases feeding a train-mode batch norm have an identically
/// zero gradient, so they are excluded from the numeric comparison.
fn feeds_batch_norm(name: &str) -> bool {
    name.ends_with("bias") && !name.starts_with("classifier")
}

fn layer_inputs<L: Parameterized<f64>>(layer: &L, mode: Mode) -> Vec<(String, Tensor<f64>)> {
    let mut out = Vec::new();
    layer.visit("", &mut |name, role, t| {
        if role == TensorRole::Param && !(mode == Mode::Train && feeds_batch_norm(&name)) {
            out.push((name, t.clone()));
        }
    });
    out
}

fn bind<L: Parameterized<f64>>(layer: &mut L, names: &[String], tensors: &[Tensor<f64>]) {
    layer.visit_mut("", &mut |name, _, t| {
        if let Some(i) = names.iter().position(|n| *n == name) {
            *t = tensors[i].clone();
        }
    });
}

/// Asserts that every convolution bias feeding a train-mode batch norm gets
/// an exactly vanishing gradient.
fn zero_bias_grads(
    check: &GradCheck,
    tensors: &[(String, Tensor<f64>)],
    mut f: impl FnMut(&mut Graph<f64>) -> Result<Var>,
) -> Result<Vec<String>> {
    let mut g = Graph::new().with_fault(check.fault);
    let vars: Vec<(&str, Var)> = tensors
        .iter()
        .filter(|(n, _)| feeds_batch_norm(n))
        .map(|(n, t)| (n.as_str(), g.param(t)))
        .collect();
    let out = f(&mut g)?;
    g.backward(out)?;
    Ok(vars
        .into_iter()
        .filter_map(|(n, v)| {
            let m = g
                .grad(v)
                .map_or(0.0, |gr| gr.iter().fold(0.0f64, |a, x| a.max(x.abs())));
            (m > ZERO_GRAD_TOL).then(|| format!("{n} gradient {m:.3e} should vanish"))
        })
        .collect())
}

fn layer_check<L>(
    rng: &mut ChaCha8Rng,
    check: &GradCheck,
    mut layer: L,
    x_dims: &[usize],
    mode: Mode,
    forward: fn(&mut L, &mut Graph<f64>, Var, Mode) -> Result<Var>,
) -> Result<Trial>
where
    L: Parameterized<f64> + Clone,
{
    layer.visit_mut("", &mut |name, _, t| randomize(&name, t, rng));
    let seed = rng.gen();
    let x = randn(x_dims, rng)?;
    let params = layer_inputs(&layer, mode);
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs = vec![("x".to_string(), x.clone())];
    inputs.extend(params);
    let report = check.run_with(
        |g, v, t| {
            let mut l = layer.clone();
            bind(&mut l, &names, &t[1..]);
            let y = forward(&mut l, g, v[0], mode)?;
            project(g, y, seed)
        },
        &named(&inputs),
    )?;
    let mut problems = Vec::new();
    if mode == Mode::Train {
        let mut all = Vec::new();
        layer.visit("", &mut |n, _, t| all.push((n, t.clone())));
        let mut l = layer.clone();
        problems = zero_bias_grads(check, &all, |g| {
            let xv = g.leaf(&x);
            let y = forward(&mut l, g, xv, mode)?;
            project(g, y, seed)
        })?;
    }
    Ok(Trial { report, problems })
}

fn conv_block(rng: &mut ChaCha8Rng, check: &GradCheck, mode: Mode) -> Result<Trial> {
    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let dims = [rng.gen_range(2..=3), cin, rng.gen_range(2..=5), rng.gen_range(2..=5)];
    let mut block = ConvBlock::<f64>::new(cin, cout, rng)?;
    block.bn.mode = mode;
    layer_check(rng, check, block, &dims, mode, |b, g, x, m| match m {
        Mode::Train => b.forward(g, x),
        Mode::Eval => b.forward_eval(g, x),
    })
}

fn se_block(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let hidden = rng.gen_range(1..=3);
    let reduction = rng.gen_range(1..=3);
    let c = hidden * reduction;
    let dims = [rng.gen_range(1..=3), c, rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let block = SeBlock::<f64>::new(c, reduction, rng)?;
    layer_check(rng, check, block, &dims, Mode::Eval, |b, g, x, _| b.forward(g, x))
}

fn residual(rng: &mut ChaCha8Rng, check: &GradCheck, kind: ShortcutKind, mode: Mode) -> Result<Trial> {
    let (cin, cout, stride) = match kind {
        ShortcutKind::Identity => {
            let c = rng.gen_range(1..=3);
            (c, c, 1)
        }
        // A single input channel would make each 1x1 shortcut weight a scale
        // that the following train-mode batch norm cancels.
        ShortcutKind::Projection => (rng.gen_range(2..=3), rng.gen_range(1..=3), rng.gen_range(1..=2)),
    };
    let side = rng.gen_range(3..=5);
    let dims = [2, cin, side, side];
    let mut block = ResidualBlock::<f64>::with_shortcut(cin, cout, stride, kind, rng)?;
    block.set_mode(mode);
    layer_check(rng, check, block, &dims, mode, |b, g, x, m| match m {
        Mode::Train => b.forward(g, x),
        Mode::Eval => b.forward_eval(g, x),
    })
}

fn classifier(rng: &mut ChaCha8Rng, check: &GradCheck) -> Result<Trial> {
    let (din, dout) = (rng.gen_range(1..=6), rng.gen_range(2..=7));
    let dims = [rng.gen_range(1..=3), din];
    let layer = LinearLayer::<f64>::new(din, dout, rng)?;
    layer_check(rng, check, layer, &dims, Mode::Eval, |l, g, x, _| l.forward(g, x))
}

/// The miniature network end to end, under mean cross-entropy.
fn network(rng: &mut ChaCha8Rng, check: &GradCheck, mode: Mode) -> Result<Trial> {
    let cfg = ModelConfig {
        seed: rng.gen(),
        ..ModelConfig::tiny()
    };
    let mut template = ResEmoteNet::<f64>::build(&cfg)?;
    template.for_each_tensor_mut(|name, _, t| randomize(name, t, rng));
    let n = 2;
    let x = randn(&[n, cfg.input_channels, cfg.input_size, cfg.input_size], rng)?;
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.num_classes)).collect();

    let params: Vec<(String, Tensor<f64>)> = template
        .parameters()
        .into_iter()
        .filter(|(name, _)| !(mode == Mode::Train && feeds_batch_norm(name)))
        .map(|(name, t)| (name, t.clone()))
        .collect();
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs = vec![("x".to_string(), x.clone())];
    inputs.extend(params);

    let run = |m: &mut ResEmoteNet<f64>, g: &mut Graph<f64>, xv: Var| -> Result<Var> {
        let logits = m.forward(g, xv, mode)?;
        Ok(g.cross_entropy(logits, &labels)?.0)
    };
    let report = check.run_with(
        |g, v, t| {
            let mut m = template.clone();
            m.for_each_tensor_mut(|name, _, slot| {
                if let Some(i) = names.iter().position(|n| n == name) {
                    *slot = t[i + 1].clone();
                }
            });
            run(&mut m, g, v[0])
        },
        &named(&inputs),
    )?;
    let mut problems = Vec::new();
    if mode == Mode::Train {
        let all: Vec<(String, Tensor<f64>)> = template.parameters().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut m = template.clone();
        problems = zero_bias_grads(check, &all, |g| {
            let xv = g.leaf(&x);
            run(&mut m, g, xv)
        })?;
    }
    Ok(Trial { report, problems })
}
