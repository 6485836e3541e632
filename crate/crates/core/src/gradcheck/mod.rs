//! Central finite-difference verification of analytic gradients.
//!
//! Always runs in `f64`. The relative error of one element is
//! `|a - n| / max(1e-8, |a| + |n|)` where `a` is the analytic and `n` the
//! numeric derivative.

use std::fmt;

use crate::autodiff::{Fault, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

mod suite;

pub use suite::{
    component_names, run_component, run_suite, run_suite_with, ComponentReport, Scale, SuiteReport, ZERO_GRAD_TOL,
};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<28} max_rel_err={:.3e} at {} (analytic {:.6e}, numeric {:.6e}) {}",
                e.name,
                e.max_rel_error,
                e.worst_index,
                e.analytic,
                e.numeric,
                if e.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Configured finite-difference check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub epsilon: f64,
    pub tol: f64,
    pub fault: Option<Fault>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            epsilon: DEFAULT_EPSILON,
            tol: DEFAULT_TOL,
            fault: None,
        }
    }
}

impl GradCheck {
    pub fn new(epsilon: f64, tol: f64) -> Self {
        GradCheck {
            epsilon,
            tol,
            fault: None,
        }
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    /// Checks `d f / d input` for every named input. `f` receives one
    /// variable per input, in order, and must return a scalar.
    pub fn run<F>(&self, mut f: F, inputs: &[(&str, Tensor<f64>)]) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        self.run_with(|g, v, _| f(g, v), inputs)
    }

    /// Like [`GradCheck::run`], but `f` also receives the input tensors.
    /// Inputs are registered with [`Graph::param`], so a layer built from
    /// clones of these tensors resolves to the same variables.
    pub fn run_with<F>(&self, mut f: F, inputs: &[(&str, Tensor<f64>)]) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Graph<f64>, &[Var], &[Tensor<f64>]) -> Result<Var>,
    {
        for (name, t) in inputs {
            if let Some(index) = t.values().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: (*name).to_string(),
                    index,
                });
            }
        }
        // Private copies so that two inputs never share storage.
        let fresh = |t: &Tensor<f64>| Tensor::from_vec(t.dims().to_vec(), t.values().to_vec());
        let tensors = inputs
            .iter()
            .map(|(_, t)| Ok(fresh(t)?.with_requires_grad(true)))
            .collect::<Result<Vec<_>>>()?;

        let mut graph = Graph::new().with_fault(self.fault);
        let vars: Vec<Var> = tensors.iter().map(|t| graph.param(t)).collect();
        let out = f(&mut graph, &vars, &tensors)?;
        graph.backward(out)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, (_, t))| {
                graph
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        drop(graph);

        let mut eval = |point: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::no_grad();
            let vs: Vec<Var> = point.iter().map(|t| g.param(t)).collect();
            let out = f(&mut g, &vs, point)?;
            Ok(g.value(out).values()[0])
        };

        let mut point = tensors;
        let mut entries = Vec::with_capacity(inputs.len());
        for (k, (name, original)) in inputs.iter().enumerate() {
            let mut entry = GradCheckEntry {
                name: (*name).to_string(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
                passed: true,
            };
            for i in 0..original.numel() {
                let x0 = original.values()[i];
                point[k].values_mut()[i] = x0 + self.epsilon;
                let plus = eval(&point)?;
                point[k].values_mut()[i] = x0 - self.epsilon;
                let minus = eval(&point)?;
                point[k].values_mut()[i] = x0;
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("f at perturbed {name}"),
                        index: i,
                    });
                }
                let numeric = (plus - minus) / (2.0 * self.epsilon);
                let a = analytic[k][i];
                if !a.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("analytic gradient of {name}"),
                        index: i,
                    });
                }
                let err = relative_error(a, numeric);
                if err > entry.max_rel_error || i == 0 {
                    entry.max_rel_error = err;
                    entry.worst_index = i;
                    entry.analytic = a;
                    entry.numeric = numeric;
                }
            }
            entry.passed = entry.max_rel_error <= self.tol;
            entries.push(entry);
        }
        Ok(GradCheckReport { tol: self.tol, entries })
    }
}

/// Finite-difference check with the given step and tolerance.
pub fn grad_check<F>(f: F, inputs: &[(&str, Tensor<f64>)], epsilon: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    GradCheck::new(epsilon, tol).run(f, inputs)
}
