//! Autograd against central finite differences on a few scalar entries.
//!
//! Networks with leaky ReLU, hinge or absolute-value terms are piecewise
//! smooth, so a step of `h` can cross a kink and skew the difference by O(1)
//! for that entry. A miss at `h` that agrees at `h / 10` is reported as
//! `kinked` rather than as a wrong gradient; callers bound how many they
//! accept.

use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// One scalar entry of a variable.
pub struct Probe {
    pub name: String,
    pub var: Var,
    pub index: usize,
}

/// `count` entries drawn uniformly over the scalars of the variables whose
/// names start with `prefix`.
pub fn store_probes(store: &ParamStore, prefix: &str, count: usize, seed: u64) -> Result<Vec<Probe>> {
    let names: Vec<String> = store.names().filter(|n| n.starts_with(prefix)).map(String::from).collect();
    let vars: Vec<Var> = names.iter().filter_map(|n| store.get(n).cloned()).collect();
    let sizes: Vec<usize> = vars.iter().map(|v| v.elem_count()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid(format!("no parameters under `{prefix}`")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            let mut i = 0;
            while k >= sizes[i] {
                k -= sizes[i];
                i += 1;
            }
            Probe {
                name: names[i].clone(),
                var: vars[i].clone(),
                index: k,
            }
        })
        .collect())
}

pub fn var_probes(name: &str, var: &Var, count: usize, seed: u64) -> Vec<Probe> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Probe {
            name: name.to_string(),
            var: var.clone(),
            index: rng.random_range(0..var.elem_count()),
        })
        .collect()
}

fn nudge(var: &Var, index: usize, delta: f64) -> Result<()> {
    let mut v: Vec<f64> = var.flatten_all()?.to_vec1()?;
    v[index] += delta;
    var.set(&Tensor::from_vec(v, var.shape().clone(), var.device())?)?;
    Ok(())
}

fn central(var: &Var, index: usize, h: f64, loss: &impl Fn() -> Result<Tensor>) -> Result<f64> {
    nudge(var, index, h)?;
    let up = loss()?.to_scalar::<f64>()?;
    nudge(var, index, -2.0 * h)?;
    let down = loss()?.to_scalar::<f64>()?;
    nudge(var, index, h)?;
    Ok((up - down) / (2.0 * h))
}

/// `|a - b| / max(|a|, |b|)`, floored so two near-zero values compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub kinked: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub comparisons: Vec<Comparison>,
}

impl GradCheck {
    /// Largest relative error over the probes not flagged as kinked.
    pub fn worst(&self) -> f64 {
        self.comparisons.iter().filter(|c| !c.kinked).map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn kinked(&self) -> usize {
        self.comparisons.iter().filter(|c| c.kinked).count()
    }

    pub fn passed(&self, tol: f64, max_kinked: usize) -> bool {
        self.worst() < tol && self.kinked() <= max_kinked
    }
}

/// Compares autograd with `(f(θ+h) - f(θ-h)) / 2h` for every probe. The loss
/// must be an f64 scalar and must be a pure function of the probed variables.
pub fn check(probes: &[Probe], h: f64, tol: f64, loss: impl Fn() -> Result<Tensor>) -> Result<GradCheck> {
    let l = loss()?;
    if l.dtype() != DType::F64 || l.elem_count() != 1 {
        return Err(Error::invalid("gradient checks need an f64 scalar loss"));
    }
    let grads = l.backward()?;
    let mut comparisons = Vec::with_capacity(probes.len());
    for p in probes {
        let analytic = match grads.get(p.var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?[p.index],
            None => 0.0,
        };
        let numeric = central(&p.var, p.index, h, &loss)?;
        let rel_error = relative_error(analytic, numeric);
        let kinked = rel_error >= tol && relative_error(analytic, central(&p.var, p.index, h / 10.0, &loss)?) < tol;
        comparisons.push(Comparison {
            name: p.name.clone(),
            index: p.index,
            analytic,
            numeric,
            rel_error,
            kinked,
        });
    }
    Ok(GradCheck { comparisons })
}
