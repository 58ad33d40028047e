//! Central finite-difference gradient checks.
//!
//! Checks run on an `f64` copy of the parameters so that the differences are
//! not swamped by single-precision rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{DocInput, ModelConfig, Scorer};
use super::tensor::{Gradients, ParameterStore, Real};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_abs_error: f64,
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|, floor)`
    /// over the tensor.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Numeric gradient of `loss` at `params` by central differences.
pub fn finite_difference<F: Real>(
    params: &ParameterStore<F>,
    step: F,
    mut loss: impl FnMut(&ParameterStore<F>) -> Result<F>,
) -> Result<Gradients<F>> {
    let mut grads = Gradients::zeros_like(params);
    let mut work = params.clone();
    let two = F::c(2.0);
    for id in 0..params.len() {
        for j in 0..params.tensor(id).len() {
            let orig = params.tensor(id).data()[j];
            work.tensor_mut(id).data_mut()[j] = orig + step;
            let up = loss(&work)?;
            work.tensor_mut(id).data_mut()[j] = orig - step;
            let down = loss(&work)?;
            work.tensor_mut(id).data_mut()[j] = orig;
            grads.tensor_mut(id).data_mut()[j] = (up - down) / (two * step);
        }
    }
    Ok(grads)
}

/// Denominator floor for tensors whose true gradient is zero (for example
/// attention key biases, which softmax cancels).
pub const F64_FLOOR: f64 = 1e-6;

pub fn compare<F: Real>(analytic: &Gradients<F>, numeric: &Gradients<F>, floor: f64) -> GradCheckReport {
    let tensors = analytic
        .iter()
        .zip(numeric.iter())
        .map(|((name, a), (_, n))| {
            let max_abs_error = a
                .data()
                .iter()
                .zip(n.data())
                .map(|(x, y)| (x.f64() - y.f64()).abs())
                .fold(0.0, f64::max);
            let scale = a.max_abs().f64().max(n.max_abs().f64()).max(floor);
            let rel_error = max_abs_error / scale;
            TensorCheck {
                name: name.to_string(),
                max_abs_error,
                rel_error,
            }
        })
        .collect();
    GradCheckReport { tensors }
}

/// Redraws every parameter from U(-scale, scale), so that no layer sits at
/// a degenerate zero initialization during a check.
pub fn randomize<F: Real>(params: &mut ParameterStore<F>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in 0..params.len() {
        for v in params.tensor_mut(id).data_mut() {
            *v = F::c(rng.gen_range(-scale..scale));
        }
    }
}

/// Checks the full scorer's batch-loss gradient (no dropout).
pub fn check_scorer<F: Real>(
    config: &ModelConfig,
    params: &ParameterStore<F>,
    batch: &[DocInput<'_>],
    step: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let scorer = Scorer::new(config, params)?;
    let (_, analytic) = scorer.loss_and_grad(batch, None)?;
    let numeric = finite_difference(params, F::c(step), |p| Scorer::new(config, p)?.batch_loss(batch, None))?;
    Ok(compare(&analytic, &numeric, floor))
}
