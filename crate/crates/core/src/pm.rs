//! The perturbation machine: signed-gradient PGD on a weighted surrogate
//! ensemble, projected onto the perturbation budget after every step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{ensemble_value_and_gradient, AttackGoal, FusionKind, LossError, LossKind};
use crate::nn::{Model, ModelError};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmError {
    #[error("invalid perturbation config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

impl From<ModelError> for PmError {
    fn from(e: ModelError) -> Self {
        PmError::Loss(LossError::Model(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
}

/// Perturbation budget on the `[0, 1]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub norm: Norm,
    pub epsilon: f32,
}

impl Budget {
    pub fn linf(epsilon: f32) -> Self {
        Self {
            norm: Norm::Linf,
            epsilon,
        }
    }

    pub fn l2(epsilon: f32) -> Self {
        Self {
            norm: Norm::L2,
            epsilon,
        }
    }

    /// `‖δ‖ ≤ ε` in the budget's norm and `x + δ ∈ [0, 1]`.
    pub fn is_feasible(&self, delta: &Tensor, x: &Tensor) -> bool {
        let in_ball = match self.norm {
            Norm::Linf => delta.max_abs() <= self.epsilon,
            Norm::L2 => delta.l2_norm() <= f64::from(self.epsilon),
        };
        in_ball
            && delta
                .data()
                .iter()
                .zip(x.data())
                .all(|(&d, &p)| (0.0..=1.0).contains(&(p + d)))
    }
}

/// PGD step size `3ε/T`.
pub fn default_step(budget: &Budget, steps: usize) -> f32 {
    3.0 * budget.epsilon / steps as f32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmConfig {
    pub steps: usize,
    pub step_size: f32,
    pub budget: Budget,
    pub loss: LossKind,
    pub fusion: FusionKind,
}

impl PmConfig {
    /// Ten steps of size `3ε/T`, C&W margin with κ = 0, weighted-loss fusion.
    pub fn with_budget(budget: Budget) -> Self {
        let steps = 10;
        Self {
            steps,
            step_size: default_step(&budget, steps),
            budget,
            loss: LossKind::default(),
            fusion: FusionKind::WeightedLoss,
        }
    }

    pub fn validate(&self) -> Result<(), PmError> {
        if self.steps == 0 {
            return Err(PmError::Config("steps must be at least 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(PmError::Config(format!("bad step size {}", self.step_size)));
        }
        if !(self.budget.epsilon.is_finite() && self.budget.epsilon > 0.0) {
            return Err(PmError::Config(format!(
                "bad epsilon {}",
                self.budget.epsilon
            )));
        }
        Ok(())
    }
}

/// Projects `delta` onto the budget ball and then into the pixel box
/// (`x + δ ∈ [0, 1]`). Idempotent: a projected tensor is a fixed point.
pub fn project(delta: &Tensor, x: &Tensor, budget: &Budget) -> Tensor {
    let eps = budget.epsilon;
    let mut out: Vec<f32> = match budget.norm {
        Norm::Linf => delta.data().iter().map(|&d| d.clamp(-eps, eps)).collect(),
        Norm::L2 => {
            let norm = delta.l2_norm();
            if norm <= f64::from(eps) {
                delta.data().to_vec()
            } else {
                // Rounding can leave the rescaled norm a hair above ε;
                // shrink until the check that callers use passes.
                let mut scale = f64::from(eps) / norm;
                loop {
                    let scaled: Vec<f32> = delta
                        .data()
                        .iter()
                        .map(|&d| (f64::from(d) * scale) as f32)
                        .collect();
                    if Tensor::from_vec(scaled.clone()).l2_norm() <= f64::from(eps) {
                        break scaled;
                    }
                    scale *= 1.0 - 1e-7;
                }
            }
        }
    };
    // Clamping toward zero never increases either norm.
    for (d, &p) in out.iter_mut().zip(x.data()) {
        *d = d.clamp(-p, 1.0 - p);
    }
    delta.with_data(out)
}

/// Result of one PM run.
#[derive(Debug, Clone, PartialEq)]
pub struct PmOutput {
    pub delta: Tensor,
    pub x_star: Tensor,
}

/// Checks that `weights` are finite, non-negative and sum to one.
pub(crate) fn check_simplex(weights: &[f64]) -> Result<(), PmError> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty()
        || weights.iter().any(|w| w.is_nan() || *w < 0.0)
        || (sum - 1.0).abs() > 1e-9
    {
        return Err(PmError::Config(format!(
            "weights {weights:?} are not on the simplex"
        )));
    }
    Ok(())
}

/// Runs `T` iterations of `δ ← Π(δ − λ·sign(∇_δ L_ens))` starting from the
/// projected `delta_init`.
pub fn pm_run(
    x: &Tensor,
    goal: &AttackGoal,
    models: &[Model],
    weights: &[f64],
    delta_init: &Tensor,
    cfg: &PmConfig,
) -> Result<PmOutput, PmError> {
    pm_run_observed(x, goal, models, weights, delta_init, cfg, |_, _, _| {})
}

/// [`pm_run`] with a hook called after every projected step with
/// `(step, δ, ensemble loss before the step)`.
pub fn pm_run_observed<F>(
    x: &Tensor,
    goal: &AttackGoal,
    models: &[Model],
    weights: &[f64],
    delta_init: &Tensor,
    cfg: &PmConfig,
    mut observe: F,
) -> Result<PmOutput, PmError>
where
    F: FnMut(usize, &Tensor, f64),
{
    cfg.validate()?;
    check_simplex(weights)?;
    if delta_init.shape() != x.shape() {
        return Err(ModelError::Shape {
            expected: x.shape().to_vec(),
            found: delta_init.shape().to_vec(),
        }
        .into());
    }
    let mut delta = project(delta_init, x, &cfg.budget);
    for step in 0..cfg.steps {
        let (value, grad) =
            ensemble_value_and_gradient(models, x, &delta, weights, cfg.fusion, cfg.loss, goal)?;
        let stepped: Vec<f32> = delta
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&d, &g)| d - cfg.step_size * sign(g))
            .collect();
        delta = project(&delta.with_data(stepped), x, &cfg.budget);
        observe(step, &delta, value);
    }
    let x_star = x.add(&delta)?;
    Ok(PmOutput { delta, x_star })
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
