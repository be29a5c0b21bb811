use serde::{Deserialize, Serialize};

use super::bases::default_eta;
use super::weights::{normalize_weights, WeightVector};
use super::AttackError;
use crate::loss::AttackGoal;
use crate::nn::Model;
use crate::pm::{pm_run, PmConfig};
use crate::tensor::Tensor;

/// Reference optimizer that sees the victim directly: full finite-difference
/// gradient of the victim loss over all weights at every iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhiteboxConfig {
    pub iterations: usize,
    /// Finite-difference half-width in weight space.
    pub fd_step: f64,
    pub learning_rate: f64,
    pub pm: PmConfig,
}

impl WhiteboxConfig {
    /// As many iterations as a query-based search gets outer iterations
    /// from `max_queries`, with step and learning rate both `1/(10N)`.
    pub fn new(num_surrogates: usize, pm: PmConfig, max_queries: usize) -> Self {
        Self {
            iterations: max_queries.saturating_sub(1) / 2,
            fd_step: default_eta(num_surrogates),
            learning_rate: default_eta(num_surrogates),
            pm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteboxOutcome {
    pub success: bool,
    pub delta: Tensor,
    pub weights: WeightVector,
    /// `success_by_iteration[k]`: success observed at or before iteration `k`
    /// (iteration 0 is the equal-weights start).
    pub success_by_iteration: Vec<bool>,
    pub victim_losses: Vec<f64>,
    /// PM evaluations spent; the victim is never queried as an oracle.
    pub pm_runs: usize,
}

fn victim_loss(
    victim: &Model,
    x_star: &Tensor,
    goal: &AttackGoal,
    pm: &PmConfig,
) -> Result<(f64, bool), AttackError> {
    let z = victim.forward(x_star)?;
    Ok((
        pm.loss.value(z.data(), goal)?,
        goal.is_met_by_logits(z.data()),
    ))
}

/// Central-difference estimate of `∂L_v/∂w`, each probe a PM run from `delta_init`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_weight_gradient(
    x: &Tensor,
    goal: &AttackGoal,
    victim: &Model,
    surrogates: &[Model],
    weights: &WeightVector,
    delta_init: &Tensor,
    pm: &PmConfig,
    h: f64,
) -> Result<Vec<f64>, AttackError> {
    let mut grad = Vec::with_capacity(weights.len());
    for n in 0..weights.len() {
        let probe = |sign: f64| -> Result<f64, AttackError> {
            let mut raw = weights.as_slice().to_vec();
            raw[n] += sign * h;
            let w = normalize_weights(&raw);
            let out = pm_run(x, goal, surrogates, w.as_slice(), delta_init, pm)?;
            Ok(victim_loss(victim, &out.x_star, goal, pm)?.0)
        };
        let up = probe(1.0)?;
        let down = probe(-1.0)?;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Gradient descent on the weights with whitebox access to the victim.
pub fn whitebox_weight_attack(
    x: &Tensor,
    goal: &AttackGoal,
    victim: &Model,
    surrogates: &[Model],
    cfg: &WhiteboxConfig,
) -> Result<WhiteboxOutcome, AttackError> {
    cfg.pm.validate()?;
    if surrogates.is_empty() {
        return Err(AttackError::Config("empty surrogate ensemble".into()));
    }
    if cfg.fd_step.is_nan()
        || cfg.fd_step <= 0.0
        || cfg.learning_rate.is_nan()
        || cfg.learning_rate <= 0.0
    {
        return Err(AttackError::Config(
            "fd_step and learning_rate must be positive".into(),
        ));
    }
    let n = surrogates.len();
    let mut weights = WeightVector::uniform(n);
    let first = pm_run(
        x,
        goal,
        surrogates,
        weights.as_slice(),
        &Tensor::zeros(x.shape()),
        &cfg.pm,
    )?;
    let mut delta = first.delta;
    let (loss, mut success) = victim_loss(victim, &first.x_star, goal, &cfg.pm)?;
    let mut out = WhiteboxOutcome {
        success,
        delta: delta.clone(),
        weights: weights.clone(),
        success_by_iteration: vec![success],
        victim_losses: vec![loss],
        pm_runs: 1,
    };
    for _ in 0..cfg.iterations {
        if success {
            out.success_by_iteration.push(true);
            continue;
        }
        if n > 1 {
            let grad = estimate_weight_gradient(
                x,
                goal,
                victim,
                surrogates,
                &weights,
                &delta,
                &cfg.pm,
                cfg.fd_step,
            )?;
            out.pm_runs += 2 * n;
            let raw: Vec<f64> = weights
                .as_slice()
                .iter()
                .zip(&grad)
                .map(|(w, g)| w - cfg.learning_rate * g)
                .collect();
            weights = normalize_weights(&raw);
        }
        let step = pm_run(x, goal, surrogates, weights.as_slice(), &delta, &cfg.pm)?;
        out.pm_runs += 1;
        delta = step.delta;
        let (loss, ok) = victim_loss(victim, &step.x_star, goal, &cfg.pm)?;
        success = ok;
        out.success_by_iteration.push(ok);
        out.victim_losses.push(loss);
        out.delta = delta.clone();
        out.weights = weights.clone();
    }
    out.success = success;
    Ok(out)
}
