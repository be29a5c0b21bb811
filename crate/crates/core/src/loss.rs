//! Adversarial losses on logits and their weighted-ensemble fusions.
//!
//! Every loss is oriented so that lower means more adversarial, for both
//! targeted and untargeted goals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Model, ModelError};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("classifier emits {0} logits; at least 2 are required")]
    Degenerate(usize),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("ensemble arity mismatch: {outputs} outputs, {weights} weights")]
    Arity { outputs: usize, weights: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    Targeted,
    Untargeted,
}

/// What the attacker wants: `label` is the target class for targeted
/// attacks and the true class for untargeted ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackGoal {
    pub mode: GoalMode,
    pub label: usize,
}

impl AttackGoal {
    pub fn targeted(target: usize) -> Self {
        Self {
            mode: GoalMode::Targeted,
            label: target,
        }
    }

    pub fn untargeted(true_label: usize) -> Self {
        Self {
            mode: GoalMode::Untargeted,
            label: true_label,
        }
    }

    /// Whether a predicted label satisfies the goal.
    pub fn is_met_by(&self, predicted: usize) -> bool {
        match self.mode {
            GoalMode::Targeted => predicted == self.label,
            GoalMode::Untargeted => predicted != self.label,
        }
    }

    /// Whether the argmax of `logits` (ties to the lowest index) satisfies the goal.
    pub fn is_met_by_logits(&self, logits: &[f32]) -> bool {
        self.is_met_by(argmax(logits))
    }

    fn check(&self, classes: usize) -> Result<(), LossError> {
        if classes < 2 {
            return Err(LossError::Degenerate(classes));
        }
        if self.label >= classes {
            return Err(LossError::Label {
                label: self.label,
                classes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    WeightedProbabilities,
    WeightedLogits,
    WeightedLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    CwMargin { kappa: f32 },
    CrossEntropy,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::CwMargin { kappa: 0.0 }
    }
}

impl LossKind {
    pub fn value(&self, logits: &[f32], goal: &AttackGoal) -> Result<f64, LossError> {
        goal.check(logits.len())?;
        Ok(loss_and_grad(*self, &widen(logits), goal).0)
    }

    /// Loss value and its gradient with respect to the logits.
    pub fn value_and_grad(
        &self,
        logits: &[f32],
        goal: &AttackGoal,
    ) -> Result<(f64, Vec<f64>), LossError> {
        goal.check(logits.len())?;
        Ok(loss_and_grad(*self, &widen(logits), goal))
    }
}

fn widen(z: &[f32]) -> Vec<f64> {
    z.iter().map(|&v| f64::from(v)).collect()
}

/// Index of the largest entry other than `skip`; ties to the lowest index.
fn best_other(z: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in z.iter().enumerate() {
        if j != skip && (best == usize::MAX || v > z[best]) {
            best = j;
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn loss_and_grad(kind: LossKind, z: &[f64], goal: &AttackGoal) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; z.len()];
    let y = goal.label;
    match kind {
        LossKind::CwMargin { kappa } => {
            let floor = -f64::from(kappa);
            let other = best_other(z, y);
            // Targeted pushes the target above the runner-up; untargeted
            // pushes the runner-up above the true class.
            let (up, down) = match goal.mode {
                GoalMode::Targeted => (other, y),
                GoalMode::Untargeted => (y, other),
            };
            let margin = z[up] - z[down];
            // The subgradient stays on the margin branch at the kink.
            if margin >= floor {
                grad[up] = 1.0;
                grad[down] = -1.0;
                (margin, grad)
            } else {
                (floor, grad)
            }
        }
        LossKind::CrossEntropy => {
            let lse = log_sum_exp(z);
            let sign = match goal.mode {
                GoalMode::Targeted => 1.0,
                GoalMode::Untargeted => -1.0,
            };
            for (g, &v) in grad.iter_mut().zip(z) {
                *g = sign * (v - lse).exp();
            }
            grad[y] -= sign;
            (sign * (lse - z[y]), grad)
        }
    }
}

/// C&W margin loss: targeted `max(max_{j≠t} z_j − z_t, −κ)`, untargeted
/// `max(z_y − max_{j≠y} z_j, −κ)`.
pub fn cw_margin_loss(logits: &[f32], goal: &AttackGoal, kappa: f32) -> Result<f64, LossError> {
    LossKind::CwMargin { kappa }.value(logits, goal)
}

/// Targeted: `−log softmax(z)_t`. Untargeted: `log softmax(z)_y`, so that
/// driving the true class's probability down lowers the loss.
pub fn cross_entropy_loss(logits: &[f32], goal: &AttackGoal) -> Result<f64, LossError> {
    LossKind::CrossEntropy.value(logits, goal)
}

/// `softmax(z) − e_y`, the gradient of training cross-entropy.
pub(crate) fn cross_entropy_grad_logits(logits: &[f32], y: usize) -> Vec<f32> {
    let mut p: Vec<f32> = crate::nn::softmax_f64(logits)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    p[y] -= 1.0;
    p
}

fn check_arity(outputs: usize, weights: usize) -> Result<(), LossError> {
    if outputs != weights || outputs == 0 {
        return Err(LossError::Arity { outputs, weights });
    }
    Ok(())
}

/// Fused ensemble loss and, per member, the gradient with respect to that
/// member's logits.
pub(crate) fn ensemble_loss_and_grads(
    outputs: &[&[f32]],
    weights: &[f64],
    fusion: FusionKind,
    loss: LossKind,
    goal: &AttackGoal,
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    check_arity(outputs.len(), weights.len())?;
    let classes = outputs[0].len();
    for z in outputs {
        if z.len() != classes {
            return Err(LossError::Model(ModelError::Shape {
                expected: vec![classes],
                found: vec![z.len()],
            }));
        }
    }
    goal.check(classes)?;
    let zs: Vec<Vec<f64>> = outputs.iter().map(|z| widen(z)).collect();

    match fusion {
        FusionKind::WeightedLoss => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(zs.len());
            for (z, &w) in zs.iter().zip(weights) {
                let (l, g) = loss_and_grad(loss, z, goal);
                total += w * l;
                grads.push(g.into_iter().map(|v| w * v).collect());
            }
            Ok((total, grads))
        }
        FusionKind::WeightedLogits => {
            let mut fused = vec![0.0; classes];
            for (z, &w) in zs.iter().zip(weights) {
                for (f, &v) in fused.iter_mut().zip(z) {
                    *f += w * v;
                }
            }
            let (l, g) = loss_and_grad(loss, &fused, goal);
            let grads = weights
                .iter()
                .map(|&w| g.iter().map(|&v| w * v).collect())
                .collect();
            Ok((l, grads))
        }
        FusionKind::WeightedProbabilities => {
            // Always the cross-entropy form on the mixed probabilities.
            let y = goal.label;
            let log_terms: Vec<f64> = zs
                .iter()
                .zip(weights)
                .map(|(z, &w)| {
                    if w > 0.0 {
                        w.ln() + z[y] - log_sum_exp(z)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let log_mix = log_sum_exp(&log_terms);
            let sign = match goal.mode {
                GoalMode::Targeted => 1.0,
                GoalMode::Untargeted => -1.0,
            };
            let grads = zs
                .iter()
                .zip(&log_terms)
                .map(|(z, &lt)| {
                    let resp = (lt - log_mix).exp();
                    let lse = log_sum_exp(z);
                    let mut g: Vec<f64> =
                        z.iter().map(|&v| sign * resp * (v - lse).exp()).collect();
                    g[y] -= sign * resp;
                    g
                })
                .collect();
            Ok((-sign * log_mix, grads))
        }
    }
}

/// Weighted ensemble loss over member logits.
pub fn ensemble_loss(
    outputs: &[Tensor],
    weights: &[f64],
    fusion: FusionKind,
    loss: LossKind,
    goal: &AttackGoal,
) -> Result<f64, LossError> {
    let views: Vec<&[f32]> = outputs.iter().map(Tensor::data).collect();
    ensemble_loss_and_grads(&views, weights, fusion, loss, goal).map(|(l, _)| l)
}

/// Ensemble loss at `x + delta` together with its gradient with respect to
/// `delta`. Member contributions are summed in the order given.
pub fn ensemble_value_and_gradient(
    models: &[Model],
    x: &Tensor,
    delta: &Tensor,
    weights: &[f64],
    fusion: FusionKind,
    loss: LossKind,
    goal: &AttackGoal,
) -> Result<(f64, Tensor), LossError> {
    check_arity(models.len(), weights.len())?;
    let input = x.add(delta)?;
    let traces = models
        .iter()
        .map(|m| m.trace(&input))
        .collect::<Result<Vec<_>, _>>()?;
    let views: Vec<&[f32]> = traces.iter().map(|t| t.logits()).collect();
    let (value, grads) = ensemble_loss_and_grads(&views, weights, fusion, loss, goal)?;
    let mut total = vec![0.0f32; input.len()];
    for ((model, trace), g) in models.iter().zip(&traces).zip(grads) {
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let upstream: Vec<f32> = g.into_iter().map(|v| v as f32).collect();
        let gx = model.backward(trace, &upstream, None)?;
        for (t, v) in total.iter_mut().zip(gx) {
            *t += v;
        }
    }
    Ok((value, delta.with_data(total)))
}

/// Gradient of the fused ensemble loss with respect to `delta`.
pub fn ensemble_input_gradient(
    models: &[Model],
    x: &Tensor,
    delta: &Tensor,
    weights: &[f64],
    fusion: FusionKind,
    loss: LossKind,
    goal: &AttackGoal,
) -> Result<Tensor, LossError> {
    ensemble_value_and_gradient(models, x, delta, weights, fusion, loss, goal).map(|(_, g)| g)
}
