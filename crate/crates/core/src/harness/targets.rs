use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::loss::AttackGoal;
use crate::rng;

/// How each image's attack goal is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GoalPolicy {
    /// The same target for every image; images of that class are skipped.
    Provided {
        target: usize,
    },
    /// Runner-up class on the clean input.
    Easiest,
    /// Least likely class on the clean input.
    Hardest,
    /// Uniform over the wrong classes, seeded per image by the trial seed.
    Random,
    Untargeted,
}

impl GoalPolicy {
    /// Whether the policy reads the victim's clean logits.
    pub fn needs_logits(&self) -> bool {
        matches!(self, GoalPolicy::Easiest | GoalPolicy::Hardest)
    }
}

/// Side length is irrelevant here: `D` is the total pixel count.
/// Returns `√(0.001·D)`, the `255·√(0.001·D)` budget on the `[0, 255]`
/// scale expressed for `[0, 1]` pixels.
pub fn l2_budget(pixels: usize) -> f64 {
    (0.001 * pixels as f64).sqrt()
}

/// Picks the goal for one image. `logits` are the victim's clean logits;
/// only the easiest and hardest policies need them. Returns `None` when the
/// policy cannot apply (a provided target equal to the true label).
pub fn pick_target(
    logits: Option<&[f32]>,
    num_classes: usize,
    true_label: usize,
    policy: GoalPolicy,
    seed: u64,
    image_index: usize,
) -> Option<AttackGoal> {
    let ranked = |pick_max: bool| -> Option<usize> {
        let z = logits?;
        let mut best: Option<usize> = None;
        for (j, &v) in z.iter().enumerate() {
            if j == true_label {
                continue;
            }
            best = match best {
                Some(b) if (pick_max && v <= z[b]) || (!pick_max && v >= z[b]) => Some(b),
                _ => Some(j),
            };
        }
        best
    };
    match policy {
        GoalPolicy::Provided { target } => {
            (target != true_label && target < num_classes).then(|| AttackGoal::targeted(target))
        }
        GoalPolicy::Easiest => ranked(true).map(AttackGoal::targeted),
        GoalPolicy::Hardest => ranked(false).map(AttackGoal::targeted),
        GoalPolicy::Random => {
            if num_classes < 2 {
                return None;
            }
            let mut r = rng::indexed_stream(seed, "target", image_index as u64);
            let k = r.gen_range(0..num_classes - 1);
            Some(AttackGoal::targeted(if k >= true_label {
                k + 1
            } else {
                k
            }))
        }
        GoalPolicy::Untargeted => Some(AttackGoal::untargeted(true_label)),
    }
}
