#![allow(dead_code)]

pub mod reference;

use std::sync::OnceLock;

use bases_core::harness::{build_fixture, pick_target, train_zoo, FixtureSpec, GoalPolicy};
use bases_core::loss::AttackGoal;
use bases_core::nn::Model;
use bases_core::pm::{Budget, PmConfig};
use bases_core::search::SearchConfig;
use bases_core::tensor::Tensor;
use bases_core::zoo::{LabeledDataset, TrainConfig, Zoo};

pub const SURROGATES: [&str; 6] = ["cnn-a", "cnn-b", "cnn-c", "mlp-a", "mlp-b", "mlp-c"];
pub const VICTIMS: [&str; 2] = ["victim-cnn", "victim-mlp"];
pub const IMAGES: usize = 100;

pub struct Trained {
    pub zoo: Zoo,
    pub test: LabeledDataset,
}

/// The default synthetic task with every default zoo member trained.
pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let fx = build_fixture(&FixtureSpec::default()).expect("fixture");
        let zoo =
            train_zoo(&fx.zoo, &fx.train, &fx.test, &TrainConfig::default()).expect("training");
        Trained { zoo, test: fx.test }
    })
}

pub fn surrogates(ids: &[&str]) -> Vec<Model> {
    trained().zoo.select(ids).expect("known ids")
}

pub fn victim(id: &str) -> Model {
    trained().zoo.get(id).expect("known victim").clone()
}

/// ε = 16/255 under ℓ∞, ten steps, default loss and fusion.
pub fn pm_config() -> PmConfig {
    PmConfig::with_budget(Budget::linf(16.0 / 255.0))
}

pub fn search_config(n: usize) -> SearchConfig {
    SearchConfig::new(n, pm_config())
}

/// A test image the victim classifies correctly, with its seeded random target.
pub struct Case {
    pub index: usize,
    pub x: Tensor,
    pub label: usize,
    pub goal: AttackGoal,
}

/// Correctly classified images among the first `limit` test images.
pub fn cases(victim: &Model, policy: GoalPolicy, limit: usize) -> Vec<Case> {
    let t = trained();
    (0..limit.min(t.test.len()))
        .filter_map(|i| {
            let x = &t.test.images[i];
            let y = t.test.labels[i];
            let z = victim.forward(x).expect("forward");
            if z.argmax() != y {
                return None;
            }
            let goal = pick_target(Some(z.data()), t.test.num_classes, y, policy, 0, i)?;
            Some(Case {
                index: i,
                x: x.clone(),
                label: y,
                goal,
            })
        })
        .collect()
}
