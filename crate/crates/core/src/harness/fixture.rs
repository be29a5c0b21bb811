use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::zoo::{
    accuracy, build_model, default_zoo_specs, make_synthetic_dataset, train, LabeledDataset,
    TrainConfig, Zoo, ZooError, ZooMember,
};

/// Shape of the synthetic task and zoo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub num_classes: usize,
    /// Samples per class before the train/test split.
    pub per_class: usize,
    pub side: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 60,
            side: 12,
            seed: 7,
        }
    }
}

pub struct Fixture {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub zoo: Zoo,
}

/// Synthetic data plus freshly initialized models for every default spec.
pub fn build_fixture(spec: &FixtureSpec) -> Result<Fixture, ZooError> {
    let data = make_synthetic_dataset(spec.num_classes, spec.per_class, spec.side, spec.seed)?;
    let (train, test) = data.split_by_parity();
    let members = default_zoo_specs(spec.side, spec.num_classes)
        .into_iter()
        .enumerate()
        .map(|(i, (id, s))| {
            Ok(ZooMember {
                id,
                model: build_model(&s, spec.seed.wrapping_add(1000 + i as u64))?,
                accuracy: None,
            })
        })
        .collect::<Result<Vec<_>, ZooError>>()?;
    Ok(Fixture {
        train,
        test,
        zoo: Zoo::new(members)?,
    })
}

/// Trains every member in parallel and records its test accuracy.
pub fn train_zoo(
    zoo: &Zoo,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<Zoo, ZooError> {
    let members = zoo
        .members()
        .par_iter()
        .map(|m| {
            let model = train(&m.model, train_set, cfg)?;
            let acc = accuracy(&model, test_set)?;
            Ok(ZooMember {
                id: m.id.clone(),
                model,
                accuracy: Some(acc),
            })
        })
        .collect::<Result<Vec<_>, ZooError>>()?;
    Zoo::new(members)
}
