use rand::seq::SliceRandom;

use crate::loss::cross_entropy_grad_logits;
use crate::nn::{log_sum_exp, Model};
use crate::rng;
use crate::tensor::Tensor;

use super::{LabeledDataset, ZooError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
            weight_decay: 1e-4,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ZooError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ZooError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(ZooError::Config(
                "learning rate and weight decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Minibatch SGD on softmax cross-entropy.
pub fn train(model: &Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Model, ZooError> {
    train_with_history(model, data, cfg).map(|(m, _)| m)
}

/// Like [`train`], also returning the mean training loss of every epoch
/// (measured on the fly, before each batch's update).
pub fn train_with_history(
    model: &Model,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<f64>), ZooError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ZooError::Dataset("cannot train on an empty dataset".into()));
    }
    if data.num_classes != model.num_classes() {
        return Err(ZooError::Dataset(format!(
            "dataset has {} classes, model emits {}",
            data.num_classes,
            model.num_classes()
        )));
    }
    let mut current = model.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::indexed_stream(
            cfg.seed,
            "batch-order",
            epoch as u64,
        ));
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f32>> = current
                .params()
                .tensors
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect();
            for &i in batch {
                let trace = current.trace(&data.images[i])?;
                let logits = trace.logits();
                let y = data.labels[i];
                epoch_loss += log_sum_exp(logits) - f64::from(logits[y]);
                let upstream = cross_entropy_grad_logits(logits, y);
                current.backward(&trace, &upstream, Some(&mut grads))?;
            }
            if !epoch_loss.is_finite() {
                return Err(ZooError::Diverged { epoch });
            }
            let scale = cfg.learning_rate / batch.len() as f32;
            let decay = cfg.learning_rate * cfg.weight_decay;
            let tensors: Vec<Tensor> = current
                .params()
                .tensors
                .iter()
                .zip(&grads)
                .map(|(t, g)| {
                    t.with_data(
                        t.data()
                            .iter()
                            .zip(g)
                            .map(|(&w, &gw)| w - scale * gw - decay * w)
                            .collect(),
                    )
                })
                .collect();
            if tensors.iter().any(|t| !t.is_finite()) {
                return Err(ZooError::Diverged { epoch });
            }
            current = current.replace_params(tensors);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok((current, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, ModelSpec};
    use crate::zoo::{accuracy, build_model, make_synthetic_dataset};

    fn small_mlp(side: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape: vec![1, side, side],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: side * side,
                    out_features: 16,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_features: 16,
                    out_features: classes,
                },
            ],
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let data = make_synthetic_dataset(2, 8, 6, 1).unwrap();
        let m = build_model(&small_mlp(6, 2), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let trained = train(&m, &data, &cfg).unwrap();
        assert_eq!(trained.params(), m.params());
    }

    #[test]
    fn two_class_training_reaches_high_accuracy() {
        let data = make_synthetic_dataset(2, 60, 8, 11).unwrap();
        let (tr, te) = data.split_by_parity();
        let m = build_model(&small_mlp(8, 2), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let trained = train(&m, &tr, &cfg).unwrap();
        let acc = accuracy(&trained, &te).unwrap();
        assert!(acc >= 0.9, "test accuracy {acc}");
    }

    #[test]
    fn small_step_training_curve_is_non_increasing() {
        let data = make_synthetic_dataset(3, 20, 8, 2).unwrap();
        let (tr, _) = data.split_by_parity();
        let m = build_model(&small_mlp(8, 3), 4).unwrap();
        let cfg = TrainConfig {
            epochs: 8,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let (_, hist) = train_with_history(&m, &tr, &cfg).unwrap();
        for pair in hist.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{hist:?}");
        }
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let data = make_synthetic_dataset(2, 10, 6, 1).unwrap();
        let m = build_model(&small_mlp(6, 2), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e30,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&m, &data, &cfg),
            Err(ZooError::Diverged { .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let data = make_synthetic_dataset(2, 10, 6, 1).unwrap();
        let m = build_model(&small_mlp(6, 2), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        assert_eq!(
            train(&m, &data, &cfg).unwrap(),
            train(&m, &data, &cfg).unwrap()
        );
    }
}
