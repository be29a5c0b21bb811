//! Desk-scale model zoo: synthetic data, seeded initialization, SGD
//! training, and the on-disk model/dataset formats.

mod dataset;
mod format;
mod manifest;
mod train;

use rand::Rng;
use thiserror::Error;

pub use dataset::{
    make_synthetic_dataset, make_synthetic_dataset_with, LabeledDataset, SyntheticStyle,
};
pub use format::{
    decode_dataset, decode_model, encode_dataset, encode_model, load_dataset, load_model,
    save_dataset, save_model,
};
pub use manifest::{ManifestEntry, Zoo, ZooManifest, ZooMember};
pub use train::{train, train_with_history, TrainConfig};

use crate::nn::{LayerSpec, Model, ModelError, ModelParams, ModelSpec};
use crate::rng;
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Fresh parameters from a seeded fan-in-scaled uniform distribution:
/// every weight and bias lies in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model, ZooError> {
    let num_classes = spec.num_classes()?;
    let mut tensors = Vec::new();
    for (l, layer) in spec.layers.iter().enumerate() {
        let shapes = layer.param_shapes();
        if shapes.is_empty() {
            continue;
        }
        let bound = 1.0 / (layer.fan_in() as f32).sqrt();
        let mut rng = rng::indexed_stream(seed, "init", l as u64);
        for shape in shapes {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
            tensors.push(Tensor::new(shape, data)?);
        }
    }
    Ok(Model::new(
        spec.clone(),
        ModelParams {
            tensors,
            num_classes,
        },
    )?)
}

/// Top-1 accuracy; argmax ties go to the lowest class index.
pub fn accuracy(model: &Model, data: &LabeledDataset) -> Result<f64, ZooError> {
    if data.is_empty() {
        return Err(ZooError::Dataset("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in data.images.iter().zip(&data.labels) {
        if argmax(model.forward(x)?.data()) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn dense(in_features: usize, out_features: usize) -> LayerSpec {
    LayerSpec::Dense {
        in_features,
        out_features,
    }
}

fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels,
        out_channels,
        kernel,
        stride,
    }
}

fn conv_out(side: usize, kernel: usize, stride: usize) -> usize {
    (side - kernel) / stride + 1
}

/// The default zoo for single-channel `side x side` inputs: three MLPs and
/// three CNNs of different depths plus two held-out victims, sorted by id.
///
/// Requires `side >= 9` so every convolution stack fits.
pub fn default_zoo_specs(side: usize, classes: usize) -> Vec<(String, ModelSpec)> {
    let input_shape = vec![1, side, side];
    let d = side * side;
    let spec = |layers| ModelSpec {
        input_shape: input_shape.clone(),
        layers,
    };

    let a1 = conv_out(side, 3, 1);
    let a2 = conv_out(a1, 3, 2);
    let b1 = conv_out(side, 5, 1);
    let c1 = conv_out(side, 4, 2);
    let v1 = conv_out(side, 3, 1);
    let v2 = conv_out(v1, 3, 2);

    vec![
        (
            "cnn-a".to_string(),
            spec(vec![
                conv(1, 4, 3, 1),
                LayerSpec::Relu,
                conv(4, 8, 3, 2),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                dense(8 * a2 * a2, classes),
            ]),
        ),
        (
            "cnn-b".to_string(),
            spec(vec![
                conv(1, 6, 5, 1),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                dense(6 * b1 * b1, 32),
                LayerSpec::Relu,
                dense(32, classes),
            ]),
        ),
        (
            "cnn-c".to_string(),
            spec(vec![
                conv(1, 8, 4, 2),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                dense(8 * c1 * c1, classes),
            ]),
        ),
        (
            "mlp-a".to_string(),
            spec(vec![
                LayerSpec::Flatten,
                dense(d, 32),
                LayerSpec::Relu,
                dense(32, classes),
            ]),
        ),
        (
            "mlp-b".to_string(),
            spec(vec![
                LayerSpec::Flatten,
                dense(d, 64),
                LayerSpec::Relu,
                dense(64, 24),
                LayerSpec::Relu,
                dense(24, classes),
            ]),
        ),
        (
            "mlp-c".to_string(),
            spec(vec![LayerSpec::Flatten, dense(d, classes)]),
        ),
        (
            "victim-cnn".to_string(),
            spec(vec![
                conv(1, 8, 3, 1),
                LayerSpec::Relu,
                conv(8, 16, 3, 2),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                dense(16 * v2 * v2, classes),
            ]),
        ),
        (
            "victim-mlp".to_string(),
            spec(vec![
                LayerSpec::Flatten,
                dense(d, 48),
                LayerSpec::Relu,
                dense(48, 48),
                LayerSpec::Relu,
                dense(48, classes),
            ]),
        ),
    ]
}
