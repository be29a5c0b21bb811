//! Forward evaluation and reverse-mode input gradients for small
//! feed-forward classifiers built from dense, conv2d, relu and flatten layers.
//!
//! Models are immutable once built. Gradients are taken with respect to the
//! input only; parameter gradients stay private to the trainer in
//! [`crate::zoo`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("input shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    Length { shape: Vec<usize>, len: usize },
    #[error("invalid model spec: {0}")]
    Spec(String),
}

/// One layer of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// Valid (unpadded) 2-D convolution over a `[channels, height, width]` input.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    /// Output shape for `input`, or a spec error if the layer does not accept it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ModelError> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(ModelError::Spec(format!(
                        "dense layer expects [{in_features}], got {input:?}"
                    )));
                }
                if out_features == 0 {
                    return Err(ModelError::Spec("dense layer with zero outputs".into()));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(ModelError::Spec(format!(
                        "conv2d expects [{in_channels}, h, w], got {input:?}"
                    )));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(ModelError::Spec("conv2d with zero-sized dimension".into()));
                }
                if input[1] < kernel || input[2] < kernel {
                    return Err(ModelError::Spec(format!(
                        "kernel {kernel} larger than input {input:?}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (input[1] - kernel) / stride + 1,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of this layer's parameter tensors (weight then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Relu | LayerSpec::Flatten => Vec::new(),
        }
    }

    /// Number of inputs feeding each output unit.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_features, .. } => in_features,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Relu | LayerSpec::Flatten => 0,
        }
    }
}

/// Architecture: input shape plus the layer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Activation shapes `[input, after layer 0, ..., logits]`.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(ModelError::Spec(format!(
                "bad input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out.len() != 1 || out[0] < 2 {
            return Err(ModelError::Spec(format!(
                "final layer must emit a logit vector of length >= 2, got {out:?}"
            )));
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> Result<usize, ModelError> {
        Ok(self.activation_shapes()?.last().expect("non-empty")[0])
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(LayerSpec::param_shapes)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Parameter tensors in declaration order (weight, bias per parametric layer).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
    pub num_classes: usize,
}

impl ModelParams {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// A classifier `x -> logits`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ModelParams,
    shapes: Vec<Vec<usize>>,
}

/// Cached activations from a forward pass, consumed by the backward pass.
pub(crate) struct Trace {
    acts: Vec<Vec<f32>>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &[f32] {
        self.acts.last().expect("trace has the input at least")
    }
}

impl Model {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Result<Self, ModelError> {
        let shapes = spec.activation_shapes()?;
        let expected = spec.param_shapes();
        if expected.len() != params.tensors.len() {
            return Err(ModelError::Spec(format!(
                "spec needs {} parameter tensors, got {}",
                expected.len(),
                params.tensors.len()
            )));
        }
        for (want, got) in expected.iter().zip(&params.tensors) {
            if want.as_slice() != got.shape() {
                return Err(ModelError::Shape {
                    expected: want.clone(),
                    found: got.shape().to_vec(),
                });
            }
        }
        let classes = shapes.last().expect("non-empty")[0];
        if classes != params.num_classes {
            return Err(ModelError::Spec(format!(
                "spec emits {classes} logits but params declare {} classes",
                params.num_classes
            )));
        }
        Ok(Self {
            spec,
            params,
            shapes,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub(crate) fn replace_params(&self, tensors: Vec<Tensor>) -> Self {
        Self {
            spec: self.spec.clone(),
            params: ModelParams {
                tensors,
                num_classes: self.params.num_classes,
            },
            shapes: self.shapes.clone(),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        if x.shape() != self.spec.input_shape.as_slice() {
            return Err(ModelError::Shape {
                expected: self.spec.input_shape.clone(),
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Logits for a single input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let mut act = x.data().to_vec();
        let mut p = 0;
        for (l, layer) in self.spec.layers.iter().enumerate() {
            act = self.layer_forward(layer, &self.shapes[l], &act, &mut p);
        }
        Ok(Tensor::from_vec(act))
    }

    pub(crate) fn trace(&self, x: &Tensor) -> Result<Trace, ModelError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(x.data().to_vec());
        let mut p = 0;
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let next = self.layer_forward(layer, &self.shapes[l], &acts[l], &mut p);
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    fn layer_forward(
        &self,
        layer: &LayerSpec,
        in_shape: &[usize],
        x: &[f32],
        p: &mut usize,
    ) -> Vec<f32> {
        match *layer {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let w = self.params.tensors[*p].data();
                let b = self.params.tensors[*p + 1].data();
                *p += 2;
                (0..out_features)
                    .map(|o| {
                        let row = &w[o * in_features..(o + 1) * in_features];
                        b[o] + dot(row, x)
                    })
                    .collect()
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let w = self.params.tensors[*p].data();
                let b = self.params.tensors[*p + 1].data();
                *p += 2;
                let (h, wd) = (in_shape[1], in_shape[2]);
                let oh = (h - kernel) / stride + 1;
                let ow = (wd - kernel) / stride + 1;
                let mut out = vec![0.0f32; out_channels * oh * ow];
                for o in 0..out_channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut acc = b[o];
                            for ci in 0..in_channels {
                                for kr in 0..kernel {
                                    let xrow = (ci * h + r * stride + kr) * wd + c * stride;
                                    let wrow = ((o * in_channels + ci) * kernel + kr) * kernel;
                                    acc += dot(&w[wrow..wrow + kernel], &x[xrow..xrow + kernel]);
                                }
                            }
                            out[(o * oh + r) * ow + c] = acc;
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerSpec::Flatten => x.to_vec(),
        }
    }

    /// Gradient of `upstream · logits(x)` with respect to `x`.
    pub fn input_gradient(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor, ModelError> {
        let trace = self.trace(x)?;
        let gx = self.backward(&trace, upstream.data(), None)?;
        Ok(x.with_data(gx))
    }

    /// Reverse pass over a trace. When `param_grads` is given, parameter
    /// gradients are accumulated into it (same layout as the parameters).
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        upstream: &[f32],
        mut param_grads: Option<&mut [Vec<f32>]>,
    ) -> Result<Vec<f32>, ModelError> {
        let classes = self.params.num_classes;
        if upstream.len() != classes {
            return Err(ModelError::Shape {
                expected: vec![classes],
                found: vec![upstream.len()],
            });
        }
        let mut g = upstream.to_vec();
        let mut p = self.params.tensors.len();
        for (l, layer) in self.spec.layers.iter().enumerate().rev() {
            let x = &trace.acts[l];
            let in_shape = &self.shapes[l];
            g = match *layer {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    p -= 2;
                    let w = self.params.tensors[p].data();
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let (gw, rest) = pg[p..].split_at_mut(1);
                        let gw = &mut gw[0];
                        let gb = &mut rest[0];
                        for o in 0..out_features {
                            let go = g[o];
                            gb[o] += go;
                            if go != 0.0 {
                                let row = &mut gw[o * in_features..(o + 1) * in_features];
                                for (gwi, &xi) in row.iter_mut().zip(x) {
                                    *gwi += go * xi;
                                }
                            }
                        }
                    }
                    let mut gx = vec![0.0f32; in_features];
                    for o in 0..out_features {
                        let go = g[o];
                        if go == 0.0 {
                            continue;
                        }
                        let row = &w[o * in_features..(o + 1) * in_features];
                        for (gxi, &wi) in gx.iter_mut().zip(row) {
                            *gxi += go * wi;
                        }
                    }
                    gx
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    p -= 2;
                    let w = self.params.tensors[p].data();
                    let (h, wd) = (in_shape[1], in_shape[2]);
                    let oh = (h - kernel) / stride + 1;
                    let ow = (wd - kernel) / stride + 1;
                    let mut gx = vec![0.0f32; in_channels * h * wd];
                    let mut pg = param_grads
                        .as_deref_mut()
                        .map(|pg| pg[p..p + 2].split_at_mut(1));
                    for o in 0..out_channels {
                        for r in 0..oh {
                            for c in 0..ow {
                                let go = g[(o * oh + r) * ow + c];
                                if go == 0.0 {
                                    continue;
                                }
                                if let Some((gw, gb)) = pg.as_mut() {
                                    gb[0][o] += go;
                                    for ci in 0..in_channels {
                                        for kr in 0..kernel {
                                            let xrow = (ci * h + r * stride + kr) * wd + c * stride;
                                            let wrow =
                                                ((o * in_channels + ci) * kernel + kr) * kernel;
                                            for kc in 0..kernel {
                                                gw[0][wrow + kc] += go * x[xrow + kc];
                                            }
                                        }
                                    }
                                }
                                for ci in 0..in_channels {
                                    for kr in 0..kernel {
                                        let xrow = (ci * h + r * stride + kr) * wd + c * stride;
                                        let wrow = ((o * in_channels + ci) * kernel + kr) * kernel;
                                        for kc in 0..kernel {
                                            gx[xrow + kc] += go * w[wrow + kc];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    gx
                }
                // Subgradient at exactly zero is zero.
                LayerSpec::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect(),
                LayerSpec::Flatten => g,
            };
        }
        Ok(g)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |acc, (x, y)| acc + x * y)
}

/// Numerically stable softmax (max-subtracted, accumulated in f64).
pub fn softmax(z: &Tensor) -> Tensor {
    Tensor::from_vec(
        softmax_f64(z.data())
            .into_iter()
            .map(|p| p as f32)
            .collect(),
    )
}

pub(crate) fn softmax_f64(z: &[f32]) -> Vec<f64> {
    let max = z.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = z.iter().map(|&v| f64::from(v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log Σ exp(z)` computed in f64.
pub(crate) fn log_sum_exp(z: &[f32]) -> f64 {
    let max = z.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let sum: f64 = z.iter().map(|&v| f64::from(v - max).exp()).sum();
    f64::from(max) + sum.ln()
}

/// Central finite differences of `f` at `x`, one coordinate at a time.
///
/// The divisor is the realized step `(x_i + h) - (x_i - h)` in f32 rather
/// than `2h`, which removes the representation error of the perturbed point.
pub fn fd_gradient<F>(mut f: F, x: &Tensor, h: f32) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = x.data()[i];
        let (hi, lo) = (xi + h, xi - h);
        probe.data_mut()[i] = hi;
        let fp = f(&probe);
        probe.data_mut()[i] = lo;
        let fm = f(&probe);
        probe.data_mut()[i] = xi;
        grad.push(((fp - fm) / (f64::from(hi) - f64::from(lo))) as f32);
    }
    x.with_data(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(inp: usize, out: usize) -> LayerSpec {
        LayerSpec::Dense {
            in_features: inp,
            out_features: out,
        }
    }

    fn identity_model() -> Model {
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![dense(2, 2)],
        };
        let params = ModelParams {
            tensors: vec![
                Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                Tensor::zeros(&[2]),
            ],
            num_classes: 2,
        };
        Model::new(spec, params).unwrap()
    }

    #[test]
    fn identity_dense_layer_passes_input_through() {
        let m = identity_model();
        let z = m.forward(&Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(z.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = ModelSpec {
            input_shape: vec![1, 5, 5],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                dense(18, 3),
            ],
        };
        let tensors = spec
            .param_shapes()
            .iter()
            .map(|s| Tensor::zeros(s))
            .collect();
        let m = Model::new(
            spec,
            ModelParams {
                tensors,
                num_classes: 3,
            },
        )
        .unwrap();
        let x = Tensor::new(vec![1, 5, 5], (0..25).map(|i| i as f32 / 25.0).collect()).unwrap();
        assert_eq!(m.forward(&x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = identity_model();
        let err = m
            .forward(&Tensor::from_vec(vec![1.0, 2.0, 3.0]))
            .unwrap_err();
        assert!(matches!(err, ModelError::Shape { .. }));
        let err = m
            .input_gradient(
                &Tensor::from_vec(vec![1.0, 2.0]),
                &Tensor::from_vec(vec![1.0]),
            )
            .unwrap_err();
        assert!(matches!(err, ModelError::Shape { .. }));
    }

    #[test]
    fn non_composing_spec_is_rejected() {
        let spec = ModelSpec {
            input_shape: vec![1, 4, 4],
            layers: vec![dense(16, 2)],
        };
        assert!(matches!(spec.activation_shapes(), Err(ModelError::Spec(_))));
        let spec = ModelSpec {
            input_shape: vec![4],
            layers: vec![dense(4, 1)],
        };
        assert!(spec.activation_shapes().is_err());
    }

    #[test]
    fn dense_gradient_is_transposed_weights_times_upstream() {
        let spec = ModelSpec {
            input_shape: vec![3],
            layers: vec![dense(3, 2)],
        };
        let w = vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0];
        let params = ModelParams {
            tensors: vec![
                Tensor::new(vec![2, 3], w.clone()).unwrap(),
                Tensor::from_vec(vec![0.3, -0.2]),
            ],
            num_classes: 2,
        };
        let m = Model::new(spec, params).unwrap();
        let u = [2.0f32, -1.0];
        let g = m
            .input_gradient(
                &Tensor::from_vec(vec![0.1, 0.2, 0.3]),
                &Tensor::from_vec(u.to_vec()),
            )
            .unwrap();
        let expected: Vec<f32> = (0..3).map(|i| w[i] * u[0] + w[3 + i] * u[1]).collect();
        assert_eq!(g.data(), expected.as_slice());
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![dense(2, 2), LayerSpec::Relu, dense(2, 2)],
        };
        let params = ModelParams {
            tensors: vec![
                // unit 0 sees +x0, unit 1 sees -x1 - 1 (always negative for x1 >= 0)
                Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap(),
                Tensor::from_vec(vec![0.0, -1.0]),
                Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
                Tensor::zeros(&[2]),
            ],
            num_classes: 2,
        };
        let m = Model::new(spec, params).unwrap();
        let g = m
            .input_gradient(
                &Tensor::from_vec(vec![0.5, 0.5]),
                &Tensor::from_vec(vec![1.0, 0.0]),
            )
            .unwrap();
        assert_eq!(g.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(
            softmax(&Tensor::from_vec(vec![0.0, 0.0])).data(),
            &[0.5, 0.5]
        );
        let p = softmax(&Tensor::from_vec(vec![1000.0, 0.0]));
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-7 && p.data()[1] < 1e-30);
        // e^z / sum e^z for z = [1, 2, 3], evaluated with mpmath at 30 digits.
        let reference = [
            0.090_030_573_170_380_46,
            0.24472847105479765,
            0.665_240_955_774_821_9,
        ];
        let p = softmax(&Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        for (a, b) in p.data().iter().zip(reference) {
            assert!((f64::from(*a) - b).abs() < 1e-7);
        }
    }

    #[test]
    fn fd_gradient_of_quadratic_and_constant() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let g = fd_gradient(
            |t| t.data().iter().map(|&v| f64::from(v) * f64::from(v)).sum(),
            &x,
            1e-3,
        );
        assert!((g.data()[0] - 2.0).abs() < 1e-4);
        assert!((g.data()[1] - 4.0).abs() < 1e-4);
        let g = fd_gradient(|_| 3.5, &x, 1e-3);
        assert_eq!(g.data(), &[0.0, 0.0]);
    }
}
