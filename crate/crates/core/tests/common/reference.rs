//! Straight-line f64 forward pass, written without the library's layer code.

use bases_core::nn::{LayerSpec, Model};
use bases_core::tensor::Tensor;

pub fn forward_f64(model: &Model, x: &[f64]) -> Vec<f64> {
    forward_with_pattern(model, x).0
}

/// Logits plus the sign of every ReLU pre-activation, in layer order.
pub fn forward_with_pattern(model: &Model, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let params: Vec<Vec<f64>> = model
        .params()
        .tensors
        .iter()
        .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
        .collect();
    let mut shape = model.input_shape().to_vec();
    let mut act = x.to_vec();
    let mut p = 0;
    let mut pattern = Vec::new();
    for layer in &model.spec().layers {
        match *layer {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                act = (0..out_features)
                    .map(|o| {
                        b[o] + (0..in_features)
                            .map(|i| w[o * in_features + i] * act[i])
                            .sum::<f64>()
                    })
                    .collect();
                shape = vec![out_features];
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                let (h, wd) = (shape[1], shape[2]);
                let oh = (h - kernel) / stride + 1;
                let ow = (wd - kernel) / stride + 1;
                let mut out = vec![0.0; out_channels * oh * ow];
                for o in 0..out_channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut acc = b[o];
                            for ci in 0..in_channels {
                                for kr in 0..kernel {
                                    for kc in 0..kernel {
                                        let wi =
                                            ((o * in_channels + ci) * kernel + kr) * kernel + kc;
                                        let xi = (ci * h + r * stride + kr) * wd + c * stride + kc;
                                        acc += w[wi] * act[xi];
                                    }
                                }
                            }
                            out[(o * oh + r) * ow + c] = acc;
                        }
                    }
                }
                act = out;
                shape = vec![out_channels, oh, ow];
            }
            LayerSpec::Relu => {
                pattern.extend(act.iter().map(|&v| v > 0.0));
                act.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            LayerSpec::Flatten => shape = vec![act.len()],
        }
    }
    (act, pattern)
}

/// Coordinates whose `±h` probes change some ReLU's sign relative to `x`.
pub fn kink_crossings(model: &Model, x: &Tensor, h: f64) -> Vec<usize> {
    let xs: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
    let (_, base) = forward_with_pattern(model, &xs);
    let mut crossed = Vec::new();
    for i in 0..xs.len() {
        let mut probe = xs.clone();
        for step in [h, -h] {
            probe[i] = xs[i] + step;
            if forward_with_pattern(model, &probe).1 != base {
                crossed.push(i);
                break;
            }
        }
    }
    crossed
}

/// `upstream · logits(x)` evaluated in f64.
pub fn projected_logits(model: &Model, upstream: &[f32], x: &Tensor) -> f64 {
    let xs: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
    forward_f64(model, &xs)
        .iter()
        .zip(upstream)
        .map(|(z, &u)| z * f64::from(u))
        .sum()
}
