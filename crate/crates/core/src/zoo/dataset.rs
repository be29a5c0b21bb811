use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng;
use crate::tensor::Tensor;

use super::ZooError;

/// Images with class labels. Pixels live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, ZooError> {
        if images.len() != labels.len() {
            return Err(ZooError::Dataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(ZooError::Dataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> Option<usize> {
        self.images.first().map(|t| t.shape()[t.shape().len() - 1])
    }

    /// Even indices train, odd indices test.
    pub fn split_by_parity(&self) -> (LabeledDataset, LabeledDataset) {
        let pick = |parity: usize| {
            let (images, labels) = self
                .images
                .iter()
                .zip(&self.labels)
                .enumerate()
                .filter(|(i, _)| i % 2 == parity)
                .map(|(_, (x, &y))| (x.clone(), y))
                .unzip();
            LabeledDataset {
                images,
                labels,
                num_classes: self.num_classes,
            }
        };
        (pick(0), pick(1))
    }
}

/// Knobs for the synthetic image generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticStyle {
    /// Amplitude of the class template around mid-grey.
    pub template_amplitude: f32,
    /// Standard deviation of the per-pixel noise before smoothing.
    pub noise_std: f32,
    /// Half-width of the uniform brightness jitter applied per sample.
    pub brightness_jitter: f32,
}

impl Default for SyntheticStyle {
    fn default() -> Self {
        Self {
            template_amplitude: 0.22,
            noise_std: 0.18,
            brightness_jitter: 0.08,
        }
    }
}

/// Class-conditioned smooth patterns with seeded noise.
///
/// Samples of one class are emitted in adjacent pairs so that the parity
/// split gives both halves the same class balance.
pub fn make_synthetic_dataset(
    num_classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<LabeledDataset, ZooError> {
    make_synthetic_dataset_with(
        num_classes,
        per_class,
        side,
        seed,
        SyntheticStyle::default(),
    )
}

pub fn make_synthetic_dataset_with(
    num_classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
    style: SyntheticStyle,
) -> Result<LabeledDataset, ZooError> {
    if num_classes < 2 || side < 4 || per_class == 0 {
        return Err(ZooError::Dataset(format!(
            "need classes >= 2, side >= 4, per_class >= 1 (got {num_classes}, {side}, {per_class})"
        )));
    }
    let templates: Vec<Vec<f32>> = (0..num_classes)
        .map(|c| class_template(side, seed, c as u64))
        .collect();

    let mut order = Vec::with_capacity(num_classes * per_class);
    for pair in 0..per_class.div_ceil(2) {
        for c in 0..num_classes {
            for k in [2 * pair, 2 * pair + 1] {
                if k < per_class {
                    order.push((c, k));
                }
            }
        }
    }

    let mut images = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    for (c, k) in order {
        let mut rng = rng::indexed_stream(seed, "sample", (c * per_class + k) as u64);
        let raw: Vec<f32> = (0..side * side)
            .map(|_| rng.sample::<f32, _>(StandardNormal) * style.noise_std)
            .collect();
        let noise = box_blur(&raw, side);
        let brightness = rng.gen_range(-style.brightness_jitter..=style.brightness_jitter);
        let pixels = templates[c]
            .iter()
            .zip(&noise)
            .map(|(&t, &n)| (0.5 + brightness + style.template_amplitude * t + n).clamp(0.0, 1.0))
            .collect();
        images.push(Tensor::new(vec![1, side, side], pixels)?);
        labels.push(c);
    }
    LabeledDataset::new(images, labels, num_classes)
}

/// Sum of a few Gaussian bumps, rescaled to a max magnitude of one.
fn class_template(side: usize, seed: u64, class: u64) -> Vec<f32> {
    let mut rng = rng::indexed_stream(seed, "template", class);
    let bumps: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            let cy = rng.gen_range(0.0..side as f32);
            let cx = rng.gen_range(0.0..side as f32);
            let sigma = rng.gen_range(0.12..0.3) * side as f32;
            let amp = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (cy, cx, sigma, amp)
        })
        .collect();
    let mut t = vec![0.0f32; side * side];
    for (r, row) in t.chunks_mut(side).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = bumps
                .iter()
                .map(|&(cy, cx, s, a)| {
                    let d2 = (r as f32 - cy).powi(2) + (c as f32 - cx).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
        }
    }
    let peak = t.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
    t.iter_mut().for_each(|v| *v /= peak);
    t
}

/// 3x3 mean filter with edge clamping.
fn box_blur(src: &[f32], side: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            let mut n = 0.0;
            for rr in r.saturating_sub(1)..=(r + 1).min(side - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(side - 1) {
                    acc += src[rr * side + cc];
                    n += 1.0;
                }
            }
            out[r * side + c] = acc / n;
        }
    }
    out
}
