use serde::{Deserialize, Serialize};

/// A point on the probability simplex: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

/// Tolerance on `|Σw − 1|` for a vector to count as on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "empty weight vector");
        Self(vec![1.0 / n as f64; n])
    }

    /// Accepts `values` only if they already lie on the simplex.
    pub fn new(values: Vec<f64>) -> Option<Self> {
        is_on_simplex(&values).then_some(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn is_on_simplex(values: &[f64]) -> bool {
    !values.is_empty()
        && values.iter().all(|w| *w >= 0.0 && w.is_finite())
        && (values.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE
}

/// Clamps negatives to zero and rescales to unit sum; an all-zero result
/// falls back to the uniform vector.
pub fn normalize_weights(raw: &[f64]) -> WeightVector {
    assert!(!raw.is_empty(), "cannot normalize an empty weight vector");
    let clamped: Vec<f64> = raw
        .iter()
        .map(|&v| if v > 0.0 && v.is_finite() { v } else { 0.0 })
        .collect();
    let sum: f64 = clamped.iter().sum();
    if sum <= 0.0 {
        return WeightVector::uniform(raw.len());
    }
    WeightVector(clamped.into_iter().map(|v| v / sum).collect())
}

/// `(w⁺, w⁻)`: coordinate `n` moved by `+η` and `−η`, each renormalized.
pub fn coordinate_pair(w: &WeightVector, n: usize, eta: f64) -> (WeightVector, WeightVector) {
    assert!(
        n < w.len(),
        "coordinate {n} out of range for {} weights",
        w.len()
    );
    let mut plus = w.0.clone();
    let mut minus = w.0.clone();
    plus[n] += eta;
    minus[n] -= eta;
    (normalize_weights(&plus), normalize_weights(&minus))
}
