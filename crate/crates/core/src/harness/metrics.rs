use serde::{Deserialize, Serialize};

/// Result of attacking one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_index: usize,
    pub true_label: usize,
    /// Target class, absent for untargeted goals.
    pub target: Option<usize>,
    pub success: bool,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Lower middle element for even counts.
    pub median: usize,
    pub min: usize,
    pub max: usize,
}

impl QueryStats {
    pub fn from_counts(counts: &[usize]) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        let n = counts.len() as f64;
        let mean = counts.iter().map(|&q| q as f64).sum::<f64>() / n;
        let var = counts
            .iter()
            .map(|&q| (q as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        Some(Self {
            mean,
            std: var.sqrt(),
            median: sorted[(sorted.len() - 1) / 2],
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub attempted: usize,
    pub successes: usize,
    pub failures: usize,
    pub fooling_rate: f64,
    pub max_queries: usize,
    /// Over every attempted image; failures count as `max_queries`.
    pub queries_all: Option<QueryStats>,
    /// Over successful images only.
    pub queries_successful: Option<QueryStats>,
    pub records: Vec<ImageRecord>,
}

/// Aggregates per-image records in the order given.
pub fn summarize(records: &[ImageRecord], max_queries: usize) -> MetricsSummary {
    let successes = records.iter().filter(|r| r.success).count();
    let all: Vec<usize> = records
        .iter()
        .map(|r| if r.success { r.queries } else { max_queries })
        .collect();
    let ok: Vec<usize> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.queries)
        .collect();
    MetricsSummary {
        attempted: records.len(),
        successes,
        failures: records.len() - successes,
        fooling_rate: if records.is_empty() {
            0.0
        } else {
            successes as f64 / records.len() as f64
        },
        max_queries,
        queries_all: QueryStats::from_counts(&all),
        queries_successful: QueryStats::from_counts(&ok),
        records: records.to_vec(),
    }
}

/// Fraction of images fooled within `q` queries, for `q = 1..=max_queries`.
pub fn success_curve(records: &[ImageRecord], max_queries: usize) -> Vec<f64> {
    (1..=max_queries)
        .map(|q| {
            if records.is_empty() {
                return 0.0;
            }
            let hit = records
                .iter()
                .filter(|r| r.success && r.queries <= q)
                .count();
            hit as f64 / records.len() as f64
        })
        .collect()
}
