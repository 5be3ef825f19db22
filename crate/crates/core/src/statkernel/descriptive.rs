use serde::{Deserialize, Serialize};

/// Count, mean and sample standard deviation of one group.
///
/// `mean` is absent for an empty group; `sd` and `variance` are absent when
/// fewer than two observations are available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub variance: Option<f64>,
}

impl GroupSummary {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Summarise a sample of non-missing observations (two-pass mean and
/// `n - 1` variance).
pub fn descriptives(values: &[f64]) -> GroupSummary {
    let n = values.len();
    if n == 0 {
        return GroupSummary { label: String::new(), n, mean: None, sd: None, variance: None };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let (sd, variance) = if n >= 2 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let variance = ss / (n - 1) as f64;
        let sd = variance.sqrt();
        // Keep the invariant variance == sd² exact in the stored document.
        (Some(sd), Some(sd * sd))
    } else {
        (None, None)
    };
    GroupSummary { label: String::new(), n, mean: Some(mean), sd, variance }
}
