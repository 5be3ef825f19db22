use serde::{Deserialize, Serialize};

use super::special::normal_cdf;
use super::{Alternative, StatError};

/// Largest pooled sample size for which the exact null distribution is used.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MannWhitneyMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    pub n1: usize,
    pub n2: usize,
    /// Pairs where the group 1 value is larger, ties counted as ½.
    pub u1: f64,
    pub u2: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    pub method: MannWhitneyMethod,
    pub tie_correction_applied: bool,
    /// Whether the ½ continuity correction was applied to z.
    pub continuity_correction: bool,
    /// Continuity-corrected z score, present for the normal approximation.
    pub z: Option<f64>,
}

/// Midranks of `values` (1-based) and the tie term `Σ (t³ - t)`.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    (ranks, tie_term)
}

/// Number of ways each value of U can arise when `n1` of `n1 + n2` distinct
/// ranks are assigned to group 1. Index `u` holds the count for `U = u`.
fn exact_u_counts(n1: usize, n2: usize) -> Vec<u64> {
    // counts[m][n] is the distribution for group sizes (m, n); built up by
    // conditioning on which group holds the largest observation.
    let max_u = n1 * n2;
    let mut table: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n2 + 1]; n1 + 1];
    for m in 0..=n1 {
        for n in 0..=n2 {
            let mut dist = vec![0u64; m * n + 1];
            if m == 0 || n == 0 {
                dist[0] = 1;
            } else {
                // Largest value in group 1: it beats all n of group 2.
                for (u, c) in table[m - 1][n].iter().enumerate() {
                    dist[u + n] += c;
                }
                // Largest value in group 2: contributes nothing to U.
                for (u, c) in table[m][n - 1].iter().enumerate() {
                    dist[u] += c;
                }
            }
            table[m][n] = dist;
        }
    }
    let out = std::mem::take(&mut table[n1][n2]);
    debug_assert_eq!(out.len(), max_u + 1);
    out
}

/// Mann-Whitney U test of `group1` against `group2`.
///
/// Uses the exact permutation distribution when the pooled sample has at
/// most [`EXACT_MAX_TOTAL`] values and no ties; otherwise a normal
/// approximation with midranks, tie-corrected variance and a ½ continuity
/// correction.
pub fn mann_whitney_u(
    group1: &[f64],
    group2: &[f64],
    alternative: Alternative,
) -> Result<MannWhitneyResult, StatError> {
    let n1 = group1.len();
    let n2 = group2.len();
    if n1 == 0 || n2 == 0 {
        return Err(StatError::InsufficientData(format!(
            "both groups need at least one observation (got {n1} and {n2})"
        )));
    }
    if group1.iter().chain(group2).any(|v| !v.is_finite()) {
        return Err(StatError::InvalidArgument("observations must be finite".into()));
    }
    let pooled: Vec<f64> = group1.iter().chain(group2).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let rank_sum1: f64 = ranks[..n1].iter().sum();
    let u1 = rank_sum1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let product = (n1 * n2) as f64;
    let u2 = product - u1;
    let total = n1 + n2;

    if total <= EXACT_MAX_TOTAL && tie_term == 0.0 {
        let counts = exact_u_counts(n1, n2);
        let all: u64 = counts.iter().sum();
        let u = u1.round() as usize;
        let at_most: u64 = counts[..=u].iter().sum();
        let at_least: u64 = counts[u..].iter().sum();
        let lower = at_most as f64 / all as f64;
        let upper = at_least as f64 / all as f64;
        let p_value = match alternative {
            Alternative::Less => lower,
            Alternative::Greater => upper,
            Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
        };
        return Ok(MannWhitneyResult {
            n1,
            n2,
            u1,
            u2,
            p_value,
            alternative,
            method: MannWhitneyMethod::Exact,
            tie_correction_applied: false,
            continuity_correction: false,
            z: None,
        });
    }

    let n = total as f64;
    let mean = product / 2.0;
    let variance = product / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance.is_nan() || variance <= 0.0 {
        return Err(StatError::DegenerateData(
            "all observations are identical; the U statistic has zero variance".into(),
        ));
    }
    let sigma = variance.sqrt();
    let (z, p_value) = match alternative {
        Alternative::Less => {
            let z = (u1 - mean + 0.5) / sigma;
            (z, normal_cdf(z))
        }
        Alternative::Greater => {
            let z = (u1 - mean - 0.5) / sigma;
            (z, normal_cdf(-z))
        }
        Alternative::TwoSided => {
            let z = ((u1 - mean).abs() - 0.5) / sigma;
            (z, (2.0 * normal_cdf(-z)).min(1.0))
        }
    };
    Ok(MannWhitneyResult {
        n1,
        n2,
        u1,
        u2,
        p_value,
        alternative,
        method: MannWhitneyMethod::NormalApprox,
        tie_correction_applied: tie_term > 0.0,
        continuity_correction: true,
        z: Some(z),
    })
}
