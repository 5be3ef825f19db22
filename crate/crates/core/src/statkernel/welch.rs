use serde::{Deserialize, Serialize};

use super::descriptive::{descriptives, GroupSummary};
use super::special::{noncentral_t_cdf, noncentral_t_sf, student_t_cdf, student_t_quantile, student_t_sf};
use super::{Alternative, StatError};

/// Outcome of a two-sample Welch t-test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub group1: GroupSummary,
    pub group2: GroupSummary,
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    pub alpha: f64,
    pub reject_null: bool,
}

/// Post-hoc power of the Welch test at the observed effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub group1: GroupSummary,
    pub group2: GroupSummary,
    pub noncentrality: f64,
    pub df: f64,
    /// Upper critical value for `greater`/`two_sided`, lower for `less`.
    pub critical_value: f64,
    pub power: f64,
    pub alpha: f64,
    pub alternative: Alternative,
}

struct WelchMoments {
    mean_diff: f64,
    se: f64,
    df: f64,
}

fn welch_moments(g1: &GroupSummary, g2: &GroupSummary) -> Result<WelchMoments, StatError> {
    for g in [g1, g2] {
        if g.n < 2 {
            return Err(StatError::InsufficientData(format!(
                "group {:?} has {} observation(s); at least 2 are required",
                g.label, g.n
            )));
        }
    }
    let (Some(m1), Some(v1), Some(m2), Some(v2)) = (g1.mean, g1.variance, g2.mean, g2.variance)
    else {
        return Err(StatError::InsufficientData("group summary is missing mean or variance".into()));
    };
    if !(v1.is_finite() && v2.is_finite() && m1.is_finite() && m2.is_finite()) || v1 < 0.0 || v2 < 0.0 {
        return Err(StatError::InvalidArgument("group summaries must be finite".into()));
    }
    if v1 == 0.0 && v2 == 0.0 {
        return Err(StatError::DegenerateData(
            "both groups have zero variance; the t statistic is undefined".into(),
        ));
    }
    let n1 = g1.n as f64;
    let n2 = g2.n as f64;
    let a = v1 / n1;
    let b = v2 / n2;
    let se2 = a + b;
    let df = se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    Ok(WelchMoments { mean_diff: m1 - m2, se: se2.sqrt(), df })
}

fn check_alpha(alpha: f64) -> Result<(), StatError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(StatError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// p-value of an observed t statistic under the central t distribution.
pub fn p_value_from_t(t: f64, df: f64, alternative: Alternative) -> Result<f64, StatError> {
    let p = match alternative {
        Alternative::Less => student_t_cdf(t, df)?,
        Alternative::Greater => student_t_sf(t, df)?,
        Alternative::TwoSided => 2.0 * student_t_cdf(t, df)?.min(student_t_sf(t, df)?),
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Welch's unequal-variance t-test of `group1` against `group2`.
pub fn welch_ttest(
    group1: &[f64],
    group2: &[f64],
    alternative: Alternative,
    alpha: f64,
) -> Result<WelchResult, StatError> {
    check_alpha(alpha)?;
    let g1 = descriptives(group1);
    let g2 = descriptives(group2);
    let moments = welch_moments(&g1, &g2)?;
    let t = moments.mean_diff / moments.se;
    let p_value = p_value_from_t(t, moments.df, alternative)?;
    Ok(WelchResult {
        group1: g1,
        group2: g2,
        t,
        df: moments.df,
        p_value,
        alternative,
        alpha,
        reject_null: p_value < alpha,
    })
}

/// Probability that the Welch test rejects at level `alpha` when the true
/// standardized difference equals the observed one.
pub fn welch_power(
    group1: &GroupSummary,
    group2: &GroupSummary,
    alpha: f64,
    alternative: Alternative,
) -> Result<PowerResult, StatError> {
    check_alpha(alpha)?;
    let moments = welch_moments(group1, group2)?;
    let nc = moments.mean_diff / moments.se;
    let df = moments.df;
    let (critical_value, power) = match alternative {
        Alternative::Greater => {
            let crit = student_t_quantile(1.0 - alpha, df)?;
            (crit, noncentral_t_sf(crit, df, nc)?)
        }
        Alternative::Less => {
            let crit = student_t_quantile(alpha, df)?;
            (crit, noncentral_t_cdf(crit, df, nc)?)
        }
        Alternative::TwoSided => {
            let crit = student_t_quantile(1.0 - alpha / 2.0, df)?;
            let upper = noncentral_t_sf(crit, df, nc)?;
            let lower = noncentral_t_cdf(-crit, df, nc)?;
            (crit, upper + lower)
        }
    };
    Ok(PowerResult {
        group1: group1.clone(),
        group2: group2.clone(),
        noncentrality: nc,
        df,
        critical_value,
        power: power.clamp(0.0, 1.0),
        alpha,
        alternative,
    })
}
