//! Statistical procedures used by the analysis runner.
//!
//! Every function here is pure: the same inputs always give bit-identical
//! outputs, and nothing touches the filesystem. Degenerate inputs surface as
//! [`StatError`] values rather than NaNs so that callers can record them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

mod contingency;
mod descriptive;
mod mann_whitney;
pub mod special;
mod welch;

pub use contingency::{contingency, ContingencyTable};
pub use descriptive::{descriptives, GroupSummary};
pub use mann_whitney::{mann_whitney_u, MannWhitneyMethod, MannWhitneyResult, EXACT_MAX_TOTAL};
pub use special::{
    noncentral_t_cdf, normal_cdf, regularized_incomplete_beta, student_t_cdf, student_t_quantile,
};
pub use welch::{p_value_from_t, welch_power, welch_ttest, PowerResult, WelchResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("numeric failure: {0}")]
    NoConvergence(String),
}

impl StatError {
    /// Stable snake_case tag used in result documents.
    pub fn kind(&self) -> &'static str {
        match self {
            StatError::InvalidArgument(_) => "invalid_argument",
            StatError::InsufficientData(_) => "insufficient_data",
            StatError::DegenerateData(_) => "degenerate_data",
            StatError::NoConvergence(_) => "numeric_failure",
        }
    }
}

/// Direction of the alternative hypothesis.
///
/// Directional alternatives compare group 1 against group 2: `Less` asserts
/// that group 1 is smaller, `Greater` that it is larger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alternative {
    #[default]
    #[serde(rename = "two_sided", alias = "two-sided")]
    TwoSided,
    #[serde(rename = "less")]
    Less,
    #[serde(rename = "greater")]
    Greater,
}

impl Alternative {
    pub const ALL: [Alternative; 3] = [Alternative::TwoSided, Alternative::Less, Alternative::Greater];

    pub fn as_str(self) -> &'static str {
        match self {
            Alternative::TwoSided => "two_sided",
            Alternative::Less => "less",
            Alternative::Greater => "greater",
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Alternative {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_sided" | "two-sided" => Ok(Alternative::TwoSided),
            "less" => Ok(Alternative::Less),
            "greater" => Ok(Alternative::Greater),
            other => Err(format!("unknown alternative {other:?}")),
        }
    }
}
