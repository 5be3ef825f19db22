//! The JSON analysis-configuration payload.
//!
//! A payload names a domain, an output location and an ordered list of
//! analysis requests. Parsing is strict: unknown fields are rejected and
//! every structural invariant is checked before a payload value is handed
//! out. [`validate_payload`] additionally resolves every statistic, dataset
//! and column name against the warehouse so that a payload which validates
//! cleanly cannot fail on a name lookup at execution time.
//!
//! ```json
//! {
//!   "payload_version": 1,
//!   "domain": "sami",
//!   "analyses": [{
//!     "statistic": "get_welch_power",
//!     "dataset": "sami_fall24_usage",
//!     "independent": "used_sami",
//!     "dependent": ["sob_score", "comfortable_interacting"],
//!     "alternative": "less",
//!     "alpha": 0.05,
//!     "result_file": "sami_fall24_ttest_power"
//!   }],
//!   "output": { "bucket": "sami", "prefix": "" }
//! }
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{ColumnKind, WarehouseCatalog};
pub use crate::statkernel::Alternative;

pub const PAYLOAD_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisPayload {
    pub payload_version: u32,
    pub domain: String,
    pub analyses: Vec<AnalysisRequest>,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    /// Kept as text so that unknown names reach validation as diagnostics
    /// instead of failing deserialization.
    pub statistic: String,
    pub dataset: String,
    pub independent: String,
    pub dependent: Vec<String>,
    pub alternative: Alternative,
    pub alpha: f64,
    pub result_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub bucket: String,
    #[serde(default)]
    pub prefix: String,
}

/// The closed set of statistics the analysis module can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StatisticName {
    #[serde(rename = "get_welch_ttest")]
    WelchTtest,
    #[serde(rename = "get_welch_power")]
    WelchPower,
    #[serde(rename = "get_mann_whitney_u")]
    MannWhitneyU,
    #[serde(rename = "get_contingency_table")]
    ContingencyTable,
    #[serde(rename = "get_descriptives")]
    Descriptives,
}

/// What a statistic needs from its dependent columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependentKind {
    Numeric,
    Categorical,
}

impl StatisticName {
    pub const ALL: [StatisticName; 5] = [
        StatisticName::WelchTtest,
        StatisticName::WelchPower,
        StatisticName::MannWhitneyU,
        StatisticName::ContingencyTable,
        StatisticName::Descriptives,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StatisticName::WelchTtest => "get_welch_ttest",
            StatisticName::WelchPower => "get_welch_power",
            StatisticName::MannWhitneyU => "get_mann_whitney_u",
            StatisticName::ContingencyTable => "get_contingency_table",
            StatisticName::Descriptives => "get_descriptives",
        }
    }

    /// Every statistic this build knows about.
    pub fn registry() -> BTreeSet<StatisticName> {
        Self::ALL.into_iter().collect()
    }

    pub fn dependent_kind(self) -> DependentKind {
        match self {
            StatisticName::ContingencyTable => DependentKind::Categorical,
            _ => DependentKind::Numeric,
        }
    }
}

impl fmt::Display for StatisticName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatisticName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|name| name.as_str() == s)
            .ok_or_else(|| format!("unknown statistic {s:?}"))
    }
}

impl AnalysisRequest {
    pub fn statistic_name(&self) -> Option<StatisticName> {
        self.statistic.parse().ok()
    }
}

impl AnalysisPayload {
    /// Distinct dataset names referenced by any request.
    pub fn datasets(&self) -> BTreeSet<&str> {
        self.analyses.iter().map(|r| r.dataset.as_str()).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("payload serialization is infallible")
    }
}

/// One problem found in a payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Index into `analyses`, when the problem belongs to one request.
    pub request: Option<usize>,
    /// JSON path of the offending field, e.g. `analyses[0].dependent[2]`.
    pub field: String,
    pub value: String,
    pub message: String,
    pub suggestion: Option<String>,
}

impl Diagnostic {
    fn new(request: Option<usize>, field: String, value: impl Into<String>, message: impl Into<String>) -> Self {
        Self { request, field, value: value.into(), message: message.into(), suggestion: None }
    }

    fn suggest(mut self, suggestion: Option<String>) -> Self {
        self.suggestion = suggestion;
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean {s:?}?)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PayloadError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid payload: {}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Fill in `alternative` and `alpha` on every request object that lacks them.
/// Applying this twice is the same as applying it once.
pub fn apply_defaults(doc: &mut Value) {
    let Some(analyses) = doc.get_mut("analyses").and_then(Value::as_array_mut) else {
        return;
    };
    for request in analyses.iter_mut().filter_map(Value::as_object_mut) {
        request
            .entry("alternative")
            .or_insert_with(|| Value::from(Alternative::TwoSided.as_str()));
        request.entry("alpha").or_insert_with(|| Value::from(DEFAULT_ALPHA));
    }
}

/// Parse UTF-8 JSON text into a payload, applying defaults and checking the
/// payload's own structural invariants.
pub fn parse_payload(bytes: &[u8]) -> Result<AnalysisPayload, PayloadError> {
    let mut doc: Value = serde_json::from_slice(bytes).map_err(|e| PayloadError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    apply_defaults(&mut doc);
    let payload: AnalysisPayload = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        PayloadError::Schema {
            path: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    let problems = check_invariants(&payload);
    if problems.is_empty() {
        Ok(payload)
    } else {
        Err(PayloadError::Invalid(problems))
    }
}

fn is_domain(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

fn is_result_stem(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

fn is_bucket(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z' | '0'..='9'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_' | '-' | '.'))
}

fn prefix_problem(prefix: &str) -> Option<&'static str> {
    if prefix.starts_with('/') || prefix.starts_with('\\') {
        Some("prefix must be a relative path")
    } else if prefix.contains('\\') {
        Some("prefix must use '/' as separator")
    } else if prefix.split('/').any(|seg| seg == "..") {
        Some("prefix must not contain '..' segments")
    } else {
        None
    }
}

/// Structural invariants that hold independently of any warehouse.
pub fn check_invariants(p: &AnalysisPayload) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if p.payload_version != PAYLOAD_VERSION {
        out.push(Diagnostic::new(
            None,
            "payload_version".into(),
            p.payload_version.to_string(),
            format!("unsupported payload_version {} (expected {PAYLOAD_VERSION})", p.payload_version),
        ));
    }
    if !is_domain(&p.domain) {
        out.push(Diagnostic::new(
            None,
            "domain".into(),
            &p.domain,
            format!("domain {:?} must match [a-z][a-z0-9_]*", p.domain),
        ));
    }
    if !is_bucket(&p.output.bucket) {
        out.push(Diagnostic::new(
            None,
            "output.bucket".into(),
            &p.output.bucket,
            format!("bucket {:?} must be a non-empty identifier ([a-z0-9][a-z0-9_.-]*)", p.output.bucket),
        ));
    }
    if let Some(problem) = prefix_problem(&p.output.prefix) {
        out.push(Diagnostic::new(None, "output.prefix".into(), &p.output.prefix, problem));
    }
    if p.analyses.is_empty() {
        out.push(Diagnostic::new(None, "analyses".into(), "[]", "analyses must be non-empty"));
    }
    let mut stems = HashSet::new();
    for (i, r) in p.analyses.iter().enumerate() {
        let field = |name: &str| format!("analyses[{i}].{name}");
        if !(r.alpha > 0.0 && r.alpha < 1.0) {
            out.push(Diagnostic::new(
                Some(i),
                field("alpha"),
                r.alpha.to_string(),
                format!("alpha must lie strictly between 0 and 1, got {}", r.alpha),
            ));
        }
        if !is_result_stem(&r.result_file) {
            out.push(Diagnostic::new(
                Some(i),
                field("result_file"),
                &r.result_file,
                format!("result_file {:?} must match [a-z0-9_]+", r.result_file),
            ));
        } else if !stems.insert(r.result_file.as_str()) {
            out.push(Diagnostic::new(
                Some(i),
                field("result_file"),
                &r.result_file,
                format!("result_file {:?} is used by more than one request", r.result_file),
            ));
        }
        if r.dependent.is_empty() {
            out.push(Diagnostic::new(Some(i), field("dependent"), "[]", "dependent must list at least one column"));
        }
        let mut seen = HashSet::new();
        for (j, d) in r.dependent.iter().enumerate() {
            if !seen.insert(d.as_str()) {
                out.push(Diagnostic::new(
                    Some(i),
                    format!("analyses[{i}].dependent[{j}]"),
                    d,
                    format!("column {d:?} is listed twice"),
                ));
            }
            if *d == r.independent {
                out.push(Diagnostic::new(
                    Some(i),
                    format!("analyses[{i}].dependent[{j}]"),
                    d,
                    format!("column {d:?} is also the independent variable"),
                ));
            }
        }
    }
    out
}

/// Closest candidate by normalized edit distance, if any is reasonably close.
fn nearest<'a>(needle: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::normalized_levenshtein(needle, c), c))
        .filter(|(score, _)| *score >= 0.5)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_owned())
}

/// Check a payload against the statistic registry and the warehouse catalog.
pub fn validate_payload(
    p: &AnalysisPayload,
    registry: &BTreeSet<StatisticName>,
    catalog: &WarehouseCatalog,
) -> ValidationReport {
    let mut out = check_invariants(p);
    for (i, r) in p.analyses.iter().enumerate() {
        let field = |name: &str| format!("analyses[{i}].{name}");
        let statistic = r.statistic_name().filter(|s| registry.contains(s));
        if statistic.is_none() {
            out.push(
                Diagnostic::new(Some(i), field("statistic"), &r.statistic, format!("unknown statistic {:?}", r.statistic))
                    .suggest(nearest(&r.statistic, registry.iter().map(|s| s.as_str()))),
            );
        }
        let Some(dataset) = catalog.dataset(&r.dataset) else {
            out.push(
                Diagnostic::new(Some(i), field("dataset"), &r.dataset, format!("unknown dataset {:?}", r.dataset))
                    .suggest(nearest(&r.dataset, catalog.names())),
            );
            continue;
        };
        match dataset.column_kind(&r.independent) {
            None => out.push(
                Diagnostic::new(
                    Some(i),
                    field("independent"),
                    &r.independent,
                    format!("unknown column {:?} in dataset {:?}", r.independent, r.dataset),
                )
                .suggest(nearest(&r.independent, dataset.column_names())),
            ),
            Some(ColumnKind::Numeric) => out.push(Diagnostic::new(
                Some(i),
                field("independent"),
                &r.independent,
                format!(
                    "independent column {:?} is numeric; a boolean or categorical grouping column is required",
                    r.independent
                ),
            )),
            Some(_) => {}
        }
        for (j, d) in r.dependent.iter().enumerate() {
            let path = format!("analyses[{i}].dependent[{j}]");
            match (dataset.column_kind(d), statistic.map(StatisticName::dependent_kind)) {
                (None, _) => out.push(
                    Diagnostic::new(Some(i), path, d, format!("unknown column {d:?} in dataset {:?}", r.dataset))
                        .suggest(nearest(d, dataset.column_names())),
                ),
                (Some(kind), Some(DependentKind::Numeric)) if kind != ColumnKind::Numeric => {
                    out.push(Diagnostic::new(
                        Some(i),
                        path,
                        d,
                        format!("column {d:?} is {kind}; {} needs a numeric column", r.statistic),
                    ))
                }
                (Some(ColumnKind::Numeric), Some(DependentKind::Categorical)) => out.push(Diagnostic::new(
                    Some(i),
                    path,
                    d,
                    format!(
                        "column {d:?} is numeric; contingency tables need boolean or categorical columns \
                         (discretize the column first)"
                    ),
                )),
                _ => {}
            }
        }
    }
    ValidationReport { diagnostics: out }
}
