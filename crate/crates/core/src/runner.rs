//! Executes a validated payload against staged datasets and writes one
//! result document per analysis request.
//!
//! Preprocessing is fixed: rows with a missing independent or dependent cell
//! are dropped per dependent variable, the independent column's two levels
//! are ordered (false < true, otherwise lexicographic) and the first level
//! becomes group 1.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::dataset::{load_csv, Column, ColumnData, DatasetError, StagedRun, TabularDataset};
use crate::fsutil::write_atomic;
use crate::payload::{AnalysisPayload, AnalysisRequest, OutputSpec, StatisticName};
use crate::statkernel::{
    self, contingency, descriptives, mann_whitney_u, welch_power, welch_ttest, Alternative, ContingencyTable,
    GroupSummary, MannWhitneyResult, PowerResult, StatError, WelchResult,
};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("dataset {dataset:?} could not be loaded from staging: {source}")]
    Staged { dataset: String, source: DatasetError },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("result key {0} was already written in this run")]
    KeyCollision(StoredResultKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub sha256: String,
}

/// Which independent-variable level became which group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupOrder {
    pub group1: String,
    pub group2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatResult {
    WelchTtest(WelchResult),
    WelchPower(PowerResult),
    MannWhitneyU(MannWhitneyResult),
    ContingencyTable(ContingencyTable),
    Descriptives { group1: GroupSummary, group2: GroupSummary },
}

impl StatResult {
    pub fn kind(&self) -> &'static str {
        match self {
            StatResult::WelchTtest(_) => "welch_ttest",
            StatResult::WelchPower(_) => "welch_power",
            StatResult::MannWhitneyU(_) => "mann_whitney_u",
            StatResult::ContingencyTable(_) => "contingency_table",
            StatResult::Descriptives { .. } => "descriptives",
        }
    }
}

/// A per-dependent failure recorded inside the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { result: StatResult },
    Error { error: ErrorRecord },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependentResult {
    pub dependent: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl DependentResult {
    pub fn is_error(&self) -> bool {
        matches!(self.outcome, Outcome::Error { .. })
    }
}

/// The serialized output of one analysis request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub domain: String,
    pub statistic: StatisticName,
    pub dataset: DatasetRef,
    pub independent: String,
    pub alternative: Alternative,
    pub alpha: f64,
    pub result_file: String,
    pub group_order: Option<GroupOrder>,
    pub results: Vec<DependentResult>,
    pub run_id: Uuid,
    pub generated_at: DateTime<Utc>,
}

impl ResultDocument {
    pub fn error_count(&self) -> usize {
        self.results.iter().filter(|r| r.is_error()).count()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialization is infallible") + "\n"
    }
}

/// Location of a stored result: `<bucket>/<prefix>/<result_file>.json`
/// relative to the results root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoredResultKey {
    pub bucket: String,
    pub prefix: String,
    pub file_name: String,
}

impl StoredResultKey {
    pub fn new(out: &OutputSpec, result_file: &str) -> Self {
        let prefix = out.prefix.split('/').filter(|s| !s.is_empty() && *s != ".").collect::<Vec<_>>().join("/");
        Self { bucket: out.bucket.clone(), prefix, file_name: format!("{result_file}.json") }
    }

    /// `bucket/prefix/file.json` with single separators.
    pub fn relative_path(&self) -> String {
        if self.prefix.is_empty() {
            format!("{}/{}", self.bucket, self.file_name)
        } else {
            format!("{}/{}/{}", self.bucket, self.prefix, self.file_name)
        }
    }

    pub fn path_under(&self, results_root: &Path) -> PathBuf {
        results_root.join(self.relative_path())
    }
}

impl fmt::Display for StoredResultKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "results/{}", self.relative_path())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("column {0:?} does not exist")]
    UnknownColumn(String),
    #[error("independent column {0:?} is numeric; groups need a boolean or categorical column")]
    NumericIndependent(String),
    #[error("independent column {column:?} must have exactly 2 levels, found {}: {levels:?}", levels.len())]
    LevelCount { column: String, levels: Vec<String> },
    #[error("dependent column {0:?} is not numeric")]
    NonNumericDependent(String),
}

/// Two numeric samples split by the independent column.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGroups {
    pub group1: Vec<f64>,
    pub group2: Vec<f64>,
    pub order: GroupOrder,
}

/// Ordered two-level grouping of the independent column.
pub fn group_order(column: &Column) -> Result<GroupOrder, SplitError> {
    let levels = column.levels().ok_or_else(|| SplitError::NumericIndependent(column.name.clone()))?;
    match <[String; 2]>::try_from(levels) {
        Ok([group1, group2]) => Ok(GroupOrder { group1, group2 }),
        Err(levels) => Err(SplitError::LevelCount { column: column.name.clone(), levels }),
    }
}

/// Split the dependent column into two samples by the independent column,
/// dropping rows where either cell is missing.
pub fn split_groups(ds: &TabularDataset, independent: &str, dependent: &str) -> Result<SplitGroups, SplitError> {
    let ind = ds.column(independent).ok_or_else(|| SplitError::UnknownColumn(independent.to_owned()))?;
    let dep = ds.column(dependent).ok_or_else(|| SplitError::UnknownColumn(dependent.to_owned()))?;
    let order = group_order(ind)?;
    let ColumnData::Numeric(values) = &dep.data else {
        return Err(SplitError::NonNumericDependent(dependent.to_owned()));
    };
    let labels = ind.labels().expect("group_order rejects numeric columns");
    let mut group1 = Vec::new();
    let mut group2 = Vec::new();
    for (label, value) in labels.iter().zip(values) {
        if let (Some(label), Some(value)) = (label, value) {
            if *label == order.group1 {
                group1.push(*value);
            } else {
                group2.push(*value);
            }
        }
    }
    Ok(SplitGroups { group1, group2, order })
}

fn failure(kind: &str, message: impl fmt::Display) -> ErrorRecord {
    ErrorRecord { kind: kind.to_owned(), message: message.to_string() }
}

impl From<StatError> for ErrorRecord {
    fn from(e: StatError) -> Self {
        failure(e.kind(), e)
    }
}

impl From<SplitError> for ErrorRecord {
    fn from(e: SplitError) -> Self {
        let kind = match e {
            SplitError::UnknownColumn(_) => "unknown_column",
            SplitError::NumericIndependent(_) | SplitError::NonNumericDependent(_) => "invalid_column_kind",
            SplitError::LevelCount { .. } => "invalid_grouping",
        };
        failure(kind, e)
    }
}

fn run_dependent(
    statistic: StatisticName,
    ds: &TabularDataset,
    request: &AnalysisRequest,
    dependent: &str,
) -> Result<StatResult, ErrorRecord> {
    if statistic == StatisticName::ContingencyTable {
        let rows = ds.column(&request.independent).and_then(Column::labels);
        let cols = ds.column(dependent).and_then(Column::labels);
        let (Some(rows), Some(cols)) = (rows, cols) else {
            return Err(failure(
                "invalid_column_kind",
                "contingency tables need boolean or categorical columns; discretize numeric columns first",
            ));
        };
        return Ok(StatResult::ContingencyTable(contingency(&request.independent, &rows, dependent, &cols)?));
    }
    let split = split_groups(ds, &request.independent, dependent)?;
    let (l1, l2) = (&split.order.group1, &split.order.group2);
    Ok(match statistic {
        StatisticName::WelchTtest => {
            let mut r = welch_ttest(&split.group1, &split.group2, request.alternative, request.alpha)?;
            r.group1.label.clone_from(l1);
            r.group2.label.clone_from(l2);
            StatResult::WelchTtest(r)
        }
        StatisticName::WelchPower => {
            let g1 = descriptives(&split.group1).with_label(l1);
            let g2 = descriptives(&split.group2).with_label(l2);
            StatResult::WelchPower(welch_power(&g1, &g2, request.alpha, request.alternative)?)
        }
        StatisticName::MannWhitneyU => {
            StatResult::MannWhitneyU(mann_whitney_u(&split.group1, &split.group2, request.alternative)?)
        }
        StatisticName::Descriptives => StatResult::Descriptives {
            group1: statkernel::descriptives(&split.group1).with_label(l1),
            group2: statkernel::descriptives(&split.group2).with_label(l2),
        },
        StatisticName::ContingencyTable => unreachable!("handled above"),
    })
}

/// Run one request against an already loaded dataset.
pub fn execute_request(
    domain: &str,
    request: &AnalysisRequest,
    ds: &TabularDataset,
    run_id: Uuid,
) -> Result<ResultDocument, RunError> {
    let statistic = request
        .statistic_name()
        .ok_or_else(|| RunError::Internal(format!("statistic {:?} reached execution unresolved", request.statistic)))?;
    let independent = ds.column(&request.independent).ok_or_else(|| {
        RunError::Internal(format!("column {:?} missing from dataset {:?}", request.independent, ds.name))
    })?;
    if let Some(d) = request.dependent.iter().find(|d| ds.column(d).is_none()) {
        return Err(RunError::Internal(format!("column {d:?} missing from dataset {:?}", ds.name)));
    }
    let group_order = match statistic {
        StatisticName::ContingencyTable => None,
        _ => group_order(independent).ok(),
    };
    let results = request
        .dependent
        .iter()
        .map(|dependent| {
            let outcome = match run_dependent(statistic, ds, request, dependent) {
                Ok(result) => Outcome::Ok { result },
                Err(error) => Outcome::Error { error },
            };
            DependentResult { dependent: dependent.clone(), outcome }
        })
        .collect();
    Ok(ResultDocument {
        schema_version: RESULT_SCHEMA_VERSION,
        domain: domain.to_owned(),
        statistic,
        dataset: DatasetRef { name: ds.name.clone(), sha256: ds.version.clone() },
        independent: request.independent.clone(),
        alternative: request.alternative,
        alpha: request.alpha,
        result_file: request.result_file.clone(),
        group_order,
        results,
        run_id,
        generated_at: Utc::now(),
    })
}

/// Execute every request of `payload` in order against the staged datasets.
pub fn execute_payload(payload: &AnalysisPayload, staged: &StagedRun) -> Result<Vec<ResultDocument>, RunError> {
    let mut loaded: HashMap<&str, TabularDataset> = HashMap::new();
    let mut docs = Vec::with_capacity(payload.analyses.len());
    for request in &payload.analyses {
        let name = request.dataset.as_str();
        if !loaded.contains_key(name) {
            let path = staged
                .path(name)
                .ok_or_else(|| RunError::Internal(format!("dataset {name:?} was not staged")))?;
            let mut ds =
                load_csv(path).map_err(|source| RunError::Staged { dataset: name.to_owned(), source })?;
            ds.name = name.to_owned();
            loaded.insert(name, ds);
        }
        docs.push(execute_request(&payload.domain, request, &loaded[name], staged.run_id)?);
    }
    Ok(docs)
}

/// Atomically write `doc` under `results_root` at the key derived from `out`.
pub fn write_result(doc: &ResultDocument, out: &OutputSpec, results_root: &Path) -> Result<StoredResultKey, RunError> {
    let key = StoredResultKey::new(out, &doc.result_file);
    let path = key.path_under(results_root);
    write_atomic(&path, doc.to_json_pretty().as_bytes()).map_err(|source| RunError::Io { path, source })?;
    Ok(key)
}

/// Writes results for one run and refuses to write the same key twice.
#[derive(Debug)]
pub struct ResultWriter {
    root: PathBuf,
    written: HashSet<StoredResultKey>,
}

impl ResultWriter {
    pub fn new(results_root: impl Into<PathBuf>) -> Self {
        Self { root: results_root.into(), written: HashSet::new() }
    }

    pub fn write(&mut self, doc: &ResultDocument, out: &OutputSpec) -> Result<StoredResultKey, RunError> {
        let key = StoredResultKey::new(out, &doc.result_file);
        if self.written.contains(&key) {
            return Err(RunError::KeyCollision(key));
        }
        let key = write_result(doc, out, &self.root)?;
        self.written.insert(key.clone());
        Ok(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_csv;

    fn dataset(text: &str) -> TabularDataset {
        parse_csv("fixture", text.as_bytes(), Path::new("fixture.csv")).unwrap()
    }

    fn request(statistic: &str, independent: &str, dependent: &[&str]) -> AnalysisRequest {
        AnalysisRequest {
            statistic: statistic.into(),
            dataset: "fixture".into(),
            independent: independent.into(),
            dependent: dependent.iter().map(|s| s.to_string()).collect(),
            alternative: Alternative::TwoSided,
            alpha: 0.05,
            result_file: "out".into(),
        }
    }

    #[test]
    fn boolean_groups_false_first() {
        let ds = dataset("used,score\nfalse,1\ntrue,2\nfalse,3\ntrue,4\n");
        let s = split_groups(&ds, "used", "score").unwrap();
        assert_eq!(s.group1, vec![1.0, 3.0]);
        assert_eq!(s.group2, vec![2.0, 4.0]);
        assert_eq!(s.order, GroupOrder { group1: "false".into(), group2: "true".into() });
    }

    #[test]
    fn three_levels_rejected() {
        let ds = dataset("g,v\na,1\nb,2\nc,3\n");
        match split_groups(&ds, "g", "v").unwrap_err() {
            SplitError::LevelCount { levels, .. } => assert_eq!(levels, vec!["a", "b", "c"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn pairwise_deletion() {
        let ds = dataset("g,x,y\na,1,10\nb,,20\na,3,\nb,4,40\n,5,50\n");
        let x = split_groups(&ds, "g", "x").unwrap();
        assert_eq!((x.group1, x.group2), (vec![1.0, 3.0], vec![4.0]));
        let y = split_groups(&ds, "g", "y").unwrap();
        assert_eq!((y.group1, y.group2), (vec![10.0], vec![20.0, 40.0]));
    }

    #[test]
    fn non_numeric_dependent() {
        let ds = dataset("g,c\na,x\nb,y\n");
        assert!(matches!(split_groups(&ds, "g", "c"), Err(SplitError::NonNumericDependent(_))));
    }

    #[test]
    fn degenerate_dependent_is_recorded_not_fatal() {
        let ds = dataset("used,flat,score\nfalse,2,1\nfalse,2,2\ntrue,2,5\ntrue,2,7\n");
        let doc = execute_request("jw", &request("get_welch_ttest", "used", &["flat", "score"]), &ds, Uuid::nil())
            .unwrap();
        assert_eq!(doc.results.len(), 2);
        match &doc.results[0].outcome {
            Outcome::Error { error } => assert_eq!(error.kind, "degenerate_data"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(doc.results[1].outcome, Outcome::Ok { result: StatResult::WelchTtest(_) }));
        assert_eq!(doc.error_count(), 1);
    }

    #[test]
    fn labels_recorded_on_groups() {
        let ds = dataset("used,score\nfalse,1\ntrue,2\nfalse,3\ntrue,5\n");
        let doc = execute_request("jw", &request("get_welch_power", "used", &["score"]), &ds, Uuid::nil()).unwrap();
        let Outcome::Ok { result: StatResult::WelchPower(p) } = &doc.results[0].outcome else {
            panic!("expected power result");
        };
        assert_eq!(p.group1.label, "false");
        assert_eq!(p.group2.label, "true");
        assert_eq!(doc.group_order.as_ref().unwrap().group1, "false");
    }

    #[test]
    fn contingency_per_dependent() {
        let ds = dataset("used,age,gender\ntrue,<25,f\nfalse,<25,m\ntrue,>=25,f\ntrue,<25,m\nfalse,>=25,f\n");
        let doc = execute_request("sami", &request("get_contingency_table", "used", &["age", "gender"]), &ds, Uuid::nil())
            .unwrap();
        assert!(doc.group_order.is_none());
        assert_eq!(doc.results.len(), 2);
        for r in &doc.results {
            let Outcome::Ok { result: StatResult::ContingencyTable(t) } = &r.outcome else {
                panic!("expected table");
            };
            assert_eq!(t.grand_total, 5);
            assert_eq!(t.row_variable, "used");
        }
    }

    #[test]
    fn unknown_statistic_is_internal() {
        let ds = dataset("used,score\nfalse,1\ntrue,2\n");
        let err = execute_request("jw", &request("get_foo", "used", &["score"]), &ds, Uuid::nil()).unwrap_err();
        assert!(matches!(err, RunError::Internal(_)));
    }

    #[test]
    fn document_json_round_trip() {
        let ds = dataset("used,score,g\nfalse,1,a\ntrue,2,b\nfalse,3,a\ntrue,5,a\n");
        for stat in StatisticName::ALL {
            let dep = if stat == StatisticName::ContingencyTable { "g" } else { "score" };
            let doc = execute_request("jw", &request(stat.as_str(), "used", &[dep]), &ds, Uuid::new_v4()).unwrap();
            let back: ResultDocument = serde_json::from_str(&doc.to_json_pretty()).unwrap();
            assert_eq!(back, doc, "{stat}");
        }
    }

    #[test]
    fn keys_and_atomic_overwrite() {
        let root = tempfile::tempdir().unwrap();
        let ds = dataset("used,score\nfalse,1\ntrue,2\nfalse,3\ntrue,5\n");
        let mut req = request("get_welch_ttest", "used", &["score"]);
        req.result_file = "sami_fall24_ttest".into();
        let doc = execute_request("sami", &req, &ds, Uuid::new_v4()).unwrap();
        let out = OutputSpec { bucket: "sami".into(), prefix: String::new() };
        let key = write_result(&doc, &out, root.path()).unwrap();
        assert_eq!(key.to_string(), "results/sami/sami_fall24_ttest.json");
        assert!(root.path().join("sami/sami_fall24_ttest.json").is_file());

        let nested = OutputSpec { bucket: "vera".into(), prefix: "/2023//summer/".into() };
        assert_eq!(StoredResultKey::new(&nested, "x").relative_path(), "vera/2023/summer/x.json");

        let mut writer = ResultWriter::new(root.path());
        writer.write(&doc, &out).unwrap();
        assert!(matches!(writer.write(&doc, &out), Err(RunError::KeyCollision(_))));
    }
}
