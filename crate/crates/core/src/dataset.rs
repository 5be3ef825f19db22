//! Typed columnar datasets, the local warehouse, and run staging.
//!
//! Datasets are RFC 4180 CSV files with a header row. The warehouse is a
//! flat directory of `<name>.csv` files plus `manifest.json`, which records
//! the SHA-256, size and update time of each current file:
//!
//! ```text
//! { "<name>": { "sha256": "<hex>", "bytes": N, "updated": "<RFC3339>" } }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::fsutil::{sha256_file, sha256_hex, write_atomic};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: empty file (a header row is required)", path.display())]
    Empty { path: PathBuf },
    #[error("{}: line {line}: expected {expected} fields, found {found}", path.display())]
    Ragged { path: PathBuf, line: u64, expected: u64, found: u64 },
    #[error("{}: duplicate column {name:?}", path.display())]
    DuplicateColumn { path: PathBuf, name: String },
    #[error("{}: column {index} has an empty name", path.display())]
    EmptyColumnName { path: PathBuf, index: usize },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("{}: invalid manifest: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("dataset {0:?} is not in the warehouse")]
    UnknownDataset(String),
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.to_owned(), source }
    }
}

/// Valid dataset identifiers: `[a-z0-9][a-z0-9_-]*`.
pub fn is_dataset_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('a'..='z' | '0'..='9'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_' | '-'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Boolean,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Boolean => "boolean",
            ColumnKind::Categorical => "categorical",
        })
    }
}

/// Cell storage; `None` is a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Boolean(Vec<Option<bool>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Boolean(_) => ColumnKind::Boolean,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_count(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.iter().filter(|c| c.is_none()).count(),
            ColumnData::Boolean(v) => v.iter().filter(|c| c.is_none()).count(),
            ColumnData::Categorical(v) => v.iter().filter(|c| c.is_none()).count(),
        }
    }

    /// Cells rendered as level labels (`"false"`/`"true"` for booleans).
    /// `None` for numeric columns.
    pub fn labels(&self) -> Option<Vec<Option<String>>> {
        match &self.data {
            ColumnData::Numeric(_) => None,
            ColumnData::Boolean(v) => Some(v.iter().map(|c| c.map(|b| b.to_string())).collect()),
            ColumnData::Categorical(v) => Some(v.clone()),
        }
    }

    /// Distinct non-missing levels in ascending order (false < true for
    /// booleans, lexicographic otherwise).
    pub fn levels(&self) -> Option<Vec<String>> {
        match &self.data {
            ColumnData::Numeric(_) => None,
            ColumnData::Boolean(v) => {
                let set: BTreeSet<bool> = v.iter().flatten().copied().collect();
                Some(set.into_iter().map(|b| b.to_string()).collect())
            }
            ColumnData::Categorical(v) => {
                let set: BTreeSet<&str> = v.iter().flatten().map(String::as_str).collect();
                Some(set.into_iter().map(str::to_owned).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    /// Hex SHA-256 of the file bytes the dataset was parsed from.
    pub version: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

impl TabularDataset {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Numeric if every present cell is a finite number, else boolean if every
/// present cell is a boolean literal, else categorical.
fn infer_column(name: String, raw: Vec<Option<String>>) -> Column {
    let data = if raw.iter().flatten().all(|s| parse_finite(s).is_some()) {
        ColumnData::Numeric(raw.iter().map(|c| c.as_deref().and_then(parse_finite)).collect())
    } else if raw.iter().flatten().all(|s| parse_bool(s).is_some()) {
        ColumnData::Boolean(raw.iter().map(|c| c.as_deref().and_then(parse_bool)).collect())
    } else {
        ColumnData::Categorical(raw)
    };
    Column { name, data }
}

/// Parse CSV bytes into a dataset named `name`. `origin` is only used in
/// error messages.
pub fn parse_csv(name: &str, bytes: &[u8], origin: &Path) -> Result<TabularDataset, DatasetError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(DatasetError::Empty { path: origin.to_owned() });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let map_csv = |e: csv::Error| match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => DatasetError::Ragged {
            path: origin.to_owned(),
            line: pos.as_ref().map(|p| p.line()).unwrap_or(0),
            expected: *expected_len,
            found: *len,
        },
        _ => DatasetError::Csv { path: origin.to_owned(), message: e.to_string() },
    };
    let headers: Vec<String> = reader.headers().map_err(map_csv)?.iter().map(str::to_owned).collect();
    let mut seen = BTreeSet::new();
    for (index, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(DatasetError::EmptyColumnName { path: origin.to_owned(), index });
        }
        if !seen.insert(h.as_str()) {
            return Err(DatasetError::DuplicateColumn { path: origin.to_owned(), name: h.clone() });
        }
    }
    let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    let mut row_count = 0;
    for record in reader.records() {
        let record = record.map_err(map_csv)?;
        for (cells, field) in raw.iter_mut().zip(record.iter()) {
            cells.push((!field.is_empty()).then(|| field.to_owned()));
        }
        row_count += 1;
    }
    let columns = headers.into_iter().zip(raw).map(|(h, cells)| infer_column(h, cells)).collect();
    Ok(TabularDataset { name: name.to_owned(), version: sha256_hex(bytes), columns, row_count })
}

/// Load a CSV file; the dataset is named after the file stem.
pub fn load_csv(path: &Path) -> Result<TabularDataset, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    parse_csv(name, &bytes, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sha256: String,
    pub bytes: u64,
    pub updated: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WarehouseManifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl WarehouseManifest {
    pub fn get(&self, name: &str) -> Option<&ManifestEntry> {
        self.entries.get(name)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization is infallible") + "\n"
    }
}

/// Column names and kinds of every warehouse dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WarehouseCatalog {
    datasets: BTreeMap<String, DatasetCatalog>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetCatalog {
    pub version: String,
    pub columns: Vec<(String, ColumnKind)>,
}

impl DatasetCatalog {
    pub fn from_dataset(ds: &TabularDataset) -> Self {
        Self {
            version: ds.version.clone(),
            columns: ds.columns.iter().map(|c| (c.name.clone(), c.kind())).collect(),
        }
    }

    pub fn column_kind(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }
}

impl WarehouseCatalog {
    pub fn insert(&mut self, name: impl Into<String>, entry: DatasetCatalog) {
        self.datasets.insert(name.into(), entry);
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetCatalog> {
        self.datasets.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }
}

/// The local content-addressed warehouse directory.
#[derive(Debug, Clone)]
pub struct Warehouse {
    dir: PathBuf,
}

impl Warehouse {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn dataset_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.csv"))
    }

    /// Read the manifest; a missing manifest is an empty warehouse.
    pub fn load_manifest(&self) -> Result<WarehouseManifest, DatasetError> {
        let path = self.manifest_path();
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(WarehouseManifest::default()),
            Err(e) => return Err(DatasetError::io(&path, e)),
        };
        let manifest: WarehouseManifest = serde_json::from_slice(&bytes)
            .map_err(|e| DatasetError::Manifest { path: path.clone(), message: e.to_string() })?;
        if let Some(bad) = manifest.entries.keys().find(|k| !is_dataset_name(k)) {
            return Err(DatasetError::Manifest { path, message: format!("invalid dataset name {bad:?}") });
        }
        Ok(manifest)
    }

    pub fn save_manifest(&self, manifest: &WarehouseManifest) -> Result<(), DatasetError> {
        let path = self.manifest_path();
        write_atomic(&path, manifest.to_json_pretty().as_bytes()).map_err(|e| DatasetError::io(&path, e))
    }

    /// Load every dataset listed in `manifest` and record its columns.
    pub fn catalog(&self, manifest: &WarehouseManifest) -> Result<WarehouseCatalog, DatasetError> {
        let mut catalog = WarehouseCatalog::default();
        for name in manifest.entries.keys() {
            let ds = load_csv(&self.dataset_path(name))?;
            catalog.insert(name.clone(), DatasetCatalog::from_dataset(&ds));
        }
        Ok(catalog)
    }
}

/// Run-private copies of the datasets one run needs. The staging directory
/// is deleted when the value is dropped.
#[derive(Debug)]
pub struct StagedRun {
    pub run_id: Uuid,
    dir: tempfile::TempDir,
    pub staged: BTreeMap<String, PathBuf>,
}

impl StagedRun {
    pub fn dir(&self) -> &Path {
        self.dir.path()
    }

    pub fn path(&self, dataset: &str) -> Option<&Path> {
        self.staged.get(dataset).map(PathBuf::as_path)
    }
}

/// Copy the named warehouse datasets into a fresh staging directory under
/// `staging_root`.
pub fn fetch_to_staging<'a, I>(
    names: I,
    warehouse: &Warehouse,
    manifest: &WarehouseManifest,
    staging_root: &Path,
) -> Result<StagedRun, DatasetError>
where
    I: IntoIterator<Item = &'a str>,
{
    let run_id = Uuid::new_v4();
    std::fs::create_dir_all(staging_root).map_err(|e| DatasetError::io(staging_root, e))?;
    let dir = tempfile::Builder::new()
        .prefix(&format!("run-{run_id}-"))
        .tempdir_in(staging_root)
        .map_err(|e| DatasetError::io(staging_root, e))?;
    let mut staged = BTreeMap::new();
    for name in names {
        if manifest.get(name).is_none() || !is_dataset_name(name) {
            return Err(DatasetError::UnknownDataset(name.to_owned()));
        }
        let src = warehouse.dataset_path(name);
        let dst = dir.path().join(format!("{name}.csv"));
        std::fs::copy(&src, &dst).map_err(|e| DatasetError::io(&src, e))?;
        staged.insert(name.to_owned(), dst);
    }
    log::debug!("staged {} dataset(s) for run {run_id}", staged.len());
    Ok(StagedRun { run_id, dir, staged })
}

/// Build a manifest entry for the file currently at `path`.
pub fn manifest_entry_for(path: &Path, updated: DateTime<Utc>) -> Result<ManifestEntry, DatasetError> {
    let sha256 = sha256_file(path).map_err(|e| DatasetError::io(path, e))?;
    let bytes = std::fs::metadata(path).map_err(|e| DatasetError::io(path, e))?.len();
    Ok(ManifestEntry { sha256, bytes, updated })
}
