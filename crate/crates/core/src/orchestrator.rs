//! The scheduled cycle: scan the published store, sync changed datasets into
//! the warehouse (archiving what they replace), pick the payloads that read
//! an updated dataset and run them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    fetch_to_staging, is_dataset_name, load_csv, DatasetCatalog, DatasetError, ManifestEntry, Warehouse,
    WarehouseCatalog, WarehouseManifest,
};
use crate::fsutil::{sha256_file, sha256_hex, write_atomic};
use crate::layout::Layout;
use crate::payload::{parse_payload, validate_payload, AnalysisPayload, StatisticName};
use crate::runner::{execute_payload, ResultWriter};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("another cycle holds the lock {} (pid {pid})", path.display())]
    LockHeld { path: PathBuf, pid: u32 },
    #[error("the cycle lock {} is no longer held by this process", path.display())]
    LockLost { path: PathBuf },
    #[error("warehouse is inconsistent for {dataset:?}: {message}")]
    Inconsistent { dataset: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io { path: path.to_owned(), source }
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Nanos, true)
}

// ---------------------------------------------------------------------------
// Store scan

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreScan {
    /// Dataset name to hex SHA-256 of the store file.
    pub datasets: BTreeMap<String, String>,
    /// Entries that were ignored (not `.csv`, or not a valid dataset name).
    pub skipped: Vec<String>,
}

/// Hash every `<name>.csv` in the store directory.
pub fn scan_store(store: &Path) -> Result<StoreScan, OrchestratorError> {
    let mut scan = StoreScan::default();
    let entries = fs::read_dir(store).map_err(io_err(store))?;
    for entry in entries {
        let entry = entry.map_err(io_err(store))?;
        let path = entry.path();
        let file_name = entry.file_name().to_string_lossy().into_owned();
        let stem = file_name.strip_suffix(".csv");
        let is_file = entry.file_type().map_err(io_err(&path))?.is_file();
        match stem {
            Some(name) if is_file && is_dataset_name(name) => {
                let hash = sha256_file(&path).map_err(io_err(&path))?;
                scan.datasets.insert(name.to_owned(), hash);
            }
            _ => {
                log::warn!("ignoring store entry {file_name:?}");
                scan.skipped.push(file_name);
            }
        }
    }
    scan.skipped.sort();
    Ok(scan)
}

// ---------------------------------------------------------------------------
// Cycle lock

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
struct LockRecord {
    pid: u32,
    /// Process start time in clock ticks since boot, when the platform
    /// exposes it; distinguishes a live owner from a recycled pid.
    start_ticks: Option<u64>,
    acquired_at: DateTime<Utc>,
}

fn process_start_ticks(pid: u32) -> Option<u64> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // The command name may contain spaces or parentheses; fields resume
    // after the last ')'. Field 22 overall is the 20th after it.
    let rest = &stat[stat.rfind(')')? + 1..];
    rest.split_whitespace().nth(19)?.parse().ok()
}

fn process_alive(pid: u32) -> Option<bool> {
    if Path::new("/proc/self").exists() {
        Some(Path::new(&format!("/proc/{pid}")).exists())
    } else {
        None
    }
}

/// Exclusive lock for one cycle, backed by a lock file that is removed on
/// drop. A lock left behind by a dead process is taken over.
#[derive(Debug)]
pub struct CycleLock {
    path: PathBuf,
    record: LockRecord,
}

/// A lock file younger than this with unreadable contents is assumed to be
/// mid-creation by another process.
const UNREADABLE_LOCK_GRACE: Duration = Duration::from_secs(10);

impl CycleLock {
    pub fn acquire(path: &Path) -> Result<Self, OrchestratorError> {
        let pid = std::process::id();
        let record = LockRecord { pid, start_ticks: process_start_ticks(pid), acquired_at: Utc::now() };
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut file) => {
                    let text = serde_json::to_string(&record).expect("lock record serializes");
                    file.write_all(text.as_bytes()).and_then(|_| file.sync_all()).map_err(io_err(path))?;
                    return Ok(Self { path: path.to_owned(), record });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if let Some(owner) = Self::live_owner(path)? {
                        return Err(OrchestratorError::LockHeld { path: path.to_owned(), pid: owner });
                    }
                    log::warn!("removing stale lock {}", path.display());
                    match fs::remove_file(path) {
                        Ok(()) => {}
                        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                        Err(e) => return Err(io_err(path)(e)),
                    }
                }
                Err(e) => return Err(io_err(path)(e)),
            }
        }
        let pid = Self::live_owner(path)?.unwrap_or(0);
        Err(OrchestratorError::LockHeld { path: path.to_owned(), pid })
    }

    /// Pid of the process holding the lock at `path`, or `None` when the
    /// lock is absent or stale.
    fn live_owner(path: &Path) -> Result<Option<u32>, OrchestratorError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(path)(e)),
        };
        let Ok(record) = serde_json::from_str::<LockRecord>(&text) else {
            let age = fs::metadata(path)
                .and_then(|m| m.modified())
                .ok()
                .and_then(|m| SystemTime::now().duration_since(m).ok())
                .unwrap_or_default();
            return Ok((age < UNREADABLE_LOCK_GRACE).then_some(0));
        };
        match process_alive(record.pid) {
            Some(false) => Ok(None),
            Some(true) => {
                let same_process = match (record.start_ticks, process_start_ticks(record.pid)) {
                    (Some(recorded), Some(current)) => recorded == current,
                    _ => true,
                };
                Ok(same_process.then_some(record.pid))
            }
            None => Ok(Some(record.pid)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Confirm the lock file on disk is still this lock.
    pub fn verify(&self) -> Result<(), OrchestratorError> {
        let on_disk = fs::read_to_string(&self.path)
            .ok()
            .and_then(|t| serde_json::from_str::<LockRecord>(&t).ok());
        if on_disk.as_ref() == Some(&self.record) {
            Ok(())
        } else {
            Err(OrchestratorError::LockLost { path: self.path.clone() })
        }
    }
}

impl Drop for CycleLock {
    fn drop(&mut self) {
        if self.verify().is_ok() {
            if let Err(e) = fs::remove_file(&self.path) {
                log::warn!("could not remove lock {}: {e}", self.path.display());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Warehouse sync

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetUpdate {
    pub dataset: String,
    pub old_sha256: Option<String>,
    pub new_sha256: String,
    /// Path of the archived previous version, relative to the root's parent
    /// layout (e.g. `archive/<name>/<timestamp>.csv`).
    pub archived_to: Option<String>,
}

fn archive_relative(name: &str, file_name: &str) -> String {
    format!("archive/{name}/{file_name}")
}

/// Find an existing archive file of `name` whose bytes hash to `sha256`.
fn find_archived(archive_dir: &Path, name: &str, sha256: &str) -> Result<Option<String>, OrchestratorError> {
    let dir = archive_dir.join(name);
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&dir)(e)),
    };
    let mut names: Vec<String> = entries
        .filter_map(Result::ok)
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|f| f.ends_with(".csv"))
        .collect();
    names.sort();
    for file_name in names.into_iter().rev() {
        let path = dir.join(&file_name);
        if sha256_file(&path).map_err(io_err(&path))? == sha256 {
            return Ok(Some(archive_relative(name, &file_name)));
        }
    }
    Ok(None)
}

/// Move the current warehouse file of `name` into the archive.
fn archive_current(current: &Path, archive_dir: &Path, name: &str) -> Result<String, OrchestratorError> {
    let dir = archive_dir.join(name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut file_name = format!("{}.csv", rfc3339(Utc::now()));
    let mut n = 1;
    while dir.join(&file_name).exists() {
        file_name = format!("{}-{n}.csv", rfc3339(Utc::now()));
        n += 1;
    }
    let target = dir.join(&file_name);
    fs::rename(current, &target).map_err(io_err(current))?;
    Ok(archive_relative(name, &file_name))
}

/// Bring the warehouse in line with the store scan. The manifest is
/// rewritten after each dataset, so an interrupted sync leaves a manifest
/// that describes the files actually present.
pub fn sync_warehouse(
    scan: &StoreScan,
    store: &Path,
    warehouse: &Warehouse,
    archive_dir: &Path,
    lock: &CycleLock,
) -> Result<Vec<DatasetUpdate>, OrchestratorError> {
    lock.verify()?;
    let mut manifest = warehouse.load_manifest()?;
    fs::create_dir_all(warehouse.dir()).map_err(io_err(warehouse.dir()))?;
    let mut updates = Vec::new();
    for (name, store_hash) in &scan.datasets {
        let old = manifest.get(name).cloned();
        if old.as_ref().map(|e| &e.sha256) == Some(store_hash) {
            continue;
        }
        let src = store.join(format!("{name}.csv"));
        let bytes = fs::read(&src).map_err(io_err(&src))?;
        let new_hash = sha256_hex(&bytes);
        if old.as_ref().map(|e| &e.sha256) == Some(&new_hash) {
            // The store file changed back between scan and copy.
            continue;
        }
        let current = warehouse.dataset_path(name);
        let archived_to = match &old {
            None => {
                if current.exists() {
                    log::warn!("{name}: warehouse file without manifest entry is overwritten");
                }
                None
            }
            Some(entry) => Some(archive_previous(&current, archive_dir, name, entry, &new_hash)?),
        };
        write_atomic(&current, &bytes).map_err(io_err(&current))?;
        let entry = ManifestEntry { sha256: new_hash.clone(), bytes: bytes.len() as u64, updated: Utc::now() };
        manifest.entries.insert(name.clone(), entry);
        warehouse.save_manifest(&manifest)?;
        log::info!("updated {name} ({})", &new_hash[..12]);
        updates.push(DatasetUpdate {
            dataset: name.clone(),
            old_sha256: old.map(|e| e.sha256),
            new_sha256: new_hash,
            archived_to,
        });
    }
    Ok(updates)
}

fn archive_previous(
    current: &Path,
    archive_dir: &Path,
    name: &str,
    old: &ManifestEntry,
    new_hash: &str,
) -> Result<String, OrchestratorError> {
    let current_hash = match sha256_file(current) {
        Ok(h) => Some(h),
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(current)(e)),
    };
    if current_hash.as_deref() == Some(old.sha256.as_str()) {
        return archive_current(current, archive_dir, name);
    }
    // A previous sync was interrupted after archiving (and possibly after
    // copying); the old version should already be in the archive.
    if let Some(found) = find_archived(archive_dir, name, &old.sha256)? {
        if current_hash.as_deref().is_some_and(|h| h != new_hash) {
            archive_current(current, archive_dir, name)?;
        }
        return Ok(found);
    }
    Err(OrchestratorError::Inconsistent {
        dataset: name.to_owned(),
        message: format!("no file with the manifest hash {} in the warehouse or archive", old.sha256),
    })
}

// ---------------------------------------------------------------------------
// Payload registry

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryError {
    pub payload: String,
    pub message: String,
}

/// The payload files under `payloads/`, parsed, with a dataset index.
#[derive(Debug, Clone, Default)]
pub struct PayloadRegistry {
    pub payloads: BTreeMap<String, AnalysisPayload>,
    pub errors: Vec<RegistryError>,
    index: BTreeMap<String, BTreeSet<String>>,
}

impl PayloadRegistry {
    /// Load every `*.json` in `dir`. Unparseable files are recorded in
    /// `errors` and left out of the index.
    pub fn load(dir: &Path) -> Result<Self, OrchestratorError> {
        let mut registry = Self::default();
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(registry),
            Err(e) => return Err(io_err(dir)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(dir))?;
            let file_name = entry.file_name().to_string_lossy().into_owned();
            if !file_name.ends_with(".json") || !entry.path().is_file() {
                continue;
            }
            let parsed = fs::read(entry.path())
                .map_err(|e| e.to_string())
                .and_then(|bytes| parse_payload(&bytes).map_err(|e| e.to_string()));
            match parsed {
                Ok(p) => registry.insert(file_name, p),
                Err(message) => {
                    log::warn!("skipping payload {file_name}: {message}");
                    registry.errors.push(RegistryError { payload: file_name, message });
                }
            }
        }
        registry.errors.sort_by(|a, b| a.payload.cmp(&b.payload));
        Ok(registry)
    }

    pub fn insert(&mut self, file_name: String, payload: AnalysisPayload) {
        for ds in payload.datasets() {
            self.index.entry(ds.to_owned()).or_default().insert(file_name.clone());
        }
        self.payloads.insert(file_name, payload);
    }

    /// Dataset name to the payload files that reference it.
    pub fn index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.index
    }
}

/// Payload files that read at least one updated dataset, sorted by name.
pub fn select_affected_payloads<'a, I>(updated: I, registry: &PayloadRegistry) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let selected: BTreeSet<&String> =
        updated.into_iter().filter_map(|d| registry.index.get(d)).flatten().collect();
    selected.into_iter().cloned().collect()
}

// ---------------------------------------------------------------------------
// Running payloads

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    /// Every document was written but some dependents carry an error.
    Partial,
    ValidationFailed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadOutcome {
    pub payload: String,
    pub status: RunStatus,
    pub result_keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub messages: Vec<String>,
}

/// Build the validation catalog. Datasets in `staged` are read from their
/// staged copies; every other manifest dataset from the warehouse.
fn catalog_for(
    warehouse: &Warehouse,
    manifest: &WarehouseManifest,
    staged: &BTreeMap<String, PathBuf>,
) -> Result<WarehouseCatalog, DatasetError> {
    let mut catalog = WarehouseCatalog::default();
    for name in manifest.entries.keys() {
        match staged.get(name) {
            Some(path) => catalog.insert(name.clone(), DatasetCatalog::from_dataset(&load_csv(path)?)),
            None => match load_csv(&warehouse.dataset_path(name)) {
                Ok(ds) => catalog.insert(name.clone(), DatasetCatalog::from_dataset(&ds)),
                Err(e) => log::debug!("{name} left out of the catalog: {e}"),
            },
        }
    }
    Ok(catalog)
}

/// Stage, validate, execute and store one payload.
pub fn run_payload(layout: &Layout, label: &str, payload: &AnalysisPayload) -> PayloadOutcome {
    let mut outcome =
        PayloadOutcome { payload: label.to_owned(), status: RunStatus::Failed, result_keys: vec![], messages: vec![] };
    let warehouse = layout.warehouse();
    let manifest = match warehouse.load_manifest() {
        Ok(m) => m,
        Err(e) => {
            outcome.messages.push(e.to_string());
            return outcome;
        }
    };
    let known: Vec<&str> = payload.datasets().into_iter().filter(|d| manifest.get(d).is_some()).collect();
    let staged = match fetch_to_staging(known, &warehouse, &manifest, &layout.staging()) {
        Ok(s) => s,
        Err(e) => {
            outcome.messages.push(e.to_string());
            return outcome;
        }
    };
    let catalog = match catalog_for(&warehouse, &manifest, &staged.staged) {
        Ok(c) => c,
        Err(e) => {
            outcome.messages.push(e.to_string());
            return outcome;
        }
    };
    let report = validate_payload(payload, &StatisticName::registry(), &catalog);
    if !report.is_ok() {
        outcome.status = RunStatus::ValidationFailed;
        outcome.messages = report.diagnostics.iter().map(ToString::to_string).collect();
        return outcome;
    }
    let docs = match execute_payload(payload, &staged) {
        Ok(d) => d,
        Err(e) => {
            outcome.messages.push(e.to_string());
            return outcome;
        }
    };
    let mut writer = ResultWriter::new(layout.results());
    let mut partial = false;
    for doc in &docs {
        match writer.write(doc, &payload.output) {
            Ok(key) => outcome.result_keys.push(key.to_string()),
            Err(e) => {
                outcome.messages.push(e.to_string());
                return outcome;
            }
        }
        for r in &doc.results {
            if let crate::runner::Outcome::Error { error } = &r.outcome {
                partial = true;
                outcome.messages.push(format!("{}: {}: {}", doc.result_file, r.dependent, error.message));
            }
        }
    }
    outcome.status = if partial { RunStatus::Partial } else { RunStatus::Success };
    outcome
}

// ---------------------------------------------------------------------------
// The cycle

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub scanned_at: DateTime<Utc>,
    pub updated: Vec<DatasetUpdate>,
    pub selected_payloads: Vec<String>,
    pub run_outcomes: Vec<PayloadOutcome>,
    /// Warehouse datasets no longer present in the store.
    #[serde(default)]
    pub missing_from_store: Vec<String>,
    #[serde(default)]
    pub registry_errors: Vec<RegistryError>,
    #[serde(default)]
    pub skipped_store_entries: Vec<String>,
}

impl SyncReport {
    pub fn archived_count(&self) -> usize {
        self.updated.iter().filter(|u| u.archived_to.is_some()).count()
    }

    /// True when every payload outcome succeeded and nothing was skipped.
    pub fn all_ok(&self) -> bool {
        self.registry_errors.is_empty() && self.run_outcomes.iter().all(|o| o.status == RunStatus::Success)
    }

    pub fn summary(&self) -> String {
        let ran = self.run_outcomes.iter().filter(|o| self.selected_payloads.contains(&o.payload)).count();
        format!("{} updated, {} archived, {} payloads run", self.updated.len(), self.archived_count(), ran)
    }
}

/// One full cycle under the lock. The report is persisted to
/// `runs/<timestamp>.json`.
pub fn run_cycle(layout: &Layout) -> Result<SyncReport, OrchestratorError> {
    layout.ensure().map_err(io_err(layout.root()))?;
    let lock = CycleLock::acquire(&layout.lock_path())?;
    let scanned_at = Utc::now();
    let scan = scan_store(&layout.store())?;
    let warehouse = layout.warehouse();
    let updates = sync_warehouse(&scan, &layout.store(), &warehouse, &layout.archive(), &lock)?;
    let manifest = warehouse.load_manifest()?;
    let missing: BTreeSet<&str> =
        manifest.entries.keys().map(String::as_str).filter(|n| !scan.datasets.contains_key(*n)).collect();

    let registry = PayloadRegistry::load(&layout.payloads())?;
    let selected = select_affected_payloads(updates.iter().map(|u| u.dataset.as_str()), &registry);
    let mut outcomes = Vec::new();
    for file in &selected {
        let payload = &registry.payloads[file];
        let gone: Vec<&str> = payload.datasets().into_iter().filter(|d| missing.contains(d)).collect();
        if gone.is_empty() {
            outcomes.push(run_payload(layout, file, payload));
        } else {
            outcomes.push(missing_outcome(file, &gone));
        }
    }
    for (file, payload) in &registry.payloads {
        if selected.contains(file) {
            continue;
        }
        let gone: Vec<&str> = payload.datasets().into_iter().filter(|d| missing.contains(d)).collect();
        if !gone.is_empty() {
            outcomes.push(missing_outcome(file, &gone));
        }
    }

    let report = SyncReport {
        scanned_at,
        updated: updates,
        selected_payloads: selected,
        run_outcomes: outcomes,
        missing_from_store: missing.into_iter().map(str::to_owned).collect(),
        registry_errors: registry.errors,
        skipped_store_entries: scan.skipped,
    };
    let path = layout.runs().join(format!("{}.json", rfc3339(scanned_at)));
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    drop(lock);
    Ok(report)
}

fn missing_outcome(file: &str, gone: &[&str]) -> PayloadOutcome {
    PayloadOutcome {
        payload: file.to_owned(),
        status: RunStatus::ValidationFailed,
        result_keys: vec![],
        messages: gone.iter().map(|d| format!("dataset {d:?} is no longer in the published store")).collect(),
    }
}
