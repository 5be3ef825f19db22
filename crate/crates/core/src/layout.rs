use std::path::{Path, PathBuf};

use crate::dataset::Warehouse;

/// Directory layout under one pipeline root:
///
/// ```text
/// store/               published data store (<name>.csv)
/// warehouse/           current datasets + manifest.json
/// archive/<name>/      superseded dataset versions (<RFC3339>.csv)
/// payloads/            registered payload files (*.json)
/// results/<bucket>/    result documents
/// runs/                sync reports (<RFC3339>.json)
/// staging/             run-private staging directories
/// .a4l.lock            single-cycle lock
/// ```
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn warehouse(&self) -> Warehouse {
        Warehouse::new(self.root.join("warehouse"))
    }

    pub fn archive(&self) -> PathBuf {
        self.root.join("archive")
    }

    pub fn payloads(&self) -> PathBuf {
        self.root.join("payloads")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn staging(&self) -> PathBuf {
        self.root.join("staging")
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(".a4l.lock")
    }

    /// Create any missing directories of the layout.
    pub fn ensure(&self) -> std::io::Result<()> {
        for dir in [
            self.store(),
            self.warehouse().dir().to_owned(),
            self.archive(),
            self.payloads(),
            self.results(),
            self.runs(),
            self.staging(),
        ] {
            std::fs::create_dir_all(dir)?;
        }
        Ok(())
    }
}
