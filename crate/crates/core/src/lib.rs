//! Config-driven analytics pipeline: payload parsing and validation, CSV
//! datasets, the statistics kernel, the payload runner and the sync/watch
//! orchestrator.

pub mod dataset;
pub mod fsutil;
pub mod layout;
pub mod orchestrator;
pub mod payload;
pub mod runner;
pub mod statkernel;

pub use dataset::{ColumnKind, TabularDataset, Warehouse, WarehouseCatalog, WarehouseManifest};
pub use layout::Layout;
pub use payload::{parse_payload, validate_payload, AnalysisPayload, AnalysisRequest, PayloadError, StatisticName};
pub use runner::{execute_payload, ResultDocument, StoredResultKey};
pub use statkernel::Alternative;
pub use orchestrator::{run_cycle, SyncReport};
