use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use a4l_core::dataset::{fetch_to_staging, load_csv, parse_csv};
use a4l_core::fsutil::{sha256_file, sha256_hex};
use a4l_core::orchestrator::{run_cycle, scan_store, select_affected_payloads, sync_warehouse, CycleLock, PayloadRegistry};
use a4l_core::payload::{
    apply_defaults, parse_payload, validate_payload, AnalysisPayload, AnalysisRequest, OutputSpec, StatisticName,
};
use a4l_core::runner::execute_payload;
use a4l_core::{Alternative, Layout};
use proptest::prelude::*;
use serde_json::Value;
use uuid::Uuid;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// A root whose store and payload registry are the fixture domains, after
/// one sync cycle.
fn synced_root() -> (tempfile::TempDir, Layout) {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    layout.ensure().unwrap();
    for sub in ["store", "payloads"] {
        for entry in fs::read_dir(fixtures().join(sub)).unwrap() {
            let entry = entry.unwrap();
            fs::copy(entry.path(), dir.path().join(sub).join(entry.file_name())).unwrap();
        }
    }
    let report = run_cycle(&layout).unwrap();
    assert!(report.all_ok(), "{report:?}");
    (dir, layout)
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,11}"
}

fn request() -> impl Strategy<Value = AnalysisRequest> {
    (
        prop::sample::select(StatisticName::ALL.to_vec()),
        ident(),
        ident(),
        prop::collection::btree_set(ident(), 1..5),
        prop::sample::select(Alternative::ALL.to_vec()),
        (1e-6f64..0.999_999),
    )
        .prop_map(|(stat, dataset, independent, deps, alternative, alpha)| AnalysisRequest {
            statistic: stat.as_str().to_owned(),
            dataset,
            dependent: deps.into_iter().filter(|d| *d != independent).map(|d| format!("{d}_y")).collect(),
            independent,
            alternative,
            alpha,
            result_file: String::new(),
        })
}

fn valid_payload() -> impl Strategy<Value = AnalysisPayload> {
    (ident(), prop::collection::vec(request(), 1..6), "[a-z0-9][a-z0-9_.-]{0,8}", "([a-z0-9]{1,5}/){0,2}")
        .prop_map(|(domain, mut analyses, bucket, prefix)| {
            for (i, r) in analyses.iter_mut().enumerate() {
                r.result_file = format!("{domain}_{i}");
            }
            AnalysisPayload { payload_version: 1, domain, analyses, output: OutputSpec { bucket, prefix } }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn payload_round_trip(p in valid_payload()) {
        let parsed = parse_payload(p.to_json_pretty().as_bytes()).unwrap();
        prop_assert_eq!(parsed, p);
    }

    #[test]
    fn defaults_are_idempotent(p in valid_payload(), drop_mask in any::<u64>()) {
        let mut doc: Value = serde_json::to_value(&p).unwrap();
        for (i, r) in doc["analyses"].as_array_mut().unwrap().iter_mut().enumerate() {
            let obj = r.as_object_mut().unwrap();
            if drop_mask & (1 << (2 * i)) != 0 { obj.remove("alpha"); }
            if drop_mask & (1 << (2 * i + 1)) != 0 { obj.remove("alternative"); }
        }
        let mut once = doc.clone();
        apply_defaults(&mut once);
        let mut twice = once.clone();
        apply_defaults(&mut twice);
        prop_assert_eq!(&once, &twice);
        let parsed: AnalysisPayload = serde_json::from_value(once).unwrap();
        for r in &parsed.analyses {
            prop_assert!(r.alpha > 0.0 && r.alpha < 1.0);
        }
    }

    #[test]
    fn csv_loading_is_deterministic(
        rows in prop::collection::vec(
            (prop::option::of(-1e6f64..1e6), prop::option::of(any::<bool>()), prop::option::of("[a-z]{1,4}")),
            1..40,
        )
    ) {
        let mut text = String::from("x,flag,label\n");
        for (x, f, l) in &rows {
            text.push_str(&format!(
                "{},{},{}\n",
                x.map(|v| v.to_string()).unwrap_or_default(),
                f.map(|v| v.to_string()).unwrap_or_default(),
                l.clone().unwrap_or_default(),
            ));
        }
        let a = parse_csv("d", text.as_bytes(), Path::new("d.csv")).unwrap();
        let b = parse_csv("d", text.as_bytes(), Path::new("d.csv")).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.row_count, rows.len());
        prop_assert_eq!(&a.version, &sha256_hex(text.as_bytes()));
        let missing_x = rows.iter().filter(|r| r.0.is_none()).count();
        prop_assert_eq!(a.column("x").unwrap().missing_count(), missing_x);
    }

    #[test]
    fn selection_is_sound_and_complete(
        refs in prop::collection::vec(prop::collection::btree_set(0usize..8, 1..4), 0..12),
        updated in prop::collection::btree_set(0usize..8, 0..8),
    ) {
        let mut registry = PayloadRegistry::default();
        for (i, datasets) in refs.iter().enumerate() {
            let analyses = datasets.iter().enumerate().map(|(j, d)| AnalysisRequest {
                statistic: "get_descriptives".into(),
                dataset: format!("ds{d}"),
                independent: "g".into(),
                dependent: vec!["y".into()],
                alternative: Alternative::TwoSided,
                alpha: 0.05,
                result_file: format!("r{j}"),
            }).collect();
            registry.insert(
                format!("p{i:02}.json"),
                AnalysisPayload { payload_version: 1, domain: "d".into(), analyses, output: OutputSpec { bucket: "b".into(), prefix: String::new() } },
            );
        }
        let names: Vec<String> = updated.iter().map(|d| format!("ds{d}")).collect();
        let selected = select_affected_payloads(names.iter().map(String::as_str), &registry);
        let expected: Vec<String> = refs.iter().enumerate()
            .filter(|(_, ds)| ds.iter().any(|d| updated.contains(d)))
            .map(|(i, _)| format!("p{i:02}.json"))
            .collect();
        prop_assert_eq!(selected, expected);
    }
}

#[test]
fn staging_preserves_bytes_and_missing_counts() {
    let (_dir, layout) = synced_root();
    let warehouse = layout.warehouse();
    let manifest = warehouse.load_manifest().unwrap();
    let names: Vec<&str> = manifest.entries.keys().map(String::as_str).collect();
    let staged = fetch_to_staging(names.iter().copied(), &warehouse, &manifest, &layout.staging()).unwrap();
    for name in names {
        let staged_path = staged.path(name).unwrap();
        assert_eq!(sha256_file(staged_path).unwrap(), manifest.get(name).unwrap().sha256);
        let original = load_csv(&warehouse.dataset_path(name)).unwrap();
        let copy = load_csv(staged_path).unwrap();
        for (a, b) in original.columns.iter().zip(&copy.columns) {
            assert_eq!(a.missing_count(), b.missing_count(), "{name}.{}", a.name);
            assert_eq!(a.kind(), b.kind());
        }
    }
    let dir = staged.dir().to_owned();
    drop(staged);
    assert!(!dir.exists());
}

#[test]
fn execution_is_deterministic_and_traceable() {
    let (_dir, layout) = synced_root();
    let warehouse = layout.warehouse();
    let manifest = warehouse.load_manifest().unwrap();
    let registry = PayloadRegistry::load(&layout.payloads()).unwrap();
    for (file, payload) in &registry.payloads {
        let run = || {
            let staged = fetch_to_staging(payload.datasets(), &warehouse, &manifest, &layout.staging()).unwrap();
            let docs = execute_payload(payload, &staged).unwrap();
            let hashes: BTreeMap<String, String> = staged
                .staged
                .iter()
                .map(|(n, p)| (n.clone(), sha256_file(p).unwrap()))
                .collect();
            (docs, hashes)
        };
        let (mut first, hashes) = run();
        let (mut second, _) = run();
        assert_eq!(first.len(), payload.analyses.len(), "{file}");
        for (doc, request) in first.iter().zip(&payload.analyses) {
            assert_eq!(doc.results.len(), request.dependent.len());
            assert_eq!(doc.dataset.sha256, hashes[&doc.dataset.name]);
        }
        for doc in first.iter_mut().chain(second.iter_mut()) {
            doc.run_id = Uuid::nil();
            doc.generated_at = chrono::DateTime::UNIX_EPOCH;
        }
        assert_eq!(first, second, "{file}");
    }
}

#[test]
fn validated_fixture_payloads_have_no_diagnostics() {
    let (_dir, layout) = synced_root();
    let warehouse = layout.warehouse();
    let catalog = warehouse.catalog(&warehouse.load_manifest().unwrap()).unwrap();
    let registry = PayloadRegistry::load(&layout.payloads()).unwrap();
    assert_eq!(registry.payloads.len(), 3);
    for (file, payload) in &registry.payloads {
        let report = validate_payload(payload, &StatisticName::registry(), &catalog);
        assert!(report.is_ok(), "{file}: {:?}", report.diagnostics);
    }
}

#[test]
fn interrupted_cycle_selects_nothing_spurious() {
    let (_dir, layout) = synced_root();
    let store = layout.store().join("vera_summer23_usage.csv");
    let mut text = fs::read_to_string(&store).unwrap();
    text.push_str("vera9999,yes,no,female,3.00,3.00,3.00,3.00\n");
    fs::write(&store, &text).unwrap();

    // Sync only, as if the process died before running payloads.
    {
        let lock = CycleLock::acquire(&layout.lock_path()).unwrap();
        let scan = scan_store(&layout.store()).unwrap();
        let updates = sync_warehouse(&scan, &layout.store(), &layout.warehouse(), &layout.archive(), &lock).unwrap();
        assert_eq!(updates.len(), 1);
    }
    let manifest = layout.warehouse().load_manifest().unwrap();
    assert_eq!(manifest.get("vera_summer23_usage").unwrap().sha256, sha256_hex(text.as_bytes()));

    let report = run_cycle(&layout).unwrap();
    assert!(report.updated.is_empty());
    assert!(report.selected_payloads.is_empty());
}

#[test]
fn archive_fidelity_over_many_updates() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    layout.ensure().unwrap();
    let store = layout.store().join("a.csv");
    let mut seen = BTreeSet::new();
    for version in 0..6 {
        let text = format!("g,y\nx,{version}\ny,{}\n", version * 2);
        fs::write(&store, &text).unwrap();
        let before = layout.warehouse().load_manifest().unwrap().get("a").map(|e| e.sha256.clone());
        let report = run_cycle(&layout).unwrap();
        assert_eq!(report.updated.len(), 1);
        let update = &report.updated[0];
        assert_eq!(update.old_sha256, before);
        assert_eq!(update.archived_to.is_some(), update.old_sha256.is_some());
        if let (Some(old), Some(path)) = (&update.old_sha256, &update.archived_to) {
            assert_eq!(&sha256_file(&dir.path().join(path)).unwrap(), old);
            assert!(seen.insert(path.clone()));
        }
    }
    assert_eq!(fs::read_dir(layout.archive().join("a")).unwrap().count(), 5);
}
