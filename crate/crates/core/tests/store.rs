mod common;

use common::{arb_profile, synthetic_profile, tags};
use proptest::prelude::*;
use synmirror::model::{Profile, ProfileKey};
use synmirror::store::{Store, StoreError, StoreLocation, MAX_DOCUMENT_SAMPLES};

fn file_store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(&StoreLocation::Dir(dir.path().to_path_buf())).unwrap();
    (dir, store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn file_round_trip_is_identity(p in arb_profile()) {
        let (_dir, store) = file_store();
        let id = store.save(&p).unwrap();
        let back = store.load(&id).unwrap();
        prop_assert_eq!(&back, &p);
        // Bit-exact floats, not just PartialEq.
        prop_assert_eq!(back.runtime.to_bits(), p.runtime.to_bits());
        prop_assert_eq!(back.series.cpu.iter().map(|s| s.t.to_bits()).collect::<Vec<_>>(),
                        p.series.cpu.iter().map(|s| s.t.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn find_never_crosses_keys(p in arb_profile(), other in "[a-z]{1,4}") {
        let (_dir, store) = file_store();
        store.save(&p).unwrap();
        let mut t = p.tags.clone();
        let changed = format!("{}-x", t.get("k").cloned().unwrap_or_default());
        t.insert("k".into(), changed);
        t.insert(format!("z{other}"), other);
        let key = ProfileKey::new(&p.command, t);
        prop_assert!(store.find(&key).unwrap().is_empty());
        prop_assert_eq!(store.find(&p.key()).unwrap().len(), 1);
    }
}

#[test]
fn saving_twice_appends() {
    let (_dir, store) = file_store();
    let p = synthetic_profile("app --n 3", 3);
    let a = store.save(&p).unwrap();
    let b = store.save(&p).unwrap();
    assert_ne!(a, b);
    assert_eq!(a.split('/').next(), b.split('/').next());
    assert_eq!(store.find(&p.key()).unwrap().len(), 2);
}

#[test]
fn find_is_newest_first() {
    let (_dir, store) = file_store();
    let mut ids = Vec::new();
    for i in 0..5 {
        let mut p = synthetic_profile("app", 1);
        p.start_time = i as f64;
        ids.push(store.save(&p).unwrap());
    }
    let found = store.find_with_ids(&ProfileKey::new("app", Default::default())).unwrap();
    assert_eq!(found.len(), 5);
    let starts: Vec<f64> = found.iter().map(|(_, p)| p.start_time).collect();
    assert_eq!(starts, vec![4.0, 3.0, 2.0, 1.0, 0.0]);
    ids.reverse();
    assert_eq!(found.into_iter().map(|(id, _)| id).collect::<Vec<_>>(), ids);
}

#[test]
fn tags_and_whitespace_in_keys() {
    let (_dir, store) = file_store();
    let mut p = synthetic_profile("app   -x  1", 1);
    p.tags = tags(&[("input", "small")]);
    store.save(&p).unwrap();
    assert_eq!(store.find(&ProfileKey::new(" app -x 1 ", tags(&[("input", "small")]))).unwrap().len(), 1);
    assert!(store.find(&ProfileKey::new("app -x 1", tags(&[("input", "large")]))).unwrap().is_empty());
    assert!(store.find(&ProfileKey::new("app 1 -x", tags(&[("input", "small")]))).unwrap().is_empty());
    assert!(store.find(&ProfileKey::new("app -x 1", Default::default())).unwrap().is_empty());
}

#[test]
fn missing_store_and_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(&StoreLocation::Dir(dir.path().join("never-created"))).unwrap();
    assert!(store.find(&ProfileKey::new("x", Default::default())).unwrap().is_empty());
    assert!(matches!(store.load("abc/123"), Err(StoreError::NotFound(_))));
    assert!(matches!(store.load("../../etc"), Err(StoreError::NotFound(_))));
}

fn stored_file(store: &Store, id: &str) -> std::path::PathBuf {
    store.dir().unwrap().join(format!("{id}.profile"))
}

#[test]
fn truncated_file_reports_byte_offset() {
    let (_dir, store) = file_store();
    let id = store.save(&synthetic_profile("app", 10)).unwrap();
    let path = stored_file(&store, &id);
    let text = std::fs::read(&path).unwrap();
    let cut = text.len() / 2;
    std::fs::write(&path, &text[..cut]).unwrap();
    match store.load(&id) {
        Err(StoreError::Parse { offset, .. }) => assert_eq!(offset, cut),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn newer_schema_is_rejected() {
    let (_dir, store) = file_store();
    let id = store.save(&synthetic_profile("app", 2)).unwrap();
    let path = stored_file(&store, &id);
    let text = std::fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(store.load(&id), Err(StoreError::Version { found: 99, supported: 1, .. })));
}

#[test]
fn file_is_self_describing() {
    let (_dir, store) = file_store();
    let p = synthetic_profile("app", 3);
    let id = store.save(&p).unwrap();
    let text = std::fs::read_to_string(stored_file(&store, &id)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for field in [
        "schema_version",
        "command",
        "tags",
        "system",
        "sample_period",
        "counter_source",
        "runtime",
        "series",
        "totals",
        "derived",
    ] {
        assert!(v.get(field).is_some(), "missing {field}");
    }
    assert_eq!(v["series"]["cpu"][0], serde_json::json!([0.1, 10, 5, 0, 0, 0]));
    // One row per line.
    assert!(text.contains("\n      [0.1,10,5,0,0,0],\n"));
}

#[test]
fn document_backend_limits() {
    let store = Store::open(&StoreLocation::parse("mem://store-limits")).unwrap();
    let small = synthetic_profile("app", 10);
    let id = store.save(&small).unwrap();
    assert_eq!(store.load(&id).unwrap(), small);
    assert_eq!(store.find(&small.key()).unwrap(), vec![small.clone()]);

    let big: Profile = synthetic_profile("big", 300_000);
    assert!(big.sample_count() > MAX_DOCUMENT_SAMPLES);
    let err = store.save(&big).unwrap_err();
    assert!(matches!(err, StoreError::TooLarge { samples: 300_000, .. }));
    let msg = err.to_string();
    assert!(msg.contains("250,000") && msg.contains("file backend"), "{msg}");

    let (_dir, files) = file_store();
    let id = files.save(&big).unwrap();
    assert_eq!(files.load(&id).unwrap().sample_count(), 300_000);
}

#[test]
fn unknown_database_scheme() {
    assert!(matches!(Store::open(&StoreLocation::parse("mongodb://localhost/x")), Err(StoreError::UnsupportedUrl(_))));
}

#[test]
fn concurrent_writers_never_collide() {
    let (_dir, store) = file_store();
    let p = synthetic_profile("app", 2);
    let ids: Vec<String> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..8).map(|_| s.spawn(|| store.save(&p).unwrap())).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let unique: std::collections::BTreeSet<_> = ids.iter().collect();
    assert_eq!(unique.len(), 8);
    assert_eq!(store.find(&p.key()).unwrap().len(), 8);
}
