use std::collections::BTreeSet;
use std::fs;

use ficgan_core::synthfaces::{generate_dataset, Attributes, DatasetManifest, MANIFEST_FILE};

#[test]
fn hundred_by_ten_dataset_has_a_thousand_entries() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(100, 10, 32, 1, dir.path()).unwrap();
    assert_eq!(m.len(), 1000);
    let ids: BTreeSet<u32> = m.samples.iter().map(|s| s.label.identity_id).collect();
    assert_eq!(ids.len(), 100);
    let sids: BTreeSet<&str> = m.samples.iter().map(|s| s.sample_id.as_str()).collect();
    assert_eq!(sids.len(), 1000);

    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded.samples, m.samples);
    loaded.verify_images().unwrap();
    for s in &loaded.samples {
        let first = loaded.samples.iter().find(|o| o.label.identity_id == s.label.identity_id).unwrap();
        assert_eq!(s.label.identity_factors, first.label.identity_factors);
        assert_eq!(Attributes::derive(&s.label.identity_factors, &s.label.nonid_factors), s.label.attributes);
        assert_eq!(loaded.load_image(s).unwrap().size(), 32);
    }
    assert!(!loaded.train_samples().is_empty() && !loaded.test_samples().is_empty());
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_dataset(4, 3, 32, 7, a.path()).unwrap();
    generate_dataset(4, 3, 32, 7, b.path()).unwrap();
    assert_eq!(fs::read(a.path().join(MANIFEST_FILE)).unwrap(), fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    for s in &ma.samples {
        assert_eq!(fs::read(a.path().join(&s.image_path)).unwrap(), fs::read(b.path().join(&s.image_path)).unwrap());
    }
    let c = tempfile::tempdir().unwrap();
    generate_dataset(4, 3, 32, 8, c.path()).unwrap();
    assert_ne!(fs::read(a.path().join(MANIFEST_FILE)).unwrap(), fs::read(c.path().join(MANIFEST_FILE)).unwrap());
}

#[test]
fn singleton_dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(1, 1, 64, 3, dir.path()).unwrap();
    assert_eq!(m.len(), 1);
    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded.load_image(&loaded.samples[0]).unwrap().size(), 64);
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_dataset(0, 1, 32, 1, dir.path()).is_err());
    assert!(generate_dataset(1, 1, 48, 1, dir.path()).is_err());
    let file = dir.path().join("occupied");
    fs::write(&file, b"x").unwrap();
    assert_eq!(generate_dataset(1, 1, 32, 1, &file).unwrap_err().code(), "io");
    assert!(DatasetManifest::load(&dir.path().join("missing")).is_err());
}
