use ficgan_core::nets::{pretrain_verifier, Verifier, VerifierConfig, VerifierTrainConfig};
use ficgan_core::synthfaces::generate_dataset;
use ficgan_core::Error;

fn tiny() -> (VerifierConfig, VerifierTrainConfig) {
    (VerifierConfig { image_size: 32, width: 1, max_channels: 8, feature_dim: 16, d_emb: 8 }, VerifierTrainConfig { iterations: 4, batch_size: 6, ..VerifierTrainConfig::default() })
}

#[test]
fn two_identity_dataset_trains_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(2, 6, 32, 1, dir.path()).unwrap();
    let (vc, tc) = tiny();
    let (a, report) = pretrain_verifier(&m, &vc, &tc).unwrap();
    let (b, _) = pretrain_verifier(&m, &vc, &tc).unwrap();
    assert_eq!(a, b);
    assert!(report.final_loss.is_finite());
    assert!((0.0..=1.0).contains(&report.train_pair_accuracy));
    let (c, _) = pretrain_verifier(&m, &vc, &VerifierTrainConfig { seed: 1, ..tc }).unwrap();
    assert_ne!(a.checksum(), c.checksum());

    let path = dir.path().join("v.json");
    a.save(&path, Some(&report)).unwrap();
    let (back, r) = Verifier::load(&path).unwrap();
    assert_eq!(back, a);
    assert_eq!(r.unwrap(), report);
}

#[test]
fn single_identity_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(1, 4, 32, 1, dir.path()).unwrap();
    let (vc, tc) = tiny();
    assert!(matches!(pretrain_verifier(&m, &vc, &tc), Err(Error::InvalidArgument(_))));
    let wrong = VerifierConfig { image_size: 64, ..vc };
    assert!(matches!(pretrain_verifier(&m, &wrong, &tc), Err(Error::InvalidArgument(_))));
}
