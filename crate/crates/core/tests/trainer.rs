use std::path::Path;

use ficgan_core::losses::{total_loss, LossWeights};
use ficgan_core::nets::{Model, ModelConfig, Verifier, VerifierConfig};
use ficgan_core::synthfaces::{generate_dataset, DatasetManifest};
use ficgan_core::trainer::{self, checkpoint_path, derangement, read_log, Checkpoint, TrainConfig, Trainer, TrainingData, FINAL_CHECKPOINT, LOG_FILE};
use ficgan_core::Error;

fn small_model() -> ModelConfig {
    ModelConfig { image_size: 32, d_id: 8, spatial_channels: 4, d_w: 8, num_layers: 4, d_emb: 8, width: 1, max_channels: 8, mapping_layers: 2 }
}

fn config(iterations: u64) -> TrainConfig {
    TrainConfig { model: small_model(), batch_size: 4, iterations, checkpoint_every: 3, seed: 11, ..TrainConfig::default() }
}

fn verifier() -> Verifier {
    Verifier::init(VerifierConfig::for_model(&small_model(), 1), 99).unwrap()
}

fn dataset(dir: &Path, ids: usize, per: usize) -> DatasetManifest {
    generate_dataset(ids, per, 32, 5, dir).unwrap()
}

#[test]
fn smoke_run_writes_log_and_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("ds"), 5, 4);
    let out = dir.path().join("run");
    let v = verifier();
    let before = v.checksum();
    let ck = trainer::train(config(10), &m, Some(v), &out).unwrap();
    assert_eq!(ck.iteration, 10);
    assert_eq!(ck.model.verifier().unwrap().checksum(), before);
    for it in [3, 6, 9] {
        assert_eq!(Checkpoint::load(&checkpoint_path(&out, it)).unwrap().iteration, it);
    }
    let last = Checkpoint::load_expecting(&out.join(FINAL_CHECKPOINT), &small_model()).unwrap();
    assert_eq!(last, ck);
    let log = read_log(&out.join(LOG_FILE)).unwrap();
    assert_eq!(log.iter().map(|l| l.iteration).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    for l in &log {
        let r = &l.report;
        assert!(r.is_finite());
        assert!((r.total - total_loss(r, &LossWeights::default())).abs() <= 1e-6 * r.total.abs().max(1.0));
        assert!(r.rec >= 0.0 && (0.0..=2.0).contains(&r.pos) && (-1.0..=1.0).contains(&r.neg) && r.adv_rec >= 0.0 && r.adv_mix >= 0.0);
    }
    // reconstructions from the trained checkpoint stay in range
    let img = m.load_image(&m.samples[0]).unwrap().to_model();
    assert!(last.model.reconstruct(&[img]).unwrap()[0].values().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn identical_configs_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("ds"), 4, 3);
    let a = trainer::train(config(5), &m, Some(verifier()), &dir.path().join("a")).unwrap();
    let b = trainer::train(config(5), &m, Some(verifier()), &dir.path().join("b")).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(dir.path().join("a").join(FINAL_CHECKPOINT)).unwrap(), std::fs::read(dir.path().join("b").join(FINAL_CHECKPOINT)).unwrap());
    let c = trainer::train(TrainConfig { seed: 12, ..config(5) }, &m, Some(verifier()), &dir.path().join("c")).unwrap();
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("ds"), 4, 3);
    let full = trainer::train(config(6), &m, Some(verifier()), &dir.path().join("full")).unwrap();
    let mid = Checkpoint::load(&checkpoint_path(&dir.path().join("full"), 3)).unwrap();
    let data = TrainingData::from_manifest(&m).unwrap();
    let mut t = Trainer::resume(config(6), mid).unwrap();
    assert_eq!(t.iteration, 3);
    let resumed = trainer::run(&mut t, &data, &dir.path().join("resumed")).unwrap();
    assert_eq!(resumed.iteration, 6);
    assert_eq!(resumed, full);
}

#[test]
fn train_step_is_deterministic_and_keeps_verifier_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("ds"), 3, 2);
    let imgs: Vec<_> = m.samples.iter().map(|s| m.load_image(s).unwrap().to_model()).collect();
    let batch: Vec<_> = imgs.iter().collect();
    let mut a = Trainer::new(config(5), verifier()).unwrap();
    let mut b = Trainer::new(config(5), verifier()).unwrap();
    let v = a.model.verifier().unwrap().checksum();
    let ra = a.train_step(&batch).unwrap();
    assert_eq!(ra, b.train_step(&batch).unwrap());
    assert_eq!(a.model.verifier().unwrap().checksum(), v);
    assert!(ra.r1.is_none());
    assert!(matches!(a.train_step(&batch[..1]), Err(Error::InvalidArgument(_))));
    for n in 2..20 {
        let p = derangement(n);
        assert!(p.iter().enumerate().all(|(s, &t)| s != t && t < n));
    }
}

#[test]
fn singleton_dataset_trains() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("ds"), 1, 1);
    let ck = trainer::train(TrainConfig { batch_size: 2, ..config(4) }, &m, Some(verifier()), &dir.path().join("run")).unwrap();
    assert_eq!(ck.iteration, 4);
}

#[test]
fn invalid_setups_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("ds"), 2, 2);
    let out = dir.path().join("run");
    assert!(matches!(trainer::train(config(5), &m, None, &out), Err(Error::State(_))));
    assert!(matches!(Trainer::new(TrainConfig { batch_size: 1, ..config(5) }, verifier()), Err(Error::InvalidArgument(_))));
    assert!(matches!(Trainer::new(TrainConfig { iterations: 0, ..config(5) }, verifier()), Err(Error::InvalidArgument(_))));
    let wrong = Verifier::init(VerifierConfig::for_model(&ModelConfig::miniature(), 1), 1).unwrap();
    assert!(matches!(Trainer::new(config(5), wrong), Err(Error::ConfigMismatch { .. })));
    let no_state = Checkpoint { model: Model::init(small_model(), 1).unwrap().with_verifier(verifier()).unwrap(), iteration: 0, rng: None, meta: Default::default(), optimizer: None };
    assert!(matches!(Trainer::resume(config(5), no_state), Err(Error::State(_))));
}

#[test]
fn exploding_run_aborts_with_last_finite_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("ds"), 4, 2);
    let cfg = TrainConfig { learning_rate: 1e30, ..config(30) };
    match trainer::train(cfg, &m, Some(verifier()), &dir.path().join("run")) {
        Err(Error::NonFiniteLoss { iteration, last_finite }) => {
            assert!(iteration >= 1);
            if iteration > 1 {
                assert!(last_finite.expect("earlier steps were finite").is_finite());
            }
        }
        other => panic!("expected a non-finite loss error, got {:?}", other.map(|c| c.iteration)),
    }
}
