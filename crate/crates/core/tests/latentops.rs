use std::collections::BTreeSet;
use std::sync::OnceLock;

use ficgan_core::latentops::{
    self, attribute_centroid, build_degree_schedule, directed_code, k_same_centroid, AnonymizationParams, AttributeQuery, CodeSpace, Mode, Provenance, StyleBank,
};
use ficgan_core::nets::{Image, Model, ModelConfig, StyleVector};
use ficgan_core::synthfaces::{generate_dataset, DatasetManifest};
use ficgan_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    _dir: tempfile::TempDir,
    model: Model,
    manifest: DatasetManifest,
    bank: StyleBank,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(20, 5, 32, 3, dir.path()).unwrap();
        let c = ModelConfig { image_size: 32, d_id: 8, spatial_channels: 4, d_w: 8, num_layers: 4, d_emb: 8, width: 1, max_channels: 8, mapping_layers: 2 };
        let model = Model::init(c, 17).unwrap();
        let bank = StyleBank::build(&model, &manifest).unwrap();
        Fixture { _dir: dir, model, manifest, bank }
    })
}

fn image(f: &Fixture, idx: usize) -> Image {
    f.manifest.load_image(&f.manifest.samples[idx]).unwrap().to_model()
}

fn random_styles(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<StyleVector> {
    (0..n).map(|_| StyleVector::new((0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()).collect()
}

fn brute_mean(ws: &[&StyleVector]) -> Vec<f64> {
    let d = ws[0].len();
    (0..d).map(|j| ws.iter().map(|w| w.0[j]).sum::<f64>() / ws.len() as f64).collect()
}

#[test]
fn centroid_matches_brute_force_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let ws = random_styles(&mut rng, 5, 16);
        let m = k_same_centroid(&ws).unwrap();
        for (a, b) in m.0.iter().zip(brute_mean(&ws.iter().collect::<Vec<_>>())) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
    let w = random_styles(&mut rng, 1, 8).remove(0);
    assert_eq!(k_same_centroid(std::slice::from_ref(&w)).unwrap(), w);
    let neg = StyleVector::new(w.0.iter().map(|v| -v).collect()).unwrap();
    assert!(k_same_centroid(&[w, neg]).unwrap().0.iter().all(|v| *v == 0.0));
    assert!(matches!(k_same_centroid(&[]), Err(Error::InvalidArgument(_))));
}

proptest! {
    #[test]
    fn centroid_is_permutation_invariant_bitwise(values in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 6), 1..40), seed in any::<u64>()) {
        let ws: Vec<StyleVector> = values.into_iter().map(|v| StyleVector::new(v).unwrap()).collect();
        let mut shuffled = ws.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = k_same_centroid(&ws).unwrap();
        let b = k_same_centroid(&shuffled).unwrap();
        prop_assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn directed_code_is_affine(m in prop::collection::vec(-10.0f64..10.0, 8), t in prop::collection::vec(-10.0f64..10.0, 8), alpha in 0.0f64..1.0) {
        let (m, t) = (StyleVector::new(m).unwrap(), StyleVector::new(t).unwrap());
        let a = directed_code(&m, &t, alpha).unwrap();
        let b = directed_code(&m, &t, 1.0 - alpha).unwrap();
        for j in 0..8 {
            prop_assert!((a.0[j] + b.0[j] - (m.0[j] + t.0[j])).abs() <= 1e-12 * (1.0 + m.0[j].abs() + t.0[j].abs()));
        }
    }
}

#[test]
fn directed_code_endpoints_and_midpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random_styles(&mut rng, 2, 12);
    let (m, t) = (&v[0], &v[1]);
    assert_eq!(&directed_code(m, t, 0.0).unwrap(), m);
    assert_eq!(&directed_code(m, t, 1.0).unwrap(), t);
    let mid = directed_code(m, t, 0.5).unwrap();
    for j in 0..12 {
        assert!((mid.0[j] - (m.0[j] + t.0[j]) / 2.0).abs() <= 1e-12);
    }
    let short = StyleVector::new(vec![0.0; 3]).unwrap();
    assert!(matches!(directed_code(m, &short, 0.5), Err(Error::InvalidArgument(_))));
}

#[test]
fn degree_schedule_layer_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = random_styles(&mut rng, 2, 4);
    let (s, a) = (&v[0], &v[1]);
    let l = 6;
    let mut prev: Option<BTreeSet<usize>> = None;
    for i in 0..=l {
        let sch = build_degree_schedule(s, a, i, l).unwrap();
        assert_eq!(sch.len(), l);
        for layer in 0..l {
            let (want, tag) = if layer < i { (s, Provenance::Source) } else { (a, Provenance::Anonymized) };
            assert_eq!(&sch.styles[layer], want);
            assert_eq!(sch.provenance[layer], tag);
        }
        let replaced: BTreeSet<usize> = sch.replaced_layers().into_iter().collect();
        if let Some(p) = &prev {
            assert!(replaced.is_subset(p) && replaced.len() < p.len());
        }
        prev = Some(replaced);
    }
    assert!(build_degree_schedule(s, a, 0, l).unwrap().styles.iter().all(|w| w == a));
    let five = build_degree_schedule(s, a, 5, l).unwrap();
    assert_eq!(five.replaced_layers(), vec![5]);
    assert!(matches!(build_degree_schedule(s, a, 7, l), Err(Error::InvalidArgument(_))));
}

#[test]
fn attribute_centroid_reduces_to_brute_force() {
    let f = fixture();
    let all = AttributeQuery::Const(true);
    let (w, ids) = attribute_centroid(&f.model, &f.bank, &all, f.bank.len(), 4, CodeSpace::W).unwrap();
    assert_eq!(ids.len(), f.bank.len());
    let every: Vec<StyleVector> = f.bank.entries().iter().map(|e| e.w.clone()).collect();
    assert_eq!(w, k_same_centroid(&every).unwrap());

    let q: AttributeQuery = "smiling ∧ pale_skin".parse().unwrap();
    let matching: Vec<_> = f.manifest.samples.iter().filter(|s| s.label.attributes.smiling && s.label.attributes.pale_skin).collect();
    assert!(matching.len() >= 2, "fixture has {} matches", matching.len());
    let (w1, ids1) = attribute_centroid(&f.model, &f.bank, &q, matching.len(), 1, CodeSpace::W).unwrap();
    let (w2, _) = attribute_centroid(&f.model, &f.bank, &q, matching.len(), 2, CodeSpace::W).unwrap();
    assert_eq!(w1, w2);
    let want: BTreeSet<&str> = matching.iter().map(|s| s.sample_id.as_str()).collect();
    assert_eq!(ids1.iter().map(String::as_str).collect::<BTreeSet<_>>(), want);
    let ws: Vec<&StyleVector> = matching.iter().map(|s| &f.bank.get(&s.sample_id).unwrap().w).collect();
    for (a, b) in w1.0.iter().zip(brute_mean(&ws)) {
        assert!((a - b).abs() <= 1e-9);
    }

    let k = matching.len() + 1;
    match attribute_centroid(&f.model, &f.bank, &q, k, 0, CodeSpace::W) {
        Err(Error::InsufficientPool { needed, available }) => assert_eq!((needed, available), (k, matching.len())),
        other => panic!("expected insufficient pool, got {other:?}"),
    }
}

fn params(mode: Mode) -> AnonymizationParams {
    AnonymizationParams { mode, k: Some(5), seed: 9, ..AnonymizationParams::default() }
}

#[test]
fn identity_schedule_reproduces_reconstruction() {
    let f = fixture();
    let x = image(f, 3);
    let l = f.model.num_layers();
    let rec = f.model.reconstruct(std::slice::from_ref(&x)).unwrap().remove(0);
    let out = latentops::anonymize(&f.model, &f.bank, &x, &AnonymizationParams { layer_index: l, ..params(Mode::Degree) }).unwrap();
    assert_eq!(out.image, rec);
    assert!(out.schedule.provenance.iter().all(|p| *p == Provenance::Source));
    let sweep = latentops::sweep(&f.model, &f.bank, &x, &params(Mode::Ksame)).unwrap();
    assert_eq!(sweep.len(), l + 1);
    assert_eq!(sweep[l], rec);
    for (i, img) in sweep.iter().enumerate() {
        let single = latentops::anonymize(&f.model, &f.bank, &x, &AnonymizationParams { layer_index: i, ..params(Mode::Ksame) }).unwrap();
        assert_eq!(&single.image, img, "sweep entry {i}");
    }
}

#[test]
fn ksame_is_deterministic_and_audited() {
    let f = fixture();
    let x = image(f, 0);
    let p = params(Mode::Ksame);
    let a = latentops::anonymize(&f.model, &f.bank, &x, &p).unwrap();
    let b = latentops::anonymize(&f.model, &f.bank, &x, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.audit.k, 5);
    let ids: BTreeSet<&String> = a.audit.pool_sample_ids.iter().collect();
    assert_eq!(ids.len(), 5);
    assert_eq!(a.audit.provenance, vec![Provenance::Anonymized; f.model.num_layers()]);
    assert_eq!(a.audit.alpha, None);

    let w_m = &a.schedule.styles[0];
    for id in &a.audit.pool_sample_ids {
        assert_ne!(&f.bank.get(id).unwrap().w, w_m);
    }
    // re-feeding the audited pool reproduces the output
    let replay = AnonymizationParams { pool: Some(a.audit.pool_sample_ids.clone()), k: None, seed: 12345, ..p.clone() };
    assert_eq!(latentops::anonymize(&f.model, &f.bank, &x, &replay).unwrap().image, a.image);
    let other_seed = latentops::anonymize(&f.model, &f.bank, &x, &AnonymizationParams { seed: 10, ..p }).unwrap();
    assert_ne!(other_seed.audit.pool_sample_ids, a.audit.pool_sample_ids);
}

#[test]
fn default_k_is_capped_by_pool() {
    let f = fixture();
    let out = latentops::anonymize(&f.model, &f.bank, &image(f, 1), &AnonymizationParams::default()).unwrap();
    assert_eq!(out.audit.k, f.bank.len().min(latentops::DEFAULT_MAX_K));
}

#[test]
fn directed_full_strength_equals_swap() {
    let f = fixture();
    let x = image(f, 2);
    let target = f.manifest.samples[17].sample_id.clone();
    let directed = AnonymizationParams { alpha: 1.0, target_sample: Some(target.clone()), ..params(Mode::Directed) };
    let swap = AnonymizationParams { target_sample: Some(target), ..params(Mode::Swap) };
    let d = latentops::anonymize(&f.model, &f.bank, &x, &directed).unwrap();
    let s = latentops::anonymize(&f.model, &f.bank, &x, &swap).unwrap();
    assert_eq!(d.image, s.image);
    assert_eq!(d.audit.alpha, Some(1.0));
    assert_eq!(s.audit.provenance, vec![Provenance::Target; f.model.num_layers()]);
    assert_eq!(latentops::identity_swap(&f.model, &x, &image(f, 17)).unwrap(), s.image);
}

#[test]
fn self_swap_is_reconstruction() {
    let f = fixture();
    let x = image(f, 6);
    assert_eq!(latentops::identity_swap(&f.model, &x, &x).unwrap(), f.model.reconstruct(std::slice::from_ref(&x)).unwrap()[0]);
    assert_eq!(latentops::identity_swap(&f.model, &x, &image(f, 9)).unwrap(), latentops::identity_swap(&f.model, &x, &image(f, 9)).unwrap());
}

#[test]
fn batch_matches_single_calls() {
    let f = fixture();
    let xs: Vec<Image> = (0..4).map(|i| image(f, i * 7)).collect();
    let p = AnonymizationParams { layer_index: 2, ..params(Mode::Ksame) };
    let batch = latentops::anonymize_batch(&f.model, &f.bank, &xs, &p).unwrap();
    for (x, b) in xs.iter().zip(&batch) {
        assert_eq!(&latentops::anonymize(&f.model, &f.bank, x, &p).unwrap(), b);
    }
}

#[test]
fn attribute_mode_and_zid_space() {
    let f = fixture();
    let x = image(f, 4);
    let p = AnonymizationParams { attribute_query: Some("glasses | male_proxy".into()), ..params(Mode::Attribute) };
    let out = latentops::anonymize(&f.model, &f.bank, &x, &p).unwrap();
    for id in &out.audit.pool_sample_ids {
        let a = f.bank.get(id).unwrap().attributes;
        assert!(a.glasses || a.male_proxy);
    }
    let z = latentops::anonymize(&f.model, &f.bank, &x, &AnonymizationParams { space: CodeSpace::Zid, ..params(Mode::Ksame) }).unwrap();
    let w = latentops::anonymize(&f.model, &f.bank, &x, &params(Mode::Ksame)).unwrap();
    assert_eq!(z.audit.pool_sample_ids, w.audit.pool_sample_ids);
    assert_ne!(z.image, w.image);
}

#[test]
fn invalid_params_give_structured_errors() {
    let f = fixture();
    let x = image(f, 0);
    let run = |p: AnonymizationParams| latentops::anonymize(&f.model, &f.bank, &x, &p).unwrap_err();
    let l = f.model.num_layers();
    assert!(matches!(run(params(Mode::Directed)), Error::MissingTarget(_)));
    assert!(matches!(run(params(Mode::Swap)), Error::MissingTarget(_)));
    assert!(matches!(run(AnonymizationParams { target_sample: Some("nope".into()), ..params(Mode::Swap) }), Error::MissingTarget(_)));
    assert!(matches!(run(params(Mode::Attribute)), Error::InvalidArgument(_)));
    assert!(matches!(run(AnonymizationParams { attribute_query: Some("glasses &".into()), ..params(Mode::Attribute) }), Error::InvalidArgument(_)));
    assert!(matches!(run(AnonymizationParams { layer_index: l + 1, ..params(Mode::Ksame) }), Error::InvalidArgument(_)));
    assert!(matches!(run(AnonymizationParams { k: Some(0), ..params(Mode::Ksame) }), Error::InvalidArgument(_)));
    assert!(matches!(run(AnonymizationParams { k: Some(1000), ..params(Mode::Ksame) }), Error::InsufficientPool { needed: 1000, available: 100 }));
    assert!(matches!(run(AnonymizationParams { pool: Some(vec!["nope".into()]), k: None, ..params(Mode::Ksame) }), Error::InvalidArgument(_)));
    let target = Some(f.manifest.samples[1].sample_id.clone());
    assert!(matches!(run(AnonymizationParams { alpha: 1.5, target_sample: target.clone(), ..params(Mode::Directed) }), Error::InvalidArgument(_)));
    let ok = AnonymizationParams { alpha: 1.5, extrapolate: true, target_sample: target, ..params(Mode::Directed) };
    assert_eq!(latentops::anonymize(&f.model, &f.bank, &x, &ok).unwrap().audit.alpha, Some(1.5));
}
