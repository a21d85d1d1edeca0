//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Expensive artifacts (dataset, verifiers, probe, three training runs,
//! evaluation reports) are cached under `FICGAN_ACCEPTANCE_DIR`
//! (default `target/tmp/acceptance`); delete the directory to start over.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ficgan::api::{router, AppState};
use ficgan_core::evalsuite::{self, EvalOptions, FactorProbe, MetricReport, ProbeTrainConfig};
use ficgan_core::gradcheck;
use ficgan_core::latentops::{self, build_degree_schedule, directed_code, k_same_centroid, AnonymizationParams, Provenance, StyleBank};
use ficgan_core::losses::ObjectiveOptions;
use ficgan_core::nets::{pretrain_verifier, Image, ModelConfig, StyleVector, Verifier, VerifierConfig, VerifierTrainConfig};
use ficgan_core::synthfaces::{generate_dataset, DatasetManifest};
use ficgan_core::trainer::{self, Checkpoint, TrainConfig};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

struct Ctx {
    dir: PathBuf,
    start: Instant,
}

impl Ctx {
    fn note(&self, msg: &str) {
        eprintln!("[{:>7.1}s] {msg}", self.start.elapsed().as_secs_f64());
    }

    /// Run `make` unless `path` already exists.
    fn stage(&self, name: &str, path: &Path, make: impl FnOnce(&Path)) {
        if path.exists() {
            self.note(&format!("{name}: cached"));
            return;
        }
        self.note(&format!("{name}: running"));
        make(path);
        self.note(&format!("{name}: done"));
    }

    fn dataset(&self) -> DatasetManifest {
        let ds = self.dir.join("dataset");
        self.stage("dataset", &ds.join("dataset.json"), |_| {
            generate_dataset(100, 40, 64, 1, &ds).expect("dataset");
        });
        DatasetManifest::load(&ds).expect("dataset loads")
    }

    fn verifier(&self, manifest: &DatasetManifest, name: &str, width: usize, seed: u64) -> Verifier {
        let path = self.dir.join(name);
        self.stage(name, &path, |p| {
            let vc = VerifierConfig { image_size: 64, width, ..VerifierConfig::default() };
            let (v, report) = pretrain_verifier(manifest, &vc, &VerifierTrainConfig { seed, ..VerifierTrainConfig::default() }).expect("verifier");
            self.note(&format!("{name}: {}", serde_json::to_string(&report).unwrap()));
            v.save(p, Some(&report)).unwrap();
        });
        Verifier::load(&path).expect("verifier loads").0
    }

    fn probe(&self) -> FactorProbe {
        let path = self.dir.join("probe.json");
        self.stage("probe", &path, |p| {
            let probe = FactorProbe::fit(&ProbeTrainConfig::default()).expect("probe");
            self.note(&format!("probe: {}", serde_json::to_string(&probe.report).unwrap()));
            probe.save(p).unwrap();
        });
        FactorProbe::load(&path).expect("probe loads")
    }

    fn train(&self, name: &str, manifest: &DatasetManifest, verifier: &Verifier, use_neg: bool) -> PathBuf {
        let out = self.dir.join(name);
        let final_path = out.join(trainer::FINAL_CHECKPOINT);
        self.stage(name, &final_path, |_| {
            let _ = fs::remove_dir_all(&out);
            let config = TrainConfig { model: toy_model(), objective: ObjectiveOptions { use_neg, ..ObjectiveOptions::default() }, ..TrainConfig::default() };
            trainer::train(config, manifest, Some(verifier.clone()), &out).expect("training");
        });
        final_path
    }

    fn evaluate(&self, name: &str, checkpoint: &Path, manifest: &DatasetManifest, eval: &Verifier, probe: &FactorProbe, opts: &EvalOptions) -> MetricReport {
        let path = self.dir.join(format!("{name}.json"));
        self.stage(name, &path, |p| {
            let model = Checkpoint::load(checkpoint).unwrap().model;
            let bank = StyleBank::from_samples(&model, manifest, &manifest.train_samples()).unwrap();
            let report = evalsuite::evaluate(&model, manifest, &bank, eval, probe, opts).expect("evaluation");
            fs::write(p, serde_json::to_vec_pretty(&report).unwrap()).unwrap();
        });
        serde_json::from_slice(&fs::read(&path).unwrap()).expect("report parses")
    }
}

fn toy_model() -> ModelConfig {
    ModelConfig { width: 2, ..ModelConfig::default() }
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_styles(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<StyleVector> {
    (0..n).map(|_| StyleVector::new((0..d).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap()).collect()
}

fn latent_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut perm_ok = true;
    for n in 1..=64 {
        let ws = random_styles(&mut rng, n, 32);
        let c = k_same_centroid(&ws).map_err(|e| e.to_string())?;
        for j in 0..32 {
            let brute = ws.iter().map(|w| w.0[j]).sum::<f64>() / n as f64;
            worst = worst.max((c.0[j] - brute).abs());
        }
        for _ in 0..4 {
            let mut shuffled = ws.clone();
            shuffled.shuffle(&mut rng);
            let d = k_same_centroid(&shuffled).unwrap();
            perm_ok &= c.0.iter().zip(&d.0).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    let mut endpoints_ok = true;
    for _ in 0..100 {
        let v = random_styles(&mut rng, 2, 32);
        endpoints_ok &= directed_code(&v[0], &v[1], 0.0).unwrap() == v[0] && directed_code(&v[0], &v[1], 1.0).unwrap() == v[1];
    }
    let l = 6;
    let v = random_styles(&mut rng, 2, 16);
    let mut schedule_ok = build_degree_schedule(&v[0], &v[1], l + 1, l).is_err();
    for i in 0..=l {
        let s = build_degree_schedule(&v[0], &v[1], i, l).unwrap();
        schedule_ok &= s.len() == l
            && (0..l).all(|layer| {
                let (want, tag) = if layer < i { (&v[0], Provenance::Source) } else { (&v[1], Provenance::Anonymized) };
                &s.styles[layer] == want && s.provenance[layer] == tag
            });
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && perm_ok && endpoints_ok && schedule_ok && secs < 1.0,
        format!("centroid max err {worst:.2e}, permutation bit-exact {perm_ok}, endpoints exact {endpoints_ok}, schedules L=6 {schedule_ok}, {secs:.3}s"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::check_all(3, 6).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let terms: Vec<String> = report.terms.iter().map(|t| format!("{} {:.1e}", t.term, t.max_rel_err)).collect();
    check(report.passed() && secs < 120.0, format!("{}; verifier isolated {}; {secs:.1}s", terms.join(", "), report.verifier_isolated))
}

fn fid_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d) = (50_000, 64);
    let mut sample = |scale: f64| -> Vec<Vec<f64>> { (0..n).map(|_| (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect::<Vec<f64>>()).collect() };
    let a = sample(1.0);
    let b = sample(2.0);
    let same = evalsuite::fid(&a, &a).map_err(|e| e.to_string())?;
    let scaled = evalsuite::fid(&a, &b).map_err(|e| e.to_string())?;
    let rel = (scaled - d as f64).abs() / d as f64;
    check(same.abs() <= 1e-6 && rel <= 0.01, format!("fid(A,A) = {same:.2e}; fid(I, 4I) = {scaled:.3} vs D = {d} ({:.2}% off), n = {n}", rel * 100.0))
}

fn frozen_verifier(ctx: &Ctx, manifest: &DatasetManifest, verifier: &Verifier) -> (Outcome, PathBuf) {
    let out = ctx.dir.join("frozen_v");
    let _ = fs::remove_dir_all(&out);
    let before = verifier.checksum();
    let config = TrainConfig { model: toy_model(), iterations: 100, checkpoint_every: 0, ..TrainConfig::default() };
    let outcome = trainer::train(config, manifest, Some(verifier.clone()), &out).map_err(|e| e.to_string()).and_then(|ck| {
        let after = ck.model.verifier().map_err(|e| e.to_string())?.checksum();
        let reloaded = Checkpoint::load(&out.join(trainer::FINAL_CHECKPOINT)).map_err(|e| e.to_string())?.model.verifier().unwrap().checksum();
        check(before == after && after == reloaded, format!("checksum {before} before, {after} after 100 iterations, {reloaded} on disk"))
    });
    (outcome, out.join(trainer::FINAL_CHECKPOINT))
}

fn toy_run(report: &MetricReport) -> Vec<(&'static str, Outcome)> {
    let l = report.per_layer_sweep.len().saturating_sub(1);
    let rho = report.sweep_spearman().unwrap_or(f64::NAN);
    let (acc0, acc_l) = match (report.per_layer_sweep.first(), report.per_layer_sweep.last()) {
        (Some(a), Some(b)) => (a.attribute_accuracy, b.attribute_accuracy),
        _ => (f64::NAN, f64::NAN),
    };
    let yaw = report.factor_errors.get("yaw");
    let yaw_rec = report.factor_errors_reconstruction.get("yaw");
    let sims: Vec<String> = report.per_layer_sweep.iter().map(|r| format!("{:.3}", r.id_similarity)).collect();
    vec![
        ("toy run (a) held-out reconstruction MSE <= 0.05", check(report.mse <= 0.05, format!("mse {:.4} over {} test images", report.mse, report.num_samples))),
        (
            "toy run (b) ksame id-similarity <= 0.6 x reconstruction",
            check(
                report.id_similarity_mean <= 0.6 * report.id_similarity_reconstruction,
                format!("ksame {:.4} vs 0.6 x {:.4} = {:.4} (k = {})", report.id_similarity_mean, report.id_similarity_reconstruction, 0.6 * report.id_similarity_reconstruction, report.k),
            ),
        ),
        (
            "toy run (c) sweep monotone in i and attributes preserved",
            check(rho >= 0.8 && acc_l >= acc0, format!("spearman {rho:.3} over [{}]; attribute accuracy i=0 {acc0:.2}, i={l} {acc_l:.2}", sims.join(", "))),
        ),
        ("toy run (d) ksame yaw MAE <= 2x reconstruction yaw MAE", check(yaw <= 2.0 * yaw_rec, format!("ksame {yaw:.3} vs reconstruction {yaw_rec:.3}"))),
    ]
}

fn test_images(manifest: &DatasetManifest, n: usize) -> Vec<Image> {
    manifest.test_samples().iter().take(n).map(|s| manifest.load_image(s).unwrap().to_model()).collect()
}

fn anonymize_all(checkpoint: &Path, manifest: &DatasetManifest, images: &[Image]) -> Vec<Vec<u32>> {
    let model = Checkpoint::load(checkpoint).unwrap().model;
    let bank = StyleBank::from_samples(&model, manifest, &manifest.train_samples()).unwrap();
    let mut out = Vec::new();
    let settings = [
        AnonymizationParams { seed: 4, ..AnonymizationParams::default() },
        AnonymizationParams { seed: 9, k: Some(16), layer_index: 3, ..AnonymizationParams::default() },
    ];
    for params in &settings {
        for a in latentops::anonymize_batch(&model, &bank, images, params).unwrap() {
            out.push(a.image.values().iter().map(|v| v.to_bits()).collect());
        }
    }
    out
}

fn determinism(manifest: &DatasetManifest, a: &Path, b: &Path) -> Outcome {
    let bytes_a = fs::read(a).map_err(|e| e.to_string())?;
    let bytes_b = fs::read(b).map_err(|e| e.to_string())?;
    let ck_a = Checkpoint::load(a).map_err(|e| e.to_string())?;
    let ck_b = Checkpoint::load(b).map_err(|e| e.to_string())?;
    let params_equal = ck_a.model.params.iter().zip(ck_b.model.params.iter()).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.data().iter().zip(t2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let images = test_images(manifest, 32);
    let out_a = anonymize_all(a, manifest, &images);
    let out_b = anonymize_all(b, manifest, &images);
    check(
        bytes_a == bytes_b && params_equal && out_a == out_b,
        format!("checkpoint bytes equal {}, params bitwise {params_equal}, {} anonymize outputs equal {}", bytes_a == bytes_b, out_a.len(), out_a == out_b),
    )
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn service_contract(state: AppState) -> Outcome {
    let sid = |i: usize| state.manifest.samples[i].sample_id.clone();
    let (s0, s5, s9) = (sid(0), sid(5), sid(9));
    let available = state.manifest.len();
    let app = router(Arc::new(state));
    let mut failures = Vec::new();

    let req = json!({ "sample_id": s0, "k": 8, "seed": 3, "return_audit": true });
    let (st1, a) = call(&app, "POST", "/v1/anonymize", req.clone()).await;
    let (st2, b) = call(&app, "POST", "/v1/anonymize", req).await;
    if st1 != StatusCode::OK || st2 != StatusCode::OK || a["image"] != b["image"] || a["audit"] != b["audit"] {
        failures.push("anonymize not deterministic");
    }
    let ids: Vec<String> = serde_json::from_value(a["audit"]["pool_sample_ids"].clone()).unwrap_or_default();
    let distinct: std::collections::BTreeSet<_> = ids.iter().collect();
    if ids.len() != 8 || distinct.len() != 8 {
        failures.push("audit pool is not k distinct ids");
    }
    let (_, replay) = call(&app, "POST", "/v1/anonymize", json!({ "sample_id": s0, "pool_sample_ids": ids, "seed": 12345 })).await;
    if replay["image"] != a["image"] {
        failures.push("audit replay differs");
    }
    let (_, rec) = call(&app, "POST", "/v1/reconstruct", json!({ "sample_id": s5 })).await;
    let (_, full) = call(&app, "POST", "/v1/anonymize", json!({ "sample_id": s5, "layer_index": 6 })).await;
    if rec["image"] != full["image"] || rec["image"].is_null() {
        failures.push("i = L differs from reconstruction");
    }

    let expect = |status: StatusCode, body: &Value, code: &str| status == StatusCode::BAD_REQUEST && body["code"] == code;
    let (st, e) = call(&app, "POST", "/v1/anonymize", json!({ "sample_id": s0, "k": available + 1 })).await;
    if !expect(st, &e, "insufficient_pool") || e["details"]["available"] != available {
        failures.push("oversized k not reported as insufficient_pool");
    }
    let (st, e) = call(&app, "POST", "/v1/anonymize", json!({ "image": "%%%" })).await;
    if !expect(st, &e, "invalid_argument") {
        failures.push("malformed base64 not invalid_argument");
    }
    let (st, e) = call(&app, "POST", "/v1/anonymize", json!({ "image": STANDARD.encode(b"GIF89a") })).await;
    if !expect(st, &e, "invalid_argument") {
        failures.push("non-PNG not invalid_argument");
    }
    let (st, e) = call(&app, "POST", "/v1/anonymize", json!({ "sample_id": s0, "mode": "swap" })).await;
    if !expect(st, &e, "missing_target") {
        failures.push("swap without target not missing_target");
    }
    let (st, e) = call(&app, "POST", "/v1/anonymize", json!({ "sample_id": s0, "layer_index": 7 })).await;
    if !expect(st, &e, "invalid_argument") {
        failures.push("layer index above L accepted");
    }
    let (st, _) = call(&app, "POST", "/v1/swap", json!({ "sample_id": s9 })).await;
    if st != StatusCode::NOT_FOUND {
        failures.push("unknown route not 404");
    }
    check(failures.is_empty(), if failures.is_empty() { "determinism, audit replay, i = L, 6 error cases".into() } else { failures.join("; ") })
}

fn main() {
    let dir = std::env::var_os("FICGAN_ACCEPTANCE_DIR").map(PathBuf::from).unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    fs::create_dir_all(&dir).unwrap();
    let ctx = Ctx { dir, start: Instant::now() };
    ctx.note(&format!("artifacts in {}", ctx.dir.display()));

    let mut results: Vec<(&str, Outcome)> = vec![
        ("latent algebra oracles", latent_algebra()),
        ("gradient suite", gradients()),
        ("FID closed forms", fid_closed_forms()),
    ];

    let manifest = ctx.dataset();
    let verifier = ctx.verifier(&manifest, "verifier.json", 4, 0);
    let eval_verifier = ctx.verifier(&manifest, "eval_verifier.json", 6, 101);
    let probe = ctx.probe();

    ctx.note("frozen verifier run");
    let (frozen, smoke) = frozen_verifier(&ctx, &manifest, &verifier);
    results.push(("frozen verifier over 100 iterations", frozen));

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let contract = match AppState::load(&smoke, &ctx.dir.join("dataset")) {
        Ok(state) => rt.block_on(service_contract(state)),
        Err(e) => Err(e.to_string()),
    };
    results.push(("service contract on smoke checkpoint", contract));

    let main_ck = ctx.train("main", &manifest, &verifier, true);
    let main_report = ctx.evaluate("main_eval", &main_ck, &manifest, &eval_verifier, &probe, &EvalOptions::default());
    results.extend(toy_run(&main_report));

    let ablation_ck = ctx.train("no_neg", &manifest, &verifier, false);
    let ablation = ctx.evaluate("no_neg_eval", &ablation_ck, &manifest, &eval_verifier, &probe, &EvalOptions::default());
    // same comparison under the training verifier, reported alongside
    let quick = EvalOptions { sweep: false, fid: false, ..EvalOptions::default() };
    let main_tv = ctx.evaluate("main_train_verifier", &main_ck, &manifest, &verifier, &probe, &quick);
    let ablation_tv = ctx.evaluate("no_neg_train_verifier", &ablation_ck, &manifest, &verifier, &probe, &quick);
    results.push((
        "ablation without disassociation raises mixing id-similarity",
        check(
            ablation.mixing_id_similarity > main_report.mixing_id_similarity,
            format!(
                "eval verifier: without {:.4} vs full {:.4}; training verifier: without {:.4} vs full {:.4}",
                ablation.mixing_id_similarity, main_report.mixing_id_similarity, ablation_tv.mixing_id_similarity, main_tv.mixing_id_similarity
            ),
        ),
    ));

    let repeat_ck = ctx.train("repeat", &manifest, &verifier, true);
    results.push(("determinism across two full runs", determinism(&manifest, &main_ck, &repeat_ck)));

    println!();
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}")
            }
        }
    }
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
