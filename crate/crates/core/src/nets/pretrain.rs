//! Verifier pretraining with an additive-margin softmax over identities.

use std::collections::BTreeMap;

use ficgan_autograd::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::arch;
use super::config::VerifierConfig;
use super::model::Verifier;
use super::types::Image;
use crate::error::{Error, Result};
use crate::synthfaces::DatasetManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Logit scale `s` and cosine margin `m`.
    pub scale: f64,
    pub margin: f64,
    /// Random blur, noise and contrast jitter on training images.
    pub augment: bool,
    pub seed: u64,
}

impl Default for VerifierTrainConfig {
    fn default() -> Self {
        Self { iterations: 3000, batch_size: 32, learning_rate: 0.002, scale: 16.0, margin: 0.2, augment: true, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub final_loss: f64,
    /// Same-identity threshold chosen on training pairs.
    pub tau_same: f64,
    pub train_pair_accuracy: f64,
    /// `None` when the manifest has no held-out samples.
    pub heldout_pair_accuracy: Option<f64>,
    pub heldout_mean_same: Option<f64>,
    pub heldout_mean_diff: Option<f64>,
}

fn box_blur(x: &[f32], size: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(size * size).zip(out.chunks_mut(size * size)) {
        for y in 0..size {
            for xx in 0..size {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (yy, xq) = (y as i32 + dy, xx as i32 + dx);
                        if yy >= 0 && xq >= 0 && (yy as usize) < size && (xq as usize) < size {
                            acc += src[yy as usize * size + xq as usize];
                            n += 1.0;
                        }
                    }
                }
                dst[y * size + xx] = acc / n;
            }
        }
    }
    out
}

/// Photometric jitter so the embedding tolerates generator artefacts.
pub fn augment(img: &Image, rng: &mut impl Rng) -> Vec<f32> {
    let size = img.size();
    let mut x = img.values().to_vec();
    if rng.random_bool(0.5) {
        let a: f32 = rng.random_range(0.0..1.0);
        let b = box_blur(&x, size);
        for (v, bv) in x.iter_mut().zip(b) {
            *v += a * (bv - *v);
        }
    }
    let contrast: f32 = rng.random_range(0.8..1.2);
    let sigma: f32 = rng.random_range(0.0..0.08);
    let noise = Normal::new(0.0f32, 1.0).expect("unit normal");
    for v in x.iter_mut() {
        *v = (*v * contrast + sigma * noise.sample(rng)).clamp(-1.0, 1.0);
    }
    x
}

fn pair_accuracy(pairs: &[(f64, bool)], tau: f64) -> f64 {
    let correct = pairs.iter().filter(|(s, same)| (*s > tau) == *same).count();
    correct as f64 / pairs.len() as f64
}

/// Balanced same/different pairs with their cosine similarities.
fn sample_pairs(embs: &[Vec<f64>], ids: &[u32], n: usize, rng: &mut impl Rng) -> Vec<(f64, bool)> {
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        by_id.entry(id).or_default().push(i);
    }
    let multi: Vec<&Vec<usize>> = by_id.values().filter(|v| v.len() >= 2).collect();
    let dot = |a: usize, b: usize| embs[a].iter().zip(&embs[b]).map(|(x, y)| x * y).sum::<f64>();
    let mut out = Vec::with_capacity(n);
    if multi.is_empty() || by_id.len() < 2 {
        return out;
    }
    for k in 0..n {
        if k % 2 == 0 {
            let g = multi[rng.random_range(0..multi.len())];
            let a = rng.random_range(0..g.len());
            let mut b = rng.random_range(0..g.len() - 1);
            if b >= a {
                b += 1;
            }
            out.push((dot(g[a], g[b]), true));
        } else {
            let a = rng.random_range(0..ids.len());
            let b = loop {
                let b = rng.random_range(0..ids.len());
                if ids[b] != ids[a] {
                    break b;
                }
            };
            out.push((dot(a, b), false));
        }
    }
    out
}

/// Threshold maximizing accuracy on `pairs` (midpoints between sorted scores).
fn best_threshold(pairs: &[(f64, bool)]) -> f64 {
    let mut scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    scores.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, 0.5);
    for w in scores.windows(2) {
        let tau = 0.5 * (w[0] + w[1]);
        let acc = pair_accuracy(pairs, tau);
        if acc > best.0 {
            best = (acc, tau);
        }
    }
    best.1
}

fn load_split(manifest: &DatasetManifest, test: bool) -> Result<(Vec<Image>, Vec<u32>)> {
    let mut images = Vec::new();
    let mut ids = Vec::new();
    for s in manifest.samples.iter().filter(|s| DatasetManifest::is_test(&s.sample_id) == test) {
        images.push(manifest.load_image(s)?.to_model());
        ids.push(s.label.identity_id);
    }
    Ok((images, ids))
}

pub fn pretrain_verifier(manifest: &DatasetManifest, config: &VerifierConfig, train: &VerifierTrainConfig) -> Result<(Verifier, VerifierReport)> {
    config.validate()?;
    if config.image_size != manifest.image_size {
        return Err(Error::invalid(format!("verifier image_size {} does not match dataset {}", config.image_size, manifest.image_size)));
    }
    if train.batch_size == 0 || train.iterations == 0 {
        return Err(Error::invalid("verifier batch_size and iterations must be ≥ 1"));
    }
    let class_map = |ids: &[u32]| -> BTreeMap<u32, usize> {
        let mut c = ids.to_vec();
        c.sort_unstable();
        c.dedup();
        c.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
    };
    let (mut images, mut ids) = load_split(manifest, false)?;
    if class_map(&ids).len() < 2 {
        // tiny datasets may put a whole identity in the held-out split
        images = manifest.samples.iter().map(|s| Ok(manifest.load_image(s)?.to_model())).collect::<Result<_>>()?;
        ids = manifest.samples.iter().map(|s| s.label.identity_id).collect();
    }
    let class_of = class_map(&ids);
    if class_of.len() < 2 {
        return Err(Error::invalid(format!("verifier pretraining needs at least 2 identities, dataset has {}", class_of.len())));
    }

    let mut verifier = Verifier::init(config.clone(), train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5645_5249_4649_4552);
    let n_cls = class_of.len();
    let mut params = verifier.params.clone();
    let head: Vec<f32> = (0..n_cls * config.d_emb).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    params.insert("head.weight", Tensor::new(vec![n_cls, config.d_emb], head));
    let mut adam = Adam::new(AdamConfig { lr: train.learning_rate, beta1: 0.9, beta2: 0.99, eps: 1e-8 }, &params);

    let size = config.image_size;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = order.len();
    let mut final_loss = f64::NAN;
    for _ in 0..train.iterations {
        let mut data = Vec::with_capacity(train.batch_size * 3 * size * size);
        let mut labels = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            if train.augment {
                data.extend(augment(&images[i], &mut rng));
            } else {
                data.extend_from_slice(images[i].values());
            }
            labels.push(class_of[&ids[i]]);
        }
        let b = labels.len();
        let mut t = Tape::new();
        let p = params.bind(&mut t, true);
        let x = t.constant(Tensor::new(vec![b, 3, size, size], data));
        let (_, emb) = arch::verifier(config, &mut t, &p, x);
        let w = t.l2_normalize_rows(p.var("head.weight"));
        let cos = t.linear(emb, w, None);
        let mut onehot = vec![0.0f32; b * n_cls];
        for (r, &l) in labels.iter().enumerate() {
            onehot[r * n_cls + l] = train.margin as f32;
        }
        let m = t.constant(Tensor::new(vec![b, n_cls], onehot));
        let shifted = t.sub(cos, m);
        let logits = t.scale(shifted, train.scale);
        let loss = t.softmax_cross_entropy(logits, &labels);
        final_loss = t.value(loss).item() as f64;
        if !final_loss.is_finite() {
            return Err(Error::Numerical("verifier loss became non-finite".into()));
        }
        let grads = p.collect(&t, &t.backward(loss));
        adam.update(&mut params, &grads);
    }
    let mut trained = ParamStore::new();
    for (k, v) in params.iter().filter(|(k, _)| k.starts_with("ver.")) {
        trained.insert(k.clone(), v.clone());
    }
    verifier.params = trained;

    let mut pair_rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5041_4952);
    let train_embs: Vec<Vec<f64>> = verifier.embed(&images)?.into_iter().map(|e| e.0).collect();
    let train_pairs = sample_pairs(&train_embs, &ids, 2000, &mut pair_rng);
    let tau = if train_pairs.is_empty() { 0.5 } else { best_threshold(&train_pairs) };
    let train_acc = if train_pairs.is_empty() { 0.0 } else { pair_accuracy(&train_pairs, tau) };

    let (test_images, test_ids) = load_split(manifest, true)?;
    let test_embs: Vec<Vec<f64>> = verifier.embed(&test_images)?.into_iter().map(|e| e.0).collect();
    let test_pairs = sample_pairs(&test_embs, &test_ids, 2000, &mut pair_rng);
    let mean_of = |same: bool| {
        let v: Vec<f64> = test_pairs.iter().filter(|p| p.1 == same).map(|p| p.0).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let report = VerifierReport {
        final_loss,
        tau_same: tau,
        train_pair_accuracy: train_acc,
        heldout_pair_accuracy: (!test_pairs.is_empty()).then(|| pair_accuracy(&test_pairs, tau)),
        heldout_mean_same: mean_of(true),
        heldout_mean_diff: mean_of(false),
    };
    Ok((verifier, report))
}
