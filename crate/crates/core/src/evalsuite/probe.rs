//! Pixel regressor recovering ground-truth factors from face images.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use ficgan_autograd::{Adam, AdamConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{arch, augment, images_to_tensor, persist, Image, VerifierConfig};
use crate::seeding::{derive_seed, rng_for};
use crate::synthfaces::{render_face, sample_factors, Attributes, FactorLabel, IdentityFactors, NonIdFactors};

use ficgan_autograd::ParamStore;

/// Regression targets: yaw, illumination (cos, sin), hue (cos, sin), smile,
/// then the six identity factors.
pub const NUM_TARGETS: usize = 12;

/// Identity ids for probe renders start here, far from any dataset.
const PROBE_ID_BASE: i64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainConfig {
    pub image_size: usize,
    pub width: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment: bool,
    pub validation_size: usize,
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self { image_size: 64, width: 4, iterations: 8000, batch_size: 32, learning_rate: 0.002, augment: true, validation_size: 500, seed: 0 }
    }
}

/// Estimated factors for one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorEstimate {
    pub identity_factors: IdentityFactors,
    pub nonid_factors: NonIdFactors,
}

impl FactorEstimate {
    pub fn attributes(&self) -> Attributes {
        Attributes::derive(&self.identity_factors, &self.nonid_factors)
    }
}

/// Mean absolute error per factor; angles and hue use circular distance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorErrors(pub BTreeMap<String, f64>);

impl FactorErrors {
    pub fn get(&self, name: &str) -> f64 {
        self.0.get(name).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub final_loss: f64,
    /// Held-out clean renders.
    pub validation: FactorErrors,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorProbe {
    pub config: VerifierConfig,
    pub params: ParamStore<f32>,
    pub report: Option<ProbeReport>,
}

fn encode_targets(l: &FactorLabel) -> [f32; NUM_TARGETS] {
    let n = &l.nonid_factors;
    let ill = n.illumination_angle.to_radians();
    let hue = n.background_hue * TAU;
    let id = l.identity_factors.to_array();
    let mut t = [0.0f32; NUM_TARGETS];
    let head = [n.yaw / 30.0, ill.cos(), ill.sin(), hue.cos(), hue.sin(), 2.0 * n.smile - 1.0];
    for (d, v) in t.iter_mut().zip(head.iter().chain(id.map(|f| 2.0 * f - 1.0).iter())) {
        *d = *v as f32;
    }
    t
}

fn decode_targets(o: &[f32]) -> FactorEstimate {
    let o: Vec<f64> = o.iter().map(|&v| v as f64).collect();
    let unit = |v: f64| ((v + 1.0) / 2.0).clamp(0.0, 1.0);
    let ill = o[2].atan2(o[1]).to_degrees().rem_euclid(360.0);
    let hue = (o[4].atan2(o[3]) / TAU).rem_euclid(1.0);
    let mut id = [0.0; 6];
    for (d, v) in id.iter_mut().zip(&o[6..]) {
        *d = unit(*v);
    }
    FactorEstimate {
        identity_factors: IdentityFactors::from_array(id),
        nonid_factors: NonIdFactors {
            yaw: (30.0 * o[0]).clamp(-30.0, 30.0),
            illumination_angle: if ill >= 360.0 { 0.0 } else { ill },
            background_hue: if hue >= 1.0 { 0.0 } else { hue },
            smile: unit(o[5]),
        },
    }
}

fn circular(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Per-factor absolute errors between ground truth and estimates.
pub fn factor_errors(truth: &[FactorLabel], est: &[FactorEstimate]) -> Result<FactorErrors> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(Error::invalid(format!("factor_errors needs equal, non-empty inputs ({} vs {})", truth.len(), est.len())));
    }
    let n = truth.len() as f64;
    let mut out = BTreeMap::new();
    let mut add = |name: &str, f: &dyn Fn(&FactorLabel, &FactorEstimate) -> f64| {
        out.insert(name.to_string(), truth.iter().zip(est).map(|(t, e)| f(t, e)).sum::<f64>() / n);
    };
    add("yaw", &|t, e| (t.nonid_factors.yaw - e.nonid_factors.yaw).abs());
    add("illumination_angle", &|t, e| circular(t.nonid_factors.illumination_angle, e.nonid_factors.illumination_angle, 360.0));
    add("background_hue", &|t, e| circular(t.nonid_factors.background_hue, e.nonid_factors.background_hue, 1.0));
    add("smile", &|t, e| (t.nonid_factors.smile - e.nonid_factors.smile).abs());
    for (j, name) in IdentityFactors::NAMES.iter().enumerate() {
        add(name, &|t, e| (t.identity_factors.to_array()[j] - e.identity_factors.to_array()[j]).abs());
    }
    Ok(FactorErrors(out))
}

/// A fresh random face: `(label, image)` for probe stream `tag`, index `i`.
fn probe_render(tag: &str, seed: u64, i: u64, size: usize) -> Result<(FactorLabel, Image)> {
    let mut rng = rng_for(tag, &[seed, i]);
    let id = PROBE_ID_BASE + rng.random_range(0..1i64 << 30);
    let label = sample_factors(id, derive_seed(tag, &[seed]), i)?;
    let img = render_face(&label, size)?.to_model();
    Ok((label, img))
}

impl FactorProbe {
    pub fn fit(train: &ProbeTrainConfig) -> Result<Self> {
        if train.iterations == 0 || train.batch_size == 0 || train.validation_size == 0 {
            return Err(Error::invalid("probe iterations, batch_size and validation_size must be ≥ 1"));
        }
        let config = VerifierConfig { image_size: train.image_size, width: train.width, max_channels: 64, feature_dim: 128, d_emb: NUM_TARGETS };
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed("evalsuite.probe.init", &[train.seed]));
        let mut params = arch::init_params(&arch::probe_specs(&config), &mut init_rng);
        let mut adam = Adam::new(AdamConfig { lr: train.learning_rate, beta1: 0.9, beta2: 0.99, eps: 1e-8 }, &params);
        let mut aug_rng = rng_for("evalsuite.probe.augment", &[train.seed]);
        let size = train.image_size;
        let mut final_loss = f64::NAN;
        for it in 0..train.iterations {
            let b = train.batch_size;
            let mut data = Vec::with_capacity(b * 3 * size * size);
            let mut targets = Vec::with_capacity(b * NUM_TARGETS);
            for j in 0..b {
                let (label, img) = probe_render("evalsuite.probe.train", train.seed, (it * b + j) as u64, size)?;
                if train.augment {
                    data.extend(augment(&img, &mut aug_rng));
                } else {
                    data.extend_from_slice(img.values());
                }
                targets.extend(encode_targets(&label));
            }
            let mut t = Tape::new();
            let p = params.bind(&mut t, true);
            let x = t.constant(Tensor::new(vec![b, 3, size, size], data));
            let y = arch::probe(&config, &mut t, &p, x);
            let target = t.constant(Tensor::new(vec![b, NUM_TARGETS], targets));
            let d = t.sub(y, target);
            let sq = t.square(d);
            let loss = t.mean(sq);
            final_loss = t.value(loss).item() as f64;
            if !final_loss.is_finite() {
                return Err(Error::Numerical(format!("probe loss became non-finite at iteration {it}")));
            }
            let grads = p.collect(&t, &t.backward(loss));
            adam.update(&mut params, &grads);
        }
        let mut probe = Self { config, params, report: None };
        let mut labels = Vec::with_capacity(train.validation_size);
        let mut images = Vec::with_capacity(train.validation_size);
        for i in 0..train.validation_size {
            let (l, img) = probe_render("evalsuite.probe.validation", train.seed, i as u64, size)?;
            labels.push(l);
            images.push(img);
        }
        let est = probe.apply(&images)?;
        probe.report = Some(ProbeReport { final_loss, validation: factor_errors(&labels, &est)? });
        Ok(probe)
    }

    pub fn apply(&self, images: &[Image]) -> Result<Vec<FactorEstimate>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let x = images_to_tensor(&refs, self.config.image_size)?;
            let mut t = Tape::new();
            let p = self.params.bind(&mut t, false);
            let xv = t.constant(x);
            let y = arch::probe(&self.config, &mut t, &p, xv);
            out.extend(t.value(y).data().chunks(NUM_TARGETS).map(decode_targets));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save_net(path, "factor_probe", &self.config, self.report.as_ref(), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, report, arrays): (VerifierConfig, _, _) = persist::load_net(path, "factor_probe")?;
        config.validate()?;
        if config.d_emb != NUM_TARGETS {
            return Err(Error::ConfigMismatch { expected: format!("{NUM_TARGETS} probe outputs"), found: config.d_emb.to_string() });
        }
        let params = persist::map_to_store(arrays, &arch::probe_specs(&config), &path.display().to_string())?;
        Ok(Self { config, params, report })
    }
}
