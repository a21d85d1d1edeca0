//! Joint reconstruction + mixing training against a discriminator, with a
//! frozen verifier supplying the identity contrastive signal.

mod checkpoint;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ficgan_autograd::{Adam, AdamConfig, Tape};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, OptimizerState, RngState, FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::losses::{adv_discriminator_term, generator_forward, generator_objective, r1_penalty, LossReport, LossWeights, ObjectiveOptions};
use crate::nets::{arch, images_to_tensor, Image, Model, ModelConfig, Verifier};
use crate::seeding::derive_seed;
use crate::synthfaces::DatasetManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    /// 0 disables periodic checkpoints; a final one is always written.
    pub checkpoint_every: u64,
    pub r1_gamma: f64,
    /// Evaluate R1 every this many iterations, scaled up by the interval.
    pub r1_interval: u64,
    pub objective: ObjectiveOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            learning_rate: 0.002,
            beta1: 0.0,
            beta2: 0.99,
            batch_size: 16,
            iterations: 20_000,
            seed: 0,
            checkpoint_every: 5_000,
            r1_gamma: 1.0,
            r1_interval: 4,
            objective: ObjectiveOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch_size must be ≥ 2 for mixing, got {}", self.batch_size)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be ≥ 1"));
        }
        if !(self.learning_rate > 0.0) || self.r1_gamma < 0.0 || self.r1_interval == 0 {
            return Err(Error::invalid("learning_rate must be > 0, r1_gamma ≥ 0 and r1_interval ≥ 1"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: 1e-8 }
    }
}

/// Mixing partner of each batch element: a cyclic shift, so no element is
/// paired with itself.
pub fn derangement(batch: usize) -> Vec<usize> {
    (0..batch).map(|s| (s + 1) % batch).collect()
}

fn is_generator_param(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("map.") || name.starts_with("gen.")
}

fn is_disc_param(name: &str) -> bool {
    name.starts_with("disc.")
}

/// Training images held in memory, indexed by identity.
pub struct TrainingData {
    images: Vec<Image>,
    by_identity: BTreeMap<u32, Vec<usize>>,
    pub dataset_seed: u64,
}

impl TrainingData {
    pub fn new(images: Vec<Image>, identities: Vec<u32>, dataset_seed: u64) -> Result<Self> {
        if images.is_empty() || images.len() != identities.len() {
            return Err(Error::invalid("training data needs one identity per image and at least one image"));
        }
        let mut by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, id) in identities.into_iter().enumerate() {
            by_identity.entry(id).or_default().push(i);
        }
        Ok(Self { images, by_identity, dataset_seed })
    }

    /// Training split of a manifest; falls back to every sample when the
    /// split would be empty.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut chosen = manifest.train_samples();
        if chosen.is_empty() {
            chosen = manifest.samples.iter().collect();
        }
        let mut images = Vec::with_capacity(chosen.len());
        let mut ids = Vec::with_capacity(chosen.len());
        for s in chosen {
            images.push(manifest.load_image(s)?.to_model());
            ids.push(s.label.identity_id);
        }
        Self::new(images, ids, manifest.seed)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.images[0].size()
    }

    /// Distinct identities when enough exist, then one random image each;
    /// uniform sampling with replacement otherwise.
    pub fn sample_batch(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let ids: Vec<&Vec<usize>> = self.by_identity.values().collect();
        if ids.len() >= batch {
            index::sample(rng, ids.len(), batch).into_iter().map(|k| ids[k][rng.random_range(0..ids[k].len())]).collect()
        } else {
            (0..batch).map(|_| rng.random_range(0..self.images.len())).collect()
        }
    }
}

/// Mutable training state: parameters, optimizers, iteration counter, RNG.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub iteration: u64,
    rng: ChaCha8Rng,
    last_finite: Option<LossReport>,
}

impl Trainer {
    pub fn new(config: TrainConfig, verifier: Verifier) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.model.clone(), init_seed(config.seed))?.with_verifier(verifier)?;
        let mut g_params = model.params.subset("enc.");
        g_params.merge(model.params.subset("map."));
        g_params.merge(model.params.subset("gen."));
        let opt_g = Adam::new(config.adam(), &g_params);
        let opt_d = Adam::new(config.adam(), &model.params.subset("disc."));
        let rng = ChaCha8Rng::seed_from_u64(derive_seed("trainer.batches", &[config.seed]));
        Ok(Self { config, model, opt_g, opt_d, iteration: 0, rng, last_finite: None })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ck.model.config != config.model {
            return Err(Error::ConfigMismatch { expected: serde_json::to_string(&config.model)?, found: serde_json::to_string(&ck.model.config)? });
        }
        ck.model.verifier()?;
        let (Some(opt), Some(rng)) = (ck.optimizer, ck.rng) else {
            return Err(Error::State("checkpoint has no optimizer or RNG state to resume from".into()));
        };
        Ok(Self { config, model: ck.model, opt_g: opt.generator, opt_d: opt.discriminator, iteration: ck.iteration, rng: rng.restore(), last_finite: None })
    }

    pub fn checkpoint(&self, dataset_seed: Option<u64>) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            iteration: self.iteration,
            rng: Some(RngState::capture(&self.rng)),
            meta: CheckpointMeta { dataset_seed, train_seed: Some(self.config.seed), loss_weights: Some(self.config.weights), extra: Default::default() },
            optimizer: Some(OptimizerState { generator: self.opt_g.clone(), discriminator: self.opt_d.clone() }),
        }
    }

    /// Draw a batch from `data` and take one step.
    pub fn step(&mut self, data: &TrainingData) -> Result<LossReport> {
        let idx = data.sample_batch(self.config.batch_size, &mut self.rng);
        let batch: Vec<&Image> = idx.iter().map(|&i| &data.images[i]).collect();
        self.train_step(&batch)
    }

    /// One discriminator update followed by one encoder/mapping/generator
    /// update on the same generated batch.
    pub fn train_step(&mut self, batch: &[&Image]) -> Result<LossReport> {
        let c = self.config.model.clone();
        let b = batch.len();
        if b < 2 {
            return Err(Error::invalid(format!("a training batch needs at least 2 images, got {b}")));
        }
        let verifier = self.model.verifier()?.clone();
        let x = images_to_tensor(batch, c.image_size)?;
        let perm = derangement(b);
        debug_assert!(perm.iter().enumerate().all(|(s, &t)| s != t));
        let iteration = self.iteration + 1;

        let mut t = Tape::new();
        let pg = self.model.params.bind_where(&mut t, |n| is_generator_param(n).then_some(true));
        let x_s = t.constant(x.clone());
        let fwd = generator_forward(&c, &mut t, &pg, x_s, &perm);

        // discriminator step on detached fakes
        let mut td = Tape::new();
        let pd = self.model.params.bind_where(&mut td, |n| is_disc_param(n).then_some(true));
        let real = td.constant(x.clone());
        let fake = td.constant(t.value(fwd.fakes).clone());
        let both = td.concat_rows(&[real, fake]);
        let logits = arch::discriminator(&c, &mut td, &pd, both);
        let l_real = td.slice_rows(logits, 0, b);
        let l_fake = td.slice_rows(logits, b, 2 * b);
        let d_loss = adv_discriminator_term(&mut td, l_real, l_fake);
        let disc = td.value(d_loss).item() as f64;
        let mut d_grads = pd.collect(&td, &td.backward(d_loss));
        drop(td);
        let mut r1 = None;
        if self.config.r1_gamma > 0.0 && iteration % self.config.r1_interval == 0 {
            let gamma = self.config.r1_gamma * self.config.r1_interval as f64;
            let (pen, g) = r1_penalty(&c, &self.model.params.subset("disc."), &x, gamma);
            r1 = Some(pen / self.config.r1_interval as f64);
            for (name, gt) in g.iter() {
                d_grads.get_mut(name).expect("same parameter set").add_assign(gt);
            }
        }
        if !disc.is_finite() || !r1.unwrap_or(0.0).is_finite() {
            return Err(self.non_finite(iteration));
        }
        self.opt_d.update(&mut self.model.params, &d_grads);

        // generator step against the updated, frozen discriminator
        let pdf = self.model.params.bind_where(&mut t, |n| is_disc_param(n).then_some(false));
        let pv = verifier.params.bind(&mut t, false);
        let terms = generator_objective(&c, &verifier.config, &mut t, &pdf, &pv, x_s, &fwd, &perm, &self.config.weights, &self.config.objective);
        let mut report = terms.report(&t);
        report.disc = disc;
        report.r1 = r1;
        if !report.is_finite() {
            return Err(self.non_finite(iteration));
        }
        let g_grads = pg.collect(&t, &t.backward(terms.total));
        self.opt_g.update(&mut self.model.params, &g_grads);
        self.iteration = iteration;
        self.last_finite = Some(report.clone());
        Ok(report)
    }

    fn non_finite(&self, iteration: u64) -> Error {
        Error::NonFiniteLoss { iteration, last_finite: self.last_finite.clone().map(Box::new) }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogLine {
    pub iteration: u64,
    pub wall_ms: f64,
    #[serde(flatten)]
    pub report: LossReport,
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{iteration:06}.tar"))
}

pub const FINAL_CHECKPOINT: &str = "final.tar";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Run until `config.iterations`, logging every step to `train_log.jsonl`
/// and writing periodic plus final checkpoints into `out_dir`.
pub fn run(trainer: &mut Trainer, data: &TrainingData, out_dir: &Path) -> Result<Checkpoint> {
    if data.image_size() != trainer.config.model.image_size {
        return Err(Error::invalid(format!("dataset image size {} does not match model {}", data.image_size(), trainer.config.model.image_size)));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = fs::OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let start = Instant::now();
    while trainer.iteration < trainer.config.iterations {
        let report = trainer.step(data)?;
        let line = LogLine { iteration: trainer.iteration, wall_ms: start.elapsed().as_secs_f64() * 1e3, report };
        writeln!(log, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(&log_path, e))?;
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.iteration % every == 0 && trainer.iteration < trainer.config.iterations {
            trainer.checkpoint(Some(data.dataset_seed)).save(&checkpoint_path(out_dir, trainer.iteration))?;
        }
        if trainer.iteration % 500 == 0 {
            log::info!("iteration {} rec {:.4} total {:.4}", trainer.iteration, line.report.rec, line.report.total);
        }
    }
    let ck = trainer.checkpoint(Some(data.dataset_seed));
    ck.save(&out_dir.join(FINAL_CHECKPOINT))?;
    Ok(ck)
}

/// Convenience wrapper: fresh trainer on a manifest's training split.
pub fn train(config: TrainConfig, manifest: &DatasetManifest, verifier: Option<Verifier>, out_dir: &Path) -> Result<Checkpoint> {
    let verifier = verifier.ok_or_else(|| Error::State("training requires a pre-trained verifier".into()))?;
    let data = TrainingData::from_manifest(manifest)?;
    let mut trainer = Trainer::new(config, verifier)?;
    run(&mut trainer, &data, out_dir)
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}

/// Seed of the model's parameter initialisation.
pub fn init_seed(train_seed: u64) -> u64 {
    derive_seed("trainer.init", &[train_seed])
}
