//! Measurement harness: identity similarity under an independent verifier,
//! factor and attribute preservation, FID, reconstruction error and the
//! layer-index sweep.

mod metrics;
mod probe;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{attribute_agreement, fid, id_similarities, id_similarity, mse_unit_range, per_attribute_agreement, spearman, EIG_TOL};
pub use probe::{factor_errors, FactorErrors, FactorEstimate, FactorProbe, ProbeReport, ProbeTrainConfig, NUM_TARGETS};

use crate::error::{Error, Result};
use crate::latentops::{self, AnonymizationParams, CodeSpace, Mode, StyleBank};
use crate::nets::{Image, Model, Verifier};
use crate::synthfaces::{Attributes, DatasetManifest, FactorLabel};

/// Anything that maps images to reconstructions.
pub trait Reconstructor {
    fn reconstruct_images(&self, images: &[Image]) -> Result<Vec<Image>>;
}

impl Reconstructor for Model {
    fn reconstruct_images(&self, images: &[Image]) -> Result<Vec<Image>> {
        self.reconstruct(images)
    }
}

/// Held-out MSE on the `[0, 1]` pixel scale.
pub fn reconstruction_metrics(images: &[Image], model: &impl Reconstructor) -> Result<f64> {
    let rec = model.reconstruct_images(images)?;
    mse_unit_range(images, &rec)
}

/// Attribute agreement between ground-truth labels and probe estimates.
pub fn attribute_accuracy(labels: &[FactorLabel], outputs: &[Image], probe: &FactorProbe) -> Result<f64> {
    let truth: Vec<Attributes> = labels.iter().map(|l| l.attributes).collect();
    let est: Vec<Attributes> = probe.apply(outputs)?.iter().map(|e| e.attributes()).collect();
    attribute_agreement(&truth, &est)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub i: usize,
    pub id_similarity: f64,
    pub attribute_accuracy: f64,
    /// Agreement per attribute, keyed like `Attributes::NAMES`.
    pub per_attribute: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_samples: usize,
    pub k: usize,
    /// Source vs k-same output at `i = 0`.
    pub id_similarity_mean: f64,
    pub id_similarity_reconstruction: f64,
    /// Source vs `G(z_non(x_s), w(x_t))` for a partner of another identity.
    pub mixing_id_similarity: f64,
    pub factor_errors: FactorErrors,
    pub factor_errors_reconstruction: FactorErrors,
    pub attribute_accuracy: f64,
    pub attribute_accuracy_reconstruction: f64,
    pub fid: Option<f64>,
    pub fid_reconstruction: Option<f64>,
    pub mse: f64,
    pub per_layer_sweep: Vec<SweepRow>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let sims = [self.id_similarity_mean, self.id_similarity_reconstruction, self.mixing_id_similarity];
        let accs = [self.attribute_accuracy, self.attribute_accuracy_reconstruction];
        let ok = sims.iter().chain(self.per_layer_sweep.iter().map(|r| &r.id_similarity)).all(|s| (-1.0..=1.0).contains(s))
            && accs.iter().chain(self.per_layer_sweep.iter().map(|r| &r.attribute_accuracy)).all(|a| (0.0..=100.0).contains(a))
            && self.mse >= 0.0
            && self.fid.is_none_or(|f| f >= 0.0)
            && self.fid_reconstruction.is_none_or(|f| f >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Numerical(format!("metric report out of range: {self:?}")))
        }
    }

    /// Spearman correlation of sweep similarity with the layer index.
    pub fn sweep_spearman(&self) -> Option<f64> {
        let i: Vec<f64> = self.per_layer_sweep.iter().map(|r| r.i as f64).collect();
        let s: Vec<f64> = self.per_layer_sweep.iter().map(|r| r.id_similarity).collect();
        spearman(&i, &s).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Cap on evaluated test samples (manifest order).
    pub max_samples: Option<usize>,
    pub k: Option<usize>,
    pub seed: u64,
    pub space: CodeSpace,
    pub sweep: bool,
    pub fid: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { max_samples: None, k: None, seed: 0, space: CodeSpace::W, sweep: true, fid: true }
    }
}

/// Test split (or every sample if the split is empty) as labels and images.
pub fn load_test_set(manifest: &DatasetManifest, max_samples: Option<usize>) -> Result<(Vec<FactorLabel>, Vec<Image>)> {
    let mut samples = manifest.test_samples();
    if samples.is_empty() {
        samples = manifest.samples.iter().collect();
    }
    samples.truncate(max_samples.unwrap_or(usize::MAX));
    let mut labels = Vec::with_capacity(samples.len());
    let mut images = Vec::with_capacity(samples.len());
    for s in samples {
        labels.push(s.label.clone());
        images.push(manifest.load_image(s)?.to_model());
    }
    Ok((labels, images))
}

fn ksame_params(opts: &EvalOptions) -> AnonymizationParams {
    AnonymizationParams { mode: Mode::Ksame, k: opts.k, seed: opts.seed, space: opts.space, ..AnonymizationParams::default() }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// For each sample, the next sample (cyclically) with a different identity.
fn partners(labels: &[FactorLabel]) -> Vec<usize> {
    let n = labels.len();
    (0..n)
        .map(|j| (1..n).map(|d| (j + d) % n).find(|&t| labels[t].identity_id != labels[j].identity_id).unwrap_or((j + 1) % n))
        .collect()
}

/// k-same outputs for every layer index `0..=L` over a test set.
pub fn layer_sweep(model: &Model, bank: &StyleBank, labels: &[FactorLabel], images: &[Image], params: &AnonymizationParams, eval: &Verifier, probe: &FactorProbe) -> Result<Vec<SweepRow>> {
    let resolved = latentops::resolve(model, bank, params)?;
    let sources = latentops::encode_sources(model, images)?;
    let truth: Vec<Attributes> = labels.iter().map(|l| l.attributes).collect();
    (0..=model.num_layers())
        .map(|i| {
            let out: Vec<Image> = latentops::render(model, &sources, &resolved, i)?.into_iter().map(|(img, _)| img).collect();
            let est: Vec<Attributes> = probe.apply(&out)?.iter().map(|e| e.attributes()).collect();
            let per = per_attribute_agreement(&truth, &est)?;
            Ok(SweepRow {
                i,
                id_similarity: mean(&id_similarities(eval, images, &out)?),
                attribute_accuracy: attribute_agreement(&truth, &est)?,
                per_attribute: Attributes::NAMES.iter().map(|n| n.to_string()).zip(per).collect(),
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("i,id_similarity,attribute_accuracy\n");
    for r in rows {
        text.push_str(&format!("{},{:.6},{:.4}\n", r.i, r.id_similarity, r.attribute_accuracy));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Full report over the manifest's test split. `bank` supplies the k-same pool.
pub fn evaluate(model: &Model, manifest: &DatasetManifest, bank: &StyleBank, eval: &Verifier, probe: &FactorProbe, opts: &EvalOptions) -> Result<MetricReport> {
    let (labels, images) = load_test_set(manifest, opts.max_samples)?;
    if images.len() < 2 {
        return Err(Error::invalid("evaluation needs at least 2 test samples"));
    }
    let params = ksame_params(opts);
    let resolved = latentops::resolve(model, bank, &params)?;
    let sources = latentops::encode_sources(model, &images)?;
    let rec = model.reconstruct(&images)?;
    let anon: Vec<Image> = latentops::render(model, &sources, &resolved, 0)?.into_iter().map(|(img, _)| img).collect();

    let partner = partners(&labels);
    let l = model.num_layers();
    let mix_sched: Vec<Vec<_>> = partner.iter().map(|&t| vec![sources[t].0.clone(); l]).collect();
    let items: Vec<_> = sources.iter().zip(&mix_sched).map(|((_, z), s)| (z, s.as_slice())).collect();
    let mixed = model.generate_batch(&items)?;

    let est_rec = probe.apply(&rec)?;
    let est_anon = probe.apply(&anon)?;
    let truth: Vec<Attributes> = labels.iter().map(|l| l.attributes).collect();
    let attrs = |e: &[FactorEstimate]| e.iter().map(|x| x.attributes()).collect::<Vec<_>>();

    let (fid_anon, fid_rec) = if opts.fid {
        let real = eval.features(&images)?;
        (Some(fid(&real, &eval.features(&anon)?)?), Some(fid(&real, &eval.features(&rec)?)?))
    } else {
        (None, None)
    };
    let per_layer_sweep = if opts.sweep { layer_sweep(model, bank, &labels, &images, &params, eval, probe)? } else { Vec::new() };

    let report = MetricReport {
        num_samples: images.len(),
        k: resolved.pool_sample_ids.len(),
        id_similarity_mean: mean(&id_similarities(eval, &images, &anon)?),
        id_similarity_reconstruction: mean(&id_similarities(eval, &images, &rec)?),
        mixing_id_similarity: mean(&id_similarities(eval, &images, &mixed)?),
        factor_errors: factor_errors(&labels, &est_anon)?,
        factor_errors_reconstruction: factor_errors(&labels, &est_rec)?,
        attribute_accuracy: attribute_agreement(&truth, &attrs(&est_anon))?,
        attribute_accuracy_reconstruction: attribute_agreement(&truth, &attrs(&est_rec))?,
        fid: fid_anon,
        fid_reconstruction: fid_rec,
        mse: mse_unit_range(&images, &rec)?,
        per_layer_sweep,
    };
    report.validate()?;
    Ok(report)
}
