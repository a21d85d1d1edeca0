use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ficgan_core::evalsuite::{self, EvalOptions, FactorProbe, ProbeTrainConfig};
use ficgan_core::imageio::RgbImage;
use ficgan_core::latentops::{self, AnonymizationParams, CodeSpace, Mode, StyleBank};
use ficgan_core::losses::ObjectiveOptions;
use ficgan_core::nets::{pretrain_verifier, ModelConfig, Verifier, VerifierConfig, VerifierTrainConfig};
use ficgan_core::synthfaces::{generate_dataset, DatasetManifest};
use ficgan_core::trainer::{self, Checkpoint, TrainConfig};
use ficgan_core::{Error, Result};

use crate::api::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "ficgan", version, about = "Synthetic-face de-identification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled synthetic face dataset.
    GenerateDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        identities: usize,
        #[arg(long, default_value_t = 40)]
        per_identity: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train an identity verifier (for training or for evaluation).
    PretrainVerifier {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        width: usize,
        #[arg(long, default_value_t = 3000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the pixel-to-factor regressor on fresh renders.
    FitProbe {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 8000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train encoder, mapping, generator and discriminator.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        verifier: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        iterations: u64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.002)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = ["32", "64"], default_value = "64")]
        image_size: String,
        /// Channel multiplier of encoder, generator and discriminator.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 5000)]
        checkpoint_every: u64,
        /// Drop the disassociation term from the objective.
        #[arg(long)]
        no_neg: bool,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// De-identify one image.
    Anonymize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset supplying the k-same pool and sample ids.
        #[arg(long)]
        dataset: PathBuf,
        /// PNG path or sample id.
        #[arg(long)]
        input: String,
        #[arg(long, default_value = "ksame")]
        mode: Mode,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        layer_index: usize,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long)]
        extrapolate: bool,
        #[arg(long)]
        attribute_query: Option<String>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "w")]
        space: CodeSpace,
        #[arg(long)]
        out: PathBuf,
        /// Write schedule provenance and pool ids here.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Metrics over the dataset's held-out split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Independent verifier used for identity similarity and FID features.
        #[arg(long)]
        eval_verifier: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        fid: bool,
        /// Sweep CSV path (defaults next to the report).
        #[arg(long)]
        sweep_csv: Option<PathBuf>,
        #[arg(long)]
        max_samples: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: String,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn load_input(manifest: &DatasetManifest, input: &str) -> Result<RgbImage> {
    let path = Path::new(input);
    if path.is_file() {
        return RgbImage::load(path);
    }
    let s = manifest.find(input).ok_or_else(|| Error::invalid(format!("{input:?} is neither a file nor a sample id")))?;
    manifest.load_image(s)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateDataset { out, identities, per_identity, image_size, seed } => {
            let m = generate_dataset(identities, per_identity, image_size, seed, &out)?;
            println!("wrote {} samples of {} identities to {}", m.len(), m.num_identities, out.display());
        }
        Command::PretrainVerifier { dataset, out, width, iterations, seed } => {
            let manifest = DatasetManifest::load(&dataset)?;
            let vc = VerifierConfig { image_size: manifest.image_size, width, ..VerifierConfig::default() };
            let (v, report) = pretrain_verifier(&manifest, &vc, &VerifierTrainConfig { iterations, seed, ..VerifierTrainConfig::default() })?;
            v.save(&out, Some(&report))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::FitProbe { out, image_size, iterations, seed } => {
            let probe = FactorProbe::fit(&ProbeTrainConfig { image_size, iterations, seed, ..ProbeTrainConfig::default() })?;
            probe.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&probe.report)?);
        }
        Command::Train { dataset, out, verifier, iterations, batch_size, lr, seed, image_size, width, checkpoint_every, no_neg, resume } => {
            let manifest = DatasetManifest::load(&dataset)?;
            let image_size: usize = image_size.parse().expect("restricted by clap");
            let mut model = ModelConfig { image_size, ..ModelConfig::default() };
            if let Some(w) = width {
                model.width = w;
            }
            let config = TrainConfig {
                model,
                learning_rate: lr,
                batch_size,
                iterations,
                seed,
                checkpoint_every,
                objective: ObjectiveOptions { use_neg: !no_neg, ..ObjectiveOptions::default() },
                ..TrainConfig::default()
            };
            let ck = match resume {
                Some(path) => {
                    let data = trainer::TrainingData::from_manifest(&manifest)?;
                    let mut t = trainer::Trainer::resume(config, Checkpoint::load(&path)?)?;
                    trainer::run(&mut t, &data, &out)?
                }
                None => {
                    let (v, _) = Verifier::load(&verifier)?;
                    trainer::train(config, &manifest, Some(v), &out)?
                }
            };
            println!("finished at iteration {}; final checkpoint in {}", ck.iteration, out.join(trainer::FINAL_CHECKPOINT).display());
        }
        Command::Anonymize { checkpoint, dataset, input, mode, k, layer_index, alpha, extrapolate, attribute_query, target, seed, space, out, audit } => {
            let model = Checkpoint::load(&checkpoint)?.model;
            let manifest = DatasetManifest::load(&dataset)?;
            let x = load_input(&manifest, &input)?.to_model();
            let bank = StyleBank::build(&model, &manifest)?;
            let params = AnonymizationParams { mode, k, layer_index, alpha, extrapolate, attribute_query, target_sample: target, seed, space, pool: None };
            let result = latentops::anonymize(&model, &bank, &x, &params)?;
            RgbImage::from_model(&result.image).save(&out)?;
            if let Some(path) = audit {
                write_json(&path, &result.audit)?;
            }
        }
        Command::Evaluate { checkpoint, dataset, eval_verifier, probe, out, sweep, fid, sweep_csv, max_samples, k, seed } => {
            let model = Checkpoint::load(&checkpoint)?.model;
            let manifest = DatasetManifest::load(&dataset)?;
            let (eval, _) = Verifier::load(&eval_verifier)?;
            let probe = FactorProbe::load(&probe)?;
            let train: Vec<_> = manifest.train_samples();
            let bank = if train.is_empty() { StyleBank::build(&model, &manifest)? } else { StyleBank::from_samples(&model, &manifest, &train)? };
            let opts = EvalOptions { max_samples, k, seed, sweep, fid, ..EvalOptions::default() };
            let report = evalsuite::evaluate(&model, &manifest, &bank, &eval, &probe, &opts)?;
            write_json(&out, &report)?;
            if sweep {
                let csv = sweep_csv.unwrap_or_else(|| out.with_extension("sweep.csv"));
                evalsuite::write_sweep_csv(&report.per_layer_sweep, &csv)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Serve { checkpoint, dataset, bind } => {
            let state = AppState::load(&checkpoint, &dataset)?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(api::serve(state, &bind)).map_err(|e| Error::io(bind.as_str(), e))?;
        }
    }
    Ok(())
}
