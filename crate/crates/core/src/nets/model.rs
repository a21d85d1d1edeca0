use ficgan_autograd::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::path::Path;

use super::arch;
use super::persist;
use super::pretrain::VerifierReport;
use super::config::{ModelConfig, VerifierConfig};
use super::types::{IdCode, IdentityEmbedding, Image, SpatialCode, StyleVector};
use crate::error::{Error, Result};

/// Inference chunk size; bounds tape memory for large batches.
const CHUNK: usize = 32;

pub fn images_to_tensor(images: &[&Image], size: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(images.len() * 3 * size * size);
    for img in images {
        if img.size() != size {
            return Err(Error::invalid(format!("expected a {size}x{size} image, got {0}x{0}", img.size())));
        }
        data.extend_from_slice(img.values());
    }
    Ok(Tensor::new(vec![images.len(), 3, size, size], data))
}

pub fn tensor_to_images(t: &Tensor<f32>) -> Vec<Image> {
    let s = t.shape();
    let per = 3 * s[2] * s[3];
    t.data()
        .chunks(per)
        .map(|c| Image::from_chw(s[2], c.to_vec()).expect("generator output is tanh-bounded"))
        .collect()
}

/// Frozen identity embedder (training V or the independent evaluator).
#[derive(Clone, Debug, PartialEq)]
pub struct Verifier {
    pub config: VerifierConfig,
    pub params: ParamStore<f32>,
}

impl Verifier {
    pub fn init(config: VerifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch::init_params(&arch::verifier_specs(&config), &mut rng);
        Ok(Self { config, params })
    }

    fn run(&self, images: &[Image]) -> Result<(Vec<Vec<f64>>, Vec<IdentityEmbedding>)> {
        let mut feats = Vec::with_capacity(images.len());
        let mut embs = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let x = images_to_tensor(&refs, self.config.image_size)?;
            let mut t = Tape::new();
            let p = self.params.bind(&mut t, false);
            let xv = t.constant(x);
            let (f, e) = arch::verifier(&self.config, &mut t, &p, xv);
            feats.extend(t.value(f).data().chunks(self.config.feature_dim).map(|r| r.iter().map(|&v| v as f64).collect()));
            for r in t.value(e).data().chunks(self.config.d_emb) {
                embs.push(IdentityEmbedding::new(r.iter().map(|&v| v as f64).collect())?);
            }
        }
        Ok((feats, embs))
    }

    pub fn embed(&self, images: &[Image]) -> Result<Vec<IdentityEmbedding>> {
        Ok(self.run(images)?.1)
    }

    /// Penultimate-layer features, the default FID feature extractor.
    pub fn features(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        Ok(self.run(images)?.0)
    }

    /// SHA-256 over every parameter name and value.
    pub fn checksum(&self) -> String {
        params_checksum(&self.params)
    }

    pub fn save(&self, path: &Path, report: Option<&VerifierReport>) -> Result<()> {
        persist::save_net(path, "verifier", &self.config, report, &self.params)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<VerifierReport>)> {
        let (config, report, arrays): (VerifierConfig, _, _) = persist::load_net(path, "verifier")?;
        config.validate()?;
        let params = persist::map_to_store(arrays, &arch::verifier_specs(&config), &path.display().to_string())?;
        Ok((Self { config, params }, report))
    }
}

pub fn params_checksum(params: &ParamStore<f32>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Encoder, mapping network, generator and discriminator, plus the frozen
/// training verifier once one has been attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub verifier: Option<Verifier>,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut specs = arch::encoder_specs(&config);
        specs.extend(arch::mapping_specs(&config));
        specs.extend(arch::generator_specs(&config));
        specs.extend(arch::discriminator_specs(&config));
        let params = arch::init_params(&specs, &mut rng);
        Ok(Self { config, params, verifier: None })
    }

    pub fn with_verifier(mut self, v: Verifier) -> Result<Self> {
        if v.config.image_size != self.config.image_size || v.config.d_emb != self.config.d_emb {
            return Err(Error::ConfigMismatch {
                expected: format!("verifier for image_size {} and d_emb {}", self.config.image_size, self.config.d_emb),
                found: format!("image_size {} and d_emb {}", v.config.image_size, v.config.d_emb),
            });
        }
        self.verifier = Some(v);
        Ok(self)
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn verifier(&self) -> Result<&Verifier> {
        self.verifier.as_ref().ok_or_else(|| Error::State("verification network is not initialised".into()))
    }

    pub fn encode(&self, images: &[Image]) -> Result<Vec<(IdCode, SpatialCode)>> {
        let c = &self.config;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let x = images_to_tensor(&refs, c.image_size)?;
            let mut t = Tape::new();
            let p = self.params.bind_where(&mut t, |n| n.starts_with("enc.").then_some(false));
            let xv = t.constant(x);
            let (z_id, z_non) = arch::encoder(c, &mut t, &p, xv);
            let ids = t.value(z_id).data().chunks(c.d_id);
            let nons = t.value(z_non).data().chunks(c.spatial_channels * 16);
            for (a, b) in ids.zip(nons) {
                out.push((IdCode::new(a.iter().map(|&v| v as f64).collect())?, SpatialCode::new(c.spatial_channels, b.to_vec())?));
            }
        }
        Ok(out)
    }

    pub fn map_identity(&self, codes: &[IdCode]) -> Result<Vec<StyleVector>> {
        let c = &self.config;
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(z) = codes.iter().find(|z| z.len() != c.d_id) {
            return Err(Error::invalid(format!("IdCode length {} does not match d_id {}", z.len(), c.d_id)));
        }
        let data: Vec<f32> = codes.iter().flat_map(|z| z.0.iter().map(|&v| v as f32)).collect();
        let mut t = Tape::new();
        let p = self.params.bind_where(&mut t, |n| n.starts_with("map.").then_some(false));
        let zv = t.constant(Tensor::new(vec![codes.len(), c.d_id], data));
        let w = arch::mapping(c, &mut t, &p, zv);
        t.value(w).data().chunks(c.d_w).map(|r| StyleVector::new(r.iter().map(|&v| v as f64).collect())).collect()
    }

    fn check_schedule(&self, styles: &[StyleVector]) -> Result<()> {
        let c = &self.config;
        if styles.len() != c.num_layers {
            return Err(Error::invalid(format!("schedule has {} entries, generator has {} layers", styles.len(), c.num_layers)));
        }
        if let Some(w) = styles.iter().find(|w| w.len() != c.d_w) {
            return Err(Error::invalid(format!("style length {} does not match d_w {}", w.len(), c.d_w)));
        }
        Ok(())
    }

    /// One image per `(z_non, per-layer styles)` pair.
    pub fn generate_batch(&self, items: &[(&SpatialCode, &[StyleVector])]) -> Result<Vec<Image>> {
        let c = &self.config;
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(CHUNK) {
            let mut z = Vec::with_capacity(chunk.len() * c.spatial_channels * 16);
            for (code, styles) in chunk {
                if code.shape() != c.spatial_shape() {
                    return Err(Error::invalid(format!("spatial code shape {:?} does not match {:?}", code.shape(), c.spatial_shape())));
                }
                self.check_schedule(styles)?;
                z.extend_from_slice(&code.values);
            }
            let mut t = Tape::new();
            let p = self.params.bind_where(&mut t, |n| n.starts_with("gen.").then_some(false));
            let zv = t.constant(Tensor::new(vec![chunk.len(), c.spatial_channels, 4, 4], z));
            let styles: Vec<_> = (0..c.num_layers)
                .map(|l| {
                    let data = chunk.iter().flat_map(|(_, s)| s[l].0.iter().map(|&v| v as f32)).collect();
                    t.constant(Tensor::new(vec![chunk.len(), c.d_w], data))
                })
                .collect();
            let g = arch::generator(c, &mut t, &p, zv, &styles);
            out.extend(tensor_to_images(t.value(g.image)));
        }
        Ok(out)
    }

    pub fn generate(&self, z_non: &SpatialCode, styles: &[StyleVector]) -> Result<Image> {
        Ok(self.generate_batch(&[(z_non, styles)])?.remove(0))
    }

    /// Generator activations after each styled layer, for locality checks.
    pub fn generator_taps(&self, z_non: &SpatialCode, styles: &[StyleVector]) -> Result<Vec<Vec<f32>>> {
        let c = &self.config;
        self.check_schedule(styles)?;
        let mut t = Tape::new();
        let p = self.params.bind_where(&mut t, |n| n.starts_with("gen.").then_some(false));
        let zv = t.constant(Tensor::new(vec![1, c.spatial_channels, 4, 4], z_non.values.clone()));
        let sv: Vec<_> = styles.iter().map(|s| t.constant(Tensor::new(vec![1, c.d_w], s.0.iter().map(|&v| v as f32).collect()))).collect();
        let g = arch::generator(c, &mut t, &p, zv, &sv);
        Ok(g.taps.iter().map(|&v| t.value(v).data().to_vec()).collect())
    }

    /// `G(z_non, [w; L])` with `w` mapped from the image's own `z_id`.
    pub fn reconstruct(&self, images: &[Image]) -> Result<Vec<Image>> {
        let codes = self.encode(images)?;
        let ids: Vec<IdCode> = codes.iter().map(|(z, _)| z.clone()).collect();
        let ws = self.map_identity(&ids)?;
        let schedules: Vec<Vec<StyleVector>> = ws.iter().map(|w| vec![w.clone(); self.config.num_layers]).collect();
        let items: Vec<_> = codes.iter().zip(&schedules).map(|((_, z), s)| (z, s.as_slice())).collect();
        self.generate_batch(&items)
    }

    pub fn discriminate(&self, images: &[Image]) -> Result<Vec<f64>> {
        let c = &self.config;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let x = images_to_tensor(&refs, c.image_size)?;
            let mut t = Tape::new();
            let p = self.params.bind_where(&mut t, |n| n.starts_with("disc.").then_some(false));
            let xv = t.constant(x);
            let logits = arch::discriminator(c, &mut t, &p, xv);
            out.extend(t.value(logits).data().iter().map(|&v| v as f64));
        }
        Ok(out)
    }

    pub fn verify_embed(&self, images: &[Image]) -> Result<Vec<IdentityEmbedding>> {
        self.verifier()?.embed(images)
    }
}
