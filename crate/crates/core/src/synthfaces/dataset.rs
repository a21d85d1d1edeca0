use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::factors::{sample_factors, FactorLabel};
use super::render::render_face;
use crate::error::{Error, Result};
use crate::imageio::RgbImage;
use crate::seeding::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_FILE: &str = "dataset.json";

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub image_path: String,
    #[serde(flatten)]
    pub label: FactorLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetInfo {
    num_identities: usize,
    samples_per_identity: usize,
    seed: u64,
    image_size: usize,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub samples: Vec<Sample>,
    pub num_identities: usize,
    pub seed: u64,
    pub image_size: usize,
    root: PathBuf,
}

impl DatasetManifest {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn find(&self, sample_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn image_path(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.image_path)
    }

    pub fn load_image(&self, sample: &Sample) -> Result<RgbImage> {
        let img = RgbImage::load(&self.image_path(sample))?;
        if img.size() != self.image_size {
            return Err(Error::format(&sample.image_path, format!("expected {0}x{0}, got {1}x{1}", self.image_size, img.size())));
        }
        Ok(img)
    }

    /// Held-out samples: a fixed tenth of the manifest, chosen by hashing ids.
    pub fn is_test(sample_id: &str) -> bool {
        let parts: Vec<u64> = sample_id.bytes().map(u64::from).collect();
        derive_seed("synthfaces.split", &parts) % 10 == 0
    }

    pub fn train_samples(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| !Self::is_test(&s.sample_id)).collect()
    }

    pub fn test_samples(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| Self::is_test(&s.sample_id)).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let info_path = dir.join(DATASET_FILE);
        let info: DatasetInfo = serde_json::from_slice(&fs::read(&info_path).map_err(|e| Error::io(&info_path, e))?)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample = serde_json::from_str(line).map_err(|e| Error::format(format!("{}:{}", manifest_path.display(), n + 1), e))?;
            s.label.validate()?;
            samples.push(s);
        }
        let m = Self { samples, num_identities: info.num_identities, seed: info.seed, image_size: info.image_size, root: dir.to_path_buf() };
        m.check_ids()?;
        Ok(m)
    }

    fn check_ids(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.samples.iter().map(|s| s.sample_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::format(MANIFEST_FILE, format!("duplicate sample_id {}", w[0])));
        }
        Ok(())
    }

    /// Confirm every image exists and decodes at the manifest resolution.
    pub fn verify_images(&self) -> Result<()> {
        for s in &self.samples {
            self.load_image(s)?;
        }
        Ok(())
    }
}

pub fn sample_id(identity_id: u32, draw: usize) -> String {
    format!("id{identity_id:04}_s{draw:03}")
}

/// Render `num_identities × samples_per_identity` faces into `out_dir`.
pub fn generate_dataset(num_identities: usize, samples_per_identity: usize, size: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if num_identities == 0 || samples_per_identity == 0 {
        return Err(Error::invalid("dataset needs at least one identity and one sample per identity"));
    }
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut samples = Vec::with_capacity(num_identities * samples_per_identity);
    let mut lines = String::new();
    for id in 0..num_identities {
        for draw in 0..samples_per_identity {
            let label = sample_factors(id as i64, seed, draw as u64)?;
            let sid = sample_id(label.identity_id, draw);
            let rel = format!("images/{sid}.png");
            render_face(&label, size)?.save(&out_dir.join(&rel))?;
            let s = Sample { sample_id: sid, image_path: rel, label };
            lines.push_str(&serde_json::to_string(&s)?);
            lines.push('\n');
            samples.push(s);
        }
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    f.write_all(lines.as_bytes()).map_err(|e| Error::io(&manifest_path, e))?;
    let info = DatasetInfo { num_identities, samples_per_identity, seed, image_size: size };
    let info_path = out_dir.join(DATASET_FILE);
    fs::write(&info_path, serde_json::to_vec_pretty(&info)?).map_err(|e| Error::io(&info_path, e))?;
    Ok(DatasetManifest { samples, num_identities, seed, image_size: size, root: out_dir.to_path_buf() })
}
