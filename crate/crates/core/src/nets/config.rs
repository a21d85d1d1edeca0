use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of the encoder, mapping network, generator and discriminator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub d_id: usize,
    /// Channels of the 4×4 spatial code.
    pub spatial_channels: usize,
    pub d_w: usize,
    /// Number of style-modulated generator layers (L).
    pub num_layers: usize,
    pub d_emb: usize,
    /// Channel multiplier: a feature map at resolution `r` has
    /// `min(max_channels, width * image_size / r)` channels.
    pub width: usize,
    pub max_channels: usize,
    pub mapping_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            d_id: 64,
            spatial_channels: 64,
            d_w: 64,
            num_layers: 6,
            d_emb: 64,
            width: 4,
            max_channels: 64,
            mapping_layers: 3,
        }
    }
}

fn check_resolution(image_size: usize) -> Result<usize> {
    if image_size < 8 || !image_size.is_power_of_two() {
        return Err(Error::invalid(format!("image_size must be a power of two ≥ 8, got {image_size}")));
    }
    Ok(image_size.trailing_zeros() as usize - 1)
}

impl ModelConfig {
    /// Small configuration for gradient checks and fast tests.
    pub fn miniature() -> Self {
        Self {
            image_size: 16,
            d_id: 8,
            spatial_channels: 4,
            d_w: 8,
            num_layers: 4,
            d_emb: 8,
            width: 2,
            max_channels: 8,
            mapping_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let resolutions = check_resolution(self.image_size)?;
        let dims = [
            ("d_id", self.d_id),
            ("spatial_channels", self.spatial_channels),
            ("d_w", self.d_w),
            ("num_layers", self.num_layers),
            ("d_emb", self.d_emb),
            ("width", self.width),
            ("max_channels", self.max_channels),
            ("mapping_layers", self.mapping_layers),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be ≥ 1")));
        }
        if self.num_layers < resolutions {
            return Err(Error::invalid(format!(
                "num_layers = {} cannot reach {}×{} from 4×4; need at least {resolutions}",
                self.num_layers, self.image_size, self.image_size
            )));
        }
        Ok(())
    }

    pub fn channels(&self, res: usize) -> usize {
        (self.width * self.image_size / res).clamp(1, self.max_channels)
    }

    /// Output resolution of each generator layer: surplus layers stay at
    /// 4×4, then one layer per doubling up to `image_size`.
    pub fn layer_resolutions(&self) -> Vec<usize> {
        let doublings = self.image_size.trailing_zeros() as usize - 2;
        let extra = self.num_layers - doublings;
        (0..self.num_layers).map(|l| if l < extra { 4 } else { 4 << (l + 1 - extra) }).collect()
    }

    pub fn spatial_shape(&self) -> [usize; 3] {
        [self.spatial_channels, 4, 4]
    }
}

/// Verification network dimensions. Training and evaluation verifiers
/// differ in width and seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub image_size: usize,
    pub width: usize,
    pub max_channels: usize,
    /// Penultimate feature size (used as FID features).
    pub feature_dim: usize,
    pub d_emb: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self { image_size: 64, width: 4, max_channels: 64, feature_dim: 128, d_emb: 64 }
    }
}

impl VerifierConfig {
    pub fn for_model(model: &ModelConfig, width: usize) -> Self {
        Self { image_size: model.image_size, width, max_channels: model.max_channels.max(width), feature_dim: 128, d_emb: model.d_emb }
    }

    pub fn validate(&self) -> Result<()> {
        check_resolution(self.image_size)?;
        if self.width == 0 || self.max_channels == 0 || self.feature_dim == 0 || self.d_emb == 0 {
            return Err(Error::invalid("verifier dimensions must be ≥ 1"));
        }
        Ok(())
    }

    pub fn channels(&self, res: usize) -> usize {
        (self.width * self.image_size / res).clamp(1, self.max_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layers_reach_image_size() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layer_resolutions(), vec![4, 4, 8, 16, 32, 64]);
        assert_eq!(ModelConfig::miniature().layer_resolutions(), vec![4, 4, 8, 16]);
    }

    #[test]
    fn too_few_layers_is_rejected() {
        let c = ModelConfig { num_layers: 4, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { image_size: 48, ..ModelConfig::default() };
        assert!(c.validate().is_err());
    }
}
