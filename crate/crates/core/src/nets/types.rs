use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB image in `[-1, 1]`, channel-major (`3 × size × size`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    size: usize,
    values: Vec<f32>,
}

impl Image {
    pub fn from_chw(size: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != 3 * size * size {
            return Err(Error::invalid(format!("expected {} values for a {size}x{size} image, got {}", 3 * size * size, values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("image value {v} outside [-1, 1]")));
        }
        Ok(Self { size, values })
    }

    /// Uniform colour, each channel in `[-1, 1]`.
    pub fn constant(size: usize, rgb: [f32; 3]) -> Result<Self> {
        let values = rgb.iter().flat_map(|&c| std::iter::repeat_n(c, size * size)).collect();
        Self::from_chw(size, values)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

macro_rules! real_vector {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(concat!(stringify!($name), " has non-finite entries")));
                }
                Ok(Self(values))
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

real_vector!(
    /// Non-spatial identity code `z_id`.
    IdCode
);
real_vector!(
    /// Mapped identity style `w`.
    StyleVector
);
real_vector!(
    /// Unit-norm verifier output.
    IdentityEmbedding
);

/// The `C × 4 × 4` non-identity code `z_non`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialCode {
    pub channels: usize,
    pub values: Vec<f32>,
}

impl SpatialCode {
    pub fn new(channels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != channels * 16 {
            return Err(Error::invalid(format!("spatial code needs {} values, got {}", channels * 16, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spatial code has non-finite entries"));
        }
        Ok(Self { channels, values })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, 4, 4]
    }
}
