use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Identity-bearing shape and colour parameters, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityFactors {
    pub face_width: f64,
    pub eye_spacing: f64,
    pub eye_size: f64,
    pub nose_length: f64,
    pub mouth_width: f64,
    pub skin_tone: f64,
}

impl IdentityFactors {
    pub const NAMES: [&'static str; 6] = ["face_width", "eye_spacing", "eye_size", "nose_length", "mouth_width", "skin_tone"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.face_width, self.eye_spacing, self.eye_size, self.nose_length, self.mouth_width, self.skin_tone]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { face_width: a[0], eye_spacing: a[1], eye_size: a[2], nose_length: a[3], mouth_width: a[4], skin_tone: a[5] }
    }
}

/// Pose, lighting, background and expression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonIdFactors {
    /// Degrees in `[-30, 30]`.
    pub yaw: f64,
    /// Degrees in `[0, 360)`.
    pub illumination_angle: f64,
    /// Hue in `[0, 1)`.
    pub background_hue: f64,
    /// `[0, 1]`; 0 is a frown, 1 a broad smile.
    pub smile: f64,
}

impl NonIdFactors {
    pub const NAMES: [&'static str; 4] = ["yaw", "illumination_angle", "background_hue", "smile"];

    /// Fixed-expression, frontal, top-lit factors.
    pub fn neutral() -> Self {
        Self { yaw: 0.0, illumination_angle: 90.0, background_hue: 0.55, smile: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attributes {
    pub glasses: bool,
    pub smiling: bool,
    pub pale_skin: bool,
    pub male_proxy: bool,
}

impl Attributes {
    pub const NAMES: [&'static str; 4] = ["glasses", "smiling", "pale_skin", "male_proxy"];
    pub const GLASSES_EYE_SIZE: f64 = 0.7;
    pub const SMILE: f64 = 0.5;
    pub const PALE_SKIN_TONE: f64 = 0.7;
    pub const MALE_FACE_WIDTH: f64 = 0.5;

    pub fn derive(id: &IdentityFactors, non: &NonIdFactors) -> Self {
        Self {
            glasses: id.eye_size > Self::GLASSES_EYE_SIZE,
            smiling: non.smile > Self::SMILE,
            pale_skin: id.skin_tone > Self::PALE_SKIN_TONE,
            male_proxy: id.face_width > Self::MALE_FACE_WIDTH,
        }
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        match name {
            "glasses" => Some(self.glasses),
            "smiling" => Some(self.smiling),
            "pale_skin" => Some(self.pale_skin),
            "male_proxy" => Some(self.male_proxy),
            _ => None,
        }
    }

    pub fn to_array(&self) -> [bool; 4] {
        [self.glasses, self.smiling, self.pale_skin, self.male_proxy]
    }
}

/// Ground truth for one synthetic face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorLabel {
    pub identity_id: u32,
    pub identity_factors: IdentityFactors,
    pub nonid_factors: NonIdFactors,
    pub attributes: Attributes,
}

impl FactorLabel {
    pub fn new(identity_id: u32, identity_factors: IdentityFactors, nonid_factors: NonIdFactors) -> Self {
        let attributes = Attributes::derive(&identity_factors, &nonid_factors);
        Self { identity_id, identity_factors, nonid_factors, attributes }
    }

    /// Range checks for every factor.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in IdentityFactors::NAMES.iter().zip(self.identity_factors.to_array()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let n = &self.nonid_factors;
        if !(-30.0..=30.0).contains(&n.yaw) {
            return Err(Error::invalid(format!("yaw = {} outside [-30, 30]", n.yaw)));
        }
        if !(0.0..360.0).contains(&n.illumination_angle) {
            return Err(Error::invalid(format!("illumination_angle = {} outside [0, 360)", n.illumination_angle)));
        }
        if !(0.0..1.0).contains(&n.background_hue) {
            return Err(Error::invalid(format!("background_hue = {} outside [0, 1)", n.background_hue)));
        }
        if !(0.0..=1.0).contains(&n.smile) {
            return Err(Error::invalid(format!("smile = {} outside [0, 1]", n.smile)));
        }
        Ok(())
    }
}

/// Identity factors of a subject: a pure function of `(identity_id, seed)`.
pub fn identity_factors(identity_id: u32, seed: u64) -> IdentityFactors {
    let mut rng = rng_for("synthfaces.identity", &[seed, identity_id as u64]);
    let mut a = [0.0; 6];
    for v in a.iter_mut() {
        *v = rng.random_range(0.0..=1.0);
    }
    IdentityFactors::from_array(a)
}

/// Non-identity factors for one draw of a subject.
pub fn nonid_factors(identity_id: u32, seed: u64, draw: u64) -> NonIdFactors {
    let mut rng = rng_for("synthfaces.nonid", &[seed, identity_id as u64, draw]);
    NonIdFactors {
        yaw: rng.random_range(-30.0..=30.0),
        illumination_angle: rng.random_range(0.0..360.0),
        background_hue: rng.random_range(0.0..1.0),
        smile: rng.random_range(0.0..=1.0),
    }
}

/// Ground-truth label for draw `draw` of subject `identity_id`.
pub fn sample_factors(identity_id: i64, seed: u64, draw: u64) -> Result<FactorLabel> {
    let id = u32::try_from(identity_id).map_err(|_| Error::invalid(format!("identity_id must be a non-negative 32-bit index, got {identity_id}")))?;
    Ok(FactorLabel::new(id, identity_factors(id, seed), nonid_factors(id, seed, draw)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_arguments_same_label() {
        assert_eq!(sample_factors(7, 42, 0).unwrap(), sample_factors(7, 42, 0).unwrap());
    }

    #[test]
    fn draw_counter_changes_only_nonid_factors() {
        let a = sample_factors(7, 42, 0).unwrap();
        let b = sample_factors(7, 42, 1).unwrap();
        assert_eq!(a.identity_factors, b.identity_factors);
        assert_ne!(a.nonid_factors, b.nonid_factors);
    }

    #[test]
    fn hundred_subjects_have_distinct_identity_tuples() {
        let tuples: Vec<[u64; 6]> = (0..100).map(|i| identity_factors(i, 1).to_array().map(f64::to_bits)).collect();
        for i in 0..tuples.len() {
            for j in i + 1..tuples.len() {
                assert_ne!(tuples[i], tuples[j], "subjects {i} and {j} collide");
            }
        }
    }

    #[test]
    fn negative_identity_is_rejected() {
        assert!(matches!(sample_factors(-1, 0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sampled_labels_are_in_range_and_attributes_rederive() {
        for id in 0..50 {
            for draw in 0..5 {
                let l = sample_factors(id, 9, draw).unwrap();
                l.validate().unwrap();
                assert_eq!(l.attributes, Attributes::derive(&l.identity_factors, &l.nonid_factors));
            }
        }
    }

    #[test]
    fn out_of_range_factor_fails_validation() {
        let mut l = sample_factors(0, 0, 0).unwrap();
        l.nonid_factors.yaw = 31.0;
        assert!(l.validate().is_err());
        let mut l = sample_factors(0, 0, 0).unwrap();
        l.nonid_factors.background_hue = 1.0;
        assert!(l.validate().is_err());
    }
}
