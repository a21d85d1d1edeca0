//! Rasterizer for the abstract face. Coordinates are normalized to `[-1, 1]`
//! on both axes with `v` pointing down.

use super::factors::FactorLabel;
use crate::error::{Error, Result};
use crate::imageio::RgbImage;

pub const SUPPORTED_SIZES: [usize; 2] = [32, 64];
const SUPERSAMPLE: usize = 4;

const SCLERA: [f64; 3] = [0.95, 0.95, 0.93];
const IRIS: [f64; 3] = [0.12, 0.10, 0.10];
const LIPS: [f64; 3] = [0.62, 0.16, 0.20];
const FRAME: [f64; 3] = [0.10, 0.10, 0.14];
const DARK_SKIN: [f64; 3] = [0.40, 0.26, 0.18];
const PALE_SKIN: [f64; 3] = [0.98, 0.86, 0.76];

/// Face geometry, affine in the factors.
#[derive(Clone, Debug)]
struct Geometry {
    head_cx: f64,
    head_cy: f64,
    head_ax: f64,
    head_ay: f64,
    feat_x: f64,
    eye_y: f64,
    eye_dx: f64,
    eye_rx: f64,
    eye_ry: f64,
    nose_top: f64,
    nose_len: f64,
    mouth_y: f64,
    mouth_hw: f64,
    mouth_curv: f64,
    mouth_th: f64,
    glasses: bool,
    skin: [f64; 3],
    background: [f64; 3],
    light: (f64, f64),
}

impl Geometry {
    fn new(label: &FactorLabel) -> Self {
        let id = &label.identity_factors;
        let non = &label.nonid_factors;
        let yaw_n = non.yaw / 30.0;
        let eye_rx = 0.065 + 0.055 * id.eye_size;
        let nose_top = -0.08;
        let nose_len = 0.12 + 0.16 * id.nose_length;
        let theta = non.illumination_angle.to_radians();
        Self {
            head_cx: 0.08 * yaw_n,
            head_cy: 0.05,
            head_ax: 0.48 + 0.22 * id.face_width,
            head_ay: 0.74,
            feat_x: 0.28 * yaw_n,
            eye_y: -0.15,
            eye_dx: 0.17 + 0.12 * id.eye_spacing,
            eye_rx,
            eye_ry: 0.6 * eye_rx,
            nose_top,
            nose_len,
            mouth_y: nose_top + nose_len + 0.10,
            mouth_hw: 0.12 + 0.14 * id.mouth_width,
            mouth_curv: 0.1 * (2.0 * non.smile - 1.0),
            mouth_th: 0.035,
            glasses: label.attributes.glasses,
            skin: lerp3(DARK_SKIN, PALE_SKIN, id.skin_tone),
            background: hsv_to_rgb(non.background_hue, 0.55, 0.78),
            light: (theta.cos(), theta.sin()),
        }
    }

    fn color_at(&self, u: f64, v: f64) -> [f64; 3] {
        let hu = (u - self.head_cx) / self.head_ax;
        let hv = (v - self.head_cy) / self.head_ay;
        if hu * hu + hv * hv > 1.0 {
            return self.background;
        }
        let mut col = self.skin;

        let t = (v - self.nose_top) / self.nose_len;
        if (0.0..=1.0).contains(&t) && (u - self.feat_x).abs() <= 0.012 + 0.035 * t {
            col = scale3(self.skin, 0.72);
        }

        for side in [-1.0, 1.0] {
            let ex = self.feat_x + side * self.eye_dx;
            let (du, dv) = (u - ex, v - self.eye_y);
            if (du / self.eye_rx).powi(2) + (dv / self.eye_ry).powi(2) <= 1.0 {
                col = if du * du + dv * dv <= (0.55 * self.eye_ry).powi(2) { IRIS } else { SCLERA };
            }
            if self.glasses {
                let ring = self.eye_rx + 0.05;
                let d = (du * du + dv * dv).sqrt();
                if (d - ring).abs() <= 0.02 {
                    col = FRAME;
                }
            }
        }
        if self.glasses {
            let ring = self.eye_rx + 0.05;
            if (v - self.eye_y).abs() <= 0.015 && (u - self.feat_x).abs() <= self.eye_dx - ring {
                col = FRAME;
            }
        }

        let du = u - self.feat_x;
        if du.abs() <= self.mouth_hw {
            let curve = self.mouth_y - self.mouth_curv * (du / self.mouth_hw).powi(2);
            if (v - curve).abs() <= self.mouth_th {
                col = LIPS;
            }
        }

        let shade = (0.82 + 0.22 * (hu * self.light.0 + hv * self.light.1)).clamp(0.5, 1.1);
        scale3(col, shade)
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn check_size(size: usize) -> Result<()> {
    if SUPPORTED_SIZES.contains(&size) {
        Ok(())
    } else {
        Err(Error::invalid(format!("image size must be one of {SUPPORTED_SIZES:?}, got {size}")))
    }
}

/// Render `label` as a `size × size` RGB image with 4×4 supersampling.
pub fn render_face(label: &FactorLabel, size: usize) -> Result<RgbImage> {
    check_size(size)?;
    label.validate()?;
    let g = Geometry::new(label);
    let mut data = Vec::with_capacity(size * size * 3);
    let step = 2.0 / (size * SUPERSAMPLE) as f64;
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                let v = -1.0 + ((y * SUPERSAMPLE + sy) as f64 + 0.5) * step;
                for sx in 0..SUPERSAMPLE {
                    let u = -1.0 + ((x * SUPERSAMPLE + sx) as f64 + 0.5) * step;
                    let c = g.color_at(u, v);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
            for a in acc {
                data.push(((a / n).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    RgbImage::new(size, data)
}

/// Inclusive pixel box `(x0, y0, x1, y1)` that contains the mouth for any
/// smile value, other factors as in `label`.
pub fn mouth_region(label: &FactorLabel, size: usize) -> Result<(usize, usize, usize, usize)> {
    check_size(size)?;
    let g = Geometry::new(label);
    let reach = 0.1 + g.mouth_th;
    let to_px = |c: f64| (((c + 1.0) / 2.0 * size as f64).floor().max(0.0) as usize).min(size - 1);
    Ok((
        to_px(g.feat_x - g.mouth_hw),
        to_px(g.mouth_y - reach),
        to_px(g.feat_x + g.mouth_hw),
        to_px(g.mouth_y + reach),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthfaces::factors::{sample_factors, IdentityFactors, NonIdFactors};

    fn label(smile: f64, yaw: f64, illum: f64) -> FactorLabel {
        let id = IdentityFactors::from_array([0.4, 0.5, 0.8, 0.6, 0.5, 0.3]);
        FactorLabel::new(3, id, NonIdFactors { yaw, illumination_angle: illum, background_hue: 0.3, smile })
    }

    #[test]
    fn smile_only_changes_the_mouth_region() {
        for size in SUPPORTED_SIZES {
            for yaw in [-30.0, 0.0, 17.0] {
                let a = render_face(&label(0.0, yaw, 40.0), size).unwrap();
                let b = render_face(&label(1.0, yaw, 40.0), size).unwrap();
                let (x0, y0, x1, y1) = mouth_region(&label(0.5, yaw, 40.0), size).unwrap();
                let mut changed = 0;
                for y in 0..size {
                    for x in 0..size {
                        if a.pixel(x, y) != b.pixel(x, y) {
                            changed += 1;
                            assert!((x0..=x1).contains(&x) && (y0..=y1).contains(&y), "pixel ({x},{y}) outside mouth box");
                        }
                    }
                }
                assert!(changed > 0);
            }
        }
    }

    #[test]
    fn frontal_face_is_mirror_symmetric() {
        // light from directly below the head keeps the shading symmetric
        let img = render_face(&label(0.7, 0.0, 90.0), 64).unwrap();
        for y in 0..64 {
            for x in 0..32 {
                let (l, r) = (img.pixel(x, y), img.pixel(63 - x, y));
                for c in 0..3 {
                    assert!((l[c] as i32 - r[c] as i32).abs() <= 1, "({x},{y}) {l:?} vs {r:?}");
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let l = sample_factors(11, 5, 2).unwrap();
        assert_eq!(render_face(&l, 32).unwrap(), render_face(&l, 32).unwrap());
    }

    #[test]
    fn yaw_moves_features() {
        let a = render_face(&label(0.5, -20.0, 90.0), 64).unwrap();
        let b = render_face(&label(0.5, 20.0, 90.0), 64).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn bad_size_and_bad_factors_are_rejected() {
        let l = sample_factors(0, 0, 0).unwrap();
        assert!(matches!(render_face(&l, 48), Err(Error::InvalidArgument(_))));
        let mut bad = l.clone();
        bad.identity_factors.eye_size = 1.5;
        assert!(matches!(render_face(&bad, 32), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn background_uses_hue() {
        let l = label(0.5, 0.0, 90.0);
        let img = render_face(&l, 32).unwrap();
        let want = hsv_to_rgb(0.3, 0.55, 0.78).map(|c| (c * 255.0).round() as u8);
        assert_eq!(img.pixel(0, 0), want);
    }
}
