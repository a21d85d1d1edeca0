use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::StyleVector;

/// Where a schedule entry came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Source,
    Anonymized,
    Directed,
    Target,
}

/// One style vector per generator layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub styles: Vec<StyleVector>,
    pub provenance: Vec<Provenance>,
}

impl LayerSchedule {
    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }

    /// Layers (0-based) that receive the replacement style.
    pub fn replaced_layers(&self) -> Vec<usize> {
        self.provenance.iter().enumerate().filter(|(_, p)| **p != Provenance::Source).map(|(l, _)| l).collect()
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Coordinatewise mean of equal-length vectors. Each coordinate is summed in
/// sorted order, so the result does not depend on the order of `rows`.
pub fn centroid(rows: &[&[f64]]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or_else(|| Error::invalid("centroid of an empty list"))?;
    let d = first.len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::invalid(format!("ragged input: lengths {d} and {}", r.len())));
    }
    let n = rows.len() as f64;
    let mut column = Vec::with_capacity(rows.len());
    Ok((0..d)
        .map(|j| {
            column.clear();
            column.extend(rows.iter().map(|r| r[j]));
            column.sort_by(f64::total_cmp);
            compensated_sum(column.iter().copied()) / n
        })
        .collect())
}

/// The k-anonymized style `w_m`: mean of the pool's styles.
pub fn k_same_centroid(codes: &[StyleVector]) -> Result<StyleVector> {
    let rows: Vec<&[f64]> = codes.iter().map(|w| w.as_slice()).collect();
    StyleVector::new(centroid(&rows)?)
}

/// `w_d = w_m + α (w_t − w_m)`, evaluated as `(1 − α) w_m + α w_t` so both
/// endpoints are exact.
pub fn directed_code(w_m: &StyleVector, w_t: &StyleVector, alpha: f64) -> Result<StyleVector> {
    if w_m.len() != w_t.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", w_m.len(), w_t.len())));
    }
    if !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha = {alpha} is not finite")));
    }
    StyleVector::new(w_m.0.iter().zip(&w_t.0).map(|(&m, &t)| (1.0 - alpha) * m + alpha * t).collect())
}

/// Layers `0..i` get `w_s`, layers `i..L` get `w_anon` (tagged `tag`).
/// `i = L` reproduces the source everywhere.
pub fn schedule_with(w_s: &StyleVector, w_anon: &StyleVector, i: usize, num_layers: usize, tag: Provenance) -> Result<LayerSchedule> {
    if i > num_layers {
        return Err(Error::invalid(format!("layer index {i} outside [0, {num_layers}]")));
    }
    if w_s.len() != w_anon.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", w_s.len(), w_anon.len())));
    }
    let mut styles = Vec::with_capacity(num_layers);
    let mut provenance = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        if l < i {
            styles.push(w_s.clone());
            provenance.push(Provenance::Source);
        } else {
            styles.push(w_anon.clone());
            provenance.push(tag);
        }
    }
    Ok(LayerSchedule { styles, provenance })
}

pub fn build_degree_schedule(w_s: &StyleVector, w_anon: &StyleVector, i: usize, num_layers: usize) -> Result<LayerSchedule> {
    schedule_with(w_s, w_anon, i, num_layers, Provenance::Anonymized)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> StyleVector {
        StyleVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        assert_eq!(compensated_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
    }

    #[test]
    fn centroid_rejects_empty_and_ragged() {
        assert!(k_same_centroid(&[]).is_err());
        assert!(k_same_centroid(&[sv(&[1.0]), sv(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn singleton_and_antipodal() {
        let w = sv(&[0.1, -3.0, 7.25]);
        assert_eq!(k_same_centroid(&[w.clone()]).unwrap(), w);
        let neg = sv(&[-0.1, 3.0, -7.25]);
        assert_eq!(k_same_centroid(&[w, neg]).unwrap().0, vec![0.0; 3]);
    }

    #[test]
    fn schedule_rejects_out_of_range_index() {
        let w = sv(&[1.0]);
        assert!(build_degree_schedule(&w, &w, 7, 6).is_err());
    }

    #[test]
    fn directed_rejects_length_mismatch() {
        assert!(directed_code(&sv(&[1.0]), &sv(&[1.0, 2.0]), 0.5).is_err());
    }
}
