use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::losses::embedding_similarity;
use crate::nets::{Image, Verifier};
use crate::synthfaces::Attributes;

/// Eigenvalues below `-EIG_TOL · max(1, λ_max)` mean the matrix is not PSD.
pub const EIG_TOL: f64 = 1e-10;

/// Cosine similarity of evaluator embeddings, pairwise over two equal lists.
pub fn id_similarities(eval: &Verifier, a: &[Image], b: &[Image]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("need equal-length image lists, got {} and {}", a.len(), b.len())));
    }
    let (ea, eb) = (eval.embed(a)?, eval.embed(b)?);
    ea.iter().zip(&eb).map(|(x, y)| embedding_similarity(x, y)).collect()
}

pub fn id_similarity(eval: &Verifier, x_s: &Image, x_hat: &Image) -> Result<f64> {
    Ok(id_similarities(eval, std::slice::from_ref(x_s), std::slice::from_ref(x_hat))?[0])
}

/// Percentage of attribute booleans in `predicted` that agree with `truth`.
pub fn attribute_agreement(truth: &[Attributes], predicted: &[Attributes]) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::invalid(format!("need equal, non-empty attribute lists, got {} and {}", truth.len(), predicted.len())));
    }
    let mut agree = 0usize;
    for (t, p) in truth.iter().zip(predicted) {
        agree += t.to_array().iter().zip(p.to_array()).filter(|(a, b)| **a == *b).count();
    }
    Ok(100.0 * agree as f64 / (truth.len() * Attributes::NAMES.len()) as f64)
}

/// Per-attribute agreement percentages, in `Attributes::NAMES` order.
pub fn per_attribute_agreement(truth: &[Attributes], predicted: &[Attributes]) -> Result<Vec<f64>> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::invalid("need equal, non-empty attribute lists"));
    }
    Ok((0..Attributes::NAMES.len())
        .map(|j| 100.0 * truth.iter().zip(predicted).filter(|(t, p)| t.to_array()[j] == p.to_array()[j]).count() as f64 / truth.len() as f64)
        .collect())
}

/// Mean per-pixel squared error with pixels mapped from `[-1, 1]` to `[0, 1]`.
pub fn mse_unit_range(a: &[Image], b: &[Image]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("need equal, non-empty image lists, got {} and {}", a.len(), b.len())));
    }
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x.size() != y.size() {
            return Err(Error::invalid("image sizes differ"));
        }
        for (&p, &q) in x.values().iter().zip(y.values()) {
            let d = (p as f64 - q as f64) / 2.0;
            acc += d * d;
        }
        n += x.values().len();
    }
    Ok(acc / n as f64)
}

fn mean_and_cov(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid(format!("FID needs at least 2 samples per side, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("FID features must be non-empty and of equal length"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// Eigendecomposition with small negative eigenvalues clipped to 0.
fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let tol = EIG_TOL * max.max(1.0);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -tol {
            return Err(Error::Numerical(format!("{what} is not positive semi-definite: eigenvalue {v:e} below -{tol:e} (largest |λ| {max:e})")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m, what)?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussian fits of two feature sets.
///
/// The cross term uses `tr((√Σa Σb √Σa)^½)`, which equals `tr((Σa Σb)^½)`
/// and only needs symmetric square roots.
pub fn fid(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = mean_and_cov(features_a)?;
    let (mu_b, cov_b) = mean_and_cov(features_b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::invalid(format!("feature dimensions differ: {} vs {}", mu_a.len(), mu_b.len())));
    }
    let root_a = sqrt_psd(&cov_a, "covariance A")?;
    let inner = &root_a * &cov_b * &root_a;
    let cross: f64 = psd_eigen(&inner, "cross covariance")?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = mu_a - mu_b;
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::Numerical("FID is not finite".into()));
    }
    Ok(value.max(0.0))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("spearman needs two equal lists of length ≥ 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}
