//! Identity contrastive, reconstruction and adversarial objectives, both as
//! plain functions of values and as differentiable tape graphs.

use ficgan_autograd::{Bound, Dual, ParamStore, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{arch, IdentityEmbedding, Image, ModelConfig, Verifier, VerifierConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_contrastive: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_rec: 1.0, lambda_contrastive: 0.01, lambda_adv: 0.05 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_rec", self.lambda_rec), ("lambda_contrastive", self.lambda_contrastive), ("lambda_adv", self.lambda_adv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar values of every loss term for one iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub pos: f64,
    pub neg: f64,
    pub adv_rec: f64,
    pub adv_mix: f64,
    pub total: f64,
    /// Discriminator logistic loss, excluding the gradient penalty.
    pub disc: f64,
    /// R1 penalty value, when it was evaluated this iteration.
    pub r1: Option<f64>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.rec, self.pos, self.neg, self.adv_rec, self.adv_mix, self.total, self.disc, self.r1.unwrap_or(0.0)].iter().all(|v| v.is_finite())
    }
}

pub fn total_loss(r: &LossReport, w: &LossWeights) -> f64 {
    w.lambda_rec * r.rec + w.lambda_contrastive * (r.pos + r.neg) + w.lambda_adv * (r.adv_rec + r.adv_mix)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("vector lengths differ: {} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn embedding_similarity(a: &IdentityEmbedding, b: &IdentityEmbedding) -> Result<f64> {
    cosine_similarity(a.as_slice(), b.as_slice())
}

fn mean_pairwise_similarity(v: &Verifier, a: &[Image], b: &[Image]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("need equal, non-empty batches, got {} and {}", a.len(), b.len())));
    }
    let (ea, eb) = (v.embed(a)?, v.embed(b)?);
    let mut acc = 0.0;
    for (x, y) in ea.iter().zip(&eb) {
        acc += embedding_similarity(x, y)?;
    }
    Ok(acc / a.len() as f64)
}

/// Mean `⟨V(x_s), V(x_mix)⟩`.
pub fn loss_neg(v: &Verifier, x_s: &[Image], x_mix: &[Image]) -> Result<f64> {
    mean_pairwise_similarity(v, x_s, x_mix)
}

/// Mean `1 − ⟨V(x_t), V(x_mix)⟩`.
pub fn loss_pos(v: &Verifier, x_t: &[Image], x_mix: &[Image]) -> Result<f64> {
    Ok(1.0 - mean_pairwise_similarity(v, x_t, x_mix)?)
}

/// Per-pixel squared error averaged over every value in the batch.
pub fn loss_rec(x_s: &[Image], x_rec: &[Image]) -> Result<f64> {
    if x_s.len() != x_rec.len() || x_s.is_empty() {
        return Err(Error::invalid(format!("need equal, non-empty batches, got {} and {}", x_s.len(), x_rec.len())));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (a, b) in x_s.iter().zip(x_rec) {
        if a.size() != b.size() {
            return Err(Error::invalid("image sizes differ"));
        }
        for (p, q) in a.values().iter().zip(b.values()) {
            let d = *p as f64 - *q as f64;
            acc += d * d;
        }
        n += a.values().len();
    }
    Ok(acc / n as f64)
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn mean(v: impl Iterator<Item = f64>) -> Result<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        return Err(Error::invalid("empty logit batch"));
    }
    Ok(s / n as f64)
}

/// Non-saturating generator terms `mean −log σ(l)` for both branches.
pub fn loss_adv_generator(logits_rec: &[f64], logits_mix: &[f64]) -> Result<(f64, f64)> {
    Ok((mean(logits_rec.iter().map(|&l| softplus(-l)))?, mean(logits_mix.iter().map(|&l| softplus(-l)))?))
}

/// `mean −log σ(real) + mean −log(1 − σ(fake))`, penalty excluded.
pub fn loss_adv_discriminator(logits_real: &[f64], logits_fake: &[f64]) -> Result<f64> {
    Ok(mean(logits_real.iter().map(|&l| softplus(-l)))? + mean(logits_fake.iter().map(|&l| softplus(l)))?)
}

// Tape graphs.

pub fn rec_term<T: Scalar>(t: &mut Tape<T>, x: Var, y: Var) -> Var {
    let d = t.sub(x, y);
    let sq = t.square(d);
    t.mean(sq)
}

pub fn neg_term<T: Scalar>(t: &mut Tape<T>, emb_s: Var, emb_mix: Var, clamp: bool) -> Var {
    let d = t.row_dot(emb_s, emb_mix);
    let d = if clamp { t.relu(d) } else { d };
    t.mean(d)
}

pub fn pos_term<T: Scalar>(t: &mut Tape<T>, emb_t: Var, emb_mix: Var) -> Var {
    let d = t.row_dot(emb_t, emb_mix);
    let m = t.mean(d);
    let neg = t.scale(m, -1.0);
    t.add_scalar(neg, 1.0)
}

pub fn adv_generator_term<T: Scalar>(t: &mut Tape<T>, logits: Var) -> Var {
    let n = t.scale(logits, -1.0);
    let sp = t.softplus(n);
    t.mean(sp)
}

pub fn adv_discriminator_term<T: Scalar>(t: &mut Tape<T>, real: Var, fake: Var) -> Var {
    let r = adv_generator_term(t, real);
    let f = t.softplus(fake);
    let f = t.mean(f);
    t.add(r, f)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    /// Include the disassociation term in the optimized total.
    pub use_neg: bool,
    /// Clamp per-pair similarity at 0 inside the disassociation term.
    pub clamp_neg: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self { use_neg: true, clamp_neg: false }
    }
}

/// Generator outputs for the reconstruction and mixing branches, produced
/// by one batched pass over `concat(z_non, z_non)`.
pub struct GeneratorForward {
    pub fakes: Var,
    pub x_rec: Var,
    pub x_mix: Var,
    pub w: Var,
}

/// `x_s: [B, 3, S, S]`; `perm[b]` is the mixing partner of sample `b`.
pub fn generator_forward<T: Scalar>(c: &ModelConfig, t: &mut Tape<T>, p: &Bound, x_s: Var, perm: &[usize]) -> GeneratorForward {
    let b = perm.len();
    let (z_id, z_non) = arch::encoder(c, t, p, x_s);
    let w = arch::mapping(c, t, p, z_id);
    let w_t = t.gather_rows(w, perm);
    let styles = t.concat_rows(&[w, w_t]);
    let z2 = t.concat_rows(&[z_non, z_non]);
    let per_layer = vec![styles; c.num_layers];
    let g = arch::generator(c, t, p, z2, &per_layer);
    let x_rec = t.slice_rows(g.image, 0, b);
    let x_mix = t.slice_rows(g.image, b, b);
    GeneratorForward { fakes: g.image, x_rec, x_mix, w }
}

pub struct ObjectiveTerms {
    pub rec: Var,
    pub pos: Var,
    pub neg: Var,
    pub adv_rec: Var,
    pub adv_mix: Var,
    pub total: Var,
}

impl ObjectiveTerms {
    pub fn report<T: Scalar>(&self, t: &Tape<T>) -> LossReport {
        let v = |x: Var| t.value(x).item().re();
        LossReport { rec: v(self.rec), pos: v(self.pos), neg: v(self.neg), adv_rec: v(self.adv_rec), adv_mix: v(self.adv_mix), total: v(self.total), ..Default::default() }
    }
}

/// Generator-side objective. `pd` binds the discriminator and `pv` the
/// verifier; both are normally frozen.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Scalar>(
    c: &ModelConfig,
    vc: &VerifierConfig,
    t: &mut Tape<T>,
    pd: &Bound,
    pv: &Bound,
    x_s: Var,
    fwd: &GeneratorForward,
    perm: &[usize],
    weights: &LossWeights,
    opts: &ObjectiveOptions,
) -> ObjectiveTerms {
    let b = perm.len();
    let rec = rec_term(t, fwd.x_rec, x_s);

    let (_, emb_s) = arch::verifier(vc, t, pv, x_s);
    let emb_t = t.gather_rows(emb_s, perm);
    let (_, emb_mix) = arch::verifier(vc, t, pv, fwd.x_mix);
    let neg = neg_term(t, emb_s, emb_mix, opts.clamp_neg);
    let pos = pos_term(t, emb_t, emb_mix);

    let logits = arch::discriminator(c, t, pd, fwd.fakes);
    let l_rec = t.slice_rows(logits, 0, b);
    let l_mix = t.slice_rows(logits, b, b);
    let adv_rec = adv_generator_term(t, l_rec);
    let adv_mix = adv_generator_term(t, l_mix);

    let a = t.scale(rec, weights.lambda_rec);
    let id = if opts.use_neg { t.add(pos, neg) } else { pos };
    let bsum = t.scale(id, weights.lambda_contrastive);
    let adv = t.add(adv_rec, adv_mix);
    let cterm = t.scale(adv, weights.lambda_adv);
    let ab = t.add(a, bsum);
    let total = t.add(ab, cterm);
    ObjectiveTerms { rec, pos, neg, adv_rec, adv_mix, total }
}

/// R1 penalty `γ/2 · mean_b ‖∇_x D(x_b)‖²` on real images, and its exact
/// gradient with respect to the discriminator parameters. The gradient is
/// a Hessian-vector product obtained by pushing the input gradient through
/// a dual-number tape.
pub fn r1_penalty<T: Scalar>(c: &ModelConfig, disc: &ParamStore<T>, real: &Tensor<T>, gamma: f64) -> (f64, ParamStore<T>) {
    let b = real.shape()[0] as f64;
    let mut t = Tape::new();
    let p = disc.bind(&mut t, false);
    let x = t.param(real.clone());
    let logits = arch::discriminator(c, &mut t, &p, x);
    let s = t.sum(logits);
    let g = t.backward(s).take(x).expect("input requires grad");
    let sq: f64 = g.data().iter().map(|v| v.re() * v.re()).sum();
    let penalty = 0.5 * gamma * sq / b;

    let dual_params = disc.convert(Dual::constant);
    let mut td = Tape::new();
    let pd = dual_params.bind(&mut td, true);
    let xd = Tensor::new(real.shape().to_vec(), real.data().iter().zip(g.data()).map(|(&r, &d)| Dual::new(r, d)).collect());
    let xv = td.constant(xd);
    let logits = arch::discriminator(c, &mut td, &pd, xv);
    let s = td.sum(logits);
    let dg = pd.collect(&td, &td.backward(s));
    let k = T::from_f64(gamma / b);
    let mut grads = ParamStore::new();
    for (name, t) in dg.iter() {
        grads.insert(name.clone(), Tensor::new(t.shape().to_vec(), t.data().iter().map(|d| d.du * k).collect()));
    }
    (penalty, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_of_unit_components_with_default_weights() {
        let r = LossReport { rec: 1.0, pos: 1.0, neg: 1.0, adv_rec: 1.0, adv_mix: 1.0, ..Default::default() };
        assert!((total_loss(&r, &LossWeights::default()) - 1.12).abs() < 1e-12);
        let zero = LossWeights { lambda_rec: 0.0, lambda_contrastive: 0.0, lambda_adv: 0.0 };
        assert_eq!(total_loss(&r, &zero), 0.0);
        assert_eq!(total_loss(&LossReport::default(), &LossWeights::default()), 0.0);
    }

    #[test]
    fn cosine_edge_cases() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let n = v.map(|x| -x);
        assert!((cosine_similarity(&v, &n).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!((cosine_similarity(&[1.0, 2.0], &[3.0, -1.0]).unwrap() - cosine_similarity(&[3.0, -1.0], &[1.0, 2.0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn adversarial_terms() {
        let ln2 = std::f64::consts::LN_2;
        let (a, b) = loss_adv_generator(&[0.0], &[0.0, 0.0]).unwrap();
        assert!((a - ln2).abs() < 1e-15 && (b - ln2).abs() < 1e-15);
        assert!(loss_adv_generator(&[1e4], &[1e4]).unwrap().0 < 1e-12);
        assert!((loss_adv_discriminator(&[0.0], &[0.0]).unwrap() - 2.0 * ln2).abs() < 1e-15);
        assert!(loss_adv_discriminator(&[800.0], &[-800.0]).unwrap() < 1e-12);
        assert!(softplus(-800.0).is_finite() && softplus(800.0) == 800.0);
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(LossWeights { lambda_adv: -0.1, ..Default::default() }.validate().is_err());
    }
}
