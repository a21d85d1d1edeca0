//! Central-difference checks of every training loss in double precision.

use ficgan_autograd::{ParamStore, Tape, Tensor};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{adv_discriminator_term, generator_forward, generator_objective, r1_penalty, LossWeights, ObjectiveOptions};
use crate::nets::{arch, Model, ModelConfig, Verifier, VerifierConfig};
use crate::seeding::rng_for;
use crate::trainer::derangement;

pub const REL_TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: String,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

impl TermCheck {
    pub fn passed(&self) -> bool {
        self.coordinates > 0 && self.max_rel_err < REL_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub terms: Vec<TermCheck>,
    /// No verifier parameter received a gradient from the generator objective.
    pub verifier_isolated: bool,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.verifier_isolated && self.terms.iter().all(TermCheck::passed)
    }
}

pub const GENERATOR_TERMS: [&str; 6] = ["rec", "pos", "neg", "adv_rec", "adv_mix", "total"];

struct Setup {
    c: ModelConfig,
    vc: VerifierConfig,
    params: ParamStore<f64>,
    ver: ParamStore<f64>,
    x: Tensor<f64>,
    perm: Vec<usize>,
    weights: LossWeights,
    opts: ObjectiveOptions,
}

fn is_gen(n: &str) -> bool {
    n.starts_with("enc.") || n.starts_with("map.") || n.starts_with("gen.")
}

fn is_disc(n: &str) -> bool {
    n.starts_with("disc.")
}

impl Setup {
    /// Generator-side term values, with gradients w.r.t. encoder, mapping
    /// and generator parameters when `grads` is set.
    fn generator_terms(&self, params: &ParamStore<f64>, grads: bool) -> ([f64; 6], Vec<ParamStore<f64>>, bool) {
        let mut t = Tape::new();
        let p = params.bind_where(&mut t, |n| Some(grads && is_gen(n)));
        let pv = self.ver.bind(&mut t, false);
        let x = t.constant(self.x.clone());
        let fwd = generator_forward(&self.c, &mut t, &p, x, &self.perm);
        let terms = generator_objective(&self.c, &self.vc, &mut t, &p, &pv, x, &fwd, &self.perm, &self.weights, &self.opts);
        let vars = [terms.rec, terms.pos, terms.neg, terms.adv_rec, terms.adv_mix, terms.total];
        let values = vars.map(|v| t.value(v).item());
        if !grads {
            return (values, Vec::new(), true);
        }
        let mut isolated = true;
        let mut out = Vec::new();
        for v in vars {
            let g = t.backward(v);
            isolated &= pv.collect(&t, &g).iter().all(|(_, g)| g.data().iter().all(|v| *v == 0.0));
            out.push(p.collect(&t, &g));
        }
        (values, out, isolated)
    }

    fn disc_loss(&self, params: &ParamStore<f64>, grads: bool) -> (f64, Option<ParamStore<f64>>) {
        let b = self.perm.len();
        let mut t = Tape::new();
        let p = params.bind_where(&mut t, |n| Some(grads && is_disc(n)));
        let x = t.constant(self.x.clone());
        let fwd = generator_forward(&self.c, &mut t, &p, x, &self.perm);
        let fake = t.detach(fwd.fakes);
        let both = t.concat_rows(&[x, fake]);
        let logits = arch::discriminator(&self.c, &mut t, &p, both);
        let real = t.slice_rows(logits, 0, b);
        let fake = t.slice_rows(logits, b, 2 * b);
        let loss = adv_discriminator_term(&mut t, real, fake);
        let value = t.value(loss).item();
        let g = grads.then(|| p.collect(&t, &t.backward(loss)));
        (value, g)
    }

    fn r1(&self, params: &ParamStore<f64>) -> (f64, ParamStore<f64>) {
        r1_penalty(&self.c, &params.subset("disc."), &self.x, 1.0)
    }
}

struct Tracker {
    term: String,
    coordinates: usize,
    max_rel_err: f64,
    worst_param: String,
}

impl Tracker {
    fn new(term: &str) -> Self {
        Self { term: term.into(), coordinates: 0, max_rel_err: 0.0, worst_param: String::new() }
    }

    fn record(&mut self, name: &str, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        self.coordinates += 1;
        if err > self.max_rel_err || !err.is_finite() {
            self.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
            self.worst_param = name.into();
        }
    }

    fn finish(self) -> TermCheck {
        TermCheck { term: self.term, coordinates: self.coordinates, max_rel_err: self.max_rel_err, worst_param: self.worst_param }
    }
}

fn probe_coordinates(params: &ParamStore<f64>, select: fn(&str) -> bool, per_tensor: usize, rng: &mut impl Rng) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (name, t) in params.iter().filter(|(n, _)| select(n)) {
        let n = t.numel();
        for i in index::sample(rng, n, per_tensor.min(n)) {
            out.push((name.clone(), i));
        }
    }
    out
}

fn perturbed(params: &ParamStore<f64>, name: &str, i: usize, delta: f64) -> ParamStore<f64> {
    let mut p = params.clone();
    p.get_mut(name).expect("probed parameter exists").data_mut()[i] += delta;
    p
}

fn grad_at(g: &ParamStore<f64>, name: &str, i: usize) -> f64 {
    g.get(name).map_or(0.0, |t| t.data()[i])
}

/// Check every loss term on the miniature configuration, probing
/// `per_tensor` random coordinates of each trainable tensor.
pub fn check_all(seed: u64, per_tensor: usize) -> Result<GradCheckReport> {
    let c = ModelConfig::miniature();
    let vc = VerifierConfig::for_model(&c, 2);
    let model = Model::init(c.clone(), seed)?;
    let verifier = Verifier::init(vc.clone(), seed.wrapping_add(1))?;
    let mut rng = rng_for("gradcheck", &[seed]);
    let b = 3;
    let n = b * 3 * c.image_size * c.image_size;
    let x = Tensor::new(vec![b, 3, c.image_size, c.image_size], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let s = Setup {
        c,
        vc,
        params: model.params.convert(|v| v as f64),
        ver: verifier.params.convert(|v| v as f64),
        x,
        perm: derangement(b),
        weights: LossWeights::default(),
        opts: ObjectiveOptions::default(),
    };

    let (_, g_grads, verifier_isolated) = s.generator_terms(&s.params, true);
    let mut trackers: Vec<Tracker> = GENERATOR_TERMS.iter().map(|t| Tracker::new(t)).collect();
    for (name, i) in probe_coordinates(&s.params, is_gen, per_tensor, &mut rng) {
        let (plus, _, _) = s.generator_terms(&perturbed(&s.params, &name, i, STEP), false);
        let (minus, _, _) = s.generator_terms(&perturbed(&s.params, &name, i, -STEP), false);
        for (k, tr) in trackers.iter_mut().enumerate() {
            tr.record(&name, grad_at(&g_grads[k], &name, i), (plus[k] - minus[k]) / (2.0 * STEP));
        }
    }

    let (_, d_grads) = s.disc_loss(&s.params, true);
    let d_grads = d_grads.expect("requested");
    let (_, r1_grads) = s.r1(&s.params);
    let mut disc = Tracker::new("disc");
    let mut r1 = Tracker::new("r1");
    for (name, i) in probe_coordinates(&s.params, is_disc, per_tensor, &mut rng) {
        let (pp, pm) = (perturbed(&s.params, &name, i, STEP), perturbed(&s.params, &name, i, -STEP));
        disc.record(&name, grad_at(&d_grads, &name, i), (s.disc_loss(&pp, false).0 - s.disc_loss(&pm, false).0) / (2.0 * STEP));
        r1.record(&name, grad_at(&r1_grads, &name, i), (s.r1(&pp).0 - s.r1(&pm).0) / (2.0 * STEP));
    }
    trackers.push(disc);
    trackers.push(r1);
    Ok(GradCheckReport { terms: trackers.into_iter().map(Tracker::finish).collect(), verifier_isolated })
}
