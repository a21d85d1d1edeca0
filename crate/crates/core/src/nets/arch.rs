//! Parameter layouts and graph builders for the five networks. Builders are
//! generic over the scalar type so the same definition runs in `f32` for
//! training, `f64` for gradient checks and dual numbers for R1.

use ficgan_autograd::{Bound, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ModelConfig, VerifierConfig};

pub const LEAK: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;
const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Unit normal; the runtime multiplier sets the effective scale.
    Normal,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Default)]
struct Specs(Vec<ParamSpec>);

impl Specs {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        self.0.push(ParamSpec { name: format!("{name}.weight"), shape: vec![c_out, c_in, k, k], init: Init::Normal });
        self.0.push(ParamSpec { name: format!("{name}.bias"), shape: vec![c_out], init: Init::Zeros });
    }

    fn dense(&mut self, name: &str, n_in: usize, n_out: usize) {
        self.0.push(ParamSpec { name: format!("{name}.weight"), shape: vec![n_out, n_in], init: Init::Normal });
        self.0.push(ParamSpec { name: format!("{name}.bias"), shape: vec![n_out], init: Init::Zeros });
    }

    fn dense_named(&mut self, block: &str, what: &str, n_in: usize, n_out: usize) {
        self.0.push(ParamSpec { name: format!("{block}.{what}_weight"), shape: vec![n_out, n_in], init: Init::Normal });
        self.0.push(ParamSpec { name: format!("{block}.{what}_bias"), shape: vec![n_out], init: Init::Zeros });
    }
}

/// Resolutions visited by a stride-2 trunk: `size, size/2, …, 8`.
fn down_chain(size: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut r = size;
    while r > 4 {
        v.push(r);
        r /= 2;
    }
    v
}

pub fn encoder_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    s.conv("enc.from_rgb", 3, c.channels(c.image_size), 1);
    for (i, r) in down_chain(c.image_size).into_iter().enumerate() {
        s.conv(&format!("enc.down{i}"), c.channels(r), c.channels(r / 2), 3);
    }
    let c4 = c.channels(4);
    s.conv("enc.id_conv", c4, c4, 3);
    s.dense("enc.id_fc", c4, c.d_id);
    s.conv("enc.non_conv", c4, c.spatial_channels, 3);
    s.0
}

pub fn mapping_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    for j in 0..c.mapping_layers {
        let n_in = if j == 0 { c.d_id } else { c.d_w };
        s.dense(&format!("map.fc{j}"), n_in, c.d_w);
    }
    s.0
}

pub fn generator_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    let mut c_in = c.spatial_channels;
    for (l, res) in c.layer_resolutions().into_iter().enumerate() {
        let block = format!("gen.layer{l}");
        let c_out = c.channels(res);
        s.conv(&block, c_in, c_out, 3);
        s.dense_named(&block, "scale", c.d_w, c_out);
        s.dense_named(&block, "shift", c.d_w, c_out);
        s.conv(&format!("{block}.to_rgb"), c_out, 3, 1);
        c_in = c_out;
    }
    s.0
}

pub fn discriminator_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    s.conv("disc.from_rgb", 3, c.channels(c.image_size), 1);
    for (i, r) in down_chain(c.image_size).into_iter().enumerate() {
        s.conv(&format!("disc.down{i}"), c.channels(r), c.channels(r / 2), 3);
    }
    let c4 = c.channels(4);
    s.dense("disc.fc", c4 * 16, c4);
    s.dense("disc.out", c4, 1);
    s.0
}

pub fn verifier_specs(c: &VerifierConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    s.conv("ver.from_rgb", 3, c.channels(c.image_size), 1);
    for (i, r) in down_chain(c.image_size).into_iter().enumerate() {
        s.conv(&format!("ver.down{i}"), c.channels(r), c.channels(r / 2), 3);
    }
    s.dense("ver.feat", c.channels(4) * 16, c.feature_dim);
    s.dense("ver.emb", c.feature_dim, c.d_emb);
    s.0
}

/// Pixel regressor; `d_emb` is the number of regression outputs.
pub fn probe_specs(c: &VerifierConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    s.conv("probe.from_rgb", 3, c.channels(c.image_size), 1);
    for (i, r) in down_chain(c.image_size).into_iter().enumerate() {
        s.conv(&format!("probe.down{i}"), c.channels(r), c.channels(r / 2), 3);
    }
    s.dense("probe.feat", c.channels(4) * 16, c.feature_dim);
    s.dense("probe.out", c.feature_dim, c.d_emb);
    s.0
}

/// Every parameter of a FICGAN model, including its frozen verifier.
pub fn model_specs(c: &ModelConfig, v: &VerifierConfig) -> Vec<ParamSpec> {
    let mut all = encoder_specs(c);
    all.extend(mapping_specs(c));
    all.extend(generator_specs(c));
    all.extend(discriminator_specs(c));
    all.extend(verifier_specs(v));
    all
}

pub fn init_params(specs: &[ParamSpec], rng: &mut impl Rng) -> ParamStore<f32> {
    let mut store = ParamStore::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Normal => (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect(),
            Init::Zeros => vec![0.0; n],
        };
        store.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data));
    }
    store
}

/// Weight scaled at runtime by `gain / sqrt(fan_in)` (equalized learning rate).
fn scaled<T: Scalar>(t: &mut Tape<T>, p: &Bound, name: &str, gain: f64) -> Var {
    let w = p.var(name);
    let fan_in: usize = t.shape(w)[1..].iter().product();
    t.scale(w, gain / (fan_in as f64).sqrt())
}

fn conv<T: Scalar>(t: &mut Tape<T>, p: &Bound, block: &str, x: Var, stride: usize, gain: f64) -> Var {
    let w = scaled(t, p, &format!("{block}.weight"), gain);
    let pad = t.shape(w)[2] / 2;
    t.conv2d(x, w, Some(p.var(&format!("{block}.bias"))), stride, pad)
}

fn dense<T: Scalar>(t: &mut Tape<T>, p: &Bound, weight: &str, bias: &str, x: Var, gain: f64) -> Var {
    let w = scaled(t, p, weight, gain);
    t.linear(x, w, Some(p.var(bias)))
}

fn fc<T: Scalar>(t: &mut Tape<T>, p: &Bound, block: &str, x: Var, gain: f64) -> Var {
    dense(t, p, &format!("{block}.weight"), &format!("{block}.bias"), x, gain)
}

/// Stride-2 trunk from `size` down to 4×4.
fn trunk<T: Scalar>(t: &mut Tape<T>, p: &Bound, net: &str, x: Var, size: usize) -> Var {
    let h = conv(t, p, &format!("{net}.from_rgb"), x, 1, RELU_GAIN);
    let mut h = t.leaky_relu(h, LEAK);
    for i in 0..down_chain(size).len() {
        let y = conv(t, p, &format!("{net}.down{i}"), h, 2, RELU_GAIN);
        h = t.leaky_relu(y, LEAK);
    }
    h
}

/// `x: [B, 3, S, S]` → (`z_id: [B, d_id]`, `z_non: [B, C, 4, 4]`).
pub fn encoder<T: Scalar>(c: &ModelConfig, t: &mut Tape<T>, p: &Bound, x: Var) -> (Var, Var) {
    let h = trunk(t, p, "enc", x, c.image_size);
    let a = conv(t, p, "enc.id_conv", h, 1, RELU_GAIN);
    let a = t.leaky_relu(a, LEAK);
    let pooled = t.mean_spatial(a);
    let z_id = fc(t, p, "enc.id_fc", pooled, 1.0);
    let z_non = conv(t, p, "enc.non_conv", h, 1, 1.0);
    (z_id, z_non)
}

pub fn mapping<T: Scalar>(c: &ModelConfig, t: &mut Tape<T>, p: &Bound, z: Var) -> Var {
    let mut h = z;
    for j in 0..c.mapping_layers {
        let last = j + 1 == c.mapping_layers;
        h = fc(t, p, &format!("map.fc{j}"), h, if last { 1.0 } else { RELU_GAIN });
        if !last {
            h = t.leaky_relu(h, LEAK);
        }
    }
    h
}

/// Generator output plus the activation after every styled layer.
pub struct GeneratorOutput {
    pub image: Var,
    pub taps: Vec<Var>,
}

/// `styles[l]: [B, d_w]` drives layer `l`.
pub fn generator<T: Scalar>(c: &ModelConfig, t: &mut Tape<T>, p: &Bound, z_non: Var, styles: &[Var]) -> GeneratorOutput {
    assert_eq!(styles.len(), c.num_layers, "one style per generator layer");
    let mut x = z_non;
    let mut prev = 4;
    let mut taps = Vec::with_capacity(c.num_layers);
    let mut rgb: Option<Var> = None;
    for (l, res) in c.layer_resolutions().into_iter().enumerate() {
        if res > prev {
            x = t.upsample2x(x);
            rgb = rgb.map(|r| t.upsample2x(r));
            prev = res;
        }
        let block = format!("gen.layer{l}");
        let y = conv(t, p, &block, x, 1, RELU_GAIN);
        let y = t.leaky_relu(y, LEAK);
        let y = t.instance_norm(y, NORM_EPS);
        let scale = dense(t, p, &format!("{block}.scale_weight"), &format!("{block}.scale_bias"), styles[l], 1.0);
        let shift = dense(t, p, &format!("{block}.shift_weight"), &format!("{block}.shift_bias"), styles[l], 1.0);
        x = t.modulate(y, scale, shift);
        taps.push(x);
        let out = conv(t, p, &format!("{block}.to_rgb"), x, 1, 1.0);
        rgb = Some(match rgb {
            Some(r) => t.add(r, out),
            None => out,
        });
    }
    let rgb = rgb.expect("at least one generator layer");
    GeneratorOutput { image: t.tanh(rgb), taps }
}

/// `[B, 3, S, S]` → logits `[B, 1]`.
pub fn discriminator<T: Scalar>(c: &ModelConfig, t: &mut Tape<T>, p: &Bound, x: Var) -> Var {
    let h = trunk(t, p, "disc", x, c.image_size);
    let f = t.flatten(h);
    let f = fc(t, p, "disc.fc", f, RELU_GAIN);
    let f = t.leaky_relu(f, LEAK);
    fc(t, p, "disc.out", f, 1.0)
}

/// `[B, 3, S, S]` → (penultimate features `[B, F]`, unit embeddings `[B, d_emb]`).
pub fn verifier<T: Scalar>(c: &VerifierConfig, t: &mut Tape<T>, p: &Bound, x: Var) -> (Var, Var) {
    let h = trunk(t, p, "ver", x, c.image_size);
    let f = t.flatten(h);
    let f = fc(t, p, "ver.feat", f, RELU_GAIN);
    let features = t.leaky_relu(f, LEAK);
    let e = fc(t, p, "ver.emb", features, 1.0);
    (features, t.l2_normalize_rows(e))
}

/// `[B, 3, S, S]` → unbounded outputs `[B, d_emb]`.
pub fn probe<T: Scalar>(c: &VerifierConfig, t: &mut Tape<T>, p: &Bound, x: Var) -> Var {
    let h = trunk(t, p, "probe", x, c.image_size);
    let f = t.flatten(h);
    let f = fc(t, p, "probe.feat", f, RELU_GAIN);
    let f = t.leaky_relu(f, LEAK);
    fc(t, p, "probe.out", f, 1.0)
}
