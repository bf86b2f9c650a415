//! Finite-difference checks of every layer type, every encoder architecture
//! and both autoencoder losses, in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{build_vocab, Arch, EncoderConfig, EncoderModel};
use crate::fol::Expr;
use crate::parser::parse_formula;
use crate::tensor::{gradient_check, GradCheckReport, Graph, ParamId, ParamStore, Tensor, Var};
use crate::tree::{build_signature, TrainItem, TrainMode, TreeAutoencoder};

/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_relative_error <= GRADCHECK_TOLERANCE
    }
}

fn store(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.add(*name, Tensor::uniform(shape.clone(), 0.8, &mut rng));
    }
    s
}

fn noise(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn p(g: &mut Graph<f64>, i: usize) -> Var {
    g.param(ParamId(i))
}

fn run(name: &str, s: &ParamStore<f64>, build: impl Fn(&mut Graph<f64>) -> Var) -> NamedCheck {
    NamedCheck { name: name.to_string(), report: gradient_check(s, build, EPS) }
}

/// One check per layer type of the tensor engine.
pub fn layer_checks() -> Vec<NamedCheck> {
    let mut out = Vec::new();
    let target = |g: &mut Graph<f64>, r: usize, c: usize, seed: u64| g.constant(r, c, noise(r, c, seed));

    let s = store(&[("w", vec![5, 3]), ("b", vec![3])], 1);
    out.push(run("linear", &s, |g| {
        let x = g.constant(4, 5, noise(4, 5, 2));
        let (w, b) = (p(g, 0), p(g, 1));
        let y = g.linear(x, w, b);
        let t = target(g, 4, 3, 3);
        g.mse(y, t)
    }));

    let s = store(&[("a", vec![3, 4]), ("r", vec![4])], 4);
    for act in ["relu", "sigmoid", "tanh"] {
        out.push(run(act, &s, |g| {
            let (a, r) = (p(g, 0), p(g, 1));
            let h = g.add_row(a, r);
            let y = match act {
                "relu" => g.relu(h),
                "sigmoid" => g.sigmoid(h),
                _ => g.tanh(h),
            };
            let t = target(g, 3, 4, 5);
            g.mse(y, t)
        }));
    }

    let s = store(&[("a", vec![3, 4]), ("b", vec![3, 4]), ("r", vec![4])], 6);
    out.push(run("elementwise", &s, |g| {
        let (a, b, r) = (p(g, 0), p(g, 1), p(g, 2));
        let m = g.mul(a, b);
        let m = g.mul_row(m, r);
        let m = g.scale(m, 0.7);
        let both = g.concat_cols(&[m, a]);
        let stacked = g.concat_rows(&[both, both]);
        let mid = g.rows(stacked, 2, 3);
        let t = target(g, 3, 8, 7);
        g.mse(mid, t)
    }));

    let s = store(&[("e", vec![6, 4])], 8);
    out.push(run("embedding", &s, |g| {
        let e = p(g, 0);
        let x = g.embedding(e, &[5, 0, 5, 2]);
        let t = target(g, 4, 4, 9);
        g.mse(x, t)
    }));

    let s = store(&[("a", vec![4, 5])], 10);
    out.push(run("softmax_layer_norm", &s, |g| {
        let a = p(g, 0);
        let sm = g.softmax(a);
        let ln = g.layer_norm(sm);
        let t = target(g, 4, 5, 11);
        g.mse(ln, t)
    }));

    for (kernel, dilation) in [(3, 1), (2, 2), (3, 4)] {
        let s = store(&[("w", vec![kernel * 2, 3]), ("b", vec![3])], 12);
        out.push(run(&format!("conv1d_k{kernel}_d{dilation}_pool"), &s, |g| {
            let x = g.constant(9, 2, noise(9, 2, 13));
            let (w, b) = (p(g, 0), p(g, 1));
            let y = g.conv1d(x, w, b, kernel, dilation);
            let pooled = g.max_pool1d(y, 2);
            let top = g.max_pool_time(pooled);
            let mean = g.mean_pool_time(y);
            let both = g.concat_cols(&[top, mean]);
            let t = target(g, 1, 6, 14);
            g.mse(both, t)
        }));
    }

    let d = 8;
    let s = store(&[("wq", vec![d, d]), ("wk", vec![d, d]), ("wv", vec![d, d])], 15);
    out.push(run("attention", &s, |g| {
        let x = g.constant(5, d, noise(5, d, 16));
        let (wq, wk, wv) = (p(g, 0), p(g, 1), p(g, 2));
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        let a = g.scaled_dot_attention(q, k, v, 2);
        let t = target(g, 5, d, 17);
        g.mse(a, t)
    }));

    let (inp, hid) = (3, 4);
    for reverse in [false, true] {
        let s = store(&[("wi", vec![inp, 4 * hid]), ("wh", vec![hid, 4 * hid]), ("b", vec![4 * hid])], 18);
        let name = if reverse { "lstm_backward" } else { "lstm_forward" };
        out.push(run(name, &s, |g| {
            let x = g.constant(5, inp, noise(5, inp, 19));
            let (wi, wh, b) = (p(g, 0), p(g, 1), p(g, 2));
            let h = g.lstm(x, wi, wh, b, reverse);
            let t = target(g, 5, hid, 20);
            g.mse(h, t)
        }));
    }

    let s = store(&[("w", vec![4, 3]), ("v", vec![3, 1])], 21);
    out.push(run("losses", &s, |g| {
        let x = g.constant(3, 4, noise(3, 4, 22));
        let (w, v) = (p(g, 0), p(g, 1));
        let z = g.matmul(x, w);
        let xent = g.softmax_cross_entropy(z, &[0, 2, 1]);
        let logit = g.matmul(z, v);
        let bce = g.binary_cross_entropy(logit, &[1.0, 0.0, 1.0]);
        let t = target(g, 3, 3, 23);
        let mse = g.mse(z, t);
        g.sum(&[xent, bce, mse])
    }));

    out
}

/// A reduced two-layer configuration of `arch` for checking.
pub fn reduced_config(arch: Arch) -> EncoderConfig {
    EncoderConfig { heads: 2, max_len: 32, ..EncoderConfig::small(arch, 8, 2) }
}

const CHECK_TEXT: &str = "![X]: (p(X) => ~q(X,f(a)))";

/// Gradient check of one encoder architecture through a squared-error loss
/// on its output.
pub fn architecture_check(arch: Arch) -> NamedCheck {
    let vocab = build_vocab([CHECK_TEXT]);
    let model = EncoderModel::<f64>::new(&reduced_config(arch), vocab, 31);
    let d = model.embedding_dim();
    run(&format!("encoder_{}", arch.name()), &model.store, |g| {
        let y = model.encode_on(g, CHECK_TEXT);
        let t = g.constant(1, d, noise(1, d, 32));
        g.mse(y, t)
    })
}

/// Gradient checks of both autoencoder losses on a CNN encoder.
pub fn autoencoder_checks() -> Vec<NamedCheck> {
    let f = Expr::Formula(parse_formula(CHECK_TEXT).expect("valid formula"));
    let sig = build_signature(std::slice::from_ref(&f));
    let ae = TreeAutoencoder::<f64>::new(&reduced_config(Arch::Cnn), sig.clone(), 33);
    let item = TrainItem::new(&f, &sig).expect("labels registered");
    [TrainMode::Recursive, TrainMode::Difference]
        .into_iter()
        .map(|mode| run(&format!("autoencoder_{}", mode.name()), ae.store(), |g| ae.batch_loss(g, mode, &[&item], false)))
        .collect()
}

/// Layer, autoencoder and all architecture checks, or the check of a single
/// architecture.
pub fn gradient_suite(arch: Option<Arch>) -> Vec<NamedCheck> {
    match arch {
        Some(a) => vec![architecture_check(a)],
        None => {
            let mut out = layer_checks();
            out.extend(autoencoder_checks());
            out.extend(Arch::ALL.into_iter().map(architecture_check));
            out
        }
    }
}
