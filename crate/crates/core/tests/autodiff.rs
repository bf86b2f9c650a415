use folvec::tensor::{gradient_check, Adam, AdamConfig, Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_store(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.add(*name, Tensor::uniform(shape.clone(), 0.8, &mut rng));
    }
    s
}

fn input(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn check(store: &ParamStore<f64>, tol: f64, build: impl Fn(&mut Graph<f64>) -> Var) {
    let r = gradient_check(store, build, 1e-5);
    assert!(r.checked > 0, "nothing checked: {r:?}");
    assert!(r.max_relative_error <= tol, "{r:?}");
}

fn p(g: &mut Graph<f64>, i: usize) -> Var {
    g.param(ParamId(i))
}

#[test]
fn linear_layer() {
    let s = random_store(&[("w", vec![5, 3]), ("b", vec![3])], 1);
    check(&s, 1e-6, |g| {
        let x = g.constant(4, 5, input(4, 5, 2));
        let (w, b) = (p(g, 0), p(g, 1));
        let y = g.linear(x, w, b);
        let t = g.constant(4, 3, input(4, 3, 3));
        g.mse(y, t)
    });
}

#[test]
fn relu_away_from_kink() {
    let s = random_store(&[("w", vec![3, 4])], 4);
    let x = input(6, 3, 5);
    // Keep pre-activations at least eps * 10 from zero.
    let mut g = Graph::new(&s);
    let xv = g.constant(6, 3, x.clone());
    let w = p(&mut g, 0);
    let h = g.matmul(xv, w);
    assert!(g.value(h).iter().all(|v| v.abs() > 1e-4));
    check(&s, 1e-6, |g| {
        let xv = g.constant(6, 3, x.clone());
        let w = p(g, 0);
        let h = g.matmul(xv, w);
        let r = g.relu(h);
        let t = g.constant(6, 4, vec![0.1; 24]);
        g.mse(r, t)
    });
}

#[test]
fn elementwise_and_structural_ops() {
    let s = random_store(&[("a", vec![3, 4]), ("r", vec![4]), ("e", vec![6, 4])], 6);
    check(&s, 1e-6, |g| {
        let a = p(g, 0);
        let r = p(g, 1);
        let e = p(g, 2);
        let sa = g.sigmoid(a);
        let m = g.mul_row(sa, r);
        let emb = g.embedding(e, &[5, 0, 5]);
        let prod = g.mul(m, emb);
        let th = g.tanh(prod);
        let both = g.concat_cols(&[th, a]);
        let stacked = g.concat_rows(&[both, both]);
        let mid = g.rows(stacked, 2, 3);
        let sc = g.scale(mid, 0.7);
        let sm = g.softmax(sc);
        let ln = g.layer_norm(sm);
        let pooled = g.mean_pool_time(ln);
        let logits = g.rows(stacked, 0, 2);
        let xe = g.softmax_cross_entropy(logits, &[1, 7]);
        let t = g.constant(1, 8, input(1, 8, 7));
        let l2 = g.mse(pooled, t);
        g.sum(&[xe, l2])
    });
}

#[test]
fn dilated_convolution_and_pooling() {
    for (kernel, dilation) in [(3, 1), (2, 2), (3, 4)] {
        let s = random_store(&[("w", vec![kernel * 2, 3]), ("b", vec![3])], 8);
        let report = gradient_check(
            &s,
            |g| {
                let x = g.constant(9, 2, input(9, 2, 9));
                let (w, b) = (p(g, 0), p(g, 1));
                let y = g.conv1d(x, w, b, kernel, dilation);
                let pooled = g.max_pool1d(y, 2);
                let top = g.max_pool_time(pooled);
                let t = g.constant(1, 3, vec![0.3, -0.2, 0.5]);
                g.mse(top, t)
            },
            1e-5,
        );
        assert!(report.max_relative_error <= 1e-6, "k={kernel} d={dilation} {report:?}");
    }
}

#[test]
fn attention_block() {
    let d = 8;
    let s = random_store(
        &[("wq", vec![d, d]), ("wk", vec![d, d]), ("wv", vec![d, d]), ("wo", vec![d, d]), ("f1", vec![d, 12]), ("f2", vec![12, d])],
        10,
    );
    check(&s, 1e-3, |g| {
        let x = g.constant(5, d, input(5, d, 11));
        let n = g.layer_norm(x);
        let (wq, wk, wv, wo) = (p(g, 0), p(g, 1), p(g, 2), p(g, 3));
        let q = g.matmul(n, wq);
        let k = g.matmul(n, wk);
        let v = g.matmul(n, wv);
        let a = g.scaled_dot_attention(q, k, v, 2);
        let a = g.matmul(a, wo);
        let h = g.add(x, a);
        let n2 = g.layer_norm(h);
        let (f1, f2) = (p(g, 4), p(g, 5));
        let ff = g.matmul(n2, f1);
        let ff = g.tanh(ff);
        let ff = g.matmul(ff, f2);
        let out = g.add(h, ff);
        let first = g.row(out, 0);
        let t = g.constant(1, d, input(1, d, 12));
        g.mse(first, t)
    });
}

#[test]
fn lstm_both_directions() {
    let (inp, hid) = (3, 4);
    for reverse in [false, true] {
        let s = random_store(&[("wi", vec![inp, 4 * hid]), ("wh", vec![hid, 4 * hid]), ("b", vec![4 * hid])], 13);
        check(&s, 1e-6, |g| {
            let x = g.constant(5, inp, input(5, inp, 14));
            let (wi, wh, b) = (p(g, 0), p(g, 1), p(g, 2));
            let h = g.lstm(x, wi, wh, b, reverse);
            let t = g.constant(5, hid, input(5, hid, 15));
            g.mse(h, t)
        });
    }
}

#[test]
fn binary_cross_entropy_gradient() {
    let s = random_store(&[("w", vec![4, 1])], 16);
    check(&s, 1e-6, |g| {
        let x = g.constant(3, 4, input(3, 4, 17));
        let w = p(g, 0);
        let l = g.matmul(x, w);
        g.binary_cross_entropy(l, &[1.0, 0.0, 1.0])
    });
}

#[test]
fn input_gradients_flow() {
    // Gradients through the data path of conv and lstm, with the input
    // itself as the parameter.
    let s = random_store(&[("x", vec![6, 2]), ("w", vec![6, 2]), ("b", vec![2]), ("wh", vec![2, 8]), ("wi", vec![2, 8]), ("lb", vec![8])], 18);
    check(&s, 1e-4, |g| {
        let x = p(g, 0);
        let (w, b) = (p(g, 1), p(g, 2));
        let c = g.conv1d(x, w, b, 3, 2);
        let (wi, wh, lb) = (p(g, 4), p(g, 3), p(g, 5));
        let h = g.lstm(c, wi, wh, lb, true);
        let t = g.constant(6, 2, vec![0.0; 12]);
        g.mse(h, t)
    });
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut s = ParamStore::<f32>::new();
    s.add("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
    let before = s.clone();
    let mut adam = Adam::new(AdamConfig::default(), &s);
    adam.step(&mut s, &mut Gradients::for_store(&before));
    assert_eq!(s, before);
}

#[test]
fn adam_first_step_and_monotone_descent() {
    let lr = 1e-4;
    let mut s = ParamStore::<f64>::new();
    s.add("p", Tensor::new(vec![1], vec![0.5]));
    let mut adam = Adam::new(AdamConfig { lr, ..Default::default() }, &s);
    let mut g = Gradients::for_store(&s);
    g.buffer_mut(ParamId(0), 1)[0] = 1.0;
    adam.step(&mut s, &mut g);
    assert!((s.get(ParamId(0)).data()[0] - (0.5 - lr)).abs() < 1e-9);

    // f(p) = (p - 3)^2 from p = 0.
    let mut s = ParamStore::<f64>::new();
    s.add("p", Tensor::new(vec![1], vec![0.0]));
    let mut adam = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, &s);
    let f = |p: f64| (p - 3.0).powi(2);
    let mut last = f(0.0);
    for _ in 0..2 {
        let p = s.get(ParamId(0)).data()[0];
        let mut g = Gradients::for_store(&s);
        g.buffer_mut(ParamId(0), 1)[0] = 2.0 * (p - 3.0);
        adam.step(&mut s, &mut g);
        let now = f(s.get(ParamId(0)).data()[0]);
        assert!(now < last);
        last = now;
    }
}

#[test]
fn fixed_seed_training_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::glorot(vec![4, 2], 4, 2, &mut rng));
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, &s);
        for _ in 0..20 {
            let mut grads = {
                let mut g = Graph::new(&s);
                let x = g.constant(3, 4, (0..12).map(|i| i as f32 / 10.0).collect());
                let w = g.param(ParamId(0));
                let y = g.matmul(x, w);
                let l = g.softmax_cross_entropy(y, &[0, 1, 0]);
                g.backward(l).unwrap()
            };
            adam.step(&mut s, &mut grads);
        }
        s
    };
    assert_eq!(run(), run());
}
