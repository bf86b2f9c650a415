use super::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all checked elements.
    pub max_relative_error: f64,
    /// Parameter and element index where it occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Elements skipped because the loss has a kink (e.g. relu or max) within
    /// `eps` of the current point.
    pub skipped: usize,
}

/// Compares tape gradients with central differences for every parameter
/// element. `build` records the loss on a fresh graph.
///
/// The relative error of an element is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn gradient_check<F>(store: &ParamStore<f64>, build: F, eps: f64) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>) -> Var,
{
    let loss_at = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let l = build(&mut g);
        g.scalar(l)
    };
    let analytic = {
        let mut g = Graph::new(store);
        let l = build(&mut g);
        g.backward(l).expect("loss must be a scalar depending on parameters")
    };
    let base = loss_at(store);
    let mut probe = store.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, checked: 0, skipped: 0 };
    for i in 0..store.len() {
        let id = ParamId(i);
        let n = store.get(id).len();
        let a = analytic.dense(id, n);
        for j in 0..n {
            let orig = probe.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + eps;
            let plus = loss_at(&probe);
            probe.get_mut(id).data_mut()[j] = orig - eps;
            let minus = loss_at(&probe);
            probe.get_mut(id).data_mut()[j] = orig;
            let right = (plus - base) / eps;
            let left = (base - minus) / eps;
            // Disagreeing one-sided slopes mean a non-differentiable point.
            let scale = right.abs().max(left.abs()).max(1e-3);
            if (right - left).abs() > 1e-2 * scale + 1e3 * eps {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a[j] - numeric).abs() / (a[j].abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_tanh_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("w", Tensor::<f64>::glorot(vec![4, 3], 4, 3, &mut rng));
        store.add("b", Tensor::<f64>::uniform(vec![3], 0.5, &mut rng));
        let report = gradient_check(
            &store,
            |g| {
                let x = g.constant(2, 4, vec![0.1, -0.4, 0.9, 0.3, -1.0, 0.5, 0.2, 0.7]);
                let w = g.param(ParamId(0));
                let b = g.param(ParamId(1));
                let h = g.linear(x, w, b);
                let h = g.tanh(h);
                g.softmax_cross_entropy(h, &[2, 0])
            },
            1e-6,
        );
        assert_eq!(report.checked, 15);
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
