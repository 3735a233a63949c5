//! Central finite-difference gradient checking.
//!
//! The checker never touches the tape's backward pass: it re-evaluates a loss
//! closure under parameter perturbations, so it is an independent oracle for
//! the analytic gradients.

use crate::nn::store::{ParamStore, TensorId};

/// Central-difference gradient of `loss` w.r.t. every component of the given
/// tensors. The store is restored to its original values afterwards.
pub fn finite_diff_grad(
    store: &mut ParamStore,
    ids: &[TensorId],
    eps: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let n = store.tensor(id).numel();
        let mut g = vec![0.0; n];
        for k in 0..n {
            let orig = store.tensor(id).data[k];
            store.tensor_mut(id).data[k] = orig + eps;
            let up = loss(store);
            store.tensor_mut(id).data[k] = orig - eps;
            let down = loss(store);
            store.tensor_mut(id).data[k] = orig;
            g[k] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Relative error with an absolute floor: |a - n| / max(|a|, |n|, 1e-3).
/// Gradients below the floor are compared absolutely at 1e-7 effective
/// tolerance when checked against 1e-4.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error between analytic gradients accumulated in the store
/// and the finite-difference oracle, over the given tensors.
pub fn max_rel_error(
    store: &mut ParamStore,
    ids: &[TensorId],
    eps: f64,
    loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let numeric = finite_diff_grad(store, ids, eps, loss);
    let mut worst = 0.0f64;
    for (&id, num) in ids.iter().zip(numeric.iter()) {
        for (a, n) in store.tensor(id).grad.iter().zip(num.iter()) {
            worst = worst.max(rel_error(*a, *n));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, Mlp, MlpSpec};
    use crate::nn::tape::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Backward through a small random net matches finite differences.
    #[test]
    fn mlp_sum_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let spec = MlpSpec {
                input: rng.gen_range(2..5),
                hidden: vec![rng.gen_range(2..6)],
                activation: Activation::Tanh,
                output: rng.gen_range(1..4),
                activate_output: false,
            };
            let mlp = Mlp::register(&mut store, "g", spec.clone(), 1.0, &mut rng).unwrap();
            let input: Vec<f64> = (0..spec.input).map(|_| rng.gen_range(-1.5..1.5)).collect();

            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let y = mlp.forward_tape(&mut tape, &store, x).unwrap();
            // squared sum makes the loss nonlinear in the outputs
            let s = tape.sum(y);
            let loss = tape.square(s);
            tape.backward(loss, &mut store).unwrap();

            let ids: Vec<_> = mlp.tensor_ids().collect();
            let worst = max_rel_error(&mut store, &ids, 1e-5, |s| {
                let out = mlp.forward(s, &input).unwrap();
                let total: f64 = out.iter().sum();
                total * total
            });
            assert!(worst < 1e-6, "worst rel error {worst}");
        }
    }

    /// All tape ops exercised in one graph, checked against finite differences.
    #[test]
    fn mixed_graph_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut store = ParamStore::new();
        let w = store
            .register("w", &[3, 4], crate::nn::store::Init::Orthogonal { gain: 0.9 }, &mut rng)
            .unwrap();
        let b = store
            .register("b", &[3], crate::nn::store::Init::Constant(0.05), &mut rng)
            .unwrap();
        let table = store
            .register("t", &[2, 4], crate::nn::store::Init::Orthogonal { gain: 1.0 }, &mut rng)
            .unwrap();
        let tb = store.register("tb", &[4], crate::nn::store::Init::Zeros, &mut rng).unwrap();

        // concat: half the linear input comes from the embedding, half is data
        fn graph(
            tape: &mut Tape,
            s: &ParamStore,
            w: crate::nn::store::TensorId,
            b: crate::nn::store::TensorId,
            table: crate::nn::store::TensorId,
            tb: crate::nn::store::TensorId,
        ) -> crate::nn::tape::NodeId {
            let e = tape.embed(s, table, tb, 1);
            let half = tape.scale(e, 0.5);
            let lo = tape.pick(half, 0);
            let hi = tape.pick(half, 1);
            let pair = tape.concat(lo, hi);
            let rest = tape.constant(vec![0.2, -0.4]);
            let joined = tape.concat(pair, rest);
            let shifted = tape.add(joined, e);
            let h = tape.linear(s, w, b, shifted);
            let h = tape.tanh(h);
            let lp = tape.log_softmax_pick(h, 2);
            let logit = tape.pick(h, 0);
            let ls = tape.log_sigmoid(logit, false);
            let lsc = tape.log_sigmoid(logit, true);
            let diff = tape.sub(ls, lsc);
            let prod = tape.mul(diff, lp);
            let sq = tape.square(lp);
            let sum_sq = tape.sum(sq);
            let combo = tape.sum_list(vec![ls, lsc, sum_sq, prod]);
            tape.scale(combo, -1.7)
        }

        let build = |s: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let out = graph(&mut tape, s, w, b, table, tb);
            tape.scalar(out)
        };

        // analytic
        {
            let mut tape = Tape::new();
            let out = graph(&mut tape, &store, w, b, table, tb);
            tape.backward(out, &mut store).unwrap();
        }
        let ids = vec![w, b, table, tb];
        let worst = max_rel_error(&mut store, &ids, 1e-5, build);
        assert!(worst < 1e-6, "worst rel error {worst}");
    }
}
