//! First-order optimizers: plain SGD and Adam, with optional global-norm
//! gradient clipping.

use serde::{Deserialize, Serialize};

use crate::nn::store::{ParamStore, TensorId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimKind,
    pub lr: f64,
    /// Global gradient-norm clip over all trainable tensors; `None` disables.
    pub max_grad_norm: Option<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    // Adam moments, indexed like the store's tensors; lazily sized.
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimKind, lr: f64, max_grad_norm: Option<f64>) -> Self {
        Optimizer {
            kind,
            lr,
            max_grad_norm,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Clears the moment buffers of one tensor (used when a head is
    /// re-initialized mid-training).
    pub fn reset_tensor(&mut self, id: TensorId) {
        let idx = id.index();
        if idx < self.m.len() {
            self.m[idx].fill(0.0);
            self.v[idx].fill(0.0);
        }
    }

    /// Applies one update from the accumulated gradients of all trainable
    /// tensors, then clears those gradients and advances the store's update
    /// counter. Gradients must be finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<TensorId> = store
            .ids()
            .filter(|&id| store.tensor(id).trainable)
            .collect();

        let mut sq_norm = 0.0;
        for &id in &ids {
            let t = store.tensor(id);
            for g in &t.grad {
                if !g.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite gradient in tensor `{}`",
                        t.name()
                    )));
                }
                sq_norm += g * g;
            }
        }
        let scale = match self.max_grad_norm {
            Some(max) if sq_norm.sqrt() > max => max / sq_norm.sqrt(),
            _ => 1.0,
        };

        self.t += 1;
        for &id in &ids {
            let idx = id.index();
            if self.m.len() <= idx {
                self.m.resize(idx + 1, Vec::new());
                self.v.resize(idx + 1, Vec::new());
            }
            let tensor = store.tensor_mut(id);
            match self.kind {
                OptimKind::Sgd => {
                    for (p, g) in tensor.data.iter_mut().zip(tensor.grad.iter()) {
                        *p -= self.lr * scale * g;
                    }
                }
                OptimKind::Adam => {
                    if self.m[idx].len() != tensor.numel() {
                        self.m[idx] = vec![0.0; tensor.numel()];
                        self.v[idx] = vec![0.0; tensor.numel()];
                    }
                    let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                    let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                    for (((p, g), m), v) in tensor
                        .data
                        .iter_mut()
                        .zip(tensor.grad.iter())
                        .zip(self.m[idx].iter_mut())
                        .zip(self.v[idx].iter_mut())
                    {
                        let g = g * scale;
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        store.zero_grads();
        store.bump_update_count();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_step_matches_definition() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = store.register("p", &[1], Init::Zeros, &mut rng).unwrap();
        store.tensor_mut(id).grad[0] = 1.0;
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.1, None);
        opt.step(&mut store).unwrap();
        assert!((store.data(id)[0] + 0.1).abs() < 1e-15);
        assert_eq!(store.update_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_sgd_params_bit_identical() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = store
            .register("p", &[4, 4], Init::Orthogonal { gain: 1.0 }, &mut rng)
            .unwrap();
        let before = store.data(id).to_vec();
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.5, Some(0.5));
        opt.step(&mut store).unwrap();
        let after = store.data(id);
        for (a, b) in before.iter().zip(after.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn adam_monotonically_decreases_a_quadratic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id = store.register("x", &[3], Init::Constant(2.0), &mut rng).unwrap();
        // 100 steps of size <= lr stay well inside the basin, so the loss
        // decreases at every step.
        let mut opt = Optimizer::new(OptimKind::Adam, 0.01, None);
        let loss = |s: &ParamStore| -> f64 { s.data(id).iter().map(|x| x * x).sum() };
        let mut prev = loss(&store);
        for _ in 0..100 {
            let grads: Vec<f64> = store.data(id).iter().map(|x| 2.0 * x).collect();
            store.tensor_mut(id).grad.copy_from_slice(&grads);
            opt.step(&mut store).unwrap();
            let now = loss(&store);
            assert!(now < prev, "loss rose: {now} >= {prev}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let id = store.register("bad.w", &[2], Init::Zeros, &mut rng).unwrap();
        store.tensor_mut(id).grad[1] = f64::NAN;
        let mut opt = Optimizer::new(OptimKind::Adam, 0.01, None);
        let err = opt.step(&mut store).unwrap_err();
        assert!(err.to_string().contains("bad.w"), "{err}");
    }

    #[test]
    fn frozen_tensors_are_skipped() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let id = store.register("f", &[1], Init::Constant(1.0), &mut rng).unwrap();
        store.tensor_mut(id).trainable = false;
        store.tensor_mut(id).grad[0] = 10.0;
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.1, None);
        opt.step(&mut store).unwrap();
        assert_eq!(store.data(id)[0], 1.0);
    }

    #[test]
    fn global_norm_clip_rescales() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = store.register("a", &[1], Init::Zeros, &mut rng).unwrap();
        let b = store.register("b", &[1], Init::Zeros, &mut rng).unwrap();
        store.tensor_mut(a).grad[0] = 3.0;
        store.tensor_mut(b).grad[0] = 4.0; // norm 5
        let mut opt = Optimizer::new(OptimKind::Sgd, 1.0, Some(0.5));
        opt.step(&mut store).unwrap();
        // scaled by 0.1: steps are -0.3, -0.4
        assert!((store.data(a)[0] + 0.3).abs() < 1e-12);
        assert!((store.data(b)[0] + 0.4).abs() < 1e-12);
    }
}
