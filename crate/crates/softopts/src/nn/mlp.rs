//! Feed-forward networks over the parameter store.

use rand_chacha::ChaCha8Rng;

use crate::nn::store::{Init, ParamStore, TensorId};
use crate::nn::tape::{linear_forward, NodeId, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, v: &mut [f64]) {
        match self {
            Activation::Tanh => {
                for x in v.iter_mut() {
                    *x = x.tanh();
                }
            }
            Activation::Relu => {
                for x in v.iter_mut() {
                    *x = x.max(0.0);
                }
            }
        }
    }

    fn apply_tape(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Architecture of one feed-forward network. `hidden` may be empty, which
/// yields a single linear layer (the shape used for every policy head).
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output: usize,
    /// Apply the activation to the output layer as well (encoder stages).
    pub activate_output: bool,
}

impl MlpSpec {
    pub fn head(input: usize, output: usize) -> Self {
        MlpSpec {
            input,
            hidden: Vec::new(),
            activation: Activation::Tanh,
            output,
            activate_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config(format!(
                "all widths must be >= 1, got input={} hidden={:?} output={}",
                self.input, self.hidden, self.output
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }
}

/// An MLP bound to named tensors in a [`ParamStore`]. Layer `j` uses tensors
/// `<prefix>.l<j>.w` and `<prefix>.l<j>.b`.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(TensorId, TensorId)>,
}

impl Mlp {
    /// Registers parameters: orthogonal weights, zero biases. The output
    /// layer uses `out_gain` (heads are typically initialized small or zero).
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        spec: MlpSpec,
        out_gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::new();
        for j in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[j], widths[j + 1]);
            let last = j == widths.len() - 2;
            let gain = if last && !spec.activate_output { out_gain } else { 1.0 };
            let init = if gain == 0.0 {
                Init::Zeros
            } else {
                Init::Orthogonal { gain }
            };
            let w = store.register(&format!("{prefix}.l{j}.w"), &[fan_out, fan_in], init, rng)?;
            let b = store.register(&format!("{prefix}.l{j}.b"), &[fan_out], Init::Zeros, rng)?;
            layers.push((w, b));
        }
        Ok(Mlp { spec, layers })
    }

    /// Binds to already-registered tensors (e.g. after loading a checkpoint).
    pub fn bind(store: &ParamStore, prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::new();
        for j in 0..widths.len() - 1 {
            let w = store.id(&format!("{prefix}.l{j}.w"))?;
            let b = store.id(&format!("{prefix}.l{j}.b"))?;
            if store.tensor(w).shape() != [widths[j + 1], widths[j]] {
                return Err(Error::config(format!(
                    "{prefix}.l{j}.w has shape {:?}, spec wants {:?}",
                    store.tensor(w).shape(),
                    [widths[j + 1], widths[j]]
                )));
            }
            layers.push((w, b));
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn tensor_ids(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.spec.input {
            return Err(Error::config(format!(
                "input width {len} does not match spec input {}",
                self.spec.input
            )));
        }
        Ok(())
    }

    /// Pure forward pass (no gradients). Bit-identical to the tape path.
    pub fn forward(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut x = input.to_vec();
        for (j, &(w, b)) in self.layers.iter().enumerate() {
            let wt = store.tensor(w);
            let bt = store.tensor(b);
            x = linear_forward(&wt.data, &bt.data, &x);
            let last = j == self.layers.len() - 1;
            if !last || self.spec.activate_output {
                self.spec.activation.apply(&mut x);
            }
        }
        Ok(x)
    }

    /// Forward pass recorded on the tape for backpropagation.
    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, input: NodeId) -> Result<NodeId> {
        self.check_input(tape.value(input).len())?;
        let mut x = input;
        for (j, &(w, b)) in self.layers.iter().enumerate() {
            x = tape.linear(store, w, b, x);
            let last = j == self.layers.len() - 1;
            if !last || self.spec.activate_output {
                x = self.spec.activation.apply_tape(tape, x);
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent dense forward pass used as an oracle.
    fn naive_mlp(store: &ParamStore, mlp: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let n = mlp.layers.len();
        for (j, &(w, b)) in mlp.layers.iter().enumerate() {
            let wt = store.tensor(w);
            let bt = store.tensor(b);
            let (rows, cols) = (wt.rows(), wt.cols());
            let mut y = vec![0.0; rows];
            for r in 0..rows {
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += wt.data[r * cols + c] * x[c];
                }
                y[r] = acc + bt.data[r];
            }
            if j + 1 < n || mlp.spec.activate_output {
                for v in y.iter_mut() {
                    *v = match mlp.spec.activation {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
            x = y;
        }
        x
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut store = ParamStore::new();
        let mut r = rng(0);
        let spec = MlpSpec {
            input: 3,
            hidden: vec![4],
            activation: Activation::Tanh,
            output: 2,
            activate_output: false,
        };
        let mlp = Mlp::register(&mut store, "z", spec, 0.0, &mut r).unwrap();
        for (w, _) in &mlp.layers {
            store.tensor_mut(*w).data.fill(0.0);
        }
        let out = mlp.forward(&store, &[1.0, -5.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mut r = rng(0);
        let mlp = Mlp::register(&mut store, "id", MlpSpec::head(2, 2), 1.0, &mut r).unwrap();
        let (w, _) = mlp.layers[0];
        store.tensor_mut(w).data.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let out = mlp.forward(&store, &[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn forward_matches_naive_dense_oracle() {
        let mut r = rng(42);
        for trial in 0..50 {
            let mut store = ParamStore::new();
            let spec = MlpSpec {
                input: r.gen_range(1..6),
                hidden: (0..r.gen_range(0..3)).map(|_| r.gen_range(1..7)).collect(),
                activation: if trial % 2 == 0 { Activation::Tanh } else { Activation::Relu },
                output: r.gen_range(1..5),
                activate_output: trial % 3 == 0,
            };
            let mlp = Mlp::register(&mut store, "n", spec.clone(), 1.0, &mut r).unwrap();
            let input: Vec<f64> = (0..spec.input).map(|_| r.gen_range(-2.0..2.0)).collect();
            let fast = mlp.forward(&store, &input).unwrap();
            let naive = naive_mlp(&store, &mlp, &input);
            for (a, b) in fast.iter().zip(naive.iter()) {
                assert!((a - b).abs() < 1e-12, "fast={a} naive={b}");
            }
        }
    }

    #[test]
    fn tape_forward_is_bit_identical_to_pure_forward() {
        let mut store = ParamStore::new();
        let mut r = rng(9);
        let spec = MlpSpec {
            input: 4,
            hidden: vec![5, 3],
            activation: Activation::Tanh,
            output: 2,
            activate_output: false,
        };
        let mlp = Mlp::register(&mut store, "m", spec, 1.0, &mut r).unwrap();
        let input = vec![0.1, -0.7, 1.3, 0.0];
        let pure = mlp.forward(&store, &input).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let y = mlp.forward_tape(&mut tape, &store, x).unwrap();
        assert_eq!(pure.as_slice(), tape.value(y));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut store = ParamStore::new();
        let mut r = rng(1);
        let mlp = Mlp::register(&mut store, "s", MlpSpec::head(3, 2), 1.0, &mut r).unwrap();
        assert!(matches!(
            mlp.forward(&store, &[1.0, 2.0]),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn zero_width_spec_rejected() {
        let spec = MlpSpec {
            input: 3,
            hidden: vec![0],
            activation: Activation::Tanh,
            output: 1,
            activate_output: false,
        };
        assert!(spec.validate().is_err());
    }
}
