//! Named parameter tensors with paired gradient buffers.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Handle into a [`ParamStore`]. Stable for the lifetime of the store;
/// tensors are never removed, only re-initialized in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub(crate) fn index(self) -> usize {
        self.0
    }
}

/// A flat f64 tensor (row-major) with shape metadata and a gradient buffer of
/// identical shape.
#[derive(Debug, Clone)]
pub struct Tensor {
    name: String,
    shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    /// Frozen tensors keep accumulating gradients but are skipped by the
    /// optimizer.
    pub trainable: bool,
}

impl Tensor {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Orthogonal rows/columns scaled by the gain. Matrices only.
    Orthogonal { gain: f64 },
    /// All entries set to the given constant.
    Constant(f64),
}

/// Collection of named tensors plus a monotone update counter.
///
/// Single-writer: read-only forward passes may share `&ParamStore` across
/// threads, gradient accumulation and optimizer steps take `&mut`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    update_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its handle. Names must be unique.
    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("tensor `{name}` already registered")));
        }
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::config(format!("tensor `{name}` has zero elements")));
        }
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Constant(c) => vec![c; numel],
            Init::Orthogonal { gain } => {
                if shape.len() != 2 {
                    return Err(Error::config(format!(
                        "orthogonal init needs a matrix, `{name}` has shape {shape:?}"
                    )));
                }
                orthogonal(shape[0], shape[1], gain, rng)
            }
        };
        let id = self.tensors.len();
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; numel],
            data,
            trainable: true,
        });
        self.index.insert(name.to_string(), id);
        Ok(TensorId(id))
    }

    /// Overwrites an existing tensor's values in place (same shape), used by
    /// task resets. Gradients are cleared.
    pub fn reinit(&mut self, id: TensorId, init: Init, rng: &mut ChaCha8Rng) {
        let t = &mut self.tensors[id.0];
        match init {
            Init::Zeros => t.data.fill(0.0),
            Init::Constant(c) => t.data.fill(c),
            Init::Orthogonal { gain } => {
                assert_eq!(t.shape.len(), 2, "orthogonal init needs a matrix");
                t.data = orthogonal(t.shape[0], t.shape[1], gain, rng);
            }
        }
        t.grad.fill(0.0);
    }

    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.index
            .get(name)
            .map(|&i| TensorId(i))
            .ok_or_else(|| Error::usage(format!("unknown tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn ids(&self) -> impl Iterator<Item = TensorId> + '_ {
        (0..self.tensors.len()).map(TensorId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Copies values from tensor `src` into tensor `dst`. Shapes must match.
    pub fn copy_values(&mut self, src: TensorId, dst: TensorId) -> Result<()> {
        if self.tensors[src.0].shape != self.tensors[dst.0].shape {
            return Err(Error::config(format!(
                "shape mismatch copying `{}` {:?} into `{}` {:?}",
                self.tensors[src.0].name,
                self.tensors[src.0].shape,
                self.tensors[dst.0].name,
                self.tensors[dst.0].shape,
            )));
        }
        let values = self.tensors[src.0].data.clone();
        self.tensors[dst.0].data = values;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub(crate) fn bump_update_count(&mut self) {
        self.update_count += 1;
    }

    /// FNV-1a digest over the raw bytes of the named tensors' values, in the
    /// given order. Used to assert parameter immutability in tests and
    /// transfer protocols.
    pub fn digest(&self, names: &[String]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for name in names {
            for byte in name.as_bytes() {
                h ^= u64::from(*byte);
                h = h.wrapping_mul(0x100000001b3);
            }
            if let Some(&i) = self.index.get(name.as_str()) {
                for v in &self.tensors[i].data {
                    for byte in v.to_le_bytes() {
                        h ^= u64::from(byte);
                        h = h.wrapping_mul(0x100000001b3);
                    }
                }
            }
        }
        h
    }
}

/// Standard normal draw via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            let u2: f64 = rng.gen::<f64>();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Orthogonal matrix init: Gaussian draw followed by modified Gram-Schmidt
/// over the shorter dimension, scaled by `gain`. For `rows <= cols` the rows
/// are orthonormal, otherwise the columns are.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // r <= c: orthonormalize the r rows of an r x c Gaussian matrix.
    let mut m: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..c).map(|_| gaussian(rng)).collect())
        .collect();
    for i in 0..r {
        for j in 0..i {
            let dot: f64 = (0..c).map(|k| m[i][k] * m[j][k]).sum();
            for k in 0..c {
                m[i][k] -= dot * m[j][k];
            }
        }
        let norm: f64 = (0..c).map(|k| m[i][k] * m[i][k]).sum::<f64>().sqrt();
        for k in 0..c {
            m[i][k] /= norm;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if transpose { m[j][i] } else { m[i][j] };
            out[i * cols + j] = v * gain;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn grad_buffers_match_shapes_and_zero() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let id = store
            .register("w", &[3, 4], Init::Orthogonal { gain: 1.0 }, &mut r)
            .unwrap();
        let t = store.tensor(id);
        assert_eq!(t.data.len(), t.grad.len());
        store.tensor_mut(id).grad[5] = 2.5;
        store.zero_grads();
        assert!(store.tensor(id).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new();
        let mut r = rng();
        store.register("w", &[2], Init::Zeros, &mut r).unwrap();
        assert!(store.register("w", &[2], Init::Zeros, &mut r).is_err());
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut r = rng();
        for &(rows, cols) in &[(4usize, 9usize), (9, 4), (6, 6)] {
            let w = orthogonal(rows, cols, 1.0, &mut r);
            // Gram matrix of the shorter dimension must be the identity.
            let (n, stride, row_major) = if rows <= cols {
                (rows, cols, true)
            } else {
                (cols, rows, false)
            };
            for i in 0..n {
                for j in 0..n {
                    let mut dot = 0.0;
                    for k in 0..stride {
                        let (a, b) = if row_major {
                            (w[i * cols + k], w[j * cols + k])
                        } else {
                            (w[k * cols + i], w[k * cols + j])
                        };
                        dot += a * b;
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10, "gram[{i}][{j}] = {dot}");
                }
            }
        }
    }

    #[test]
    fn digest_changes_with_values() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let id = store
            .register("w", &[2, 2], Init::Orthogonal { gain: 1.0 }, &mut r)
            .unwrap();
        let names = vec!["w".to_string()];
        let d0 = store.digest(&names);
        store.tensor_mut(id).data[0] += 1e-12;
        assert_ne!(d0, store.digest(&names));
    }
}
