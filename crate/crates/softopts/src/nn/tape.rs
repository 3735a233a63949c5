//! Define-by-run reverse-mode autodiff over f64 vectors.
//!
//! Ops evaluate eagerly during construction (values live on the tape) and
//! `backward` replays the tape in reverse, accumulating parameter gradients
//! into the [`ParamStore`] (`+=` semantics, so two backward passes double the
//! gradients).

use crate::nn::heads::{log_softmax, sigmoid, softmax};
use crate::nn::store::{ParamStore, TensorId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    /// y = W x + b
    Linear { w: TensorId, b: TensorId, x: NodeId },
    /// y = table[row, :] + bias
    Embed { table: TensorId, bias: TensorId, row: usize },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    /// scalar y = log softmax(x)[index]
    LogSoftmaxPick { x: NodeId, index: usize },
    /// scalar y = log sigmoid(x) or log sigmoid(-x); x is scalar
    LogSigmoid { x: NodeId, complement: bool },
    /// scalar y = x[index]
    Pick { x: NodeId, index: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Square { x: NodeId },
    /// scalar y = sum_j x[j]
    Sum { x: NodeId },
    /// scalar y = sum of scalar nodes
    SumList { xs: Vec<NodeId> },
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Computation tape. Build ops against a `&ParamStore`, then call
/// [`Tape::backward`] on a scalar node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Applies one dense layer; shared by the tape and the no-grad inference path
/// so both produce bit-identical outputs.
pub(crate) fn linear_forward(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let out_dim = b.len();
    let in_dim = x.len();
    debug_assert_eq!(w.len(), out_dim * in_dim);
    let mut y = b.to_vec();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * in_dim..(i + 1) * in_dim];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(x.iter()) {
            acc += wij * xj;
        }
        *yi += acc;
    }
    y
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn constant_scalar(&mut self, value: f64) -> NodeId {
        self.push(Op::Const, vec![value])
    }

    pub fn linear(&mut self, store: &ParamStore, w: TensorId, b: TensorId, x: NodeId) -> NodeId {
        let wt = store.tensor(w);
        let bt = store.tensor(b);
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            wt.cols(),
            xv.len(),
            "linear: weight `{}` expects input width {}, got {}",
            wt.name(),
            wt.cols(),
            xv.len()
        );
        let value = linear_forward(&wt.data, &bt.data, xv);
        self.push(Op::Linear { w, b, x }, value)
    }

    pub fn embed(&mut self, store: &ParamStore, table: TensorId, bias: TensorId, row: usize) -> NodeId {
        let tt = store.tensor(table);
        let bt = store.tensor(bias);
        assert!(row < tt.rows(), "embed: row {row} out of {}", tt.rows());
        let dim = tt.cols();
        let mut value = tt.data[row * dim..(row + 1) * dim].to_vec();
        for (v, b) in value.iter_mut().zip(bt.data.iter()) {
            *v += b;
        }
        self.push(Op::Embed { table, bias, row }, value)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh { x }, value)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        self.push(Op::Relu { x }, value)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.nodes[a.0].value.clone();
        value.extend_from_slice(&self.nodes[b.0].value);
        self.push(Op::Concat { a, b }, value)
    }

    pub fn log_softmax_pick(&mut self, x: NodeId, index: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert!(index < xv.len(), "log_softmax_pick: index {index} out of {}", xv.len());
        let value = log_softmax(xv)[index];
        self.push(Op::LogSoftmaxPick { x, index }, vec![value])
    }

    /// `complement = false`: log sigmoid(x); `complement = true`: log sigmoid(-x).
    pub fn log_sigmoid(&mut self, x: NodeId, complement: bool) -> NodeId {
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(xv.len(), 1, "log_sigmoid expects a scalar node");
        let l = if complement { -xv[0] } else { xv[0] };
        // log sigmoid(l) = -softplus(-l), computed stably
        let value = if l > 0.0 { -(-l).exp().ln_1p() } else { l - l.exp().ln_1p() };
        self.push(Op::LogSigmoid { x, complement }, vec![value])
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert!(index < xv.len(), "pick: index {index} out of {}", xv.len());
        let value = xv[index];
        self.push(Op::Pick { x, index }, vec![value])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "add: length mismatch");
        let value = av.iter().zip(bv.iter()).map(|(x, y)| x + y).collect();
        self.push(Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "sub: length mismatch");
        let value = av.iter().zip(bv.iter()).map(|(x, y)| x - y).collect();
        self.push(Op::Sub { a, b }, value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "mul: length mismatch");
        let value = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
        self.push(Op::Mul { a, b }, value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push(Op::Scale { x, c }, value)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v * v).collect();
        self.push(Op::Square { x }, value)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().sum();
        self.push(Op::Sum { x }, vec![value])
    }

    pub fn sum_list(&mut self, xs: Vec<NodeId>) -> NodeId {
        let mut acc = 0.0;
        for &x in &xs {
            debug_assert_eq!(self.nodes[x.0].value.len(), 1, "sum_list expects scalars");
            acc += self.nodes[x.0].value[0];
        }
        self.push(Op::SumList { xs }, vec![acc])
    }

    /// Backpropagates from the given scalar node, accumulating parameter
    /// gradients into the store.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::usage("backward on a node that was never computed"));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::usage("backward root must be a scalar node"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Linear { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    let in_dim = xv.len();
                    {
                        let wt = store.tensor_mut(*w);
                        for (r, gi) in g.iter().enumerate() {
                            if *gi != 0.0 {
                                let row = &mut wt.grad[r * in_dim..(r + 1) * in_dim];
                                for (gwj, xj) in row.iter_mut().zip(xv.iter()) {
                                    *gwj += gi * xj;
                                }
                            }
                        }
                    }
                    {
                        let bt = store.tensor_mut(*b);
                        for (gbj, gi) in bt.grad.iter_mut().zip(g.iter()) {
                            *gbj += gi;
                        }
                    }
                    let wt = store.tensor(*w);
                    let gx = grad_slot(&mut grads, x.0, in_dim);
                    for (r, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            let row = &wt.data[r * in_dim..(r + 1) * in_dim];
                            for (gxj, wij) in gx.iter_mut().zip(row.iter()) {
                                *gxj += gi * wij;
                            }
                        }
                    }
                }
                Op::Embed { table, bias, row } => {
                    let dim = g.len();
                    {
                        let tt = store.tensor_mut(*table);
                        let slot = &mut tt.grad[row * dim..(row + 1) * dim];
                        for (gt, gi) in slot.iter_mut().zip(g.iter()) {
                            *gt += gi;
                        }
                    }
                    let bt = store.tensor_mut(*bias);
                    for (gb, gi) in bt.grad.iter_mut().zip(g.iter()) {
                        *gb += gi;
                    }
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[i].value;
                    let gx = grad_slot(&mut grads, x.0, y.len());
                    for ((gxj, yj), gi) in gx.iter_mut().zip(y.iter()).zip(g.iter()) {
                        *gxj += gi * (1.0 - yj * yj);
                    }
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = grad_slot(&mut grads, x.0, xv.len());
                    for ((gxj, xj), gi) in gx.iter_mut().zip(xv.iter()).zip(g.iter()) {
                        if *xj > 0.0 {
                            *gxj += gi;
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let alen = self.nodes[a.0].value.len();
                    let blen = self.nodes[b.0].value.len();
                    {
                        let ga = grad_slot(&mut grads, a.0, alen);
                        for (gaj, gi) in ga.iter_mut().zip(g[..alen].iter()) {
                            *gaj += gi;
                        }
                    }
                    let gb = grad_slot(&mut grads, b.0, blen);
                    for (gbj, gi) in gb.iter_mut().zip(g[alen..].iter()) {
                        *gbj += gi;
                    }
                }
                Op::LogSoftmaxPick { x, index } => {
                    let xv = &self.nodes[x.0].value;
                    let sm = softmax(xv);
                    let gx = grad_slot(&mut grads, x.0, xv.len());
                    for (j, (gxj, smj)) in gx.iter_mut().zip(sm.iter()).enumerate() {
                        let indicator = if j == *index { 1.0 } else { 0.0 };
                        *gxj += g[0] * (indicator - smj);
                    }
                }
                Op::LogSigmoid { x, complement } => {
                    let xv = self.nodes[x.0].value[0];
                    let d = if *complement { -sigmoid(xv) } else { sigmoid(-xv) };
                    let gx = grad_slot(&mut grads, x.0, 1);
                    gx[0] += g[0] * d;
                }
                Op::Pick { x, index } => {
                    let len = self.nodes[x.0].value.len();
                    let gx = grad_slot(&mut grads, x.0, len);
                    gx[*index] += g[0];
                }
                Op::Add { a, b } => {
                    {
                        let ga = grad_slot(&mut grads, a.0, g.len());
                        for (gaj, gi) in ga.iter_mut().zip(g.iter()) {
                            *gaj += gi;
                        }
                    }
                    let gb = grad_slot(&mut grads, b.0, g.len());
                    for (gbj, gi) in gb.iter_mut().zip(g.iter()) {
                        *gbj += gi;
                    }
                }
                Op::Sub { a, b } => {
                    {
                        let ga = grad_slot(&mut grads, a.0, g.len());
                        for (gaj, gi) in ga.iter_mut().zip(g.iter()) {
                            *gaj += gi;
                        }
                    }
                    let gb = grad_slot(&mut grads, b.0, g.len());
                    for (gbj, gi) in gb.iter_mut().zip(g.iter()) {
                        *gbj -= gi;
                    }
                }
                Op::Mul { a, b } => {
                    let bv = self.nodes[b.0].value.clone();
                    let av = self.nodes[a.0].value.clone();
                    {
                        let ga = grad_slot(&mut grads, a.0, g.len());
                        for ((gaj, gi), bj) in ga.iter_mut().zip(g.iter()).zip(bv.iter()) {
                            *gaj += gi * bj;
                        }
                    }
                    let gb = grad_slot(&mut grads, b.0, g.len());
                    for ((gbj, gi), aj) in gb.iter_mut().zip(g.iter()).zip(av.iter()) {
                        *gbj += gi * aj;
                    }
                }
                Op::Scale { x, c } => {
                    let gx = grad_slot(&mut grads, x.0, g.len());
                    for (gxj, gi) in gx.iter_mut().zip(g.iter()) {
                        *gxj += gi * c;
                    }
                }
                Op::Square { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = grad_slot(&mut grads, x.0, g.len());
                    for ((gxj, xj), gi) in gx.iter_mut().zip(xv.iter()).zip(g.iter()) {
                        *gxj += 2.0 * xj * gi;
                    }
                }
                Op::Sum { x } => {
                    let len = self.nodes[x.0].value.len();
                    let gx = grad_slot(&mut grads, x.0, len);
                    for gxj in gx.iter_mut() {
                        *gxj += g[0];
                    }
                }
                Op::SumList { xs } => {
                    for &x in xs {
                        let gx = grad_slot(&mut grads, x.0, 1);
                        gx[0] += g[0];
                    }
                }
            }
        }
        Ok(())
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], idx: usize, len: usize) -> &'a mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_layer_bias_grads_are_one_weight_grads_are_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = store.register("w", &[2, 3], Init::Zeros, &mut rng).unwrap();
        let b = store.register("b", &[2], Init::Zeros, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0, -2.0, 0.5]);
        let y = tape.linear(&store, w, b, x);
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.tensor(b).grad, vec![1.0, 1.0]);
        assert_eq!(
            store.tensor(w).grad,
            vec![1.0, -2.0, 0.5, 1.0, -2.0, 0.5]
        );
    }

    #[test]
    fn backward_twice_doubles_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = store
            .register("w", &[2, 2], Init::Orthogonal { gain: 1.0 }, &mut rng)
            .unwrap();
        let b = store.register("b", &[2], Init::Zeros, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.3, 0.7]);
        let h = tape.linear(&store, w, b, x);
        let h = tape.tanh(h);
        let loss = tape.sum(h);
        tape.backward(loss, &mut store).unwrap();
        let once = store.tensor(w).grad.clone();
        tape.backward(loss, &mut store).unwrap();
        let twice = store.tensor(w).grad.clone();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0, 2.0]);
        assert!(tape.backward(x, &mut store).is_err());
    }

    #[test]
    fn backward_on_missing_node_is_usage_error() {
        let mut store = ParamStore::new();
        let tape = Tape::new();
        assert!(tape.backward(NodeId(0), &mut store).is_err());
    }

    #[test]
    fn log_sigmoid_extreme_logits_are_finite() {
        let mut tape = Tape::new();
        let x = tape.constant_scalar(1000.0);
        let lp = tape.log_sigmoid(x, false);
        assert!(tape.scalar(lp) <= 0.0 && tape.scalar(lp) > -1e-6);
        let x2 = tape.constant_scalar(-1000.0);
        let lp2 = tape.log_sigmoid(x2, false);
        assert!((tape.scalar(lp2) + 1000.0).abs() < 1e-9);
    }
}
