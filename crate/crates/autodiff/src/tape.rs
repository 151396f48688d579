//! Eagerly evaluated tape of vector operations.

use crate::params::{Gradients, ParamId, ParameterStore};
use crate::{Error, Result};

/// Reference to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Row(ParamId, usize),
    MatVec(ParamId, Var),
    Add(Var, Var),
    Sum(Vec<Var>),
    Mean(Vec<Var>),
    Concat(Vec<Var>),
    Tanh(Var),
    Softmax(Var),
    Max2(Var, Var, bool),
    Index(Var, usize),
    Scale(Var, Var),
    Cosine(Var, Var),
    SmoothL1(Var, Vec<f64>),
    NegLogIndex(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Row(..) => "row",
            Op::MatVec(..) => "matvec",
            Op::Add(..) => "add",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat(_) => "concat",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::Max2(..) => "max2",
            Op::Index(..) => "index",
            Op::Scale(..) => "scale",
            Op::Cosine(..) => "cosine",
            Op::SmoothL1(..) => "smooth_l1",
            Op::NegLogIndex(..) => "neg_log_index",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Records operations against a read-only [`ParameterStore`].
///
/// Every method evaluates its result immediately. The first non-finite
/// result is remembered and reported by [`Tape::check_finite`].
pub struct Tape<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
    non_finite: Option<(usize, &'static str)>,
    degenerate_cosines: usize,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            non_finite: None,
            degenerate_cosines: 0,
        }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.len(), 1, "scalar() on a vector node");
        value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Number of cosine nodes whose inputs had zero norm (scored as 0).
    pub fn degenerate_cosines(&self) -> usize {
        self.degenerate_cosines
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some((node, op)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        let id = self.nodes.len();
        if self.non_finite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node { op, value });
        Var(id)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Constant, value)
    }

    /// The whole tensor as a flat vector (used for biases).
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).data().to_vec();
        self.push(Op::Param(id), value)
    }

    /// One row of a matrix parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, row: usize) -> Var {
        let value = self.params.get(id).row(row).to_vec();
        self.push(Op::Row(id, row), value)
    }

    /// `W x` for a `[rows, cols]` parameter `W`.
    pub fn matvec(&mut self, id: ParamId, x: Var) -> Var {
        let w = self.params.get(id);
        let (rows, cols) = (w.rows(), w.cols());
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            xv.len(),
            cols,
            "matvec: `{}` has {cols} columns, input has {}",
            w.name(),
            xv.len()
        );
        let data = w.data();
        let value = (0..rows)
            .map(|r| dot(&data[r * cols..(r + 1) * cols], xv))
            .collect();
        self.push(Op::MatVec(id, x), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "add: dimension mismatch");
        let value = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        self.push(Op::Add(a, b), value)
    }

    /// Elementwise sum of equal-length vectors.
    pub fn sum(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "sum of no inputs");
        let mut value = self.value(inputs[0]).to_vec();
        for v in &inputs[1..] {
            let xs = self.value(*v);
            assert_eq!(xs.len(), value.len(), "sum: dimension mismatch");
            value.iter_mut().zip(xs).for_each(|(acc, x)| *acc += x);
        }
        self.push(Op::Sum(inputs.to_vec()), value)
    }

    /// Elementwise mean of equal-length vectors.
    pub fn mean(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "mean of no inputs");
        let n = inputs.len() as f64;
        let mut value = self.value(inputs[0]).to_vec();
        for v in &inputs[1..] {
            let xs = self.value(*v);
            assert_eq!(xs.len(), value.len(), "mean: dimension mismatch");
            value.iter_mut().zip(xs).for_each(|(acc, x)| *acc += x);
        }
        value.iter_mut().for_each(|x| *x /= n);
        self.push(Op::Mean(inputs.to_vec()), value)
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Var {
        let mut value = Vec::with_capacity(inputs.iter().map(|v| self.dim(*v)).sum());
        for v in inputs {
            value.extend_from_slice(self.value(*v));
        }
        self.push(Op::Concat(inputs.to_vec()), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), value)
    }

    /// Max-subtracted softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax(self.value(a));
        self.push(Op::Softmax(a), value)
    }

    /// Maximum of two scalars; ties select `a`.
    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.scalar(a), self.scalar(b));
        let first = x >= y;
        self.push(Op::Max2(a, b, first), vec![if first { x } else { y }])
    }

    /// Which branch a `max2` node selected (`true` for the first input).
    pub fn max2_took_first(&self, v: Var) -> Option<bool> {
        match self.nodes[v.0].op {
            Op::Max2(_, _, first) => Some(first),
            _ => None,
        }
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let value = vec![self.value(a)[i]];
        self.push(Op::Index(a, i), value)
    }

    /// Vector `a` times scalar node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let value = self.value(a).iter().map(|x| x * k).collect();
        self.push(Op::Scale(a, s), value)
    }

    /// Cosine similarity; zero-norm inputs score 0 and are counted.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "cosine: dimension mismatch");
        let (na, nb) = (norm(av), norm(bv));
        let value = if na == 0.0 || nb == 0.0 {
            self.degenerate_cosines += 1;
            0.0
        } else {
            (dot(av, bv) / (na * nb)).clamp(-1.0, 1.0)
        };
        self.push(Op::Cosine(a, b), vec![value])
    }

    /// Sum over components of the smooth-L1 penalty against a constant target.
    pub fn smooth_l1(&mut self, a: Var, target: &[f64]) -> Var {
        let value = vec![smooth_l1(self.value(a), target)];
        self.push(Op::SmoothL1(a, target.to_vec()), value)
    }

    /// `-ln p[i]` for a probability vector `p`.
    pub fn neg_log_index(&mut self, p: Var, i: usize) -> Var {
        let value = vec![-self.value(p)[i].ln()];
        self.push(Op::NegLogIndex(p, i), value)
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    ///
    /// Parameters that the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(loss, &mut grads);
        grads
    }

    /// Like [`Tape::backward`], accumulating into existing buffers.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.dim(loss), 1, "backward from a non-scalar node");
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    axpy(grads.get_mut(*p), &g, 1.0);
                }
                Op::Row(p, r) => {
                    let cols = self.params.get(*p).cols();
                    axpy(&mut grads.get_mut(*p)[r * cols..(r + 1) * cols], &g, 1.0);
                }
                Op::MatVec(p, x) => {
                    let w = self.params.get(*p);
                    let cols = w.cols();
                    let xv = &self.nodes[x.0].value;
                    let gw = grads.get_mut(*p);
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            axpy(&mut gw[r * cols..(r + 1) * cols], xv, *gr);
                        }
                    }
                    let gx = slot(&mut adj, *x, cols);
                    let data = w.data();
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            axpy(gx, &data[r * cols..(r + 1) * cols], *gr);
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut adj, *a, g.len()), &g, 1.0);
                    axpy(slot(&mut adj, *b, g.len()), &g, 1.0);
                }
                Op::Sum(inputs) => {
                    for v in inputs {
                        axpy(slot(&mut adj, *v, g.len()), &g, 1.0);
                    }
                }
                Op::Mean(inputs) => {
                    let k = 1.0 / inputs.len() as f64;
                    for v in inputs {
                        axpy(slot(&mut adj, *v, g.len()), &g, k);
                    }
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for v in inputs {
                        let n = self.dim(*v);
                        axpy(slot(&mut adj, *v, n), &g[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::Tanh(a) => {
                    let ga = slot(&mut adj, *a, g.len());
                    for ((acc, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *acc += gi * (1.0 - y * y);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = dot(&g, y);
                    let ga = slot(&mut adj, *a, g.len());
                    for ((acc, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *acc += yi * (gi - gy);
                    }
                }
                Op::Max2(a, b, first) => {
                    let target = if *first { *a } else { *b };
                    slot(&mut adj, target, 1)[0] += g[0];
                }
                Op::Index(a, i) => {
                    let n = self.dim(*a);
                    slot(&mut adj, *a, n)[*i] += g[0];
                }
                Op::Scale(a, s) => {
                    let k = self.scalar(*s);
                    let av = &self.nodes[a.0].value;
                    let ds = dot(&g, av);
                    axpy(slot(&mut adj, *a, g.len()), &g, k);
                    slot(&mut adj, *s, 1)[0] += ds;
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (na, nb) = (norm(av), norm(bv));
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let c = node.value[0];
                    let n = av.len();
                    // d cos / da = b / (|a||b|) - cos * a / |a|^2
                    let ga: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(x, y)| g[0] * (y / (na * nb) - c * x / (na * na)))
                        .collect();
                    let gb: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(x, y)| g[0] * (x / (na * nb) - c * y / (nb * nb)))
                        .collect();
                    axpy(slot(&mut adj, *a, n), &ga, 1.0);
                    axpy(slot(&mut adj, *b, n), &gb, 1.0);
                }
                Op::SmoothL1(a, target) => {
                    let av = &self.nodes[a.0].value;
                    let d: Vec<f64> = av
                        .iter()
                        .zip(target)
                        .map(|(x, t)| {
                            let d = x - t;
                            if d.abs() < 1.0 {
                                d
                            } else {
                                d.signum()
                            }
                        })
                        .collect();
                    axpy(slot(&mut adj, *a, av.len()), &d, g[0]);
                }
                Op::NegLogIndex(p, i) => {
                    let n = self.dim(*p);
                    let pi = self.nodes[p.0].value[*i];
                    slot(&mut adj, *p, n)[*i] -= g[0] / pi;
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Max-subtracted softmax of a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Smooth-L1 with knee at 1, summed over components.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, shape: &[usize], data: Vec<f64>) -> (ParameterStore, ParamId) {
        let mut store = ParameterStore::new();
        let id = store.register(name, shape, data).unwrap();
        (store, id)
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let (store, w) = store_with("w", &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let mut tape = Tape::new(&store);
        let c = tape.constant(vec![5.0]);
        let grads = tape.backward(c);
        assert_eq!(grads.get(w), &[0.0; 4]);
    }

    #[test]
    fn matvec_sum_gradient_is_outer_product_with_ones() {
        // y = sum(W x)  =>  dW[r][c] = x[c]
        let (store, w) = store_with("w", &[2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5]);
        let mut tape = Tape::new(&store);
        let x = tape.constant(vec![1.0, 2.0, 3.0]);
        let y = tape.matvec(w, x);
        let a = tape.index(y, 0);
        let b = tape.index(y, 1);
        let total = tape.add(a, b);
        assert_eq!(tape.value(y), &[4.5, 1.5]);
        let grads = tape.backward(total);
        assert_eq!(grads.get(w), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn max2_routes_to_first_on_ties() {
        let (store, w) = store_with("w", &[2], vec![1.0, 1.0]);
        let mut tape = Tape::new(&store);
        let p = tape.param(w);
        let a = tape.index(p, 0);
        let b = tape.index(p, 1);
        let m = tape.max2(a, b);
        assert_eq!(tape.max2_took_first(m), Some(true));
        let grads = tape.backward(m);
        assert_eq!(grads.get(w), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let y = softmax(&[1000.0, 1000.0 + 3f64.ln()]);
        assert!((y[0] - 0.25).abs() < 1e-12);
        assert!((y[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_cosine_scores_zero_and_is_counted() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(vec![0.0, 0.0]);
        let b = tape.constant(vec![1.0, 0.0]);
        let c = tape.cosine(a, b);
        assert_eq!(tape.scalar(c), 0.0);
        assert_eq!(tape.degenerate_cosines(), 1);
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let p = tape.constant(vec![0.0, 1.0]);
        let _ = tape.neg_log_index(p, 0);
        assert_eq!(
            tape.check_finite(),
            Err(Error::NonFinite {
                op: "neg_log_index",
                node: 1
            })
        );
    }

    #[test]
    fn smooth_l1_closed_forms() {
        assert_eq!(smooth_l1(&[0.5], &[0.0]), 0.125);
        assert_eq!(smooth_l1(&[2.0], &[0.0]), 1.5);
        assert_eq!(smooth_l1(&[0.3, 0.1], &[0.3, 0.1]), 0.0);
    }
}
