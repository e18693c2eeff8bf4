//! Reverse-mode differentiation over vector-valued nodes.
//!
//! The forward pass records each operation with its output value. Gradients
//! of a scalar loss are seeded on one or more nodes (as `dL/dnode`) and pulled
//! back through the recorded operations into a [`Grads`] buffer.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{Grads, ParamStore, TensorId};
use super::ModelError;

pub type NodeId = usize;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// Contiguous slice of a parameter tensor (an embedding row, a bias).
    Param {
        tensor: TensorId,
        start: usize,
    },
    /// `W x (+ b)` with `W` of shape rows×cols.
    Linear {
        w: TensorId,
        b: Option<TensorId>,
        x: NodeId,
    },
    Sum(Vec<NodeId>),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Gelu(NodeId),
    Mean(Vec<NodeId>),
    Concat(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, dim: usize) -> NodeId {
        self.input(vec![0.0; dim])
    }

    pub fn param_slice(
        &mut self,
        p: &ParamStore,
        tensor: TensorId,
        start: usize,
        len: usize,
    ) -> NodeId {
        let value = p.get(tensor).data[start..start + len].to_vec();
        self.push(value, Op::Param { tensor, start })
    }

    pub fn param_row(&mut self, p: &ParamStore, tensor: TensorId, row: usize) -> NodeId {
        let c = p.get(tensor).cols();
        self.param_slice(p, tensor, row * c, c)
    }

    /// Whole vector-shaped parameter (a bias).
    pub fn param(&mut self, p: &ParamStore, tensor: TensorId) -> NodeId {
        let n = p.get(tensor).data.len();
        self.param_slice(p, tensor, 0, n)
    }

    pub fn linear(
        &mut self,
        p: &ParamStore,
        w: TensorId,
        b: Option<TensorId>,
        x: NodeId,
    ) -> Result<NodeId, ModelError> {
        let wt = p.get(w);
        let (rows, cols) = (wt.rows(), wt.cols());
        let xv = &self.nodes[x].value;
        if xv.len() != cols {
            return Err(ModelError::DimensionMismatch {
                expected: cols,
                got: xv.len(),
            });
        }
        let mut out = match b {
            Some(b) => p.get(b).data.clone(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wt.data[r * cols..(r + 1) * cols];
            *o += row.iter().zip(xv).map(|(a, c)| a * c).sum::<f64>();
        }
        Ok(self.push(out, Op::Linear { w, b, x }))
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId, ModelError> {
        let dim = self.nodes[xs[0]].value.len();
        let mut out = vec![0.0; dim];
        for &x in xs {
            let v = &self.nodes[x].value;
            if v.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            out.iter_mut().zip(v).for_each(|(o, a)| *o += a);
        }
        Ok(self.push(out, Op::Sum(xs.to_vec())))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ModelError> {
        self.sum(&[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ModelError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.len() != bv.len() {
            return Err(ModelError::DimensionMismatch {
                expected: av.len(),
                got: bv.len(),
            });
        }
        let out = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a].value.iter().map(|x| libm::tanh(*x)).collect();
        self.push(out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a].value.iter().map(|x| gelu(*x)).collect();
        self.push(out, Op::Gelu(a))
    }

    /// Mean of equally sized nodes; an empty list yields zeros of `dim`.
    pub fn mean(&mut self, xs: &[NodeId], dim: usize) -> Result<NodeId, ModelError> {
        let mut out = vec![0.0; dim];
        for &x in xs {
            let v = &self.nodes[x].value;
            if v.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            out.iter_mut().zip(v).for_each(|(o, a)| *o += a);
        }
        if !xs.is_empty() {
            let k = xs.len() as f64;
            out.iter_mut().for_each(|o| *o /= k);
        }
        Ok(self.push(out, Op::Mean(xs.to_vec())))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let out = xs
            .iter()
            .flat_map(|&x| self.nodes[x].value.iter().copied())
            .collect();
        self.push(out, Op::Concat(xs.to_vec()))
    }

    /// Pulls `seeds` (node, dL/dnode) back to the parameters, accumulating
    /// into `grads`.
    pub fn backward(
        &self,
        p: &ParamStore,
        seeds: &[(NodeId, Vec<f64>)],
        grads: &mut Grads,
    ) -> Result<(), ModelError> {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (id, g) in seeds {
            if g.len() != self.nodes[*id].value.len() {
                return Err(ModelError::DimensionMismatch {
                    expected: self.nodes[*id].value.len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite);
            }
            accumulate(&mut adj[*id], g);
            top = top.max(*id + 1);
        }

        for id in (0..top).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param { tensor, start } => {
                    let dst = &mut grads.data[*tensor][*start..*start + g.len()];
                    dst.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                Op::Linear { w, b, x } => {
                    let wt = p.get(*w);
                    let cols = wt.cols();
                    let xv = &self.nodes[*x].value;
                    let gw = &mut grads.data[*w];
                    let mut gx = vec![0.0; cols];
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let row = &wt.data[r * cols..(r + 1) * cols];
                        let grow = &mut gw[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            grow[c] += gr * xv[c];
                            gx[c] += gr * row[c];
                        }
                    }
                    if let Some(b) = b {
                        grads.data[*b].iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut adj[*x], &gx);
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        accumulate(&mut adj[x], &g);
                    }
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*b].value)
                        .map(|(u, v)| u * v)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(u, v)| u * v)
                        .collect();
                    accumulate(&mut adj[*a], &ga);
                    accumulate(&mut adj[*b], &gb);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(u, y)| u * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj[*a], &ga);
                }
                Op::Gelu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(u, x)| u * gelu_grad(*x))
                        .collect();
                    accumulate(&mut adj[*a], &ga);
                }
                Op::Mean(xs) => {
                    if !xs.is_empty() {
                        let k = xs.len() as f64;
                        let gs: Vec<f64> = g.iter().map(|u| u / k).collect();
                        for &x in xs {
                            accumulate(&mut adj[x], &gs);
                        }
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.nodes[x].value.len();
                        accumulate(&mut adj[x], &g[off..off + n]);
                        off += n;
                    }
                }
            }
        }
        if grads.all_finite() {
            Ok(())
        } else {
            Err(ModelError::NonFinite)
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        None => *slot = Some(g.to_vec()),
    }
}
