use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

pub type TensorId = usize;

/// Named dense tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: alloc::vec![0.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, t: Tensor) -> TensorId {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: TensorId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Fills a tensor with N(0, std²) draws.
    pub fn randomize(&mut self, id: TensorId, std: f64, rng: &mut Rng) {
        if std == 0.0 {
            return;
        }
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut self.tensors[id].data {
            *v = normal.sample(rng);
        }
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            data: store
                .tensors
                .iter()
                .map(|t| alloc::vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn is_zero(&self, id: TensorId) -> bool {
        self.data[id].iter().all(|g| *g == 0.0)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|g| g.is_finite())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

/// Plain gradient step `θ ← θ − lr · mult[t] · ∇θ`.
pub fn sgd_step(store: &mut ParamStore, grads: &Grads, lr: f64, tensor_lr_mult: Option<&[f64]>) {
    for (id, (t, g)) in store.tensors.iter_mut().zip(&grads.data).enumerate() {
        let step = lr * tensor_lr_mult.map_or(1.0, |m| m[id]);
        for (p, d) in t.data.iter_mut().zip(g) {
            *p -= step * d;
        }
    }
}
