use std::collections::HashMap;

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{invalid_arg, Result};

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter_mut())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape()));
        }
        out
    }

    /// Adds `scale * grad` for every parameter gradient in `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (name, g) in grads.params() {
            let Some(g) = g else { continue };
            let t = self
                .get_mut(name)
                .ok_or_else(|| invalid_arg(format!("gradient for unknown parameter `{name}`")))?;
            for (a, b) in t.data_mut().iter_mut().zip(g) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) {
        for (t, (_, o)) in self.tensors.iter_mut().zip(other.iter()) {
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += scale * b;
            }
        }
    }

    /// Snaps every value to the nearest f32 so a float32 checkpoint holds
    /// the exact state.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamW {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update. Parameters and moments are snapped to f32 afterwards.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / b1t;
                let vh = v[k] / b2t;
                p[k] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * p[k]);
            }
        }
        params.round_to_f32();
        self.m.round_to_f32();
        self.v.round_to_f32();
    }
}
