//! Named parameter storage, initialisation and the Adam optimiser.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.values[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Every value flattened in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrite every value from a flat vector produced by [`ParamStore::flatten`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return Err(Error::Contract(format!(
                "parameter blob has {} values, model expects {}",
                flat.len(),
                self.scalar_count()
            )));
        }
        let mut off = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Register every parameter as a differentiable leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Register every parameter as a constant; nothing is differentiable.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    /// Gradients of every parameter, zeros where the output did not depend on it.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

/// Parameters bound to one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.values.iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in store
            .values
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + self.eps);
            }
        }
    }

    /// `[step, m..., v...]` for checkpointing.
    pub fn state(&self) -> (u64, Vec<f64>) {
        let flat = self.m.iter().chain(&self.v).flat_map(|x| x.iter().copied()).collect();
        (self.step, flat)
    }

    pub fn restore(store: &ParamStore, step: u64, flat: &[f64]) -> Result<Self> {
        let mut adam = Adam::new(store);
        let n = store.scalar_count();
        if flat.len() != 2 * n {
            return Err(Error::Contract(format!(
                "optimizer state has {} values, expected {}",
                flat.len(),
                2 * n
            )));
        }
        let mut off = 0;
        for buf in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            let k = buf.len();
            buf.copy_from_slice(&flat[off..off + k]);
            off += k;
        }
        adam.step = step;
        Ok(adam)
    }
}

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = total`.
pub fn cosine_lr(lr_max: f64, lr_min: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return lr_min;
    }
    let frac = (t.min(total) as f64) / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        s.add("b", Tensor::new(&[1, 3], vec![3.0, 4.0, 5.0]).unwrap());
        let flat = s.flatten();
        let mut t = s.clone();
        t.load_flat(&[0.0; 5]).unwrap();
        t.load_flat(&flat).unwrap();
        assert_eq!(s, t);
        assert!(t.load_flat(&[1.0]).is_err());
        assert_eq!(s.by_name("b").unwrap().data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::new(&[2], vec![3.0, -2.0]).unwrap());
        let mut adam = Adam::new(&s);
        for _ in 0..2000 {
            let g = s.get(id).map(|v| 2.0 * (v - 1.0));
            adam.update(&mut s, &[g], 1e-2);
        }
        for v in s.get(id).data() {
            assert!((v - 1.0).abs() < 1e-3);
        }
        let (step, flat) = adam.state();
        let again = Adam::restore(&s, step, &flat).unwrap();
        assert_eq!(again, adam);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 1e-6, 0, 10), 1e-3);
        assert!((cosine_lr(1e-3, 1e-6, 10, 10) - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(1e-3, 1e-6, 5, 10) - 0.5 * (1e-3 + 1e-6)).abs() < 1e-15);
    }
}
