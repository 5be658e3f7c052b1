use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Result, TraceError};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    /// Row pinned at zero (padding index of an embedding table).
    frozen_row: Option<usize>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameters plus adaptive-moment optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.insert(name.into(), value, None)
    }

    /// Registers an embedding table whose `padding_row` is zeroed and never updated.
    pub fn add_embedding(
        &mut self,
        name: impl Into<String>,
        mut value: Tensor,
        padding_row: usize,
    ) -> Result<ParamId> {
        let (rows, cols) = value.dims2()?;
        if padding_row >= rows {
            return Err(TraceError::shape(format!(
                "padding row {padding_row} outside table of {rows} rows"
            )));
        }
        value.data_mut()[padding_row * cols..(padding_row + 1) * cols].fill(0.0);
        self.insert(name.into(), value, Some(padding_row))
    }

    fn insert(&mut self, name: String, mut value: Tensor, frozen_row: Option<usize>) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(TraceError::config(format!("duplicate parameter `{name}`")));
        }
        value.requires_grad = true;
        let id = ParamId(self.entries.len());
        let n = value.len();
        self.entries.push(Entry {
            name: name.clone(),
            value,
            frozen_row,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn frozen_row(&self, id: ParamId) -> Option<usize> {
        self.entries[id.0].frozen_row
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Moment buffers `(m, v)` for a parameter.
    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        let e = &self.entries[id.0];
        (&e.m, &e.v)
    }

    /// Replaces a parameter value, keeping its optimizer state.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(TraceError::shape(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        e.value.requires_grad = true;
        Ok(())
    }

    /// Copies parameter values (not optimizer state) from a store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(TraceError::shape("parameter stores differ in layout"));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(TraceError::shape(format!(
                    "parameter `{}` does not match `{}`",
                    dst.name, src.name
                )));
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// Order-sensitive digest of every parameter name, shape and value.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for &d in e.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in e.value.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// One bias-corrected adaptive-moment update. Parameters without a
    /// gradient are left alone; the step counter always advances.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(g) = grads.get(ParamId(i)) {
                if g.len() != e.value.len() {
                    return Err(TraceError::shape(format!(
                        "gradient for `{}` has {} entries, expected {}",
                        e.name,
                        g.len(),
                        e.value.len()
                    )));
                }
                if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                    return Err(TraceError::NonFinite {
                        param: e.name.clone(),
                        detail: format!("gradient entry {pos} is {}", g[pos]),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, e) in self.entries.iter_mut().enumerate() {
            let Some(g) = grads.get(ParamId(i)) else {
                continue;
            };
            let cols = *e.value.shape().last().unwrap();
            let frozen = e.frozen_row.map(|r| r * cols..(r + 1) * cols);
            let data = e.value.data_mut();
            for j in 0..data.len() {
                if frozen.as_ref().is_some_and(|f| f.contains(&j)) {
                    continue;
                }
                e.m[j] = cfg.beta1 * e.m[j] + (1.0 - cfg.beta1) * g[j];
                e.v[j] = cfg.beta2 * e.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = e.m[j] / bc1;
                let v_hat = e.v[j] / bc2;
                data[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-parameter gradient buffers, indexed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::scalar(theta)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(0.7);
        let mut g = Gradients::new();
        g.accumulate(id, &[0.0]);
        s.adam_step(&g, &AdamConfig::default()).unwrap();
        assert_eq!(s.get(id).item(), 0.7);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(1.0);
        let mut g = Gradients::new();
        g.accumulate(id, &[1.0]);
        let cfg = AdamConfig::default();
        s.adam_step(&g, &cfg).unwrap();
        // bias correction cancels at t=1: update = lr · 1 / (1 + eps)
        assert!((s.get(id).item() - (1.0 - cfg.lr / (1.0 + cfg.eps))).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent_matches_reference_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let (mut s, id) = scalar_store(1.0);
        // reference recurrence, written out independently
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let mut g = Gradients::new();
            g.accumulate(id, &[2.0 * s.get(id).item()]);
            s.adam_step(&g, &cfg).unwrap();

            let gr = 2.0 * th;
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            th -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(s.get(id).item().abs() < 0.05);
        assert!((s.get(id).item() - th).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = scalar_store(1.0);
        let mut g = Gradients::new();
        g.accumulate(id, &[f64::NAN]);
        let err = s.adam_step(&g, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn padding_row_stays_zero() {
        let mut s = ParamStore::new();
        let id = s
            .add_embedding("emb", Tensor::full(&[3, 2], 1.0), 0)
            .unwrap();
        assert_eq!(&s.get(id).data()[..2], &[0.0, 0.0]);
        let mut g = Gradients::new();
        g.accumulate(id, &[1.0; 6]);
        s.adam_step(&g, &AdamConfig::default()).unwrap();
        assert_eq!(&s.get(id).data()[..2], &[0.0, 0.0]);
        assert!(s.get(id).data()[2] < 1.0);
    }

    #[test]
    fn moments_match_parameter_shapes() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::zeros(&[4, 3])).unwrap();
        let (m, v) = s.moments(a);
        assert_eq!(m.len(), 12);
        assert_eq!(v.len(), 12);
        assert!(s.add("a", Tensor::zeros(&[1])).is_err());
    }
}
