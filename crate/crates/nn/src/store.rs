use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::DenseTensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters in one flat buffer, with gradients and Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    values: Vec<f64>,
    grads: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, dims: Vec<usize>, init: Vec<f64>) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let n: usize = dims.iter().product();
        if init.len() != n {
            return Err(NnError::Shape(format!(
                "parameter `{name}` {dims:?} given {} values",
                init.len()
            )));
        }
        let entry = ParamEntry {
            name: name.to_string(),
            dims,
            offset: self.values.len(),
        };
        self.values.extend(init);
        self.grads.resize(self.values.len(), 0.0);
        self.m.resize(self.values.len(), 0.0);
        self.v.resize(self.values.len(), 0.0);
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(entry);
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Kaiming-uniform initialisation with the given fan-in.
    pub fn add_kaiming(
        &mut self,
        name: &str,
        dims: Vec<usize>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId, NnError> {
        let n: usize = dims.iter().product();
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let init = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, dims, init)
    }

    pub fn add_const(&mut self, name: &str, dims: Vec<usize>, value: f64) -> Result<ParamId, NnError> {
        let n = dims.iter().product();
        self.add(name, dims, vec![value; n])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let e = &self.entries[id.0];
        e.offset..e.offset + e.len()
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[self.range(id)]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.values[r]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[self.range(id)]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.grads[r]
    }

    /// Parameter values together with the mutable gradient buffer.
    pub fn value_and_grad(&mut self, id: ParamId) -> (&[f64], &mut [f64]) {
        let r = self.range(id);
        (&self.values[r.clone()], &mut self.grads[r])
    }

    pub fn tensor(&self, id: ParamId) -> DenseTensor {
        DenseTensor {
            dims: self.entries[id.0].dims.clone(),
            data: self.value(id).to_vec(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale_grads(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| *g *= s);
    }

    /// Global L2 norm of the gradient.
    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    fn check_finite(&self) -> Result<(), NnError> {
        if let Some(pos) = self.grads.iter().position(|g| !g.is_finite()) {
            let e = self
                .entries
                .iter()
                .find(|e| (e.offset..e.offset + e.len()).contains(&pos))
                .expect("offset inside some parameter");
            return Err(NnError::NonFiniteGradient {
                name: e.name.clone(),
                index: pos - e.offset,
            });
        }
        Ok(())
    }

    /// One bias-corrected Adam update. Parameters are left untouched when any
    /// gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NnError> {
        self.check_finite()?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let g = self.grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            self.values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}
