//! Named parameter storage, initialization, and the Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{all_finite, numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of learnable arrays. Order is significant: it fixes the
/// layout of optimizer moments and of checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "param",
                format!(
                    "{name}: shape {shape:?} needs {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            ));
        }
        if self.index_of(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    /// He (fan-in) normal initialization; `fan_in` is the number of inputs
    /// feeding one output unit.
    pub fn push_he<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let data = (0..numel(shape)).map(|_| normal.sample(rng)).collect();
        self.push(name, shape, data)
    }

    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.push(name, shape, vec![0.0; numel(shape)])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all arrays.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.params.iter().any(|p| p.name.starts_with(prefix))
    }

    /// Fresh grad-tracking leaves, one per array, in storage order.
    pub fn leaves(&self) -> Result<Vec<Tensor>> {
        self.params
            .iter()
            .map(|p| Tensor::param(&p.shape, p.data.clone()))
            .collect()
    }
}

/// Adam moments and hyperparameters for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let n = params.total_len();
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. `grads` holds one vector per parameter
/// array, in storage order. On any error the parameters are left untouched.
pub fn adam_step(params: &mut ParamSet, grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradient arrays for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if state.m.len() != params.total_len() || state.v.len() != params.total_len() {
        return Err(Error::InvalidArgument(
            "optimizer state does not track this parameter set".into(),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.data.len() != g.len() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient size mismatch for {}", p.name),
            ));
        }
        if !all_finite(g) {
            return Err(Error::NonFinite { op: "adam_step" });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut offset = 0;
    for (p, g) in params.iter_mut().zip(grads) {
        for (i, (w, &g)) in p.data.iter_mut().zip(g).enumerate() {
            let m = &mut state.m[offset + i];
            let v = &mut state.v[offset + i];
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        offset += p.data.len();
    }
    Ok(())
}
