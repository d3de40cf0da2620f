use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{pow, sqrt};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{rng, stream_seed};

/// A named parameter blob stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, values: vec![0.0; n] }
    }

    /// He-uniform initialisation for a LeakyReLU fan-in of `fan_in`, drawn
    /// from a stream keyed by the parameter name.
    pub fn he_uniform(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, seed: u64) -> Self {
        let mut p = Self::zeros(name, shape);
        let bound = sqrt(6.0 / ((1.0 + 0.2 * 0.2) * fan_in as f64));
        let mut r = rng(stream_seed(seed, &p.name));
        p.values
            .iter_mut()
            .for_each(|v| *v = r.random_range(-bound..bound) as f32);
        p
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Ordered parameter list shared by the networks, their optimiser state and
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub params: Vec<Param>,
}

impl ParamSet {
    pub fn push(&mut self, p: Param) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(Param::to_f64).collect()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.values.len()]).collect()
    }

    /// Replaces values from `other` after checking names and shapes agree.
    pub fn load(&mut self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameter blobs, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::InvalidInput(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
            a.values.clone_from(&b.values);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moments are kept in single precision like the
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let z = |p: &Param| vec![0.0f32; p.values.len()];
        Self {
            config,
            step: 0,
            m: params.params.iter().map(z).collect(),
            v: params.params.iter().map(z).collect(),
        }
    }

    pub fn apply(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - pow(c.beta2, self.step as f64);
        for (k, p) in params.params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..p.values.len() {
                let mi = c.beta1 * m[i] as f64 + (1.0 - c.beta1) * g[i];
                let vi = c.beta2 * v[i] as f64 + (1.0 - c.beta2) * g[i] * g[i];
                m[i] = mi as f32;
                v[i] = vi as f32;
                let step = c.lr * (mi / bc1) / (sqrt(vi / bc2) + c.eps);
                p.values[i] = (p.values[i] as f64 - step) as f32;
            }
        }
    }
}
