//! Named parameter tensors shared by the denoiser and the discriminator.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::tape::{Graph, Gradients, Mat, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    tensors: BTreeMap<String, Mat>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mat)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().flatten().all(|v| v.is_finite())
    }

    /// Binds a tensor as a differentiable leaf of `g`.
    ///
    /// Panics if `name` is unknown; parameter names are fixed by the network layout.
    pub fn bind(&self, g: &mut Graph, name: &str) -> Var {
        let value = self
            .tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not initialised"));
        g.param(name, value)
    }

    /// Gradients for every tensor, zero where the graph never touched it.
    pub fn collect_grads(&self, grads: &Gradients) -> Parameters {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), grads.param_or_zeros(k, v.dim())))
            .collect();
        Parameters { tensors }
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        for (k, v) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(k) {
                v.scaled_add(scale, o);
            }
        }
    }

    pub fn zeros_like(&self) -> Parameters {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), Array2::zeros(v.dim())))
            .collect();
        Parameters { tensors }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.tensors.values_mut() {
            *v *= c;
        }
    }

    /// Rounds every value to the nearest 32-bit float (the checkpoint precision).
    pub fn round_to_f32(&mut self) {
        for v in self.tensors.values_mut() {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

/// Registers a dense layer `name.w` (`fan_in x fan_out`) and zero bias `name.b`.
pub(crate) fn init_linear<R: Rng + ?Sized>(
    p: &mut Parameters,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    std: Option<f64>,
) {
    let std = std.unwrap_or(1.0 / (fan_in as f64).sqrt());
    p.insert(format!("{name}.w"), normal(rng, fan_in, fan_out, std));
    p.insert(format!("{name}.b"), Array2::zeros((1, fan_out)));
}

/// `x · W + b` for a layer registered with [`init_linear`].
pub(crate) fn linear(g: &mut Graph, p: &Parameters, name: &str, x: Var) -> Var {
    let w = p.bind(g, &format!("{name}.w"));
    let b = p.bind(g, &format!("{name}.b"));
    let h = g.matmul(x, w);
    g.add_row(h, b)
}
