use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Graph, Mat, Var};

/// Named learnable tensors, addressed by slot id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    /// How the tensors were initialized, e.g. `"uniform(±1/sqrt(fan_in)), seed 3"`.
    pub init: String,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values
            .iter()
            .map(|v| Mat::zeros(v.rows(), v.cols()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::is_finite)
    }

    /// Replaces every tensor from `(name, value)` pairs, checking names and shapes.
    pub fn load(&mut self, tensors: Vec<(String, Mat)>) -> Result<()> {
        if tensors.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                tensors.len()
            )));
        }
        for (name, value) in tensors {
            let id = self
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor '{name}'")))?;
            if self.values[id].shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    value.shape(),
                    self.values[id].shape()
                )));
            }
            if !value.is_finite() {
                return Err(Error::Checkpoint(format!("tensor '{name}' is not finite")));
            }
            self.values[id] = value;
        }
        Ok(())
    }
}

/// Registers tensors in a fixed order while a network layout is built.
pub(crate) struct ParamBuilder<'a> {
    store: ParamStore,
    rng: &'a mut SeededRng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(rng: &'a mut SeededRng, init: String) -> Self {
        Self {
            store: ParamStore {
                names: Vec::new(),
                values: Vec::new(),
                init,
            },
            rng,
        }
    }

    fn push(&mut self, name: String, value: Mat) -> usize {
        debug_assert!(!self.store.names.contains(&name), "duplicate {name}");
        self.store.names.push(name);
        self.store.values.push(value);
        self.store.values.len() - 1
    }

    /// Weight `fan_in × fan_out` drawn from `U(-1/√fan_in, 1/√fan_in)`; zero bias.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        self.linear_with_fan_in(name, fan_in, fan_out, fan_in, bias)
    }

    /// Like [`linear`](Self::linear) for one block of a wider layer whose
    /// total fan-in sets the init bound.
    pub fn linear_with_fan_in(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        bias: bool,
    ) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        let w = self.push(format!("{name}.weight"), Mat::from_vec(rows, cols, data));
        let b = bias.then(|| self.push(format!("{name}.bias"), Mat::zeros(1, cols)));
        Linear { weight: w, bias: b }
    }

    pub fn bias(&mut self, name: &str, width: usize) -> usize {
        self.push(format!("{name}.bias"), Mat::zeros(1, width))
    }

    pub fn layer_norm(&mut self, name: &str, width: usize) -> LayerNorm {
        LayerNorm {
            gamma: self.push(format!("{name}.gamma"), Mat::filled(1, width, 1.0)),
            beta: self.push(format!("{name}.beta"), Mat::zeros(1, width)),
        }
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, x: Var) -> Var {
        let w = g.param(self.weight, params.get(self.weight));
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let bv = g.param(b, params.get(b));
                g.add_row(y, bv)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, x: Var) -> Var {
        let gamma = g.param(self.gamma, params.get(self.gamma));
        let beta = g.param(self.beta, params.get(self.beta));
        g.layer_norm(x, gamma, beta, 1e-5)
    }
}
