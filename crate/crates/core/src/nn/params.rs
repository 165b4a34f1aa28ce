use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NamedTensor, Tape, Tensor, Var};

/// How a parameter is initialised by `train::xavier_uniform_init`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform on `±√(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub init: Init,
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-valued parameter and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let name = name.into();
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        let mut tensor = Tensor::zeros(shape).with_grad();
        if init == Init::Ones {
            tensor.values_mut().iter_mut().for_each(|v| *v = 1.0);
        }
        self.params.push(Param { name, tensor, init });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, slot: usize) -> &Param {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Param {
        &mut self.params[slot]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].tensor)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.params[i].tensor)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.tensor.values())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies every parameter onto `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.tensor.clone())).collect()
    }

    /// Copies every parameter onto `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.tensor.clone())).collect()
    }

    /// Adds the tape gradients of `vars` (as returned by [`ParamSet::bind`])
    /// into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(Error::contract("binding does not match parameter set"));
        }
        for (p, &v) in self.params.iter_mut().zip(vars) {
            match tape.grad(v) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => {
                    let zeros = vec![0.0; p.tensor.len()];
                    p.tensor.accumulate_grad(&zeros)?;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| {
                let mut tensor = p.tensor.clone();
                tensor.clear_grad();
                NamedTensor {
                    name: p.name.clone(),
                    tensor,
                }
            })
            .collect()
    }

    /// Overwrites values from `entries`, which must name every parameter
    /// exactly once with a matching shape.
    pub fn load_named(&mut self, entries: &[NamedTensor]) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                entries.len()
            )));
        }
        for entry in entries {
            let slot = self
                .index_of(&entry.name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {}", entry.name)))?;
            let p = &mut self.params[slot];
            if p.tensor.shape() != entry.tensor.shape() {
                return Err(Error::dim("load parameter", p.tensor.shape(), entry.tensor.shape()));
            }
            p.tensor.values_mut().copy_from_slice(entry.tensor.values());
            p.tensor.clear_grad();
        }
        Ok(())
    }
}
