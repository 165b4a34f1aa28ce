use super::params::{Init, ParamSet};
use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Dense layer `x·W + b` over the last axis. `W` is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, output: usize) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            &[input, output],
            Init::Xavier {
                fan_in: input,
                fan_out: output,
            },
        );
        let bias = Some(params.add(format!("{name}.bias"), &[output], Init::Zeros));
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn without_bias(params: &mut ParamSet, name: &str, input: usize, output: usize) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            &[input, output],
            Init::Xavier {
                fan_in: input,
                fan_out: output,
            },
        );
        Linear {
            weight,
            bias: None,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.weight])?;
        match self.bias {
            Some(b) => tape.add_bias(y, vars[b]),
            None => Ok(y),
        }
    }
}
