//! LSTM cells and (bi)directional sequence layers.
//!
//! The four gate blocks are fused into one weight layout so a whole step is
//! two matrix products. Column block order is fixed as
//! (input, forget, output, candidate); see [`GATE_ORDER`].
//!
//! ```text
//! W  [in, 4H]   = [ W_i | W_f | W_o | W_c ]
//! U  [H,  4H]   = [ U_i | U_f | U_o | U_c ]
//! b  [4H]       = [ b_i | b_f | b_o | b_c ]
//! ```

use serde::{Deserialize, Serialize};

use super::params::{Init, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Column-block order of the fused gate weights.
pub const GATE_ORDER: [&str; 4] = ["input", "forget", "output", "candidate"];

/// Slots of one LSTM direction's parameters.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w: usize,
    pub u: usize,
    pub b: usize,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize) -> Self {
        let w = params.add(
            format!("{name}.w"),
            &[input, 4 * hidden],
            Init::Xavier {
                fan_in: input,
                fan_out: hidden,
            },
        );
        let u = params.add(
            format!("{name}.u"),
            &[hidden, 4 * hidden],
            Init::Xavier {
                fan_in: hidden,
                fan_out: hidden,
            },
        );
        let b = params.add(format!("{name}.b"), &[4 * hidden], Init::Zeros);
        LstmParams {
            w,
            u,
            b,
            input,
            hidden,
        }
    }

    fn check_input(&self, tape: &Tape, x: Var, rank: usize) -> Result<()> {
        let s = tape.shape(x);
        if s.len() != rank || s[rank - 1] != self.input {
            return Err(Error::dim("lstm input", s, &[self.input]));
        }
        Ok(())
    }

    /// Runs the cell over `x[B, T, in]` and returns `h_t` (`[B, H]`) for every
    /// step in time order. With `reverse`, the recurrence runs from `T` down
    /// to 1 but the result is still indexed by time. `init` overrides the
    /// zero initial `(h, c)`.
    pub fn run(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        reverse: bool,
        init: Option<(Var, Var)>,
    ) -> Result<Vec<Var>> {
        self.check_input(tape, x, 3)?;
        let (batch, steps) = (tape.shape(x)[0], tape.shape(x)[1]);
        let h = self.hidden;
        let projected = tape.matmul(x, vars[self.w])?;
        let projected = tape.add_bias(projected, vars[self.b])?;
        let (mut h_prev, mut c_prev) = match init {
            Some((h0, c0)) => (Some(h0), c0),
            None => (None, tape.constant(Tensor::zeros(&[batch, h]))),
        };
        let mut out = vec![None; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let mut pre = tape.select(projected, 1, t)?;
            if let Some(hp) = h_prev {
                let rec = tape.matmul(hp, vars[self.u])?;
                pre = tape.add(pre, rec)?;
            }
            let cell = tape.lstm_cell(pre, c_prev)?;
            let ht = tape.slice(cell, 1, 0, h)?;
            c_prev = tape.slice(cell, 1, h, h)?;
            h_prev = Some(ht);
            out[t] = Some(ht);
        }
        Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
    }
}

/// One LSTM step written directly in terms of the gate equations:
///
/// ```text
/// i = σ(W_i x + U_i h + b_i)     f = σ(W_f x + U_f h + b_f)
/// o = σ(W_o x + U_o h + b_o)     c̃ = tanh(W_c x + U_c h + b_c)
/// c' = f ⊙ c + i ⊙ c̃             h' = o ⊙ tanh(c')
/// ```
///
/// `x_t[B, in]`, `h_prev[B, H]`, `c_prev[B, H]`. Built from primitive tape
/// ops only; [`LstmParams::run`] uses the fused cell instead.
pub fn lstm_step(
    tape: &mut Tape,
    vars: &[Var],
    params: &LstmParams,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    params.check_input(tape, x_t, 2)?;
    let h = params.hidden;
    for v in [h_prev, c_prev] {
        let s = tape.shape(v);
        if s.len() != 2 || s[1] != h || s[0] != tape.shape(x_t)[0] {
            return Err(Error::dim("lstm_step state", s, &[tape.shape(x_t)[0], h]));
        }
    }
    let gate = |tape: &mut Tape, k: usize| -> Result<Var> {
        let w = tape.slice(vars[params.w], 1, k * h, h)?;
        let u = tape.slice(vars[params.u], 1, k * h, h)?;
        let b = tape.slice(vars[params.b], 0, k * h, h)?;
        let wx = tape.matmul(x_t, w)?;
        let uh = tape.matmul(h_prev, u)?;
        let s = tape.add(wx, uh)?;
        tape.add_bias(s, b)
    };
    let pre_i = gate(tape, 0)?;
    let pre_f = gate(tape, 1)?;
    let pre_o = gate(tape, 2)?;
    let pre_c = gate(tape, 3)?;
    let i = tape.sigmoid(pre_i);
    let f = tape.sigmoid(pre_f);
    let o = tape.sigmoid(pre_o);
    let candidate = tape.tanh(pre_c);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, candidate)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h_t = tape.mul(o, tc)?;
    Ok((h_t, c))
}

/// Runs `fwd` from `t = 1..T` and `bwd` from `t = T..1` over `x[B, T, in]`
/// and concatenates the hidden states per step: `[B, T, 2H]`.
pub fn bilstm_forward(
    tape: &mut Tape,
    vars: &[Var],
    fwd: &LstmParams,
    bwd: &LstmParams,
    x: Var,
) -> Result<Var> {
    if fwd.input != bwd.input || fwd.hidden != bwd.hidden {
        return Err(Error::config("bidirectional halves must share input and hidden sizes"));
    }
    let forward = fwd.run(tape, vars, x, false, None)?;
    let backward = bwd.run(tape, vars, x, true, None)?;
    let rows = forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f, b], 1))
        .collect::<Result<Vec<_>>>()?;
    tape.stack(&rows, 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentConfig {
    pub hidden: usize,
    pub bidirectional: bool,
}

impl RecurrentConfig {
    pub fn output_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}

/// A uni- or bidirectional LSTM layer over `[B, T, in]`.
#[derive(Clone, Debug)]
pub enum Recurrent {
    Uni(LstmParams),
    Bi(LstmParams, LstmParams),
}

impl Recurrent {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, config: RecurrentConfig) -> Result<Self> {
        if config.hidden == 0 || input == 0 {
            return Err(Error::config(format!("{name}: LSTM sizes must be positive")));
        }
        Ok(if config.bidirectional {
            Recurrent::Bi(
                LstmParams::new(params, &format!("{name}.fwd"), input, config.hidden),
                LstmParams::new(params, &format!("{name}.bwd"), input, config.hidden),
            )
        } else {
            Recurrent::Uni(LstmParams::new(params, &format!("{name}.fwd"), input, config.hidden))
        })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Recurrent::Uni(p) => p.hidden,
            Recurrent::Bi(p, _) => 2 * p.hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        match self {
            Recurrent::Uni(p) => {
                let hs = p.run(tape, vars, x, false, None)?;
                tape.stack(&hs, 1)
            }
            Recurrent::Bi(f, b) => bilstm_forward(tape, vars, f, b, x),
        }
    }
}
