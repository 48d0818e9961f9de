use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamId, ParamSet, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

/// `act(W x + b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let w = ps.xavier(
            &format!("{name}.w"),
            &[output_dim, input_dim],
            input_dim,
            output_dim,
            rng,
        );
        let b = ps.zeros(&format!("{name}.b"), &[output_dim]);
        Dense {
            w,
            b,
            activation,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let z = t.linear(self.w, Some(self.b), x)?;
        Ok(match self.activation {
            Activation::Linear => z,
            Activation::Relu => t.relu(z),
            Activation::Tanh => t.tanh(z),
            Activation::Sigmoid => t.sigmoid(z),
        })
    }
}

/// LSTM cell with the four gates stacked as rows (input, forget, candidate,
/// output) of one `[4·hidden, input + hidden]` matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.xavier(
            &format!("{name}.w"),
            &[4 * hidden_dim, input_dim + hidden_dim],
            input_dim + hidden_dim,
            hidden_dim,
            rng,
        );
        let b = ps.zeros(&format!("{name}.b"), &[4 * hidden_dim]);
        LstmCell {
            w,
            b,
            input_dim,
            hidden_dim,
        }
    }

    pub fn zero_state(&self, t: &mut Tape) -> (Var, Var) {
        (t.zeros(self.hidden_dim), t.zeros(self.hidden_dim))
    }

    pub fn step(&self, t: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hc = t.lstm_step(self.w, self.b, x, h, c)?;
        let h = t.slice(hc, 0, self.hidden_dim)?;
        let c = t.slice(hc, self.hidden_dim, self.hidden_dim)?;
        Ok((h, c))
    }

    /// Every hidden state from a zero initial state.
    pub fn run(&self, t: &mut Tape, inputs: &[Var]) -> Result<Vec<Var>> {
        let (mut h, mut c) = self.zero_state(t);
        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            (h, c) = self.step(t, x, h, c)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Final hidden state; the zero vector for an empty sequence.
    pub fn final_state(&self, t: &mut Tape, inputs: &[Var]) -> Result<Var> {
        match self.run(t, inputs)?.last() {
            Some(&h) => Ok(h),
            None => Ok(t.zeros(self.hidden_dim)),
        }
    }
}
