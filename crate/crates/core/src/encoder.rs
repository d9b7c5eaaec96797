//! Stacked LSTM encoder producing the context vector `g` at every timestep.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding width `H0`; also the output embedding width under tying.
    pub input_dim: usize,
    /// LSTM hidden width `H1`, the size of `g`.
    pub context_dim: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_dim: 64, context_dim: 64, layers: 2, dropout: 0.0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.context_dim == 0 || self.layers == 0 {
            return Err(Error::argument("encoder dimensions and layer count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::argument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.context_dim
        }
    }
}

/// Hidden and cell values of every layer, each `[batch × H1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub hidden: Vec<Tensor>,
    pub cell: Vec<Tensor>,
}

impl EncoderState {
    pub fn zeros(config: &EncoderConfig, batch: usize) -> Self {
        let blank = Tensor::zeros(&[batch, config.context_dim]);
        Self { hidden: vec![blank.clone(); config.layers], cell: vec![blank; config.layers] }
    }

    pub fn batch_size(&self) -> usize {
        self.hidden.first().map_or(0, Tensor::rows)
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().chain(&self.cell).all(Tensor::is_finite)
    }
}

/// Tape handles for one layer's weights. Gates are packed `[i | f | g | o]`.
#[derive(Copy, Clone, Debug)]
pub struct LayerVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Per-layer state as tape nodes.
#[derive(Clone, Debug)]
pub struct TapeState {
    pub hidden: Vec<Var>,
    pub cell: Vec<Var>,
}

impl TapeState {
    /// Enters a value state on the tape as leaves. Gradients stop here, which
    /// is what truncates backpropagation at window boundaries.
    pub fn from_values(tape: &mut Tape, state: &EncoderState) -> Result<Self> {
        let hidden = state.hidden.iter().map(|t| tape.leaf(t.clone())).collect::<Result<_>>()?;
        let cell = state.cell.iter().map(|t| tape.leaf(t.clone())).collect::<Result<_>>()?;
        Ok(Self { hidden, cell })
    }

    pub fn values(&self, tape: &Tape) -> EncoderState {
        EncoderState {
            hidden: self.hidden.iter().map(|&v| tape.value(v).clone()).collect(),
            cell: self.cell.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<R: Rng> Dropout<'_, R> {
    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = tape.leaf(Tensor::new(&shape, mask)?)?;
        tape.mul(x, m)
    }
}

/// Looks up `[batch × H0]` input embeddings.
pub fn embed_batch(tape: &mut Tape, embedding: Var, words: &[usize]) -> Result<Var> {
    tape.gather_rows(embedding, words)
}

/// One LSTM step through all layers. Returns the top-layer output (after
/// output dropout, when enabled) and the new state.
pub fn step<R: Rng>(
    tape: &mut Tape,
    layers: &[LayerVars],
    x: Var,
    state: &TapeState,
    mut dropout: Option<&mut Dropout<'_, R>>,
) -> Result<(Var, TapeState)> {
    let mut input = match dropout.as_deref_mut() {
        Some(d) => d.apply(tape, x)?,
        None => x,
    };
    let mut hidden = Vec::with_capacity(layers.len());
    let mut cell = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let (h, c) = lstm_cell(tape, layer, input, state.hidden[l], state.cell[l])?;
        hidden.push(h);
        cell.push(c);
        input = match dropout.as_deref_mut() {
            Some(d) => d.apply(tape, h)?,
            None => h,
        };
    }
    Ok((input, TapeState { hidden, cell }))
}

fn lstm_cell(tape: &mut Tape, layer: &LayerVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let width = tape.value(h).cols();
    let xi = tape.matmul(x, layer.w_ih)?;
    let hh = tape.matmul(h, layer.w_hh)?;
    let pre = tape.add(xi, hh)?;
    let pre = tape.add(pre, layer.bias)?;
    let i = tape.slice_cols(pre, 0, width)?;
    let f = tape.slice_cols(pre, width, 2 * width)?;
    let g = tape.slice_cols(pre, 2 * width, 3 * width)?;
    let o = tape.slice_cols(pre, 3 * width, 4 * width)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}
