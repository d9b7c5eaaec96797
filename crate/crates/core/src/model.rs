//! A full language model: tied embeddings, LSTM encoder, and either the
//! sememe-driven decoder or a tied plain-softmax decoder.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{self, SdlmVars, SdlmView, SenseGraph};
use crate::encoder::{self, Dropout, EncoderConfig, EncoderState, LayerVars, TapeState};
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, NormalizationMode};
use crate::numerics::{nll_rows, softmax, Grouping, ParamSet, Tape, Tensor, Var};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Sdlm,
    Baseline,
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdlm" => Ok(DecoderKind::Sdlm),
            "baseline" => Ok(DecoderKind::Baseline),
            other => Err(Error::argument(format!("unknown decoder `{other}` (expected sdlm or baseline)"))),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Sdlm => "sdlm",
            DecoderKind::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderKind,
    pub norm: NormalizationMode,
    /// Number of basis matrices `R`.
    pub bases: usize,
    /// Half-width of the uniform init for embeddings and decoder parameters.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderKind::Sdlm,
            norm: NormalizationMode::Left,
            bases: 5,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.decoder == DecoderKind::Sdlm && self.bases == 0 {
            return Err(Error::argument("the number of basis matrices must be at least 1"));
        }
        if self.decoder == DecoderKind::Baseline && self.encoder.context_dim != self.encoder.input_dim {
            return Err(Error::argument(format!(
                "the tied baseline needs hidden size {} equal to embedding size {}",
                self.encoder.context_dim, self.encoder.input_dim
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::argument("init scale must be positive"));
        }
        Ok(())
    }
}

/// Indices of each parameter inside the model's [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embedding: usize,
    lstm: Vec<[usize; 3]>,
    sdlm: Option<[usize; 4]>,
}

/// Parameters bound as leaves on a tape.
pub struct Bound {
    pub embedding: Var,
    pub layers: Vec<LayerVars>,
    pub sdlm: Option<SdlmVars>,
}

/// Result of one truncated-BPTT window.
pub struct WindowResult {
    /// Mean NLL over the window's tokens.
    pub loss: f64,
    /// Gradients in parameter order.
    pub grads: Vec<Tensor>,
    pub state: EncoderState,
}

#[derive(Clone, Debug)]
pub struct LanguageModel {
    config: ModelConfig,
    lexicon: Arc<Lexicon>,
    graph: Arc<SenseGraph>,
    grouping: Arc<Grouping>,
    params: ParamSet,
    layout: Layout,
}

impl LanguageModel {
    /// Fresh model with uniform initialization. LSTM weights use
    /// `±1/√H1`; everything else uses `±init_scale`.
    pub fn new<R: Rng>(config: ModelConfig, lexicon: Arc<Lexicon>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = Self::shapes(&config, &lexicon);
        let lstm_scale = 1.0 / (config.encoder.context_dim as f64).sqrt();
        let mut params = ParamSet::new();
        for (name, shape) in shapes {
            let scale = if name.starts_with("lstm.") { lstm_scale } else { config.init_scale };
            let tensor = Tensor::uniform(&shape, -scale, scale, rng);
            params.push(name, tensor);
        }
        Self::from_params(config, lexicon, params)
    }

    /// Wraps existing parameter values. Names and shapes must match what
    /// [`LanguageModel::new`] would produce.
    pub fn from_params(config: ModelConfig, lexicon: Arc<Lexicon>, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = Self::shapes(&config, &lexicon);
        if expected.len() != params.len() {
            return Err(Error::argument(format!("expected {} parameter tensors, got {}", expected.len(), params.len())));
        }
        for ((name, shape), (have_name, have)) in expected.iter().zip(params.iter()) {
            if name != have_name || shape.as_slice() != have.shape() {
                return Err(Error::argument(format!(
                    "parameter `{have_name}` {:?} does not match expected `{name}` {shape:?}",
                    have.shape()
                )));
            }
        }
        let layers = config.encoder.layers;
        let layout = Layout {
            embedding: 0,
            lstm: (0..layers).map(|l| [1 + 3 * l, 2 + 3 * l, 3 + 3 * l]).collect(),
            sdlm: match config.decoder {
                DecoderKind::Sdlm => {
                    let b = 1 + 3 * layers;
                    Some([b, b + 1, b + 2, b + 3])
                }
                DecoderKind::Baseline => None,
            },
        };
        let graph = Arc::new(SenseGraph::new(&lexicon, config.norm));
        let grouping = Arc::new(match config.decoder {
            DecoderKind::Sdlm => {
                Grouping::new(lexicon.sense_words().iter().map(|w| w.index()).collect(), lexicon.num_words())?
            }
            DecoderKind::Baseline => Grouping::identity(lexicon.num_words()),
        });
        Ok(Self { config, lexicon, graph, grouping, params, layout })
    }

    /// Parameter names and shapes, in storage order.
    pub fn shapes(config: &ModelConfig, lex: &Lexicon) -> Vec<(String, Vec<usize>)> {
        let enc = &config.encoder;
        let h1 = enc.context_dim;
        let mut out = vec![("embedding".to_string(), vec![lex.num_words(), enc.input_dim])];
        for l in 0..enc.layers {
            out.push((format!("lstm.{l}.w_ih"), vec![enc.layer_input_dim(l), 4 * h1]));
            out.push((format!("lstm.{l}.w_hh"), vec![h1, 4 * h1]));
            out.push((format!("lstm.{l}.bias"), vec![4 * h1]));
        }
        if config.decoder == DecoderKind::Sdlm {
            let k = lex.num_sememes();
            out.push(("sememe.gate_w".into(), vec![k, h1]));
            out.push(("sememe.gate_b".into(), vec![k]));
            out.push(("sense.basis".into(), vec![h1, config.bases * enc.input_dim]));
            out.push(("sense.mix_logits".into(), vec![k, config.bases]));
        }
        out
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn lexicon(&self) -> &Arc<Lexicon> {
        &self.lexicon
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Parameters owned by the sememe-driven decoder alone, i.e. what it
    /// adds over a tied baseline with the same encoder.
    pub fn extra_parameter_count(&self) -> usize {
        self.layout.sdlm.map_or(0, |ids| ids.iter().map(|&i| self.params.get(i).len()).sum())
    }

    /// Coarse group label of a parameter name, for gradient-check reports.
    pub fn param_group(name: &str) -> String {
        match name {
            "embedding" => "embedding",
            "sememe.gate_w" | "sememe.gate_b" => "sememe_gate",
            "sense.basis" => "basis",
            "sense.mix_logits" => "mixture",
            n if n.starts_with("lstm.") => "lstm",
            _ => "other",
        }
        .to_string()
    }

    /// Read-only view of the decoder parameters.
    pub fn sdlm_view(&self) -> Option<SdlmView<'_>> {
        let ids = self.layout.sdlm?;
        let p = &self.params;
        Some(SdlmView {
            gate_w: p.get(ids[0]),
            gate_b: p.get(ids[1]),
            basis: p.get(ids[2]),
            mix_logits: p.get(ids[3]),
            embedding: p.get(self.layout.embedding),
        })
    }

    pub fn graph(&self) -> &Arc<SenseGraph> {
        &self.graph
    }

    pub fn bind(&self, tape: &mut Tape, values: &[Tensor]) -> Result<Bound> {
        if values.len() != self.params.len() {
            return Err(Error::argument("parameter count mismatch"));
        }
        let vars = values.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        Ok(Bound {
            embedding: vars[self.layout.embedding],
            layers: self
                .layout
                .lstm
                .iter()
                .map(|&[w_ih, w_hh, bias]| LayerVars { w_ih: vars[w_ih], w_hh: vars[w_hh], bias: vars[bias] })
                .collect(),
            sdlm: self.layout.sdlm.map(|[gw, gb, basis, mix]| SdlmVars {
                gate_w: vars[gw],
                gate_b: vars[gb],
                basis: vars[basis],
                mix_logits: vars[mix],
                embedding: vars[self.layout.embedding],
            }),
        })
    }

    /// Decoder logits for a `[B × H1]` context batch: sense logits for the
    /// sememe-driven decoder, word logits for the baseline. Rows are
    /// normalized per word through [`LanguageModel::grouping`].
    pub fn logits_on_tape(&self, tape: &mut Tape, bound: &Bound, g: Var) -> Result<Var> {
        match &bound.sdlm {
            Some(vars) => decoder::sdlm_logits_on_tape(tape, &self.graph, vars, g).map(|(logits, _)| logits),
            None => decoder::baseline_logits_on_tape(tape, bound.embedding, g),
        }
    }

    /// Maps logit columns to words.
    pub fn grouping(&self) -> &Arc<Grouping> {
        &self.grouping
    }

    fn check_words(&self, words: &[usize]) -> Result<()> {
        match words.iter().find(|&&w| w >= self.lexicon.num_words()) {
            Some(w) => Err(Error::contract(format!("word id {w} outside the vocabulary"))),
            None => Ok(()),
        }
    }

    /// Forward and backward pass over one window of `inputs[t][b]` with
    /// `targets[t][b]`, using `values` in place of the stored parameters.
    /// The incoming state is a constant, so gradients stop at the window
    /// start.
    pub fn run_window<R: Rng>(
        &self,
        values: &[Tensor],
        inputs: &[Vec<usize>],
        targets: &[Vec<usize>],
        state: &EncoderState,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<WindowResult> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::argument("window inputs and targets must be non-empty and aligned"));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, values)?;
        let mut tstate = TapeState::from_values(&mut tape, state)?;
        let mut drop = dropout.map(|(rate, rng)| Dropout { rate, rng });
        let mut total: Option<Var> = None;
        for (x, y) in inputs.iter().zip(targets) {
            self.check_words(x)?;
            self.check_words(y)?;
            if x.len() != state.batch_size() || y.len() != x.len() {
                return Err(Error::argument("every timestep must have one token per stream"));
            }
            let emb = encoder::embed_batch(&mut tape, bound.embedding, x)?;
            let (g, next) = encoder::step(&mut tape, &bound.layers, emb, &tstate, drop.as_mut())?;
            tstate = next;
            let logits = self.logits_on_tape(&mut tape, &bound, g)?;
            let nll = tape.nll_from_logits(logits, y, Arc::clone(&self.grouping))?;
            total = Some(match total {
                Some(acc) => tape.add(acc, nll)?,
                None => nll,
            });
        }
        let loss = tape.scale(total.expect("non-empty window"), 1.0 / inputs.len() as f64)?;
        let mut grads = tape.backward(loss)?;
        let mut param_vars = Vec::with_capacity(values.len());
        param_vars.push(bound.embedding);
        for layer in &bound.layers {
            param_vars.extend([layer.w_ih, layer.w_hh, layer.bias]);
        }
        if let Some(s) = &bound.sdlm {
            param_vars.extend([s.gate_w, s.gate_b, s.basis, s.mix_logits]);
        }
        Ok(WindowResult {
            loss: tape.value(loss).item(),
            grads: param_vars.into_iter().map(|v| grads.take(v)).collect(),
            state: tstate.values(&tape),
        })
    }

    /// Per-token NLL for a batch of sentences, each scored from a zero state.
    /// Token `t` of a sentence is predicted from tokens `0..t`, so the first
    /// token of each sentence is not scored. Returns one vector per sentence
    /// of length `len - 1`.
    pub fn score_sentences(&self, sentences: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Vec<f64>> = sentences.iter().map(|s| Vec::with_capacity(s.len().saturating_sub(1))).collect();
        let longest = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
        if longest < 2 {
            return Ok(out);
        }
        for s in sentences {
            self.check_words(s)?;
        }
        let batch = sentences.len();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, self.params.tensors())?;
        let mut state = TapeState::from_values(&mut tape, &EncoderState::zeros(&self.config.encoder, batch))?;
        for t in 0..longest - 1 {
            // Finished sentences are padded with word 0; their rows are
            // independent of the others and their scores are discarded.
            let x: Vec<usize> = sentences.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
            let y: Vec<usize> = sentences.iter().map(|s| s.get(t + 1).copied().unwrap_or(0)).collect();
            let emb = encoder::embed_batch(&mut tape, bound.embedding, &x)?;
            let (g, next) = encoder::step::<rand_chacha::ChaCha8Rng>(&mut tape, &bound.layers, emb, &state, None)?;
            state = next;
            let logits = self.logits_on_tape(&mut tape, &bound, g)?;
            let nll = nll_rows(tape.value(logits), &y, &self.grouping);
            for (b, s) in sentences.iter().enumerate() {
                if t + 1 < s.len() {
                    out[b].push(nll[b]);
                }
            }
        }
        Ok(out)
    }

    /// Top-layer context vector after reading `prefix` from a zero state.
    pub fn context_vector(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::argument("context must contain at least one token"));
        }
        self.check_words(prefix)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, self.params.tensors())?;
        let mut state = TapeState::from_values(&mut tape, &EncoderState::zeros(&self.config.encoder, 1))?;
        let mut g = None;
        for &w in prefix {
            let emb = encoder::embed_batch(&mut tape, bound.embedding, &[w])?;
            let (out, next) = encoder::step::<rand_chacha::ChaCha8Rng>(&mut tape, &bound.layers, emb, &state, None)?;
            state = next;
            g = Some(out);
        }
        Ok(tape.value(g.expect("non-empty prefix")).row(0).to_vec())
    }

    /// Next-word distribution for a context vector.
    pub fn word_distribution(&self, g: &[f64]) -> Result<Vec<f64>> {
        match self.sdlm_view() {
            Some(view) => {
                let senses = decoder::predict_senses(g, &view, &self.graph)?;
                Ok(decoder::predict_words(&senses, &self.lexicon)?.probs)
            }
            None => Ok(softmax(&decoder::baseline_logits(g, self.params.get(self.layout.embedding))?)),
        }
    }
}

/// The smallest tied-baseline config whose parameter count reaches `target`,
/// growing the shared embedding/hidden width from the SDLM's width.
pub fn matched_baseline(sdlm: &ModelConfig, lex: &Lexicon, target: usize) -> ModelConfig {
    let mut width = sdlm.encoder.input_dim.max(1);
    loop {
        let config = ModelConfig {
            encoder: EncoderConfig { input_dim: width, context_dim: width, ..sdlm.encoder.clone() },
            decoder: DecoderKind::Baseline,
            ..sdlm.clone()
        };
        let count: usize =
            LanguageModel::shapes(&config, lex).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if count >= target {
            return config;
        }
        width += 1;
    }
}
