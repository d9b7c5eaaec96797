//! SGD training with truncated BPTT and validation-driven learning-rate
//! halving.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, StreamBatches};
use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::lexicon::Lexicon;
use crate::model::{LanguageModel, ModelConfig};
use crate::numerics::{ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr0: f64,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub max_epochs: usize,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Training stops once the learning rate falls below this.
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr0: 1.0,
            batch_size: 20,
            bptt_len: 35,
            max_epochs: 40,
            clip_norm: Some(5.0),
            seed: 1,
            min_lr: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::argument(format!("initial learning rate must be positive, got {}", self.lr0)));
        }
        if self.batch_size == 0 || self.bptt_len == 0 || self.max_epochs == 0 {
            return Err(Error::argument("batch size, bptt length and epoch count must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::argument(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_ppl: f64,
    pub valid_ppl: Option<f64>,
    pub tokens: usize,
    pub windows: usize,
    pub clipped_windows: usize,
}

/// `-(1/n) Σ_t log P(w_t)` given each step's word distribution.
pub fn nll_loss(word_probs: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if word_probs.len() != targets.len() || targets.is_empty() {
        return Err(Error::argument("need one distribution per target and at least one target"));
    }
    let mut total = 0.0;
    for (t, (probs, &y)) in word_probs.iter().zip(targets).enumerate() {
        let p = *probs
            .get(y)
            .ok_or_else(|| Error::argument(format!("target {y} outside distribution of size {}", probs.len())))?;
        if !(p > 0.0) {
            return Err(Error::contract(format!("step {t}: target probability is {p}")));
        }
        total -= p.ln();
    }
    Ok(total / targets.len() as f64)
}

pub fn perplexity(mean_nll: f64) -> f64 {
    mean_nll.exp()
}

/// Halves `lr` when the latest validation perplexity is no better than the
/// best before it.
pub fn lr_schedule(history: &[f64], lr: f64) -> f64 {
    match history.split_last() {
        Some((latest, earlier)) if !earlier.is_empty() => {
            let best = earlier.iter().copied().fold(f64::INFINITY, f64::min);
            if *latest >= best {
                lr / 2.0
            } else {
                lr
            }
        }
        _ => lr,
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_squared).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(factor));
    }
    norm
}

/// `θ ← θ - lr · ∇θ`
pub fn sgd_step(params: &mut ParamSet, grads: &[Tensor], lr: f64) {
    for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
        p.sub_scaled(g, lr);
    }
}

/// One pass over `batches`. The recurrent state starts at zero and is
/// carried between windows.
pub fn train_epoch(
    model: &mut LanguageModel,
    batches: &StreamBatches,
    config: &TrainConfig,
    lr: f64,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let mut state = EncoderState::zeros(&model.config().encoder, batches.batch_size());
    let dropout = model.config().encoder.dropout;
    let (mut weighted, mut tokens, mut windows, mut clipped) = (0.0, 0, 0, 0);
    for (index, window) in batches.windows().enumerate() {
        let diverged = |detail: String| Error::Diverged { epoch, window: index, detail };
        let drop = (dropout > 0.0).then_some((dropout, &mut *rng));
        let mut result = model
            .run_window(model.params().tensors(), &window.inputs, &window.targets, &state, drop)
            .map_err(|e| match e {
                Error::NonFinite { op } => diverged(format!("non-finite value in `{op}`")),
                other => other,
            })?;
        if !result.loss.is_finite() {
            return Err(diverged(format!("loss is {}", result.loss)));
        }
        if let Some((name, _)) = model.params().names().iter().zip(&result.grads).find(|(_, g)| !g.is_finite()) {
            return Err(diverged(format!("gradient of `{name}` is not finite")));
        }
        if let Some(max_norm) = config.clip_norm {
            if clip_gradients(&mut result.grads, max_norm) > max_norm {
                clipped += 1;
            }
        }
        sgd_step(model.params_mut(), &result.grads, lr);
        let n = window.targets.len() * batches.batch_size();
        weighted += result.loss * n as f64;
        tokens += n;
        windows += 1;
        state = result.state;
    }
    let mean_loss = weighted / tokens as f64;
    Ok(EpochStats {
        epoch,
        lr,
        mean_loss,
        train_ppl: perplexity(mean_loss),
        valid_ppl: None,
        tokens,
        windows,
        clipped_windows: clipped,
    })
}

/// Everything needed to resume or reproduce a run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LanguageModel,
    pub epochs: Vec<EpochStats>,
    pub valid_history: Vec<f64>,
    pub lr: f64,
    pub best_epoch: usize,
    pub rng: ChaCha8Rng,
}

/// Full training run. Parameters are initialized from `config.seed`; the
/// same generator then drives dropout. After the last epoch the parameters
/// from the epoch with the best validation perplexity are restored.
pub fn train<F: FnMut(&EpochStats)>(
    lexicon: Arc<Lexicon>,
    train_corpus: &Corpus,
    valid_corpus: &Corpus,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = LanguageModel::new(config.model.clone(), lexicon, &mut rng)?;
    let batches = StreamBatches::new(&train_corpus.stream(), config.batch_size, config.bptt_len)?;
    let mut lr = config.lr0;
    let mut history = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamSet)> = None;
    for epoch in 1..=config.max_epochs {
        let mut stats = train_epoch(&mut model, &batches, config, lr, epoch, &mut rng)?;
        let valid_ppl = evaluation::perplexity(&model, valid_corpus)?;
        stats.valid_ppl = Some(valid_ppl);
        history.push(valid_ppl);
        if best.as_ref().is_none_or(|(_, b, _)| valid_ppl < *b) {
            best = Some((epoch, valid_ppl, model.params().clone()));
        }
        on_epoch(&stats);
        epochs.push(stats);
        lr = lr_schedule(&history, lr);
        if lr < config.min_lr {
            break;
        }
    }
    let (best_epoch, _, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome { model, epochs, valid_history: history, lr, best_epoch, rng })
}
