//! Checkpoint files: one JSON header line, then every parameter tensor as
//! raw little-endian `f64` values in declared order.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{serialize_lexicon, Lexicon};
use crate::model::LanguageModel;
use crate::numerics::{ParamSet, Tensor};
use crate::training::{TrainConfig, TrainOutcome};

pub const FORMAT: &str = "sdlm-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconSummary {
    pub words: usize,
    pub senses: usize,
    pub sememes: usize,
    pub edges: usize,
    pub fingerprint: String,
}

impl LexiconSummary {
    pub fn of(lex: &Lexicon) -> Self {
        let mut bytes = Vec::new();
        serialize_lexicon(lex, &mut bytes).expect("writing to memory");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
        Self {
            words: lex.num_words(),
            senses: lex.num_senses(),
            sememes: lex.num_sememes(),
            edges: lex.edge_count(),
            fingerprint: format!("{hash:016x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
    pub epoch: usize,
    pub best_epoch: usize,
    pub valid_history: Vec<f64>,
    pub lr: f64,
    pub rng: ChaCha8Rng,
    pub lexicon: LexiconSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn from_outcome(config: &TrainConfig, outcome: &TrainOutcome) -> Self {
        let params = outcome.model.params().clone();
        Self {
            header: Header {
                format: FORMAT.into(),
                version: VERSION,
                config: config.clone(),
                tensors: params
                    .iter()
                    .map(|(name, t)| TensorEntry { name: name.to_string(), shape: t.shape().to_vec() })
                    .collect(),
                epoch: outcome.epochs.len(),
                best_epoch: outcome.best_epoch,
                valid_history: outcome.valid_history.clone(),
                lr: outcome.lr,
                rng: outcome.rng.clone(),
                lexicon: LexiconSummary::of(outcome.model.lexicon()),
            },
            params,
        }
    }

    /// Rebuilds the model. `lex` must be the lexicon the checkpoint was
    /// trained with.
    pub fn into_model(self, lex: Arc<Lexicon>) -> Result<LanguageModel> {
        let summary = LexiconSummary::of(&lex);
        if summary != self.header.lexicon {
            return Err(Error::Format(format!(
                "lexicon mismatch: checkpoint has {:?}, given {:?}",
                self.header.lexicon, summary
            )));
        }
        LanguageModel::from_params(self.header.config.model, lex, self.params)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for t in self.params.tensors() {
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut source: R) -> Result<Self> {
        let mut line = Vec::new();
        source.read_until(b'\n', &mut line)?;
        let header: Header =
            serde_json::from_slice(&line).map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} version {}",
                header.format, header.version
            )));
        }
        let mut params = ParamSet::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            source
                .read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("truncated data for tensor `{}`", entry.name)))?;
            let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.push(entry.name.clone(), Tensor::new(&entry.shape, data)?);
        }
        let mut rest = [0u8; 1];
        if source.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after the last tensor".into()));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(fs::File::open(path)?))
    }
}
