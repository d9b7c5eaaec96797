//! Synthetic lexicons and corpora whose transitions run through sememes.
//!
//! Each sememe has a few successor sememes. The successors of the current
//! (hidden) sense's sememes form the active set `A` for the next position.
//! With probability `signal` the next sense is drawn with weight
//! `exp(sharpness · |E(s) ∩ A| / |E(s)|)`, so senses made of active sememes
//! dominate; otherwise the generator emits a uniform word with a uniform
//! sense of that word. Sentences start with a uniform word.
//!
//! The true next-word distribution given the previous sense is available,
//! which bounds what any model can achieve.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, Corpus};
use crate::error::{Error, Result};
use crate::lexicon::{write_lexicon, Lexicon, LexiconBuilder, SenseId, WordId};

pub const MAX_SENSES_PER_WORD: usize = 3;
pub const MAX_SEMEMES_PER_SENSE: usize = 5;
pub const SENTENCE_LEN: (usize, usize) = (8, 24);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sememes: usize,
    pub senses: usize,
    pub words: usize,
    pub train_tokens: usize,
    pub valid_tokens: usize,
    pub test_tokens: usize,
    /// Probability of a sememe-driven transition, in `[0, 1]`.
    pub signal: f64,
    /// Successors per sememe.
    pub fanout: usize,
    /// Log-weight of a sense whose sememes are all active.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            sememes: 60,
            senses: 160,
            words: 100,
            train_tokens: 50_000,
            valid_tokens: 5_000,
            test_tokens: 5_000,
            signal: 0.9,
            fanout: 2,
            sharpness: 6.0,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let (k, m, n) = (self.sememes, self.senses, self.words);
        if n == 0 || k == 0 {
            return Err(Error::argument("need at least one word and one sememe"));
        }
        if m < n || m > MAX_SENSES_PER_WORD * n {
            return Err(Error::argument(format!(
                "{m} senses cannot give each of {n} words between 1 and {MAX_SENSES_PER_WORD} senses"
            )));
        }
        if k > MAX_SEMEMES_PER_SENSE * m {
            return Err(Error::argument(format!(
                "{k} sememes cannot all be used by {m} senses of at most {MAX_SEMEMES_PER_SENSE} sememes"
            )));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::argument(format!("signal strength {} outside [0, 1]", self.signal)));
        }
        if !self.sharpness.is_finite() {
            return Err(Error::argument("sharpness must be finite"));
        }
        if self.fanout == 0 || self.fanout > k {
            return Err(Error::argument(format!("fanout must be in 1..={k}")));
        }
        Ok(())
    }
}

/// One generated split. `senses[i][t]` is the hidden sense behind token
/// `corpus.sentences[i][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplit {
    pub corpus: Corpus,
    pub senses: Vec<Vec<usize>>,
}

impl SyntheticSplit {
    /// The hidden state each token was generated from: `None` at sentence
    /// start, otherwise the previous token's sense.
    pub fn states(&self) -> Vec<Vec<Option<usize>>> {
        self.senses
            .iter()
            .map(|s| std::iter::once(None).chain(s[..s.len() - 1].iter().map(|&x| Some(x))).collect())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    pub lexicon: Lexicon,
    pub successors: Vec<Vec<usize>>,
    pub train: SyntheticSplit,
    pub valid: SyntheticSplit,
    pub test: SyntheticSplit,
}

fn build_lexicon(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Lexicon> {
    let (k, m, n) = (config.sememes, config.senses, config.words);
    let mut per_word = vec![1usize; n];
    for _ in n..m {
        let open: Vec<usize> = (0..n).filter(|&w| per_word[w] < MAX_SENSES_PER_WORD).collect();
        per_word[*open.choose(rng).expect("validated sense count")] += 1;
    }
    let owners: Vec<usize> = (0..n).flat_map(|w| std::iter::repeat_n(w, per_word[w])).collect();

    let mut target: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=MAX_SEMEMES_PER_SENSE.min(k))).collect();
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    for e in order {
        let mut room: Vec<usize> = (0..m).filter(|&s| sets[s].len() < target[s]).collect();
        if room.is_empty() {
            room = (0..m).filter(|&s| sets[s].len() < MAX_SEMEMES_PER_SENSE).collect();
            let s = *room.choose(rng).expect("validated sememe count");
            target[s] += 1;
            room = vec![s];
        }
        let s = *room.choose(rng).expect("non-empty");
        sets[s].push(e);
    }
    for s in 0..m {
        while sets[s].len() < target[s] {
            let e = rng.gen_range(0..k);
            if !sets[s].contains(&e) {
                sets[s].push(e);
            }
        }
    }

    let mut builder = LexiconBuilder::new();
    for e in 0..k {
        builder.declare_sememe(&format!("e{e}"));
    }
    for (s, owner) in owners.iter().enumerate() {
        let labels: Vec<String> = sets[s].iter().map(|e| format!("e{e}")).collect();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        builder.add_sense(&format!("w{owner}"), None, &refs)?;
    }
    builder.build()
}

struct Sampler<'a> {
    lex: &'a Lexicon,
    successors: &'a [Vec<usize>],
    signal: f64,
    sharpness: f64,
}

impl Sampler<'_> {
    fn uniform_word_sense(&self, rng: &mut ChaCha8Rng) -> usize {
        let w = WordId(rng.gen_range(0..self.lex.num_words()) as u32);
        self.lex.senses_of(w).choose(rng).expect("every word has a sense").index()
    }

    fn next_sense(&self, prev: usize, rng: &mut ChaCha8Rng) -> usize {
        if rng.gen::<f64>() < self.signal {
            let active = active_set(self.lex, self.successors, prev);
            let weights: Vec<f64> = self.lex.sense_ids().map(|s| consistency_weight(self.lex, &active, s, self.sharpness)).collect();
            WeightedIndex::new(&weights).expect("positive weights").sample(rng)
        } else {
            self.uniform_word_sense(rng)
        }
    }

    fn split(&self, tokens: usize, rng: &mut ChaCha8Rng) -> SyntheticSplit {
        let (mut sentences, mut senses) = (Vec::new(), Vec::new());
        let mut remaining = tokens;
        while remaining > 0 {
            let len = rng.gen_range(SENTENCE_LEN.0..=SENTENCE_LEN.1).min(remaining);
            let mut s = vec![self.uniform_word_sense(rng)];
            while s.len() < len {
                let next = self.next_sense(*s.last().expect("non-empty"), rng);
                s.push(next);
            }
            sentences.push(s.iter().map(|&x| self.lex.owner(SenseId(x as u32)).index()).collect());
            senses.push(s);
            remaining -= len;
        }
        SyntheticSplit { corpus: Corpus::new(sentences), senses }
    }
}

/// Membership mask of the successors of `prev`'s sememes.
fn active_set(lex: &Lexicon, successors: &[Vec<usize>], prev: usize) -> Vec<bool> {
    let mut active = vec![false; lex.num_sememes()];
    for k in lex.sememes_of(SenseId(prev as u32)) {
        for &next in &successors[k.index()] {
            active[next] = true;
        }
    }
    active
}

fn consistency_weight(lex: &Lexicon, active: &[bool], s: SenseId, sharpness: f64) -> f64 {
    let sememes = lex.sememes_of(s);
    let hits = sememes.iter().filter(|k| active[k.index()]).count();
    (sharpness * hits as f64 / sememes.len() as f64).exp()
}

pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lexicon = build_lexicon(config, &mut rng)?;
    let successors: Vec<Vec<usize>> = (0..config.sememes)
        .map(|_| rand::seq::index::sample(&mut rng, config.sememes, config.fanout).into_vec())
        .collect();
    let sampler = Sampler { lex: &lexicon, successors: &successors, signal: config.signal, sharpness: config.sharpness };
    let train = sampler.split(config.train_tokens, &mut rng);
    let valid = sampler.split(config.valid_tokens, &mut rng);
    let test = sampler.split(config.test_tokens, &mut rng);
    Ok(SyntheticData { config: config.clone(), lexicon, successors, train, valid, test })
}

impl SyntheticData {
    /// Distribution of the next hidden sense given the previous one, or
    /// the sentence-start distribution for `None`.
    pub fn next_sense_distribution(&self, prev: Option<usize>) -> Vec<f64> {
        let lex = &self.lexicon;
        let mut p = vec![0.0; lex.num_senses()];
        let uniform_weight = match prev {
            None => 1.0,
            Some(_) => 1.0 - self.config.signal,
        };
        let n = lex.num_words() as f64;
        for w in lex.word_ids() {
            let senses = lex.senses_of(w);
            for s in senses {
                p[s.index()] += uniform_weight / (n * senses.len() as f64);
            }
        }
        if let Some(prev) = prev {
            let active = active_set(lex, &self.successors, prev);
            let weights: Vec<f64> =
                lex.sense_ids().map(|s| consistency_weight(lex, &active, s, self.config.sharpness)).collect();
            let total: f64 = weights.iter().sum();
            for (q, w) in p.iter_mut().zip(weights) {
                *q += self.config.signal * w / total;
            }
        }
        p
    }

    pub fn next_word_distribution(&self, prev: Option<usize>) -> Vec<f64> {
        let mut p = vec![0.0; self.lexicon.num_words()];
        for (s, q) in self.next_sense_distribution(prev).into_iter().enumerate() {
            p[self.lexicon.owner(SenseId(s as u32)).index()] += q;
        }
        p
    }

    /// Mean NLL of a split's scored tokens (all but each sentence's first)
    /// under the true distribution given the hidden previous sense.
    pub fn oracle_nll(&self, split: &SyntheticSplit) -> f64 {
        let table: Vec<Vec<f64>> =
            (0..self.lexicon.num_senses()).map(|s| self.next_word_distribution(Some(s))).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for (words, senses) in split.corpus.sentences.iter().zip(&split.senses) {
            for t in 1..words.len() {
                total -= table[senses[t - 1]][words[t]].ln();
                count += 1;
            }
        }
        total / count as f64
    }

    /// Writes `lexicon.tsv`, `{train,valid,test}.txt`, the per-token hidden
    /// state files `{split}.states` (`-` marks a sentence start), and
    /// `truth.tsv` holding the next-word distribution of every state.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_lexicon(&self.lexicon, dir.join("lexicon.tsv"))?;
        for (name, split) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            write_corpus(&split.corpus, &self.lexicon, dir.join(format!("{name}.txt")))?;
            let mut states = String::new();
            for row in split.states() {
                let cells: Vec<String> = row.iter().map(|s| s.map_or_else(|| "-".into(), |v| v.to_string())).collect();
                states.push_str(&cells.join(" "));
                states.push('\n');
            }
            fs::write(dir.join(format!("{name}.states")), states)?;
        }
        let mut truth = String::from("state");
        for w in self.lexicon.words() {
            let _ = write!(truth, "\t{w}");
        }
        truth.push('\n');
        let rows = std::iter::once(None).chain((0..self.lexicon.num_senses()).map(Some));
        for state in rows {
            truth.push_str(&state.map_or_else(|| "-".into(), |s| s.to_string()));
            for p in self.next_word_distribution(state) {
                let _ = write!(truth, "\t{p:e}");
            }
            truth.push('\n');
        }
        fs::write(dir.join("truth.tsv"), truth)?;
        Ok(())
    }
}
