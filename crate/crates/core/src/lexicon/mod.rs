//! The word → sense → sememe hierarchy.
//!
//! A [`Lexicon`] is an immutable bipartite incidence structure between senses
//! and sememes, plus the ownership map from senses to words. Both directions of
//! the sense/sememe relation are stored so that the decoder can walk either the
//! sememes of a sense (`E(s)`) or the senses covered by a sememe expert (`D(k)`)
//! without searching.

mod ablate;
mod tsv;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ablate::ablate_edges;
pub use tsv::{parse_lexicon, read_lexicon, serialize_lexicon, write_lexicon};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub(crate) fn from_index(index: usize) -> Self {
                Self(index as u32)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_type!(
    /// Dense index of a sememe, in `[0, K)`.
    SememeId
);
id_type!(
    /// Dense index of a sense, in `[0, M)`.
    SenseId
);
id_type!(
    /// Dense index of a word, in `[0, N)`.
    WordId
);

/// Per-edge constant `C(k, s)` used to damp the expert scores of senses with
/// many sememes (left) or of large experts as well (symmetric).
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    #[default]
    Left,
    Symmetric,
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(NormalizationMode::Left),
            "symmetric" => Ok(NormalizationMode::Symmetric),
            other => Err(Error::argument(format!("unknown normalization mode `{other}`"))),
        }
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationMode::Left => "left",
            NormalizationMode::Symmetric => "symmetric",
        })
    }
}

/// Label prefix of the synthetic sememe attached to each special token.
pub const SPECIAL_SEMEME_PREFIX: &str = "@special:";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
    sememes: Vec<String>,
    word_senses: Vec<Vec<SenseId>>,
    sense_sememes: Vec<Vec<SememeId>>,
    sememe_senses: Vec<Vec<SenseId>>,
    sense_word: Vec<WordId>,
    word_lookup: HashMap<String, WordId>,
}

impl Lexicon {
    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_senses(&self) -> usize {
        self.sense_word.len()
    }

    pub fn num_sememes(&self) -> usize {
        self.sememes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.sense_sememes.iter().map(Vec::len).sum()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn sememes(&self) -> &[String] {
        &self.sememes
    }

    pub fn word(&self, w: WordId) -> &str {
        &self.words[w.index()]
    }

    pub fn sememe(&self, k: SememeId) -> &str {
        &self.sememes[k.index()]
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.word_lookup.get(word).copied()
    }

    /// `S(w)`, in file order.
    pub fn senses_of(&self, w: WordId) -> &[SenseId] {
        &self.word_senses[w.index()]
    }

    /// `E(s)`, in file order.
    pub fn sememes_of(&self, s: SenseId) -> &[SememeId] {
        &self.sense_sememes[s.index()]
    }

    /// `D(k)`: the senses a sememe expert scores, ascending.
    pub fn senses_with(&self, k: SememeId) -> &[SenseId] {
        &self.sememe_senses[k.index()]
    }

    pub fn owner(&self, s: SenseId) -> WordId {
        self.sense_word[s.index()]
    }

    pub fn sense_words(&self) -> &[WordId] {
        &self.sense_word
    }

    pub fn word_ids(&self) -> impl Iterator<Item = WordId> + '_ {
        (0..self.words.len()).map(WordId::from_index)
    }

    pub fn sense_ids(&self) -> impl Iterator<Item = SenseId> + '_ {
        (0..self.sense_word.len()).map(SenseId::from_index)
    }

    pub fn sememe_ids(&self) -> impl Iterator<Item = SememeId> + '_ {
        (0..self.sememes.len()).map(SememeId::from_index)
    }

    /// Ordinal of a sense within its owner word.
    pub fn sense_ordinal(&self, s: SenseId) -> usize {
        let w = self.owner(s);
        self.senses_of(w).iter().position(|&x| x == s).expect("sense listed under its owner")
    }

    /// Mean `|E(s)|` over the senses of `w`, the key used for bucketing.
    pub fn mean_sememes_of_word(&self, w: WordId) -> f64 {
        let senses = self.senses_of(w);
        let total: usize = senses.iter().map(|&s| self.sememes_of(s).len()).sum();
        total as f64 / senses.len() as f64
    }

    /// `C(k, s)` for a connected pair.
    pub fn normalization_constant(&self, k: SememeId, s: SenseId, mode: NormalizationMode) -> Result<f64> {
        if k.index() >= self.num_sememes() || s.index() >= self.num_senses() {
            return Err(Error::contract(format!("sememe {k} or sense {s} out of range")));
        }
        if !self.sememes_of(s).contains(&k) {
            return Err(Error::contract(format!("sense {s} is not connected to sememe {k}")));
        }
        Ok(edge_constant(self.sememes_of(s).len(), self.senses_with(k).len(), mode))
    }

    pub fn stats(&self) -> LexiconStats {
        compute_stats(self)
    }

    /// Returns a copy where every token in `tokens` that is not yet a word gets
    /// one synthetic sense carrying its own dedicated sememe.
    pub fn with_special_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Lexicon> {
        let mut builder = LexiconBuilder::from_lexicon(self);
        for token in tokens {
            let token = token.as_ref();
            if self.word_id(token).is_none() && !builder.has_word(token) {
                let label = format!("{SPECIAL_SEMEME_PREFIX}{token}");
                builder.add_sense(token, None, &[label.as_str()])?;
            }
        }
        builder.build()
    }

    /// Sub-lexicon over `vocab` (in that order). Every entry must be a word of
    /// `self`; sememes are renumbered by first use.
    pub fn restrict_to<S: AsRef<str>>(&self, vocab: &[S]) -> Result<Lexicon> {
        let mut builder = LexiconBuilder::new();
        for word in vocab {
            let word = word.as_ref();
            let w = self
                .word_id(word)
                .ok_or_else(|| Error::argument(format!("`{word}` is not in the lexicon")))?;
            for &s in self.senses_of(w) {
                let labels: Vec<&str> = self.sememes_of(s).iter().map(|&k| self.sememe(k)).collect();
                builder.add_sense(word, None, &labels)?;
            }
        }
        builder.build()
    }
}

#[inline]
pub(crate) fn edge_constant(sense_degree: usize, expert_degree: usize, mode: NormalizationMode) -> f64 {
    match mode {
        NormalizationMode::Left => 1.0 / sense_degree as f64,
        NormalizationMode::Symmetric => 1.0 / ((sense_degree * expert_degree) as f64).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconStats {
    pub num_sememes: usize,
    pub num_senses: usize,
    pub num_words: usize,
    pub edge_count: usize,
    /// Size of the union of sememes over a word's senses, averaged over words.
    pub mean_sememes_per_word: f64,
    /// `|D(k)|` averaged over all K experts.
    pub mean_senses_per_expert: f64,
    /// Edges per word.
    pub lambda: f64,
}

pub fn compute_stats(lex: &Lexicon) -> LexiconStats {
    let n = lex.num_words();
    let k = lex.num_sememes();
    let union_total: usize = lex
        .word_ids()
        .map(|w| {
            lex.senses_of(w)
                .iter()
                .flat_map(|&s| lex.sememes_of(s).iter().copied())
                .collect::<BTreeSet<_>>()
                .len()
        })
        .sum();
    let expert_total: usize = lex.sememe_ids().map(|e| lex.senses_with(e).len()).sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    LexiconStats {
        num_sememes: k,
        num_senses: lex.num_senses(),
        num_words: n,
        edge_count: lex.edge_count(),
        mean_sememes_per_word: ratio(union_total, n),
        mean_senses_per_expert: ratio(expert_total, k),
        lambda: ratio(lex.edge_count(), n),
    }
}

/// Incremental, validating constructor for [`Lexicon`].
///
/// Words and sememes get ids in order of first appearance. Senses are numbered
/// grouped by word, so the senses of one word are contiguous.
#[derive(Debug, Default, Clone)]
pub struct LexiconBuilder {
    words: Vec<String>,
    word_lookup: HashMap<String, usize>,
    senses: Vec<Vec<Vec<SememeId>>>,
    sememes: Vec<String>,
    sememe_lookup: HashMap<String, SememeId>,
}

impl LexiconBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeds a builder with the full content of `lex`, including sememes no
    /// sense uses any more.
    pub fn from_lexicon(lex: &Lexicon) -> Self {
        let mut builder = Self::new();
        for label in lex.sememes() {
            builder.declare_sememe(label);
        }
        for w in lex.word_ids() {
            let word = lex.word(w).to_owned();
            builder.word_lookup.insert(word.clone(), builder.words.len());
            builder.words.push(word);
            builder
                .senses
                .push(lex.senses_of(w).iter().map(|&s| lex.sememes_of(s).to_vec()).collect());
        }
        builder
    }

    pub fn has_word(&self, word: &str) -> bool {
        self.word_lookup.contains_key(word)
    }

    pub fn declare_sememe(&mut self, label: &str) -> SememeId {
        if let Some(&id) = self.sememe_lookup.get(label) {
            return id;
        }
        let id = SememeId::from_index(self.sememes.len());
        self.sememes.push(label.to_owned());
        self.sememe_lookup.insert(label.to_owned(), id);
        id
    }

    /// Appends a sense to `word`. When `ordinal` is given it must equal the
    /// number of senses the word already has.
    pub fn add_sense(&mut self, word: &str, ordinal: Option<usize>, sememes: &[&str]) -> Result<()> {
        if word.is_empty() {
            return Err(Error::argument("empty word"));
        }
        if sememes.is_empty() {
            return Err(Error::Validation(format!("sense of `{word}` has no sememes")));
        }
        let mut ids = Vec::with_capacity(sememes.len());
        for &label in sememes {
            if label.is_empty() {
                return Err(Error::argument(format!("empty sememe label in a sense of `{word}`")));
            }
            let id = self.declare_sememe(label);
            if ids.contains(&id) {
                return Err(Error::Validation(format!("sememe `{label}` repeated in a sense of `{word}`")));
            }
            ids.push(id);
        }
        let w = match self.word_lookup.get(word) {
            Some(&w) => w,
            None => {
                self.word_lookup.insert(word.to_owned(), self.words.len());
                self.words.push(word.to_owned());
                self.senses.push(Vec::new());
                self.words.len() - 1
            }
        };
        let existing = self.senses[w].len();
        if let Some(ordinal) = ordinal {
            if ordinal < existing {
                return Err(Error::argument(format!("duplicate sense {ordinal} of `{word}`")));
            }
            if ordinal > existing {
                return Err(Error::argument(format!(
                    "sense ordinal {ordinal} of `{word}` skips ahead; expected {existing}"
                )));
            }
        }
        self.senses[w].push(ids);
        Ok(())
    }

    pub fn build(self) -> Result<Lexicon> {
        let mut word_senses = Vec::with_capacity(self.words.len());
        let mut sense_sememes = Vec::new();
        let mut sense_word = Vec::new();
        for (w, senses) in self.senses.into_iter().enumerate() {
            if senses.is_empty() {
                return Err(Error::Validation(format!("word `{}` has no senses", self.words[w])));
            }
            let mut ids = Vec::with_capacity(senses.len());
            for sememes in senses {
                ids.push(SenseId::from_index(sense_word.len()));
                sense_word.push(WordId::from_index(w));
                sense_sememes.push(sememes);
            }
            word_senses.push(ids);
        }
        let mut sememe_senses = vec![Vec::new(); self.sememes.len()];
        for (s, sememes) in sense_sememes.iter().enumerate() {
            for k in sememes {
                sememe_senses[k.index()].push(SenseId::from_index(s));
            }
        }
        let word_lookup = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), WordId::from_index(i)))
            .collect();
        Ok(Lexicon {
            words: self.words,
            sememes: self.sememes,
            word_senses,
            sense_sememes,
            sememe_senses,
            sense_word,
            word_lookup,
        })
    }
}
