//! Perplexity, bucketed breakdowns, paired comparisons, edge-ablation runs
//! and top-k case studies.
//!
//! Every sentence is scored from a zero state, and its first token is
//! context only. A token's buckets depend on its word: the number of senses
//! `|S(w)|`, and the mean number of sememes over those senses.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::decoder::{self, top_k_indices};
use crate::error::{Error, Result};
use crate::lexicon::{ablate_edges, Lexicon, WordId};
use crate::model::LanguageModel;
use crate::training::{self, TrainConfig};

/// Sentences scored per forward pass.
const EVAL_BATCH: usize = 32;

/// Lower edges of the mean-sememe buckets; the last bucket is open-ended.
pub const SEMEME_EDGES: [f64; 5] = [1.0, 2.0, 4.0, 7.0, 14.0];

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TokenScore {
    pub word: usize,
    pub nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub tokens: usize,
    pub nll_sum: f64,
}

impl Bucket {
    fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), tokens: 0, nll_sum: 0.0 }
    }

    /// `None` for an empty bucket.
    pub fn perplexity(&self) -> Option<f64> {
        (self.tokens > 0).then(|| (self.nll_sum / self.tokens as f64).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tokens: usize,
    pub nll_sum: f64,
    pub perplexity: f64,
    pub by_senses: Vec<Bucket>,
    pub by_sememes: Vec<Bucket>,
    pub corpus_fingerprint: u64,
}

fn ppl_field(p: Option<f64>) -> String {
    p.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

impl EvalReport {
    /// One `key = value` pair per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tokens = {}", self.tokens);
        let _ = writeln!(out, "mean_nll = {:.12}", self.nll_sum / self.tokens as f64);
        let _ = writeln!(out, "perplexity = {:.6}", self.perplexity);
        let _ = writeln!(out, "corpus_fingerprint = {:016x}", self.corpus_fingerprint);
        for (partition, buckets) in [("senses", &self.by_senses), ("sememes", &self.by_sememes)] {
            for b in buckets {
                let _ = writeln!(out, "{partition}[{}].tokens = {}", b.label, b.tokens);
                let _ = writeln!(out, "{partition}[{}].perplexity = {}", b.label, ppl_field(b.perplexity()));
            }
        }
        out
    }

    /// Header row plus one tab-separated row per bucket, overall first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("partition\tbucket\ttokens\tnll_sum\tperplexity\n");
        let _ = writeln!(out, "all\tall\t{}\t{:.12}\t{:.6}", self.tokens, self.nll_sum, self.perplexity);
        for (partition, buckets) in [("senses", &self.by_senses), ("sememes", &self.by_sememes)] {
            for b in buckets {
                let _ = writeln!(out, "{partition}\t{}\t{}\t{:.12}\t{}", b.label, b.tokens, b.nll_sum, ppl_field(b.perplexity()));
            }
        }
        out
    }

    /// `exp(Σ_b n_b ln ppl_b / Σ_b n_b)` over one partition's non-empty
    /// buckets.
    pub fn recombined_perplexity(buckets: &[Bucket]) -> f64 {
        let (mut weighted, mut total) = (0.0, 0usize);
        for b in buckets {
            if let Some(p) = b.perplexity() {
                weighted += b.tokens as f64 * p.ln();
                total += b.tokens;
            }
        }
        (weighted / total as f64).exp()
    }
}

fn sememe_bucket_labels() -> Vec<String> {
    let mut labels: Vec<String> =
        SEMEME_EDGES.windows(2).map(|w| format!("[{},{})", w[0], w[1])).collect();
    labels.push(format!(">={}", SEMEME_EDGES[SEMEME_EDGES.len() - 1]));
    labels
}

/// Index of the mean-sememe bucket holding `mean`.
pub fn sememe_bucket(mean: f64) -> usize {
    SEMEME_EDGES.iter().rposition(|&edge| mean >= edge).unwrap_or(0)
}

/// Per-token NLL of every scored token, in corpus order.
pub fn score_corpus(model: &LanguageModel, corpus: &Corpus) -> Result<Vec<TokenScore>> {
    let mut out = Vec::with_capacity(corpus.num_tokens());
    for chunk in corpus.sentences.chunks(EVAL_BATCH) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        let scores = model.score_sentences(&refs)?;
        for (sentence, nlls) in chunk.iter().zip(scores) {
            out.extend(sentence[1..].iter().zip(nlls).map(|(&word, nll)| TokenScore { word, nll }));
        }
    }
    Ok(out)
}

pub fn report_from_scores(lex: &Lexicon, scores: &[TokenScore], corpus_fingerprint: u64) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::argument("no tokens to evaluate: every sentence has fewer than two tokens"));
    }
    let mut by_senses = vec![Bucket::new("=1"), Bucket::new(">1")];
    let mut by_sememes: Vec<Bucket> = sememe_bucket_labels().into_iter().map(Bucket::new).collect();
    let mut nll_sum = 0.0;
    for s in scores {
        let w = WordId(s.word as u32);
        let multi = usize::from(lex.senses_of(w).len() > 1);
        for bucket in [&mut by_senses[multi], &mut by_sememes[sememe_bucket(lex.mean_sememes_of_word(w))]] {
            bucket.tokens += 1;
            bucket.nll_sum += s.nll;
        }
        nll_sum += s.nll;
    }
    Ok(EvalReport {
        tokens: scores.len(),
        nll_sum,
        perplexity: (nll_sum / scores.len() as f64).exp(),
        by_senses,
        by_sememes,
        corpus_fingerprint,
    })
}

/// Dropout is never applied here.
pub fn evaluate(model: &LanguageModel, corpus: &Corpus) -> Result<EvalReport> {
    let scores = score_corpus(model, corpus)?;
    report_from_scores(model.lexicon(), &scores, corpus.fingerprint())
}

pub fn perplexity(model: &LanguageModel, corpus: &Corpus) -> Result<f64> {
    Ok(evaluate(model, corpus)?.perplexity)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub partition: String,
    pub bucket: String,
    pub tokens: usize,
    pub baseline_ppl: Option<f64>,
    pub model_ppl: Option<f64>,
    /// `baseline - model`; positive when the model is better.
    pub delta: Option<f64>,
    /// `delta / baseline`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("partition\tbucket\ttokens\tbaseline_ppl\tmodel_ppl\tdelta_ppl\tdelta_over_baseline\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.partition,
                r.bucket,
                r.tokens,
                ppl_field(r.baseline_ppl),
                ppl_field(r.model_ppl),
                ppl_field(r.delta),
                ppl_field(r.ratio)
            );
        }
        out
    }
}

/// Bucket-by-bucket perplexity deltas of `model` against `baseline`. Both
/// reports must come from the same corpus.
pub fn compare(baseline: &EvalReport, model: &EvalReport) -> Result<Comparison> {
    if baseline.corpus_fingerprint != model.corpus_fingerprint || baseline.tokens != model.tokens {
        return Err(Error::argument("reports were computed on different corpora"));
    }
    let row = |partition: &str, a: &Bucket, b: &Bucket| -> Result<ComparisonRow> {
        if a.label != b.label || a.tokens != b.tokens {
            return Err(Error::argument(format!("bucket {partition}[{}] does not line up", a.label)));
        }
        let (pa, pb) = (a.perplexity(), b.perplexity());
        let delta = pa.zip(pb).map(|(x, y)| x - y);
        Ok(ComparisonRow {
            partition: partition.to_string(),
            bucket: a.label.clone(),
            tokens: a.tokens,
            baseline_ppl: pa,
            model_ppl: pb,
            delta,
            ratio: delta.zip(pa).map(|(d, x)| d / x),
        })
    };
    let overall = |r: &EvalReport| Bucket { label: "all".into(), tokens: r.tokens, nll_sum: r.nll_sum };
    let mut rows = vec![row("all", &overall(baseline), &overall(model))?];
    for (partition, xs, ys) in [
        ("senses", &baseline.by_senses, &model.by_senses),
        ("sememes", &baseline.by_sememes, &model.by_sememes),
    ] {
        if xs.len() != ys.len() {
            return Err(Error::argument("reports use different bucketings"));
        }
        for (a, b) in xs.iter().zip(ys) {
            rows.push(row(partition, a, b)?);
        }
    }
    Ok(Comparison { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessResult {
    pub ppl_full: f64,
    pub ppl_ablated: f64,
    pub edges_full: usize,
    pub edges_ablated: usize,
}

/// Trains twice with the same config, once on `lex` and once on a copy with
/// `fraction` of its sense–sememe edges removed, and reports test
/// perplexity for both.
pub fn robustness_run(
    config: &TrainConfig,
    lex: &Arc<Lexicon>,
    fraction: f64,
    ablation_seed: u64,
    train_corpus: &Corpus,
    valid_corpus: &Corpus,
    test_corpus: &Corpus,
) -> Result<RobustnessResult> {
    let ablated = Arc::new(ablate_edges(lex, fraction, ablation_seed)?);
    let run = |l: &Arc<Lexicon>| -> Result<f64> {
        let outcome = training::train(Arc::clone(l), train_corpus, valid_corpus, config, |_| {})?;
        perplexity(&outcome.model, test_corpus)
    };
    Ok(RobustnessResult {
        ppl_full: run(lex)?,
        ppl_ablated: run(&ablated)?,
        edges_full: lex.edge_count(),
        edges_ablated: ablated.edge_count(),
    })
}

/// Top-k next words and, for the sememe-driven decoder, top-k sememe gates.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseStudy {
    pub context: Vec<String>,
    pub words: Vec<(String, f64)>,
    pub sememes: Vec<(String, f64)>,
}

impl CaseStudy {
    pub fn to_text(&self) -> String {
        let mut out = format!("context\t{}\n", self.context.join(" "));
        for (w, p) in &self.words {
            let _ = writeln!(out, "word\t{w}\t{p:.6}");
        }
        for (s, q) in &self.sememes {
            let _ = writeln!(out, "sememe\t{s}\t{q:.6}");
        }
        out
    }
}

pub fn case_study(model: &LanguageModel, context: &[usize], k: usize) -> Result<CaseStudy> {
    let lex = model.lexicon();
    let g = model.context_vector(context)?;
    let (words, sememes) = match model.sdlm_view() {
        Some(view) => {
            let report = decoder::top_k_report(&g, &view, model.graph(), lex, k)?;
            (
                report.words.into_iter().map(|(w, p)| (lex.word(w).to_string(), p)).collect(),
                report.sememes.into_iter().map(|(e, q)| (lex.sememe(e).to_string(), q)).collect(),
            )
        }
        None => {
            if k > lex.num_words() {
                return Err(Error::argument(format!("k = {k} exceeds the vocabulary size {}", lex.num_words())));
            }
            let probs = model.word_distribution(&g)?;
            (top_k_indices(&probs, k).into_iter().map(|w| (lex.words()[w].clone(), probs[w])).collect(), Vec::new())
        }
    };
    Ok(CaseStudy { context: context.iter().map(|&w| lex.words()[w].clone()).collect(), words, sememes })
}
