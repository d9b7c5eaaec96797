#![allow(dead_code)]

use rand::Rng;
use sdlm::decoder::SdlmView;
use sdlm::lexicon::{Lexicon, LexiconBuilder, NormalizationMode};
use sdlm::numerics::Tensor;

/// A lexicon with `words` words, each having 1..=max_senses senses of
/// 1..=max_sememes sememes drawn from `sememes` labels. Unused labels are
/// still declared.
pub fn random_lexicon<R: Rng>(rng: &mut R, words: usize, max_senses: usize, sememes: usize, max_sememes: usize) -> Lexicon {
    let mut b = LexiconBuilder::new();
    let labels: Vec<String> = (0..sememes).map(|k| format!("k{k}")).collect();
    for l in &labels {
        b.declare_sememe(l);
    }
    for w in 0..words {
        let word = format!("w{w}");
        for _ in 0..rng.gen_range(1..=max_senses) {
            let n = rng.gen_range(1..=max_sememes.min(sememes));
            let picked = rand::seq::index::sample(rng, sememes, n);
            let set: Vec<&str> = picked.iter().map(|k| labels[k].as_str()).collect();
            b.add_sense(&word, None, &set).unwrap();
        }
    }
    b.build().unwrap()
}

pub struct DecoderParams {
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub basis: Tensor,
    pub mix: Tensor,
    pub emb: Tensor,
}

impl DecoderParams {
    pub fn random<R: Rng>(rng: &mut R, lex: &Lexicon, h1: usize, h2: usize, bases: usize, scale: f64) -> Self {
        let k = lex.num_sememes();
        Self {
            gate_w: Tensor::uniform(&[k, h1], -scale, scale, rng),
            gate_b: Tensor::uniform(&[k], -scale, scale, rng),
            basis: Tensor::uniform(&[h1, bases * h2], -scale, scale, rng),
            mix: Tensor::uniform(&[k, bases], -scale, scale, rng),
            emb: Tensor::uniform(&[lex.num_words(), h2], -scale, scale, rng),
        }
    }

    pub fn view(&self) -> SdlmView<'_> {
        SdlmView::new(&self.gate_w, &self.gate_b, &self.basis, &self.mix, &self.emb).unwrap()
    }
}

/// Sense logits computed edge by edge with explicit dense expert matrices,
/// sharing no code with the library's factorized path.
pub fn naive_sense_logits(g: &[f64], p: &DecoderParams, lex: &Lexicon, mode: NormalizationMode) -> Vec<f64> {
    let (h1, h2) = (g.len(), p.emb.cols());
    let bases = p.mix.cols();
    let mut logits = Vec::with_capacity(lex.num_senses());
    for s in lex.sense_ids() {
        let w = lex.owner(s).index();
        let e = p.emb.row(w);
        let mut total = 0.0;
        let experts = lex.sememes_of(s);
        for &k in experts {
            let ki = k.index();
            let gate = 1.0 / (1.0 + (-(0..h1).map(|i| g[i] * p.gate_w.at(ki, i)).sum::<f64>() - p.gate_b.data()[ki]).exp());
            let m = p.mix.row(ki).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = p.mix.row(ki).iter().map(|a| (a - m).exp()).sum();
            let alpha: Vec<f64> = p.mix.row(ki).iter().map(|a| (a - m).exp() / z).collect();
            let mut score = 0.0;
            for i in 0..h1 {
                for j in 0..h2 {
                    let u: f64 = (0..bases).map(|r| alpha[r] * p.basis.at(i, r * h2 + j)).sum();
                    score += g[i] * u * e[j];
                }
            }
            let c = match mode {
                NormalizationMode::Left => 1.0 / experts.len() as f64,
                NormalizationMode::Symmetric => 1.0 / ((experts.len() * lex.senses_with(k).len()) as f64).sqrt(),
            };
            total += gate * c * score;
        }
        logits.push(total);
    }
    logits
}

pub fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits.iter().map(|l| (l - m).exp() / z).collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
