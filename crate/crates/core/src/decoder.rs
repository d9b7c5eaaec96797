//! Sememe → sense → word decoder.
//!
//! The context vector `g` first drives an independent sigmoid gate `q_k` per
//! sememe. Each sememe `k` is an expert that scores only the senses it is
//! connected to, with a bilinear score `gᵀ U_k w_s`. A sense's logit is the
//! gated, normalized sum of the scores of its experts:
//!
//! ```text
//! ℓ_s = Σ_{k ∈ E(s)} q_k · C(k, s) · gᵀ U_k w_s,    U_k = Σ_r α_{k,r} Q_r
//! ```
//!
//! `P(s | g) = softmax(ℓ)_s` and a word's probability is the sum over its
//! senses. Sense output embeddings `w_s` are the owner word's input
//! embedding, so one table serves the encoder input and the decoder output.
//!
//! Because `U_k` is a convex mix of `R` shared bases, the logits factor as
//! `ℓ_s = Σ_r β_{s,r} (p_r · w_s)` with `p_r = gᵀ Q_r` and
//! `β_{s,r} = Σ_{k ∈ E(s)} q_k C(k, s) α_{k,r}`, which costs `O(R·N·H2)` for
//! the projections plus `O(R·edges)` for the sparse mixing instead of one
//! bilinear form per edge.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lexicon::{edge_constant, Lexicon, NormalizationMode, SememeId, SenseId, WordId};
use crate::numerics::{dot, sigmoid, softmax, CustomOp, Tape, Tensor, Var};

/// Sparse sense → (sememe, `C(k, s)`) structure for one normalization mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SenseGraph {
    mode: NormalizationMode,
    num_words: usize,
    num_sememes: usize,
    sense_word: Vec<usize>,
    offsets: Vec<usize>,
    edge_sememe: Vec<usize>,
    edge_weight: Vec<f64>,
}

impl SenseGraph {
    pub fn new(lex: &Lexicon, mode: NormalizationMode) -> Self {
        let mut offsets = Vec::with_capacity(lex.num_senses() + 1);
        let mut edge_sememe = Vec::with_capacity(lex.edge_count());
        let mut edge_weight = Vec::with_capacity(lex.edge_count());
        offsets.push(0);
        for s in lex.sense_ids() {
            let sememes = lex.sememes_of(s);
            for &k in sememes {
                edge_sememe.push(k.index());
                edge_weight.push(edge_constant(sememes.len(), lex.senses_with(k).len(), mode));
            }
            offsets.push(edge_sememe.len());
        }
        Self {
            mode,
            num_words: lex.num_words(),
            num_sememes: lex.num_sememes(),
            sense_word: lex.sense_words().iter().map(|w| w.index()).collect(),
            offsets,
            edge_sememe,
            edge_weight,
        }
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn num_senses(&self) -> usize {
        self.sense_word.len()
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    pub fn num_sememes(&self) -> usize {
        self.num_sememes
    }

    fn edges(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[s]..self.offsets[s + 1];
        self.edge_sememe[range.clone()].iter().copied().zip(self.edge_weight[range].iter().copied())
    }

    /// Fast-path logits for one row. `d` (`N×R`) and `beta` (`M×R`) receive
    /// the intermediates needed by the backward pass.
    #[allow(clippy::too_many_arguments)]
    fn forward_row(
        &self,
        q: &[f64],
        alpha: &[f64],
        proj: &[f64],
        emb: &[f64],
        bases: usize,
        d: &mut [f64],
        beta: &mut [f64],
        logits: &mut [f64],
    ) {
        let h2 = emb.len() / self.num_words;
        for w in 0..self.num_words {
            let e = &emb[w * h2..(w + 1) * h2];
            for r in 0..bases {
                d[w * bases + r] = dot(&proj[r * h2..(r + 1) * h2], e);
            }
        }
        beta.iter_mut().for_each(|b| *b = 0.0);
        for (s, logit) in logits.iter_mut().enumerate() {
            let bs = &mut beta[s * bases..(s + 1) * bases];
            for (k, c) in self.edges(s) {
                let gate = q[k] * c;
                for (b, a) in bs.iter_mut().zip(&alpha[k * bases..(k + 1) * bases]) {
                    *b += gate * a;
                }
            }
            let w = self.sense_word[s];
            *logit = dot(bs, &d[w * bases..(w + 1) * bases]);
        }
    }
}

/// Borrowed view of the decoder parameters.
///
/// Shapes: `gate_w` `K×H1`, `gate_b` `K`, `basis` `H1 × (R·H2)` holding
/// `Q_r` as column block `r`, `mix_logits` `K×R`, `embedding` `N×H2`.
#[derive(Copy, Clone, Debug)]
pub struct SdlmView<'a> {
    pub gate_w: &'a Tensor,
    pub gate_b: &'a Tensor,
    pub basis: &'a Tensor,
    pub mix_logits: &'a Tensor,
    pub embedding: &'a Tensor,
}

impl<'a> SdlmView<'a> {
    pub fn new(
        gate_w: &'a Tensor,
        gate_b: &'a Tensor,
        basis: &'a Tensor,
        mix_logits: &'a Tensor,
        embedding: &'a Tensor,
    ) -> Result<Self> {
        let view = Self { gate_w, gate_b, basis, mix_logits, embedding };
        let (k, h1, r, h2) = (view.num_sememes(), view.context_dim(), view.num_bases(), view.output_dim());
        if gate_b.len() != k || basis.shape() != [h1, r * h2] || mix_logits.rows() != k {
            return Err(Error::argument(format!(
                "inconsistent decoder shapes: gate_w {:?}, gate_b {:?}, basis {:?}, mix {:?}, embedding {:?}",
                gate_w.shape(),
                gate_b.shape(),
                basis.shape(),
                mix_logits.shape(),
                embedding.shape()
            )));
        }
        Ok(view)
    }

    pub fn num_sememes(&self) -> usize {
        self.gate_w.rows()
    }

    pub fn context_dim(&self) -> usize {
        self.gate_w.cols()
    }

    pub fn num_bases(&self) -> usize {
        self.mix_logits.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.embedding.cols()
    }

    /// `α` as a `K×R` matrix whose rows are probability vectors.
    pub fn mixture_weights(&self) -> Tensor {
        let mut alpha = self.mix_logits.clone();
        for k in 0..alpha.rows() {
            crate::numerics::stable::softmax_in_place(alpha.row_mut(k));
        }
        alpha
    }

    /// `Q_r` as an `H1×H2` matrix.
    pub fn basis_matrix(&self, r: usize) -> Tensor {
        let (h1, h2) = (self.context_dim(), self.output_dim());
        let mut data = Vec::with_capacity(h1 * h2);
        for i in 0..h1 {
            data.extend_from_slice(&self.basis.row(i)[r * h2..(r + 1) * h2]);
        }
        Tensor::matrix(h1, h2, data).expect("basis block shape")
    }

    /// The expert matrix `U_k = Σ_r α_{k,r} Q_r`.
    pub fn expert_matrix(&self, k: SememeId) -> Tensor {
        let alpha = self.mixture_weights();
        let (h1, h2) = (self.context_dim(), self.output_dim());
        let mut u = Tensor::zeros(&[h1, h2]);
        for r in 0..self.num_bases() {
            let a = alpha.at(k.index(), r);
            for i in 0..h1 {
                let src = &self.basis.row(i)[r * h2..(r + 1) * h2];
                for (dst, v) in u.row_mut(i).iter_mut().zip(src) {
                    *dst += a * v;
                }
            }
        }
        u
    }

    /// `p_r = gᵀ Q_r` for every basis, concatenated.
    fn project(&self, g: &[f64]) -> Vec<f64> {
        let width = self.basis.cols();
        let mut out = vec![0.0; width];
        for (gi, row) in g.iter().zip(0..self.context_dim()) {
            for (o, v) in out.iter_mut().zip(self.basis.row(row)) {
                *o += gi * v;
            }
        }
        out
    }
}

/// Gate values `q_k ∈ (0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SememeActivations {
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SenseDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordDistribution {
    pub probs: Vec<f64>,
}

fn check_context(g: &[f64], view: &SdlmView<'_>) -> Result<()> {
    if g.len() != view.context_dim() {
        return Err(Error::argument(format!("context has {} entries, expected {}", g.len(), view.context_dim())));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite context vector"));
    }
    Ok(())
}

pub fn predict_sememes(g: &[f64], view: &SdlmView<'_>) -> Result<SememeActivations> {
    check_context(g, view)?;
    let q = (0..view.num_sememes())
        .map(|k| sigmoid(dot(g, view.gate_w.row(k)) + view.gate_b.data()[k]))
        .collect();
    Ok(SememeActivations { q })
}

/// Bilinear score `gᵀ U_k w_s` of sense `s` under expert `k`.
pub fn expert_score(g: &[f64], s: SenseId, k: SememeId, view: &SdlmView<'_>, lex: &Lexicon) -> Result<f64> {
    check_context(g, view)?;
    if !lex.sememes_of(s).contains(&k) {
        return Err(Error::contract(format!("sense {s} is not scored by sememe expert {k}")));
    }
    let u = view.expert_matrix(k);
    let w = view.embedding.row(lex.owner(s).index());
    let mut total = 0.0;
    for (i, gi) in g.iter().enumerate() {
        total += gi * dot(u.row(i), w);
    }
    Ok(total)
}

/// One expert's own distribution over `D(k)`, normalized over that set only.
/// Used for analysis; the training objective uses [`sense_logits`].
pub fn expert_distribution(
    g: &[f64],
    k: SememeId,
    view: &SdlmView<'_>,
    lex: &Lexicon,
    mode: NormalizationMode,
) -> Result<Vec<(SenseId, f64)>> {
    let senses = lex.senses_with(k);
    if senses.is_empty() {
        return Err(Error::contract(format!("sememe expert {k} covers no senses")));
    }
    let q = predict_sememes(g, view)?.q[k.index()];
    let scores = senses
        .iter()
        .map(|&s| Ok(q * lex.normalization_constant(k, s, mode)? * expert_score(g, s, k, view, lex)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(senses.iter().copied().zip(softmax(&scores)).collect())
}

/// Sense logits `ℓ` through the factorized path.
pub fn sense_logits(g: &[f64], view: &SdlmView<'_>, graph: &SenseGraph) -> Result<Vec<f64>> {
    let q = predict_sememes(g, view)?.q;
    sense_logits_with_gates(g, &q, view, graph)
}

/// As [`sense_logits`] but with caller-supplied gate values.
pub fn sense_logits_with_gates(g: &[f64], q: &[f64], view: &SdlmView<'_>, graph: &SenseGraph) -> Result<Vec<f64>> {
    check_context(g, view)?;
    if q.len() != graph.num_sememes() || view.num_sememes() != graph.num_sememes() {
        return Err(Error::argument("gate count does not match the lexicon"));
    }
    if view.embedding.rows() != graph.num_words() {
        return Err(Error::argument("embedding rows do not match the lexicon"));
    }
    let bases = view.num_bases();
    let alpha = view.mixture_weights();
    let proj = view.project(g);
    let mut d = vec![0.0; graph.num_words() * bases];
    let mut beta = vec![0.0; graph.num_senses() * bases];
    let mut logits = vec![0.0; graph.num_senses()];
    graph.forward_row(q, alpha.data(), &proj, view.embedding.data(), bases, &mut d, &mut beta, &mut logits);
    Ok(logits)
}

pub fn sense_distribution_from_logits(logits: Vec<f64>) -> SenseDistribution {
    let probs = softmax(&logits);
    SenseDistribution { logits, probs }
}

pub fn predict_senses(g: &[f64], view: &SdlmView<'_>, graph: &SenseGraph) -> Result<SenseDistribution> {
    Ok(sense_distribution_from_logits(sense_logits(g, view, graph)?))
}

/// `P(w) = Σ_{s ∈ S(w)} P(s)`, accumulated in each word's sense order.
pub fn predict_words(senses: &SenseDistribution, lex: &Lexicon) -> Result<WordDistribution> {
    if senses.probs.len() != lex.num_senses() {
        return Err(Error::argument("sense distribution does not match the lexicon"));
    }
    let probs = lex
        .word_ids()
        .map(|w| lex.senses_of(w).iter().fold(0.0, |acc, &s| acc + senses.probs[s.index()]))
        .collect();
    Ok(WordDistribution { probs })
}

/// Tied plain-softmax logits `gᵀ x_w`.
pub fn baseline_logits(g: &[f64], embedding: &Tensor) -> Result<Vec<f64>> {
    if g.len() != embedding.cols() {
        return Err(Error::argument(format!(
            "tied softmax needs context width {} to equal embedding width {}",
            g.len(),
            embedding.cols()
        )));
    }
    Ok((0..embedding.rows()).map(|w| dot(g, embedding.row(w))).collect())
}

/// Inspection report: the `k` most probable next words and the `k`
/// most active sememes.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKReport {
    pub words: Vec<(WordId, f64)>,
    pub sememes: Vec<(SememeId, f64)>,
}

/// Indices of the `k` largest values, ties broken by ascending index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn top_k_report(
    g: &[f64],
    view: &SdlmView<'_>,
    graph: &SenseGraph,
    lex: &Lexicon,
    k: usize,
) -> Result<TopKReport> {
    if k > lex.num_words().min(lex.num_sememes()) {
        return Err(Error::argument(format!(
            "k = {k} exceeds min(N, K) = {}",
            lex.num_words().min(lex.num_sememes())
        )));
    }
    let q = predict_sememes(g, view)?.q;
    let senses = sense_distribution_from_logits(sense_logits_with_gates(g, &q, view, graph)?);
    let words = predict_words(&senses, lex)?;
    Ok(TopKReport {
        words: top_k_indices(&words.probs, k)
            .into_iter()
            .map(|w| (WordId(w as u32), words.probs[w]))
            .collect(),
        sememes: top_k_indices(&q, k).into_iter().map(|e| (SememeId(e as u32), q[e])).collect(),
    })
}

/// Tape node for the factorized sense logits of a `[B × H1]` batch.
struct SenseLogitsOp {
    graph: Arc<SenseGraph>,
    bases: usize,
    d: Vec<f64>,
    beta: Vec<f64>,
}

impl CustomOp for SenseLogitsOp {
    fn name(&self) -> &'static str {
        "sense_logits"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (q, alpha, proj, emb) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let graph = &self.graph;
        let (n, m, r) = (graph.num_words(), graph.num_senses(), self.bases);
        let h2 = emb.cols();
        let batch = q.rows();

        let mut gq = Tensor::zeros(q.shape());
        let mut galpha = Tensor::zeros(alpha.shape());
        let mut gproj = Tensor::zeros(proj.shape());
        let mut gemb = Tensor::zeros(emb.shape());
        let mut dd = vec![0.0; n * r];
        let mut dbeta = vec![0.0; r];

        for b in 0..batch {
            let d = &self.d[b * n * r..(b + 1) * n * r];
            let beta = &self.beta[b * m * r..(b + 1) * m * r];
            let g_row = grad.row(b);
            let q_row = q.row(b);
            dd.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..m {
                let gs = g_row[s];
                if gs == 0.0 {
                    continue;
                }
                let w = graph.sense_word[s];
                for j in 0..r {
                    dd[w * r + j] += gs * beta[s * r + j];
                    dbeta[j] = gs * d[w * r + j];
                }
                for (k, c) in graph.edges(s) {
                    let a_row = &alpha.data()[k * r..(k + 1) * r];
                    gq.data_mut()[b * q.cols() + k] += c * dot(&dbeta, a_row);
                    let scale = c * q_row[k];
                    for (ga, db) in galpha.row_mut(k).iter_mut().zip(&dbeta) {
                        *ga += scale * db;
                    }
                }
            }
            let p_row = proj.row(b);
            let gp_row = gproj.row_mut(b);
            for w in 0..n {
                let e = emb.row(w);
                for j in 0..r {
                    let coef = dd[w * r + j];
                    if coef == 0.0 {
                        continue;
                    }
                    for (o, v) in gp_row[j * h2..(j + 1) * h2].iter_mut().zip(e) {
                        *o += coef * v;
                    }
                }
            }
            for w in 0..n {
                let ge = gemb.row_mut(w);
                for j in 0..r {
                    let coef = dd[w * r + j];
                    if coef == 0.0 {
                        continue;
                    }
                    for (o, v) in ge.iter_mut().zip(&p_row[j * h2..(j + 1) * h2]) {
                        *o += coef * v;
                    }
                }
            }
        }
        vec![Some(gq), Some(galpha), Some(gproj), Some(gemb)]
    }
}

/// Tape handles for the decoder parameters.
#[derive(Copy, Clone, Debug)]
pub struct SdlmVars {
    pub gate_w: Var,
    pub gate_b: Var,
    pub basis: Var,
    pub mix_logits: Var,
    pub embedding: Var,
}

/// Records `[B × M]` sense logits for a `[B × H1]` context batch. Also
/// returns the gate node `q` (`[B × K]`).
pub fn sdlm_logits_on_tape(tape: &mut Tape, graph: &Arc<SenseGraph>, vars: &SdlmVars, g: Var) -> Result<(Var, Var)> {
    let gate_pre = tape.matmul_bt(g, vars.gate_w)?;
    let gate_pre = tape.add(gate_pre, vars.gate_b)?;
    let q = tape.sigmoid(gate_pre)?;
    let alpha = tape.softmax_rows(vars.mix_logits)?;
    let proj = tape.matmul(g, vars.basis)?;

    let bases = tape.value(alpha).cols();
    let (n, m) = (graph.num_words(), graph.num_senses());
    let batch = tape.value(g).rows();
    if tape.value(vars.embedding).rows() != n || tape.value(q).cols() != graph.num_sememes() {
        return Err(Error::argument("decoder parameters do not match the lexicon"));
    }
    let mut d = vec![0.0; batch * n * bases];
    let mut beta = vec![0.0; batch * m * bases];
    let mut logits = vec![0.0; batch * m];
    {
        let (qv, av, pv, ev) = (tape.value(q), tape.value(alpha), tape.value(proj), tape.value(vars.embedding));
        for b in 0..batch {
            graph.forward_row(
                qv.row(b),
                av.data(),
                pv.row(b),
                ev.data(),
                bases,
                &mut d[b * n * bases..(b + 1) * n * bases],
                &mut beta[b * m * bases..(b + 1) * m * bases],
                &mut logits[b * m..(b + 1) * m],
            );
        }
    }
    let op = SenseLogitsOp { graph: Arc::clone(graph), bases, d, beta };
    let out = tape.custom(&[q, alpha, proj, vars.embedding], Tensor::matrix(batch, m, logits)?, Box::new(op))?;
    Ok((out, q))
}

/// Records `[B × N]` tied-softmax logits.
pub fn baseline_logits_on_tape(tape: &mut Tape, embedding: Var, g: Var) -> Result<Var> {
    tape.matmul_bt(g, embedding)
}
