use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdlm::corpus::Corpus;
use sdlm::encoder::EncoderConfig;
use sdlm::evaluation::{compare, evaluate, sememe_bucket, EvalReport, SEMEME_EDGES};
use sdlm::lexicon::parse_lexicon;
use sdlm::model::{DecoderKind, LanguageModel, ModelConfig};

const LEXICON: &str = "\
a\t0\ts1
b\t0\ts1,s2,s3
b\t1\ts4
c\t0\ts1,s2,s3,s4,s5
c\t1\ts6,s7,s8
d\t0\ts1,s2,s3,s4,s5,s6,s7,s8,s9,s10,s11,s12,s13,s14,s15
";

fn model(decoder: DecoderKind, seed: u64) -> LanguageModel {
    let lex = Arc::new(parse_lexicon(LEXICON.as_bytes()).unwrap());
    let config = ModelConfig {
        encoder: EncoderConfig { input_dim: 4, context_dim: 4, layers: 1, dropout: 0.0 },
        decoder,
        bases: 2,
        init_scale: 0.8,
        ..Default::default()
    };
    LanguageModel::new(config, lex, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn corpus() -> Corpus {
    Corpus::new(vec![vec![0, 1, 2, 3, 1], vec![3, 3], vec![2], vec![1, 0, 0, 2, 3, 3, 1]])
}

#[test]
fn report_matches_per_token_recomputation() {
    let m = model(DecoderKind::Sdlm, 1);
    let c = corpus();
    let report = evaluate(&m, &c).unwrap();
    let lex = m.lexicon();

    // Recompute every scored token's NLL from next-word distributions.
    let mut nll_sum = 0.0;
    let mut senses = [0.0f64; 2];
    let mut sememes = [0.0f64; 5];
    let mut tokens = 0;
    for s in &c.sentences {
        for t in 1..s.len() {
            let g = m.context_vector(&s[..t]).unwrap();
            let nll = -m.word_distribution(&g).unwrap()[s[t]].ln();
            nll_sum += nll;
            tokens += 1;
            let w = lex.word_ids().nth(s[t]).unwrap();
            senses[usize::from(lex.senses_of(w).len() > 1)] += nll;
            // Mean sememes per sense of the word, bucketed by the edges.
            let mean = lex.senses_of(w).iter().map(|&x| lex.sememes_of(x).len()).sum::<usize>() as f64
                / lex.senses_of(w).len() as f64;
            let bucket = SEMEME_EDGES.iter().rposition(|&e| mean >= e as f64).unwrap();
            sememes[bucket] += nll;
        }
    }
    assert_eq!(report.tokens, tokens);
    assert!((report.nll_sum - nll_sum).abs() < 1e-9);
    assert!((report.perplexity - (nll_sum / tokens as f64).exp()).abs() < 1e-9);
    for (b, expected) in report.by_senses.iter().zip(senses) {
        assert!((b.nll_sum - expected).abs() < 1e-9, "{}", b.label);
    }
    for (b, expected) in report.by_sememes.iter().zip(sememes) {
        assert!((b.nll_sum - expected).abs() < 1e-9, "{}", b.label);
    }
    assert_eq!(sememe_bucket(1.0), 0);
    assert_eq!(sememe_bucket(14.0), 4);
    for buckets in [&report.by_senses, &report.by_sememes] {
        let r = EvalReport::recombined_perplexity(buckets);
        assert!((r - report.perplexity).abs() <= 1e-9 * report.perplexity);
    }
}

#[test]
fn comparison_table_has_all_partitions() {
    let c = corpus();
    let sdlm = evaluate(&model(DecoderKind::Sdlm, 1), &c).unwrap();
    let base = evaluate(&model(DecoderKind::Baseline, 2), &c).unwrap();
    let table = compare(&base, &sdlm).unwrap();
    assert_eq!(table.rows.len(), 8);
    let all = &table.rows[0];
    assert_eq!(all.delta.unwrap(), all.baseline_ppl.unwrap() - all.model_ppl.unwrap());
    let tsv = table.to_tsv();
    assert_eq!(tsv.lines().count(), 9);
    assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 7));

    let other = Corpus::new(vec![vec![0, 1, 2]]);
    let mismatched = evaluate(&model(DecoderKind::Baseline, 2), &other).unwrap();
    assert!(compare(&mismatched, &sdlm).is_err());
}
