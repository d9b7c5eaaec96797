use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Lexicon, LexiconBuilder, SememeId, SenseId};
use crate::error::{Error, Result};

/// Randomly drops `⌊fraction · edges⌋` sense–sememe connections.
///
/// Edges are visited in a seeded random order and an edge is skipped when it
/// is the last one left on its sense, so fewer edges may be removed than
/// requested. The sememe inventory is kept whole (an expert may end up with
/// no senses) so that models over the full and ablated lexicon have the same
/// parameter shapes.
pub fn ablate_edges(lex: &Lexicon, fraction: f64, seed: u64) -> Result<Lexicon> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::argument(format!("ablation fraction {fraction} outside [0, 1]")));
    }
    let mut edges: Vec<(SenseId, SememeId)> = lex
        .sense_ids()
        .flat_map(|s| lex.sememes_of(s).iter().map(move |&k| (s, k)))
        .collect();
    let target = (fraction * edges.len() as f64).floor() as usize;
    if target == 0 {
        return Ok(lex.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);

    let mut degree: Vec<usize> = lex.sense_ids().map(|s| lex.sememes_of(s).len()).collect();
    let mut removed = vec![false; edges.len()];
    let mut count = 0;
    for (i, &(s, _)) in edges.iter().enumerate() {
        if count == target {
            break;
        }
        if degree[s.index()] > 1 {
            degree[s.index()] -= 1;
            removed[i] = true;
            count += 1;
        }
    }

    let mut dropped = std::collections::HashSet::with_capacity(count);
    for (i, &edge) in edges.iter().enumerate() {
        if removed[i] {
            dropped.insert(edge);
        }
    }

    let mut builder = LexiconBuilder::new();
    for label in lex.sememes() {
        builder.declare_sememe(label);
    }
    for w in lex.word_ids() {
        for &s in lex.senses_of(w) {
            let labels: Vec<&str> = lex
                .sememes_of(s)
                .iter()
                .filter(|&&k| !dropped.contains(&(s, k)))
                .map(|&k| lex.sememe(k))
                .collect();
            builder.add_sense(lex.word(w), None, &labels)?;
        }
    }
    builder.build()
}
