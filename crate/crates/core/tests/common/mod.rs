#![allow(dead_code)]

use ctxrescore::lattice::{random_lattice, RandomLatticeConfig};
use ctxrescore::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub vocab: Vocabulary,
    pub words: Vec<TokenId>,
    pub sentences: Vec<Vec<TokenId>>,
    pub unigram: NgramModel,
    pub bigram: NgramModel,
    pub trigram: NgramModel,
}

pub fn fixture() -> Fixture {
    let mut vocab = Vocabulary::with_specials();
    let words: Vec<TokenId> = (0..6).map(|i| vocab.insert(&format!("w{i}"))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sentences: Vec<Vec<TokenId>> = (0..80)
        .map(|_| (0..rng.gen_range(1..6)).map(|_| words[rng.gen_range(0..words.len())]).collect())
        .collect();
    let unigram = NgramModel::train_add_one(&sentences, &vocab, 1).unwrap();
    let bigram = NgramModel::train_add_one(&sentences, &vocab, 2).unwrap();
    let trigram = NgramModel::train_add_one(&sentences, &vocab, 3).unwrap();
    Fixture {
        vocab,
        words,
        sentences,
        unigram,
        bigram,
        trigram,
    }
}

pub fn lattice(seed: u64, words: &[TokenId], max_states: usize) -> Lattice {
    let cfg = RandomLatticeConfig {
        max_states,
        max_paths: 200,
        words: words.to_vec(),
        ..RandomLatticeConfig::default()
    };
    random_lattice(&mut ChaCha8Rng::seed_from_u64(seed), &cfg)
}

/// Every complete path as (words without epsilon, scaled cost).
pub fn paths(l: &Lattice, lm_scale: f64) -> Vec<(Vec<TokenId>, f64)> {
    fn go(l: &Lattice, s: usize, k: f64, w: &mut Vec<TokenId>, acc: f64, out: &mut Vec<(Vec<TokenId>, f64)>) {
        if let Some(f) = l.final_cost(s) {
            out.push((w.clone(), acc + k * f));
        }
        for a in l.out_arcs(s) {
            let eps = a.word == EPSILON;
            if !eps {
                w.push(a.word);
            }
            go(l, a.dst, k, w, acc + a.cost.scaled(k), out);
            if !eps {
                w.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(l, l.start(), lm_scale, &mut Vec::new(), 0.0, &mut out);
    out
}
