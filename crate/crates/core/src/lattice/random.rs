use rand::Rng;

use super::{Cost, Lattice};
use crate::vocab::TokenId;

/// Shape and cost ranges for [`random_lattice`].
#[derive(Debug, Clone)]
pub struct RandomLatticeConfig {
    pub min_states: usize,
    pub max_states: usize,
    pub max_paths: u64,
    /// Word labels are drawn uniformly from this list.
    pub words: Vec<TokenId>,
    /// Probability of an extra arc out of each state (tried twice).
    pub extra_arc_prob: f64,
    /// Maximum forward jump of an arc in state ids.
    pub span: usize,
    pub extra_final_prob: f64,
    pub graph_cost: (f64, f64),
    pub acoustic_cost: (f64, f64),
}

impl Default for RandomLatticeConfig {
    fn default() -> Self {
        RandomLatticeConfig {
            min_states: 4,
            max_states: 12,
            max_paths: 1000,
            words: (4..14).collect(),
            extra_arc_prob: 0.6,
            span: 3,
            extra_final_prob: 0.1,
            graph_cost: (0.0, 3.0),
            acoustic_cost: (0.0, 8.0),
        }
    }
}

/// A connected, acyclic random lattice whose states are numbered in
/// topological order with start 0 and final state `n - 1` (plus occasional
/// extra finals). Retries until the path count fits `max_paths`.
pub fn random_lattice<R: Rng>(rng: &mut R, cfg: &RandomLatticeConfig) -> Lattice {
    assert!(cfg.min_states >= 1 && cfg.min_states <= cfg.max_states);
    assert!(!cfg.words.is_empty());
    loop {
        let n = rng.gen_range(cfg.min_states..=cfg.max_states);
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for j in 1..n {
            let lo = j.saturating_sub(cfg.span);
            edges.push((rng.gen_range(lo..j), j));
        }
        for i in 0..n.saturating_sub(1) {
            let hi = (i + cfg.span).min(n - 1);
            for _ in 0..2 {
                if rng.gen_bool(cfg.extra_arc_prob) {
                    edges.push((i, rng.gen_range(i + 1..=hi)));
                }
            }
            if !edges.iter().any(|&(s, _)| s == i) {
                edges.push((i, rng.gen_range(i + 1..=hi)));
            }
        }
        edges.sort_unstable();
        let mut lat = Lattice::with_states(n);
        for (s, d) in edges {
            let w = cfg.words[rng.gen_range(0..cfg.words.len())];
            let g = rng.gen_range(cfg.graph_cost.0..=cfg.graph_cost.1);
            let a = rng.gen_range(cfg.acoustic_cost.0..=cfg.acoustic_cost.1);
            lat.add_arc(s, d, w, Cost::new(g, a));
        }
        lat.set_final(n - 1, rng.gen_range(0.0..1.0));
        for i in 1..n.saturating_sub(1) {
            if rng.gen_bool(cfg.extra_final_prob) {
                lat.set_final(i, rng.gen_range(0.0..2.0));
            }
        }
        let paths = lat.count_paths().unwrap_or(u64::MAX);
        if paths >= 1 && paths <= cfg.max_paths {
            debug_assert!(lat.validate().is_ok());
            return lat;
        }
    }
}
