//! Lattice rescoring by on-the-fly composition with a difference language
//! model: each arc's graph cost gains `new_lm - old_lm` for its word.
//!
//! Three engines share the output convention:
//! - exact composition keyed by the full word history,
//! - n-gram approximation keyed by the last `n - 1` words,
//! - pruned best-first expansion ordered by `alpha + beta + delta`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Cost, Lattice, StateId};
use crate::lm::LanguageModel;
use crate::vocab::{TokenId, EPSILON};

/// Arrivals must beat the current best by more than this to replace it.
const IMPROVEMENT: f64 = 1e-12;

pub const DEFAULT_BUDGET: usize = 100_000;
pub const DEFAULT_MAX_REEXPANSIONS: u32 = 3;

/// `weight * add - subtract` per word. With the default weight of 1 the
/// subtracted model's cost is fully replaced by the added one.
#[derive(Debug, Clone)]
pub struct DifferenceLm<S, A> {
    pub subtract: S,
    pub add: A,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct DiffState<SS, AS> {
    pub subtract: SS,
    pub add: AS,
}

impl<S: LanguageModel, A: LanguageModel> DifferenceLm<S, A> {
    pub fn new(subtract: S, add: A) -> Self {
        DifferenceLm {
            subtract,
            add,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Config(format!("interpolation weight {weight} outside [0, 1]")));
        }
        self.weight = weight;
        Ok(self)
    }
}

impl<S: LanguageModel, A: LanguageModel> LanguageModel for DifferenceLm<S, A> {
    type State = DiffState<S::State, A::State>;

    fn initial_state(&self) -> Self::State {
        DiffState {
            subtract: self.subtract.initial_state(),
            add: self.add.initial_state(),
        }
    }

    fn score(&self, state: &Self::State, word: TokenId) -> Result<(f64, Self::State)> {
        let (sub, s) = self.subtract.score(&state.subtract, word)?;
        let (add, a) = self.add.score(&state.add, word)?;
        Ok((self.weight * add - sub, DiffState { subtract: s, add: a }))
    }

    fn final_cost(&self, state: &Self::State) -> Result<f64> {
        Ok(self.weight * self.add.final_cost(&state.add)? - self.subtract.final_cost(&state.subtract)?)
    }
}

/// Swaps one LM cost for another on the graph side.
pub fn replace_lm_cost(cost: Cost, old_lm_cost: f64, new_lm_cost: f64) -> Cost {
    Cost {
        graph: cost.graph - old_lm_cost + new_lm_cost,
        acoustic: cost.acoustic,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RescoreMode {
    Exact,
    NgramApprox { n: usize },
    Pruned { n: usize, beam: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoreOptions {
    pub lm_scale: f64,
    pub mode: RescoreMode,
    /// Maximum number of composed states.
    pub budget: usize,
    pub max_reexpansions: u32,
}

impl Default for RescoreOptions {
    fn default() -> Self {
        RescoreOptions {
            lm_scale: 1.0,
            mode: RescoreMode::Pruned { n: 4, beam: 15.0 },
            budget: DEFAULT_BUDGET,
            max_reexpansions: DEFAULT_MAX_REEXPANSIONS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RescoreStats {
    pub composed_states: usize,
    /// Expansion events, re-expansions included.
    pub expanded: usize,
    pub reexpansions: usize,
    /// Composed states created but never expanded.
    pub pruned: usize,
    pub output_states: usize,
    pub output_arcs: usize,
}

#[derive(Debug, Clone)]
pub struct RescoreOutput {
    pub lattice: Lattice,
    pub stats: RescoreStats,
}

pub fn rescore<L: LanguageModel>(lattice: &Lattice, lm: &L, opts: &RescoreOptions) -> Result<RescoreOutput> {
    if !(opts.lm_scale > 0.0) {
        return Err(Error::Config(format!("lm_scale must be > 0, got {}", opts.lm_scale)));
    }
    match opts.mode {
        RescoreMode::Exact => topological(lattice, lm, opts.lm_scale, None, opts.budget),
        RescoreMode::NgramApprox { n } => {
            check_order(n)?;
            topological(lattice, lm, opts.lm_scale, Some(n - 1), opts.budget)
        }
        RescoreMode::Pruned { n, beam } => {
            check_order(n)?;
            if !(beam >= 0.0) {
                return Err(Error::Config(format!("beam must be >= 0, got {beam}")));
            }
            pruned(lattice, lm, opts, n - 1, beam)
        }
    }
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("approximation order n must be >= 1".into()));
    }
    Ok(())
}

pub fn rescore_exact<L: LanguageModel>(lattice: &Lattice, lm: &L, lm_scale: f64) -> Result<Lattice> {
    let opts = RescoreOptions {
        lm_scale,
        mode: RescoreMode::Exact,
        ..RescoreOptions::default()
    };
    Ok(rescore(lattice, lm, &opts)?.lattice)
}

pub fn rescore_ngram_approx<L: LanguageModel>(lattice: &Lattice, lm: &L, lm_scale: f64, n: usize) -> Result<Lattice> {
    let opts = RescoreOptions {
        lm_scale,
        mode: RescoreMode::NgramApprox { n },
        ..RescoreOptions::default()
    };
    Ok(rescore(lattice, lm, &opts)?.lattice)
}

pub fn rescore_pruned<L: LanguageModel>(
    lattice: &Lattice,
    lm: &L,
    lm_scale: f64,
    n: usize,
    beam: f64,
) -> Result<Lattice> {
    let opts = RescoreOptions {
        lm_scale,
        mode: RescoreMode::Pruned { n, beam },
        ..RescoreOptions::default()
    };
    Ok(rescore(lattice, lm, &opts)?.lattice)
}

fn next_key(key: &[TokenId], word: TokenId, keep: Option<usize>) -> Vec<TokenId> {
    if word == EPSILON {
        return key.to_vec();
    }
    let mut k = Vec::with_capacity(key.len() + 1);
    k.extend_from_slice(key);
    k.push(word);
    if let Some(keep) = keep {
        if k.len() > keep {
            k.drain(..k.len() - keep);
        }
    }
    k
}

/// Scores `word` from `state`, memoized per expansion. Epsilon costs nothing.
fn step_cached<L: LanguageModel>(
    lm: &L,
    state: &L::State,
    word: TokenId,
    memo: &mut HashMap<TokenId, (f64, L::State)>,
) -> Result<(f64, L::State)> {
    if word == EPSILON {
        return Ok((0.0, state.clone()));
    }
    if let Some(hit) = memo.get(&word) {
        return Ok(hit.clone());
    }
    let r = lm.score(state, word)?;
    memo.insert(word, r.clone());
    Ok(r)
}

struct TNode<S> {
    a: StateId,
    lm: S,
    alpha: f64,
}

/// Composition processed in lattice topological order. Every arrival at a
/// composed state is known before it is expanded, so no re-expansion occurs.
fn topological<L: LanguageModel>(
    lattice: &Lattice,
    lm: &L,
    lm_scale: f64,
    keep: Option<usize>,
    budget: usize,
) -> Result<RescoreOutput> {
    lattice.validate()?;
    let order = lattice.topo_order()?;
    let mut nodes: Vec<TNode<L::State>> = vec![TNode {
        a: lattice.start(),
        lm: lm.initial_state(),
        alpha: 0.0,
    }];
    let mut keys: Vec<Vec<TokenId>> = vec![Vec::new()];
    let mut index: HashMap<(StateId, Vec<TokenId>), usize> = HashMap::new();
    index.insert((lattice.start(), Vec::new()), 0);
    let mut by_state: Vec<Vec<usize>> = vec![Vec::new(); lattice.num_states()];
    by_state[lattice.start()].push(0);
    let mut arcs: Vec<(usize, usize, TokenId, Cost)> = Vec::new();
    let mut finals: Vec<(usize, f64)> = Vec::new();

    for &a in order {
        let ids = std::mem::take(&mut by_state[a]);
        for ci in ids {
            let state = nodes[ci].lm.clone();
            let alpha = nodes[ci].alpha;
            if let Some(f) = lattice.final_cost(a) {
                finals.push((ci, f + lm.final_cost(&state)?));
            }
            let mut memo = HashMap::new();
            for arc in lattice.out_arcs(a) {
                let (d, ns) = step_cached(lm, &state, arc.word, &mut memo)?;
                let key = next_key(&keys[ci], arc.word, keep);
                let dst = match index.get(&(arc.dst, key.clone())) {
                    Some(&id) => id,
                    None => {
                        if nodes.len() >= budget {
                            return Err(Error::ExpansionBudgetExceeded { budget });
                        }
                        let id = nodes.len();
                        nodes.push(TNode {
                            a: arc.dst,
                            lm: ns.clone(),
                            alpha: f64::INFINITY,
                        });
                        keys.push(key.clone());
                        index.insert((arc.dst, key), id);
                        by_state[arc.dst].push(id);
                        id
                    }
                };
                let cost = Cost::new(arc.cost.graph + d, arc.cost.acoustic);
                let cand = alpha + cost.scaled(lm_scale);
                if cand < nodes[dst].alpha - IMPROVEMENT {
                    nodes[dst].alpha = cand;
                    nodes[dst].lm = ns;
                }
                arcs.push((ci, dst, arc.word, cost));
            }
        }
    }
    debug_assert!(nodes.iter().all(|n| n.a < lattice.num_states()));
    let composed = nodes.len();
    let mut out = Lattice::with_states(composed);
    out.set_start(0);
    for (s, d, w, c) in arcs {
        out.add_arc(s, d, w, c);
    }
    for (s, f) in finals {
        out.set_final(s, f);
    }
    let out = out.connect();
    let stats = RescoreStats {
        composed_states: composed,
        expanded: composed,
        reexpansions: 0,
        pruned: 0,
        output_states: out.num_states(),
        output_arcs: out.num_arcs(),
    };
    Ok(RescoreOutput { lattice: out, stats })
}

struct PNode<S> {
    a: StateId,
    key: Vec<TokenId>,
    lm: S,
    alpha: f64,
    delta: f64,
    best_in: Option<usize>,
    expansions: u32,
    version: u64,
    in_arcs: Vec<usize>,
    out_arcs: Vec<usize>,
    final_graph: Option<f64>,
}

struct PArc<S> {
    src: usize,
    dst: usize,
    word: TokenId,
    cost: Cost,
    dst_lm: S,
    alive: bool,
}

#[derive(Debug)]
struct Entry {
    h: f64,
    seq: u64,
    node: usize,
    version: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // BinaryHeap is a max-heap: smaller H, then earlier push, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.h.total_cmp(&self.h).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'l, L: LanguageModel> {
    lattice: &'l Lattice,
    lm: &'l L,
    lm_scale: f64,
    keep: usize,
    budget: usize,
    max_reexpansions: u32,
    beta: Vec<f64>,
    nodes: Vec<PNode<L::State>>,
    arcs: Vec<PArc<L::State>>,
    index: HashMap<(StateId, Vec<TokenId>), usize>,
    heap: BinaryHeap<Entry>,
    seq: u64,
    best_final: f64,
    stats: RescoreStats,
}

impl<L: LanguageModel> Search<'_, L> {
    fn priority(&self, ci: usize) -> f64 {
        let n = &self.nodes[ci];
        n.alpha + self.beta[n.a] + n.delta
    }

    fn push(&mut self, ci: usize) {
        self.nodes[ci].version += 1;
        let e = Entry {
            h: self.priority(ci),
            seq: self.seq,
            node: ci,
            version: self.nodes[ci].version,
        };
        self.seq += 1;
        self.heap.push(e);
    }

    fn node_for(&mut self, a: StateId, key: Vec<TokenId>, lm: &L::State) -> Result<usize> {
        if let Some(&id) = self.index.get(&(a, key.clone())) {
            return Ok(id);
        }
        if self.nodes.len() >= self.budget {
            return Err(Error::ExpansionBudgetExceeded { budget: self.budget });
        }
        let id = self.nodes.len();
        self.nodes.push(PNode {
            a,
            key: key.clone(),
            lm: lm.clone(),
            alpha: f64::INFINITY,
            delta: 0.0,
            best_in: None,
            expansions: 0,
            version: 0,
            in_arcs: Vec::new(),
            out_arcs: Vec::new(),
            final_graph: None,
        });
        self.index.insert((a, key), id);
        Ok(id)
    }

    fn expand(&mut self, ci: usize, h: f64) -> Result<()> {
        self.nodes[ci].expansions += 1;
        self.stats.expanded += 1;
        if self.nodes[ci].expansions > 1 {
            self.stats.reexpansions += 1;
        }
        let killed = std::mem::take(&mut self.nodes[ci].out_arcs);
        for &ai in &killed {
            self.arcs[ai].alive = false;
        }
        let a = self.nodes[ci].a;
        let state = self.nodes[ci].lm.clone();
        if let Some(f) = self.lattice.final_cost(a) {
            let fg = f + self.lm.final_cost(&state)?;
            self.nodes[ci].final_graph = Some(fg);
            let total = self.nodes[ci].alpha + self.lm_scale * fg;
            if total < self.best_final {
                self.best_final = total;
            }
        }
        let mut memo = HashMap::new();
        let mut touched = Vec::new();
        for &lai in self.lattice.out_arc_ids(a) {
            let arc = &self.lattice.arcs()[lai];
            let (d, ns) = step_cached(self.lm, &state, arc.word, &mut memo)?;
            let key = next_key(&self.nodes[ci].key, arc.word, Some(self.keep));
            let dst = self.node_for(arc.dst, key, &ns)?;
            let ai = self.arcs.len();
            self.arcs.push(PArc {
                src: ci,
                dst,
                word: arc.word,
                cost: Cost::new(arc.cost.graph + d, arc.cost.acoustic),
                dst_lm: ns,
                alive: true,
            });
            self.nodes[ci].out_arcs.push(ai);
            self.nodes[dst].in_arcs.push(ai);
            touched.push(dst);
        }
        for &ai in &killed {
            touched.push(self.arcs[ai].dst);
        }
        touched.sort_unstable();
        touched.dedup();
        for dst in touched {
            self.relax(dst, &killed);
        }
        if let Some(bi) = self.nodes[ci].best_in {
            let p = self.arcs[bi].src;
            let cand = h - self.nodes[p].alpha - self.beta[self.nodes[p].a];
            if cand < self.nodes[p].delta {
                self.nodes[p].delta = cand;
            }
        }
        Ok(())
    }

    /// Recomputes the best live arrival at `ci` and requeues it if its
    /// cost improved or its best predecessor was just replaced.
    fn relax(&mut self, ci: usize, killed: &[usize]) {
        let mut best: Option<(f64, usize)> = None;
        for &ai in &self.nodes[ci].in_arcs {
            let arc = &self.arcs[ai];
            if !arc.alive {
                continue;
            }
            let cand = self.nodes[arc.src].alpha + arc.cost.scaled(self.lm_scale);
            if best.map_or(true, |(b, _)| cand < b - IMPROVEMENT) {
                best = Some((cand, ai));
            }
        }
        let Some((alpha, ai)) = best else { return };
        let node = &self.nodes[ci];
        let lost_pred = node.best_in.is_some_and(|b| killed.contains(&b));
        if !(alpha < node.alpha - IMPROVEMENT || lost_pred) {
            return;
        }
        let lm = self.arcs[ai].dst_lm.clone();
        let node = &mut self.nodes[ci];
        node.alpha = alpha;
        node.lm = lm;
        node.best_in = Some(ai);
        if node.expansions == 0 || node.expansions <= self.max_reexpansions {
            self.push(ci);
        }
    }

    fn output(&self) -> Lattice {
        let mut out = Lattice::with_states(self.nodes.len());
        out.set_start(0);
        for arc in &self.arcs {
            if arc.alive && self.nodes[arc.dst].expansions > 0 {
                out.add_arc(arc.src, arc.dst, arc.word, arc.cost);
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(f) = n.final_graph {
                out.set_final(i, f);
            }
        }
        out.connect()
    }
}

fn pruned<L: LanguageModel>(
    lattice: &Lattice,
    lm: &L,
    opts: &RescoreOptions,
    keep: usize,
    beam: f64,
) -> Result<RescoreOutput> {
    let beta = lattice.forward_backward(opts.lm_scale)?.beta;
    let mut search = Search {
        lattice,
        lm,
        lm_scale: opts.lm_scale,
        keep,
        budget: opts.budget,
        max_reexpansions: opts.max_reexpansions,
        beta,
        nodes: Vec::new(),
        arcs: Vec::new(),
        index: HashMap::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        best_final: f64::INFINITY,
        stats: RescoreStats::default(),
    };
    let root = search.node_for(lattice.start(), Vec::new(), &lm.initial_state())?;
    search.nodes[root].alpha = 0.0;
    search.push(root);
    while let Some(e) = search.heap.pop() {
        if e.version != search.nodes[e.node].version {
            continue;
        }
        if e.h > search.best_final + beam {
            break;
        }
        search.expand(e.node, e.h)?;
    }
    search.stats.composed_states = search.nodes.len();
    search.stats.pruned = search.nodes.iter().filter(|n| n.expansions == 0).count();
    if search.best_final.is_infinite() {
        return Err(Error::EmptyResult);
    }
    let full = search.output();
    let out = if beam == 0.0 {
        let best = full.best_path(opts.lm_scale)?;
        full.path_lattice(&best)
    } else {
        prune_to_beam(&full, opts.lm_scale, beam)?
    };
    let mut stats = search.stats;
    stats.output_states = out.num_states();
    stats.output_arcs = out.num_arcs();
    Ok(RescoreOutput { lattice: out, stats })
}

/// Keeps arcs and finals lying on some path within `beam` of the best.
pub fn prune_to_beam(lattice: &Lattice, lm_scale: f64, beam: f64) -> Result<Lattice> {
    let pc = lattice.forward_backward(lm_scale)?;
    let best = pc.best(lattice.start());
    let limit = best + beam + 1e-9;
    let mut out = Lattice::with_states(lattice.num_states());
    out.set_start(lattice.start());
    for a in lattice.arcs() {
        if pc.alpha[a.src] + a.cost.scaled(lm_scale) + pc.beta[a.dst] <= limit {
            out.add_arc(a.src, a.dst, a.word, a.cost);
        }
    }
    for (&s, &f) in lattice.finals() {
        if pc.alpha[s] + lm_scale * f <= limit {
            out.set_final(s, f);
        }
    }
    let out = out.connect();
    if out.num_states() == 0 {
        return Err(Error::EmptyResult);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{ArpaOptions, NgramModel};
    use crate::vocab::Vocabulary;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::with_specials();
        for w in ["a", "b", "c"] {
            v.insert(w);
        }
        v
    }

    fn unigram(v: &Vocabulary) -> NgramModel {
        let arpa = "\\data\\\nngram 1=6\n\n\\1-grams:\n-0.5 <s>\n-0.5 </s>\n-0.9 <unk>\n-0.3 a\n-0.7 b\n-0.6 c\n\n\\end\\\n";
        NgramModel::load_arpa(arpa.as_bytes(), v, ArpaOptions::default()).unwrap()
    }

    fn bigram(v: &Vocabulary) -> NgramModel {
        let arpa = "\\data\\\nngram 1=6\nngram 2=4\n\n\\1-grams:\n-0.5 <s> -0.2\n-0.5 </s>\n-0.9 <unk>\n-0.6 a -0.3\n-0.6 b -0.1\n-0.6 c\n\n\\2-grams:\n-0.1 <s> b\n-0.2 a c\n-0.05 b a\n-0.1 c </s>\n\n\\end\\\n";
        NgramModel::load_arpa(arpa.as_bytes(), v, ArpaOptions::default()).unwrap()
    }

    fn three_paths(v: &Vocabulary) -> Lattice {
        let (a, b, c) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        let mut l = Lattice::with_states(4);
        l.add_arc(0, 1, a, Cost::new(1.0, 2.0));
        l.add_arc(0, 1, b, Cost::new(1.2, 1.9));
        l.add_arc(1, 2, c, Cost::new(0.5, 1.0));
        l.add_arc(1, 3, a, Cost::new(0.7, 0.8));
        l.add_arc(2, 3, a, Cost::new(0.1, 0.1));
        l.set_final(3, 0.0);
        l.set_final(2, 0.3);
        l
    }

    #[test]
    fn replace_cost_arithmetic() {
        let c = Cost::new(2.0, 5.0);
        assert_eq!(replace_lm_cost(c, 2.0, 3.0), Cost::new(3.0, 5.0));
        assert_eq!(replace_lm_cost(c, 1.5, 1.5), c);
    }

    #[test]
    fn identity_difference_keeps_best_path() {
        let v = vocab();
        let u = unigram(&v);
        let lat = three_paths(&v);
        let diff = DifferenceLm::new(&u, &u);
        let before = lat.best_path(1.0).unwrap();
        for out in [
            rescore_exact(&lat, &diff, 1.0).unwrap(),
            rescore_ngram_approx(&lat, &diff, 1.0, 2).unwrap(),
            rescore_pruned(&lat, &diff, 1.0, 2, 15.0).unwrap(),
        ] {
            let after = out.best_path(1.0).unwrap();
            assert_eq!(after.words, before.words);
            assert!((after.cost - before.cost).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_matches_enumeration() {
        let v = vocab();
        let (u, b) = (unigram(&v), bigram(&v));
        let lat = three_paths(&v);
        let diff = DifferenceLm::new(&u, &b);
        // Paths: a c a | a c (final 2) | a a | b c a | b c | b a
        let (ia, ib, ic) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        let paths: Vec<(Vec<u32>, Cost)> = vec![
            (vec![ia, ic, ia], Cost::new(1.6, 3.1)),
            (vec![ia, ic], Cost::new(1.8, 3.0)),
            (vec![ia, ia], Cost::new(1.7, 2.8)),
            (vec![ib, ic, ia], Cost::new(1.8, 3.0)),
            (vec![ib, ic], Cost::new(2.0, 2.9)),
            (vec![ib, ia], Cost::new(1.9, 2.7)),
        ];
        let mut best: Option<(f64, Vec<u32>)> = None;
        for (w, c) in paths {
            let total = c.graph - u.sentence_cost(&w).unwrap() + b.sentence_cost(&w).unwrap() + c.acoustic;
            if best.as_ref().map_or(true, |(bc, _)| total < *bc) {
                best = Some((total, w));
            }
        }
        let (cost, words) = best.unwrap();
        let got = rescore_exact(&lat, &diff, 1.0).unwrap().best_path(1.0).unwrap();
        assert_eq!(got.words, words);
        assert!((got.cost - cost).abs() < 1e-9);
    }

    #[test]
    fn linear_lattice_gets_per_word_delta() {
        let v = vocab();
        let (u, b) = (unigram(&v), bigram(&v));
        let (ia, ic) = (v.id("a").unwrap(), v.id("c").unwrap());
        let lat = Lattice::linear(&[(ia, Cost::new(1.0, 1.0)), (ic, Cost::new(2.0, 2.0))], 0.5);
        let out = rescore_exact(&lat, &DifferenceLm::new(&u, &b), 1.0).unwrap();
        assert_eq!(out.num_arcs(), 2);
        let s0 = u.initial_state();
        let t0 = b.initial_state();
        let (su, s1) = u.score(&s0, ia).unwrap();
        let (sb, t1) = b.score(&t0, ia).unwrap();
        assert!((out.arcs()[0].cost.graph - (1.0 - su + sb)).abs() < 1e-12);
        assert_eq!(out.arcs()[0].cost.acoustic, 1.0);
        let (su2, s2) = u.score(&s1, ic).unwrap();
        let (sb2, t2) = b.score(&t1, ic).unwrap();
        assert!((out.arcs()[1].cost.graph - (2.0 - su2 + sb2)).abs() < 1e-12);
        let f = 0.5 - u.final_cost(&s2).unwrap() + b.final_cost(&t2).unwrap();
        assert!((out.final_cost(2).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn diamond_merging_by_history() {
        // 0 -a-> 1, 0 -b-> 1, 1 -c-> 2 -a-> 3: with n=2 the states after
        // "a c" and "b c" merge; with n=3 they do not.
        let v = vocab();
        let (u, b) = (unigram(&v), bigram(&v));
        let (ia, ib, ic) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        let mut l = Lattice::with_states(4);
        l.add_arc(0, 1, ia, Cost::new(1.0, 1.0));
        l.add_arc(0, 1, ib, Cost::new(1.0, 1.0));
        l.add_arc(1, 2, ic, Cost::new(1.0, 1.0));
        l.add_arc(2, 3, ia, Cost::new(1.0, 1.0));
        l.set_final(3, 0.0);
        let diff = DifferenceLm::new(&u, &b);
        let opts = |n| RescoreOptions {
            mode: RescoreMode::NgramApprox { n },
            ..RescoreOptions::default()
        };
        // n=2: {(0,[]), (1,[a]), (1,[b]), (2,[c]), (3,[a])}
        assert_eq!(rescore(&l, &diff, &opts(2)).unwrap().stats.composed_states, 5);
        // n=3: {(0,[]), (1,[a]), (1,[b]), (2,[a c]), (2,[b c]), (3,[c a])}
        assert_eq!(rescore(&l, &diff, &opts(3)).unwrap().stats.composed_states, 6);
        // n=1: one composed state per lattice state
        assert_eq!(rescore(&l, &diff, &opts(1)).unwrap().stats.composed_states, 4);
    }

    #[test]
    fn budget_is_enforced() {
        let v = vocab();
        let u = unigram(&v);
        let lat = three_paths(&v);
        let opts = RescoreOptions {
            mode: RescoreMode::Exact,
            budget: 3,
            ..RescoreOptions::default()
        };
        assert!(matches!(
            rescore(&lat, &DifferenceLm::new(&u, &u), &opts),
            Err(Error::ExpansionBudgetExceeded { budget: 3 })
        ));
    }

    #[test]
    fn zero_beam_gives_single_path() {
        let v = vocab();
        let (u, b) = (unigram(&v), bigram(&v));
        let lat = three_paths(&v);
        let out = rescore_pruned(&lat, &DifferenceLm::new(&u, &b), 1.0, 3, 0.0).unwrap();
        assert_eq!(out.count_paths().unwrap(), 1);
        let words = out.best_path(1.0).unwrap().words;
        assert!(!words.is_empty());
    }

    #[test]
    fn acoustic_costs_are_preserved() {
        let v = vocab();
        let (u, b) = (unigram(&v), bigram(&v));
        let lat = three_paths(&v);
        let out = rescore_exact(&lat, &DifferenceLm::new(&u, &b), 1.0).unwrap();
        let mut ac_in: Vec<f64> = lat.arcs().iter().map(|a| a.cost.acoustic).collect();
        let mut ac_out: Vec<f64> = out.arcs().iter().map(|a| a.cost.acoustic).collect();
        ac_in.sort_by(f64::total_cmp);
        ac_out.sort_by(f64::total_cmp);
        ac_out.dedup();
        ac_in.dedup();
        assert_eq!(ac_in, ac_out);
    }

    #[test]
    fn bad_options() {
        let v = vocab();
        let u = unigram(&v);
        let lat = three_paths(&v);
        let d = DifferenceLm::new(&u, &u);
        assert!(matches!(rescore_ngram_approx(&lat, &d, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(rescore_exact(&lat, &d, 0.0), Err(Error::Config(_))));
        assert!(matches!(DifferenceLm::new(&u, &u).with_weight(1.5), Err(Error::Config(_))));
    }
}
