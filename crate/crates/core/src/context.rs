//! Cross-utterance context by lattice concatenation.
//!
//! The previous utterance's first-pass lattice is joined to the current one
//! through a tag state. Each final state `f` of the previous lattice gets its
//! own tag state `s_f`; the arc `f -> s_f` carries `f`'s final cost, and
//! `s_f` takes over the current lattice's start. The first `n - 1` layers of
//! the current lattice are copied per `f` so that n-gram histories crossing
//! the junction stay distinct.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Cost, Lattice, StateId};
use crate::lm::LanguageModel;
use crate::rescore::{rescore, RescoreOptions, RescoreStats};
use crate::textprep::{junction_tag, Dialogue, SidSide, TagKind};
use crate::tfidf::TfIdfModel;
use crate::vocab::{TokenId, Vocabulary, EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagWord {
    pub kind: TagKind,
    pub token: TokenId,
}

impl TagWord {
    /// Tag for the junction after `earlier`.
    pub fn for_junction(kind: TagKind, dialogue: &Dialogue, earlier: usize, vocab: &Vocabulary) -> Result<TagWord> {
        if kind == TagKind::None {
            return Err(Error::Config("lattice concatenation needs a tag kind (sp, sid, int)".into()));
        }
        let utts = &dialogue.utterances;
        let name = junction_tag(
            kind,
            &utts[earlier],
            &utts[earlier + 1],
            SidSide::Earlier,
            &dialogue.utterance_id(earlier),
        )?
        .expect("tag kind is not none");
        let token = vocab
            .id(&name)
            .ok_or_else(|| Error::VocabMismatch(format!("tag {name} is not in the vocabulary")))?;
        Ok(TagWord { kind, token })
    }
}

/// Concatenation gate on adjacent first-pass hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Never,
    Always,
    /// Concatenate when similarity is strictly greater than the threshold.
    Above(f64),
}

impl Gate {
    pub fn from_threshold(tau: Option<f64>) -> Gate {
        tau.map_or(Gate::Always, Gate::Above)
    }

    pub fn passes(&self, similarity: Option<f64>) -> bool {
        match *self {
            Gate::Never => false,
            Gate::Always => true,
            Gate::Above(t) => similarity.unwrap_or(0.0) > t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcatPolicy {
    pub tag: TagKind,
    pub gate: Gate,
    /// Previous utterances chained while the gate keeps passing.
    pub depth: usize,
}

impl Default for ConcatPolicy {
    fn default() -> Self {
        ConcatPolicy {
            tag: TagKind::Sp,
            gate: Gate::Always,
            depth: 1,
        }
    }
}

/// Longest arc distance from the start for every reachable state.
fn depths(l: &Lattice) -> Result<Vec<Option<usize>>> {
    let order = l.topo_order()?;
    let mut d = vec![None; l.num_states()];
    d[l.start()] = Some(0);
    for &s in order {
        let Some(ds) = d[s] else { continue };
        for a in l.out_arcs(s) {
            if d[a.dst].map_or(true, |x| x < ds + 1) {
                d[a.dst] = Some(ds + 1);
            }
        }
    }
    Ok(d)
}

pub fn concat_lattices(prev: &Lattice, cur: &Lattice, tag: TagWord, n: usize) -> Result<Lattice> {
    prev.validate()?;
    cur.validate()?;
    if tag.token == EPSILON {
        return Err(Error::VocabMismatch("tag token cannot be <eps>".into()));
    }
    let depth = depths(cur)?;
    let spliced = n.saturating_sub(1);
    let mut out = Lattice::with_states(prev.num_states());
    out.set_start(prev.start());
    for a in prev.arcs() {
        out.add_arc(a.src, a.dst, a.word, a.cost);
    }
    let cur_order = cur.topo_order()?.to_vec();
    // shared copies of states deeper than the spliced layers, created lazily
    let mut shared: BTreeMap<StateId, StateId> = BTreeMap::new();
    let mut per_final: Vec<BTreeMap<StateId, StateId>> = Vec::new();
    for (&f, &fc) in prev.finals() {
        let s_f = out.add_state();
        out.add_arc(f, s_f, tag.token, Cost::graph_only(fc));
        let mut map = BTreeMap::new();
        map.insert(cur.start(), s_f);
        for &t in &cur_order {
            if let Some(d) = depth[t] {
                if d >= 1 && d <= spliced {
                    map.insert(t, out.add_state());
                }
            }
        }
        per_final.push(map);
    }
    for &t in &cur_order {
        if depth[t].is_some_and(|d| d > spliced) {
            shared.insert(t, out.add_state());
        }
    }
    for map in &per_final {
        let lookup = |t: StateId| map.get(&t).or_else(|| shared.get(&t)).copied();
        for (&t, &ot) in map {
            for a in cur.out_arcs(t) {
                let dst = lookup(a.dst).expect("successor state mapped");
                out.add_arc(ot, dst, a.word, a.cost);
            }
            if let Some(fc) = cur.final_cost(t) {
                out.set_final(ot, fc);
            }
        }
    }
    for (&t, &ot) in &shared {
        for a in cur.out_arcs(t) {
            out.add_arc(ot, shared[&a.dst], a.word, a.cost);
        }
        if let Some(fc) = cur.final_cost(t) {
            out.set_final(ot, fc);
        }
    }
    match out.validate() {
        Ok(_) => Ok(out),
        Err(Error::CyclicLattice { .. }) => Err(Error::CycleCreated),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Words after the last tag on the best path, as a linear lattice.
    #[default]
    BestPath,
    /// Everything after the last tag on any path. A new start state reaches
    /// each post-tag entry state by an epsilon arc carrying the best prefix cost.
    SubLattice,
}

/// States from which no `tag` arc can be reached.
fn post_tag(l: &Lattice, tag: TokenId) -> Result<Vec<bool>> {
    let order = l.topo_order()?;
    let mut reaches = vec![false; l.num_states()];
    for &s in order.iter().rev() {
        reaches[s] = l.out_arcs(s).any(|a| a.word == tag || reaches[a.dst]);
    }
    Ok(reaches.into_iter().map(|r| !r).collect())
}

/// Is there a start-to-final path without `tag`?
fn tag_free_path(l: &Lattice, tag: TokenId) -> Result<bool> {
    let order = l.topo_order()?;
    let mut ok = vec![false; l.num_states()];
    for &s in order.iter().rev() {
        ok[s] = l.is_final(s) || l.out_arcs(s).any(|a| a.word != tag && ok[a.dst]);
    }
    Ok(ok[l.start()])
}

pub fn extract_context_region(rescored: &Lattice, tag: TagWord, mode: RegionMode, lm_scale: f64) -> Result<Lattice> {
    rescored.validate()?;
    if tag_free_path(rescored, tag.token)? {
        return Err(Error::TagNotFound(tag.token));
    }
    match mode {
        RegionMode::BestPath => {
            let best = rescored.best_path(lm_scale)?;
            let full = rescored.path_lattice(&best);
            let cut = best
                .labels
                .iter()
                .rposition(|&w| w == tag.token)
                .ok_or(Error::TagNotFound(tag.token))?;
            let arcs: Vec<(TokenId, Cost)> = full.arcs()[cut + 1..].iter().map(|a| (a.word, a.cost)).collect();
            let last = full.arcs().last().map_or(full.start(), |a| a.dst);
            Ok(Lattice::linear(&arcs, full.final_cost(last).unwrap_or(0.0)))
        }
        RegionMode::SubLattice => {
            let post = post_tag(rescored, tag.token)?;
            let order = rescored.topo_order()?;
            // best prefix cost (scaled, components) into each state
            let mut alpha: Vec<Option<(f64, Cost)>> = vec![None; rescored.num_states()];
            alpha[rescored.start()] = Some((0.0, Cost::ZERO));
            for &s in order {
                let Some((sa, sc)) = alpha[s] else { continue };
                for a in rescored.out_arcs(s) {
                    let c = sa + a.cost.scaled(lm_scale);
                    if alpha[a.dst].map_or(true, |(x, _)| c < x) {
                        alpha[a.dst] = Some((c, sc + a.cost));
                    }
                }
            }
            let mut entry: BTreeMap<StateId, (f64, Cost)> = BTreeMap::new();
            for a in rescored.arcs() {
                if a.word != tag.token || !post[a.dst] {
                    continue;
                }
                let Some((sa, sc)) = alpha[a.src] else { continue };
                let c = sa + a.cost.scaled(lm_scale);
                let e = entry.entry(a.dst).or_insert((f64::INFINITY, Cost::ZERO));
                if c < e.0 {
                    *e = (c, sc + a.cost);
                }
            }
            let mut out = Lattice::with_states(rescored.num_states() + 1);
            let start = rescored.num_states();
            out.set_start(start);
            for (&v, &(_, c)) in &entry {
                out.add_arc(start, v, EPSILON, c);
            }
            for a in rescored.arcs() {
                if post[a.src] {
                    out.add_arc(a.src, a.dst, a.word, a.cost);
                }
            }
            for (&s, &f) in rescored.finals() {
                if post[s] {
                    out.set_final(s, f);
                }
            }
            Ok(out.connect())
        }
    }
}

/// Similarity of two first-pass hypotheses and whether the gate opens.
pub fn should_concat(prev_hyp: &[TokenId], cur_hyp: &[TokenId], model: &TfIdfModel, gate: Gate) -> (bool, f64) {
    let sim = model.similarity(prev_hyp, cur_hyp);
    (gate.passes(Some(sim)), sim)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceResult {
    pub conv_id: String,
    pub utt_index: usize,
    pub hypothesis: Vec<TokenId>,
    pub similarity: Option<f64>,
    pub concatenated: bool,
    /// Number of previous utterances joined in front.
    pub context_utterances: usize,
    /// Scaled cost of the chosen path, context region included.
    pub cost: f64,
    pub stats: RescoreStats,
}

#[derive(Debug, Clone, Copy)]
pub struct ContextOptions {
    pub policy: ConcatPolicy,
    pub rescore: RescoreOptions,
    /// Approximation order used for splicing.
    pub n: usize,
}

/// Rescores one conversation. `first_pass[i]` is utterance `i`'s first-pass
/// lattice; context always comes from first-pass lattices.
pub fn rescore_with_context<L: LanguageModel>(
    dialogue: &Dialogue,
    first_pass: &[Lattice],
    lm: &L,
    vocab: &Vocabulary,
    tfidf: Option<&TfIdfModel>,
    opts: &ContextOptions,
) -> Result<Vec<UtteranceResult>> {
    if first_pass.len() != dialogue.utterances.len() {
        return Err(Error::Config(format!(
            "conversation {} has {} utterances but {} lattices",
            dialogue.id,
            dialogue.utterances.len(),
            first_pass.len()
        )));
    }
    let lm_scale = opts.rescore.lm_scale;
    let hyps: Vec<Vec<TokenId>> = first_pass
        .iter()
        .map(|l| Ok(l.best_path(lm_scale)?.words))
        .collect::<Result<_>>()?;
    let sims: Vec<Option<f64>> = (0..first_pass.len())
        .map(|i| match (i, tfidf) {
            (0, _) | (_, None) => None,
            (i, Some(m)) => Some(m.similarity(&hyps[i - 1], &hyps[i])),
        })
        .collect();
    let mut results = Vec::with_capacity(first_pass.len());
    for i in 0..first_pass.len() {
        let mut ctx = 0;
        while ctx < opts.policy.depth && ctx < i && opts.policy.gate.passes(sims[i - ctx]) {
            ctx += 1;
        }
        let (hypothesis, cost, stats) = if ctx == 0 {
            let out = rescore(&first_pass[i], lm, &opts.rescore)?;
            let best = out.lattice.best_path(lm_scale)?;
            (best.words, best.cost, out.stats)
        } else {
            let mut joined = first_pass[i - ctx].clone();
            let mut last_tag = None;
            for j in i - ctx + 1..=i {
                let tag = TagWord::for_junction(opts.policy.tag, dialogue, j - 1, vocab)?;
                joined = concat_lattices(&joined, &first_pass[j], tag, opts.n)?;
                last_tag = Some(tag);
            }
            let tag = last_tag.expect("at least one junction");
            let out = rescore(&joined, lm, &opts.rescore)?;
            let best = out.lattice.best_path(lm_scale)?;
            let region = extract_context_region(&out.lattice, tag, RegionMode::BestPath, lm_scale)?;
            (region.best_path(lm_scale)?.words, best.cost, out.stats)
        };
        results.push(UtteranceResult {
            conv_id: dialogue.id.clone(),
            utt_index: i,
            hypothesis,
            similarity: sims[i],
            concatenated: ctx > 0,
            context_utterances: ctx,
            cost,
            stats,
        });
    }
    Ok(results)
}

/// [`rescore_with_context`] over many conversations in parallel; output
/// order follows input order.
pub fn rescore_conversations<L: LanguageModel>(
    dialogues: &[Dialogue],
    lattices: &[Vec<Lattice>],
    lm: &L,
    vocab: &Vocabulary,
    tfidf: Option<&TfIdfModel>,
    opts: &ContextOptions,
) -> Result<Vec<Vec<UtteranceResult>>> {
    if dialogues.len() != lattices.len() {
        return Err(Error::Config("one lattice list per conversation required".into()));
    }
    dialogues
        .par_iter()
        .zip(lattices.par_iter())
        .map(|(d, l)| rescore_with_context(d, l, lm, vocab, tfidf, opts))
        .collect()
}
