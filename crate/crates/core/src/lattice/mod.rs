//! Acyclic word lattices with paired (graph, acoustic) costs.
//!
//! Costs are negative natural logs. Ranking uses `lm_scale * graph + acoustic`;
//! final costs sit on the graph side and are scaled the same way.

mod random;
mod text;

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::ops::Add;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, EPSILON};

pub use random::{random_lattice, RandomLatticeConfig};
pub use text::ReadOptions;

pub type StateId = usize;

/// Two costs closer than this are treated as a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub graph: f64,
    pub acoustic: f64,
}

impl Cost {
    pub const ZERO: Cost = Cost {
        graph: 0.0,
        acoustic: 0.0,
    };

    pub fn new(graph: f64, acoustic: f64) -> Self {
        Cost { graph, acoustic }
    }

    pub fn graph_only(graph: f64) -> Self {
        Cost {
            graph,
            acoustic: 0.0,
        }
    }

    /// Combined ranking cost.
    #[inline]
    pub fn scaled(&self, lm_scale: f64) -> f64 {
        lm_scale * self.graph + self.acoustic
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost {
            graph: self.graph + rhs.graph,
            acoustic: self.acoustic + rhs.acoustic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub word: TokenId,
    pub cost: Cost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub num_states: usize,
    pub num_arcs: usize,
    pub num_finals: usize,
    pub epsilon_arcs: usize,
    pub topo_order: Vec<StateId>,
}

impl ValidationReport {
    pub fn is_epsilon_free(&self) -> bool {
        self.epsilon_arcs == 0
    }
}

/// Viterbi forward (`alpha`) and backward (`beta`) costs in scaled units.
/// `beta` includes final costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCosts {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl PathCosts {
    /// Cost of the best complete path.
    pub fn best(&self, start: StateId) -> f64 {
        self.beta[start]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestPath {
    /// Words along the path with epsilons removed.
    pub words: Vec<TokenId>,
    /// All labels along the path, epsilons included.
    pub labels: Vec<TokenId>,
    /// Arc ids along the path, parallel to `labels`.
    pub arcs: Vec<usize>,
    /// Scaled total cost including the final cost.
    pub cost: f64,
    /// Unscaled cost components, final cost on the graph side.
    pub components: Cost,
}

#[derive(Debug, Clone, Default)]
pub struct Lattice {
    num_states: usize,
    start: StateId,
    arcs: Vec<Arc>,
    finals: BTreeMap<StateId, f64>,
    topo: OnceLock<std::result::Result<Vec<StateId>, StateId>>,
    out: OnceLock<Vec<Vec<usize>>>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.num_states == other.num_states
            && self.start == other.start
            && self.arcs == other.arcs
            && self.finals == other.finals
    }
}

impl Lattice {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_states(num_states: usize) -> Self {
        Lattice {
            num_states,
            ..Self::default()
        }
    }

    /// A single-path lattice over `arcs`, final cost on the last state.
    pub fn linear(arcs: &[(TokenId, Cost)], final_cost: f64) -> Self {
        let mut lat = Lattice::with_states(arcs.len() + 1);
        for (i, &(w, c)) in arcs.iter().enumerate() {
            lat.add_arc(i, i + 1, w, c);
        }
        lat.set_final(arcs.len(), final_cost);
        lat
    }

    fn invalidate(&mut self) {
        self.topo = OnceLock::new();
        self.out = OnceLock::new();
    }

    pub fn add_state(&mut self) -> StateId {
        self.invalidate();
        self.num_states += 1;
        self.num_states - 1
    }

    pub fn set_start(&mut self, s: StateId) {
        self.invalidate();
        self.start = s;
    }

    pub fn add_arc(&mut self, src: StateId, dst: StateId, word: TokenId, cost: Cost) {
        self.invalidate();
        self.num_states = self.num_states.max(src + 1).max(dst + 1);
        self.arcs.push(Arc {
            src,
            dst,
            word,
            cost,
        });
    }

    pub fn set_final(&mut self, s: StateId, cost: f64) {
        self.invalidate();
        self.num_states = self.num_states.max(s + 1);
        self.finals.insert(s, cost);
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn finals(&self) -> &BTreeMap<StateId, f64> {
        &self.finals
    }

    pub fn final_cost(&self, s: StateId) -> Option<f64> {
        self.finals.get(&s).copied()
    }

    pub fn is_final(&self, s: StateId) -> bool {
        self.finals.contains_key(&s)
    }

    fn out_index(&self) -> &Vec<Vec<usize>> {
        self.out.get_or_init(|| {
            let mut out = vec![Vec::new(); self.num_states];
            for (i, a) in self.arcs.iter().enumerate() {
                out[a.src].push(i);
            }
            out
        })
    }

    /// Indices into [`Lattice::arcs`] of arcs leaving `s`, in insertion order.
    pub fn out_arc_ids(&self, s: StateId) -> &[usize] {
        &self.out_index()[s]
    }

    pub fn out_arcs(&self, s: StateId) -> impl Iterator<Item = &Arc> + '_ {
        self.out_index()[s].iter().map(move |&i| &self.arcs[i])
    }

    fn compute_topo(&self) -> std::result::Result<Vec<StateId>, StateId> {
        let n = self.num_states;
        let mut indeg = vec![0usize; n];
        for a in &self.arcs {
            indeg[a.dst] += 1;
        }
        let mut queue: VecDeque<StateId> = (0..n).filter(|&s| indeg[s] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for &i in self.out_arc_ids(s) {
                let d = self.arcs[i].dst;
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    queue.push_back(d);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&s| indeg[s] > 0).unwrap_or(0);
            return Err(stuck);
        }
        Ok(order)
    }

    /// Topological order of all states; cached.
    pub fn topo_order(&self) -> Result<&[StateId]> {
        match self.topo.get_or_init(|| self.compute_topo()) {
            Ok(order) => Ok(order),
            Err(s) => Err(Error::CyclicLattice { state: *s }),
        }
    }

    fn reachability(&self) -> (Vec<bool>, Vec<bool>) {
        let n = self.num_states;
        let mut fwd = vec![false; n];
        let mut stack = vec![self.start];
        fwd[self.start] = true;
        while let Some(s) = stack.pop() {
            for a in self.out_arcs(s) {
                if !fwd[a.dst] {
                    fwd[a.dst] = true;
                    stack.push(a.dst);
                }
            }
        }
        let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
        for a in &self.arcs {
            preds[a.dst].push(a.src);
        }
        let mut bwd = vec![false; n];
        let mut stack: Vec<StateId> = self.finals.keys().copied().collect();
        for &f in &stack {
            bwd[f] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &preds[s] {
                if !bwd[p] {
                    bwd[p] = true;
                    stack.push(p);
                }
            }
        }
        (fwd, bwd)
    }

    /// Checks acyclicity, connectivity and final states, caching the
    /// topological order on success.
    pub fn validate(&self) -> Result<ValidationReport> {
        if self.num_states == 0 || self.start >= self.num_states {
            return Err(Error::InvalidLattice("missing start state".into()));
        }
        if self.arcs.iter().any(|a| a.src == a.dst) {
            let a = self.arcs.iter().find(|a| a.src == a.dst).unwrap();
            return Err(Error::CyclicLattice { state: a.src });
        }
        let order = self.topo_order()?.to_vec();
        if self.finals.is_empty() {
            return Err(Error::NoFinalState);
        }
        let (fwd, bwd) = self.reachability();
        if let Some(s) = (0..self.num_states).find(|&s| !(fwd[s] && bwd[s])) {
            return Err(Error::UnreachableState { state: s });
        }
        Ok(ValidationReport {
            num_states: self.num_states,
            num_arcs: self.arcs.len(),
            num_finals: self.finals.len(),
            epsilon_arcs: self.arcs.iter().filter(|a| a.word == EPSILON).count(),
            topo_order: order,
        })
    }

    /// Removes states that are not on any start-to-final path. Surviving
    /// states keep their relative order.
    pub fn connect(&self) -> Lattice {
        if self.num_states == 0 || self.start >= self.num_states {
            return Lattice::new();
        }
        let (fwd, bwd) = self.reachability();
        let mut map = vec![usize::MAX; self.num_states];
        let mut next = 0;
        for s in 0..self.num_states {
            if fwd[s] && bwd[s] {
                map[s] = next;
                next += 1;
            }
        }
        let mut out = Lattice::with_states(next);
        if map[self.start] == usize::MAX {
            return Lattice::new();
        }
        out.start = map[self.start];
        for a in &self.arcs {
            if map[a.src] != usize::MAX && map[a.dst] != usize::MAX {
                out.add_arc(map[a.src], map[a.dst], a.word, a.cost);
            }
        }
        for (&f, &c) in &self.finals {
            if map[f] != usize::MAX {
                out.set_final(map[f], c);
            }
        }
        out
    }

    fn ensure_valid(&self) -> Result<&[StateId]> {
        self.validate()
            .map_err(|e| Error::InvalidLattice(e.to_string()))?;
        self.topo_order()
    }

    /// Min-plus forward and backward costs.
    pub fn forward_backward(&self, lm_scale: f64) -> Result<PathCosts> {
        if !(lm_scale > 0.0) {
            return Err(Error::Config(format!("lm_scale must be > 0, got {lm_scale}")));
        }
        let order = self.ensure_valid()?;
        let n = self.num_states;
        let mut alpha = vec![f64::INFINITY; n];
        alpha[self.start] = 0.0;
        for &s in order {
            if alpha[s].is_infinite() {
                continue;
            }
            for a in self.out_arcs(s) {
                let c = alpha[s] + a.cost.scaled(lm_scale);
                if c < alpha[a.dst] {
                    alpha[a.dst] = c;
                }
            }
        }
        let mut beta = vec![f64::INFINITY; n];
        for &s in order.iter().rev() {
            let mut b = self
                .final_cost(s)
                .map_or(f64::INFINITY, |f| lm_scale * f);
            for a in self.out_arcs(s) {
                let c = a.cost.scaled(lm_scale) + beta[a.dst];
                if c < b {
                    b = c;
                }
            }
            beta[s] = b;
        }
        Ok(PathCosts { alpha, beta })
    }

    /// Minimum-cost path. Among paths whose costs tie within
    /// [`TIE_TOLERANCE`], the lexicographically smallest word sequence wins.
    pub fn best_path(&self, lm_scale: f64) -> Result<BestPath> {
        if !(lm_scale > 0.0) {
            return Err(Error::Config(format!("lm_scale must be > 0, got {lm_scale}")));
        }
        let order = self.ensure_valid()?.to_vec();
        // Suffix DP in reverse topological order. For a fixed prefix the
        // lexicographically smallest suffix gives the smallest full sequence.
        #[derive(Clone)]
        struct Suffix {
            cost: f64,
            words: Vec<TokenId>,
            // (arc index) or None when stopping at this final state
            via: Option<usize>,
        }
        let mut best: Vec<Option<Suffix>> = vec![None; self.num_states];
        for &s in order.iter().rev() {
            let mut cand: Option<Suffix> = self.final_cost(s).map(|f| Suffix {
                cost: lm_scale * f,
                words: Vec::new(),
                via: None,
            });
            for &ai in self.out_arc_ids(s) {
                let a = &self.arcs[ai];
                let Some(next) = &best[a.dst] else { continue };
                let cost = a.cost.scaled(lm_scale) + next.cost;
                let better = match &cand {
                    None => true,
                    Some(c) => match compare_cost(cost, c.cost) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => {
                            lex_less_with_head(a.word, &next.words, &c.words)
                        }
                    },
                };
                if better {
                    let mut words = Vec::with_capacity(next.words.len() + 1);
                    if a.word != EPSILON {
                        words.push(a.word);
                    }
                    words.extend_from_slice(&next.words);
                    cand = Some(Suffix {
                        cost,
                        words,
                        via: Some(ai),
                    });
                }
            }
            best[s] = cand;
        }
        let head = best[self.start]
            .clone()
            .ok_or_else(|| Error::InvalidLattice("no complete path".into()))?;
        let mut labels = Vec::new();
        let mut arc_ids = Vec::new();
        let mut components = Cost::ZERO;
        let mut s = self.start;
        loop {
            let suffix = best[s].as_ref().expect("suffix exists on best path");
            match suffix.via {
                Some(ai) => {
                    let a = &self.arcs[ai];
                    labels.push(a.word);
                    arc_ids.push(ai);
                    components = components + a.cost;
                    s = a.dst;
                }
                None => {
                    components.graph += self.final_cost(s).unwrap_or(0.0);
                    break;
                }
            }
        }
        Ok(BestPath {
            words: head.words,
            labels,
            arcs: arc_ids,
            cost: head.cost,
            components,
        })
    }

    /// Number of complete paths, saturating at `u64::MAX`.
    pub fn count_paths(&self) -> Result<u64> {
        let order = self.topo_order()?;
        let mut count = vec![0u64; self.num_states];
        for &s in order.iter().rev() {
            let mut c: u64 = u64::from(self.is_final(s));
            for a in self.out_arcs(s) {
                c = c.saturating_add(count[a.dst]);
            }
            count[s] = c;
        }
        Ok(count.get(self.start).copied().unwrap_or(0))
    }

    /// Longest start-to-final path length in arcs.
    pub fn max_path_len(&self) -> Result<usize> {
        let order = self.topo_order()?;
        let mut len = vec![None::<usize>; self.num_states];
        for &s in order.iter().rev() {
            let mut l = if self.is_final(s) { Some(0) } else { None };
            for a in self.out_arcs(s) {
                if let Some(d) = len[a.dst] {
                    l = Some(l.map_or(d + 1, |x: usize| x.max(d + 1)));
                }
            }
            len[s] = l;
        }
        Ok(len.get(self.start).copied().flatten().unwrap_or(0))
    }

    /// Same lattice with graph costs multiplied by `k`, finals included.
    pub fn scale_graph(&self, k: f64) -> Lattice {
        let mut out = self.clone();
        out.invalidate();
        for a in &mut out.arcs {
            a.cost.graph *= k;
        }
        for c in out.finals.values_mut() {
            *c *= k;
        }
        out
    }

    /// The linear lattice made of `path.arcs`, which must come from this lattice.
    pub fn path_lattice(&self, path: &BestPath) -> Lattice {
        let mut s = self.start;
        let mut arcs = Vec::with_capacity(path.arcs.len());
        for &ai in &path.arcs {
            let a = &self.arcs[ai];
            arcs.push((a.word, a.cost));
            s = a.dst;
        }
        Lattice::linear(&arcs, self.final_cost(s).unwrap_or(0.0))
    }
}

pub(crate) fn compare_cost(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= TIE_TOLERANCE {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Is `[head] ++ tail` (epsilon head dropped) lexicographically smaller than `other`?
fn lex_less_with_head(head: TokenId, tail: &[TokenId], other: &[TokenId]) -> bool {
    if head == EPSILON {
        tail < other
    } else {
        let mut v = Vec::with_capacity(tail.len() + 1);
        v.push(head);
        v.extend_from_slice(tail);
        v.as_slice() < other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond(top: f64, bottom: f64) -> Lattice {
        let mut l = Lattice::with_states(4);
        l.add_arc(0, 1, 5, Cost::new(top, 0.0));
        l.add_arc(1, 3, 6, Cost::ZERO);
        l.add_arc(0, 2, 7, Cost::new(0.0, bottom));
        l.add_arc(2, 3, 8, Cost::ZERO);
        l.set_final(3, 0.0);
        l
    }

    #[test]
    fn single_state_is_valid() {
        let mut l = Lattice::with_states(1);
        l.set_final(0, 0.0);
        let r = l.validate().unwrap();
        assert_eq!(r.topo_order, vec![0]);
        let bp = l.best_path(1.0).unwrap();
        assert!(bp.words.is_empty());
        assert_eq!(bp.cost, 0.0);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let mut l = Lattice::with_states(2);
        l.add_arc(0, 1, 4, Cost::ZERO);
        l.add_arc(1, 0, 4, Cost::ZERO);
        l.set_final(1, 0.0);
        assert!(matches!(l.validate(), Err(Error::CyclicLattice { .. })));
    }

    #[test]
    fn self_loop_is_rejected() {
        let mut l = Lattice::with_states(2);
        l.add_arc(0, 1, 4, Cost::ZERO);
        l.add_arc(1, 1, 4, Cost::ZERO);
        l.set_final(1, 0.0);
        assert!(matches!(l.validate(), Err(Error::CyclicLattice { .. })));
    }

    #[test]
    fn missing_final_and_dead_states() {
        let mut l = Lattice::with_states(2);
        l.add_arc(0, 1, 4, Cost::ZERO);
        assert!(matches!(l.validate(), Err(Error::NoFinalState)));
        l.add_arc(0, 2, 4, Cost::ZERO);
        l.set_final(1, 0.0);
        assert!(matches!(l.validate(), Err(Error::UnreachableState { state: 2 })));
        let c = l.connect();
        assert_eq!(c.num_states(), 2);
        c.validate().unwrap();
    }

    #[test]
    fn linear_alpha_is_path_sum() {
        let l = Lattice::linear(
            &[
                (4, Cost::new(1.0, 1.0)),
                (5, Cost::new(2.0, 0.0)),
                (6, Cost::new(0.0, 3.0)),
            ],
            0.0,
        );
        let pc = l.forward_backward(1.0).unwrap();
        assert_eq!(pc.alpha[3], 7.0);
        assert_eq!(pc.alpha[0], 0.0);
        assert_eq!(pc.beta[0], 7.0);
    }

    #[test]
    fn diamond_beta_is_min() {
        let l = diamond(5.0, 3.0);
        let pc = l.forward_backward(1.0).unwrap();
        assert_eq!(pc.beta[0], 3.0);
        let bp = l.best_path(1.0).unwrap();
        assert_eq!(bp.words, vec![7, 8]);
        assert_eq!(bp.cost, 3.0);
    }

    #[test]
    fn ties_prefer_smaller_word_ids() {
        let l = diamond(3.0, 3.0);
        assert_eq!(l.best_path(1.0).unwrap().words, vec![5, 6]);
        // tie across an epsilon prefix
        let mut l = Lattice::with_states(4);
        l.add_arc(0, 1, EPSILON, Cost::new(1.0, 0.0));
        l.add_arc(1, 3, 9, Cost::ZERO);
        l.add_arc(0, 2, 4, Cost::new(0.5, 0.0));
        l.add_arc(2, 3, 10, Cost::new(0.5, 0.0));
        l.set_final(3, 0.0);
        let bp = l.best_path(1.0).unwrap();
        assert_eq!(bp.words, vec![4, 10]);
    }

    #[test]
    fn epsilons_dropped_from_words() {
        let l = Lattice::linear(&[(4, Cost::ZERO), (EPSILON, Cost::ZERO), (5, Cost::ZERO)], 0.5);
        let bp = l.best_path(1.0).unwrap();
        assert_eq!(bp.words, vec![4, 5]);
        assert_eq!(bp.labels, vec![4, 0, 5]);
        assert_eq!(bp.components.graph, 0.5);
    }

    #[test]
    fn lm_scale_must_be_positive() {
        let l = diamond(1.0, 1.0);
        assert!(l.forward_backward(0.0).is_err());
        assert!(l.best_path(-1.0).is_err());
    }

    #[test]
    fn path_counting() {
        let l = diamond(1.0, 2.0);
        assert_eq!(l.count_paths().unwrap(), 2);
        assert_eq!(l.max_path_len().unwrap(), 2);
    }
}
