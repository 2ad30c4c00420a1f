//! Error rates, the exhaustive N-best oracle, perplexity and the
//! experiment grid.

use std::io::Write;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::Serialize;

use crate::context::{rescore_conversations, ContextOptions, ConcatPolicy, Gate, UtteranceResult};
use crate::error::{Error, Result};
use crate::lattice::{compare_cost, Lattice, StateId};
use crate::lm::{AnyLm, LanguageModel};
use crate::ngram::NgramModel;
use crate::rescore::{DifferenceLm, RescoreOptions};
use crate::textprep::{junction_tag, DialogueCorpus, SidSide, TagKind, INT_PREFIX, SID_PREFIX, SP_TAG};
use crate::tfidf::fit_tfidf;
use crate::vocab::{TokenId, Vocabulary, EPSILON};

/// Similarity thresholds swept by the grid.
pub const THRESHOLDS: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 0.9];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CerReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl CerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `None` when the reference is empty.
    pub fn cer(&self) -> Option<f64> {
        (self.ref_len > 0).then(|| self.errors() as f64 / self.ref_len as f64)
    }
}

impl Add for CerReport {
    type Output = CerReport;
    fn add(self, o: CerReport) -> CerReport {
        CerReport {
            substitutions: self.substitutions + o.substitutions,
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl AddAssign for CerReport {
    fn add_assign(&mut self, o: CerReport) {
        *self = *self + o;
    }
}

/// Unit-cost Levenshtein alignment. On equal cost the backtrace prefers a
/// match or substitution, then a deletion, then an insertion.
pub fn cer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> CerReport {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut r = CerReport {
        ref_len: n,
        ..CerReport::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    r.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            r.deletions += 1;
            i -= 1;
        } else {
            r.insertions += 1;
            j -= 1;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NbestResult {
    pub words: Vec<TokenId>,
    /// Scaled total with the language-model difference applied.
    pub cost: f64,
    pub paths: u64,
}

/// Enumerates every path, rescoring each with the full-history model.
/// Ties within 1e-9 go to the lexicographically smallest word sequence.
pub fn oracle_rescore_nbest<L: LanguageModel>(
    lattice: &Lattice,
    lm: &L,
    lm_scale: f64,
    budget: usize,
) -> Result<NbestResult> {
    lattice.validate()?;
    let paths = lattice.count_paths()?;
    if paths > budget as u64 {
        return Err(Error::BudgetExceeded { budget });
    }
    let mut best: Option<(f64, Vec<TokenId>)> = None;
    let mut words = Vec::new();
    fn visit<L: LanguageModel>(
        lattice: &Lattice,
        lm: &L,
        lm_scale: f64,
        s: StateId,
        acc: f64,
        words: &mut Vec<TokenId>,
        best: &mut Option<(f64, Vec<TokenId>)>,
    ) -> Result<()> {
        if let Some(f) = lattice.final_cost(s) {
            let total = acc + lm_scale * (f + lm.sentence_cost(words)?);
            let better = match best {
                None => true,
                Some((b, bw)) => match compare_cost(total, *b) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Equal => words.as_slice() < bw.as_slice(),
                    std::cmp::Ordering::Greater => false,
                },
            };
            if better {
                *best = Some((total, words.clone()));
            }
        }
        for a in lattice.out_arcs(s) {
            let pushed = a.word != EPSILON;
            if pushed {
                words.push(a.word);
            }
            visit(lattice, lm, lm_scale, a.dst, acc + a.cost.scaled(lm_scale), words, best)?;
            if pushed {
                words.pop();
            }
        }
        Ok(())
    }
    visit(lattice, lm, lm_scale, lattice.start(), 0.0, &mut words, &mut best)?;
    let (cost, words) = best.ok_or(Error::NoFinalState)?;
    Ok(NbestResult { words, cost, paths })
}

/// Perplexity over word tokens only. With `tag == None` every utterance
/// starts fresh from `<s>`; otherwise each dialogue is read as one stream
/// with junction tags, whose costs are not counted.
pub fn word_perplexity<L: LanguageModel>(
    lm: &L,
    corpus: &DialogueCorpus,
    vocab: &Vocabulary,
    tag: TagKind,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for d in &corpus.dialogues {
        let mut state = lm.initial_state();
        for (i, u) in d.utterances.iter().enumerate() {
            if i > 0 {
                match junction_tag(tag, &d.utterances[i - 1], u, SidSide::Earlier, &d.utterance_id(i - 1))? {
                    None => state = lm.initial_state(),
                    Some(t) => state = lm.score(&state, vocab.require(&t)?)?.1,
                }
            }
            for w in &u.words {
                let (c, next) = lm.score(&state, vocab.id_or_unk(w)?)?;
                total += c;
                count += 1;
                state = next;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok((total / count as f64).exp())
}

/// Token ids of every tag word in the vocabulary.
pub fn tag_token_ids(vocab: &Vocabulary) -> Vec<TokenId> {
    vocab
        .tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| *t == SP_TAG || t.starts_with(SID_PREFIX) || t.starts_with(INT_PREFIX))
        .map(|(i, _)| i as TokenId)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Correction {
    pub conv_id: String,
    pub utt_index: usize,
    pub reference: String,
    pub before: String,
    pub after: String,
}

/// Utterances where `after` has fewer errors than `before`.
pub fn corrections(
    corpus: &DialogueCorpus,
    vocab: &Vocabulary,
    before: &[Vec<UtteranceResult>],
    after: &[Vec<UtteranceResult>],
) -> Vec<Correction> {
    let mut out = Vec::new();
    for ((d, b), a) in corpus.dialogues.iter().zip(before).zip(after) {
        for ((u, hb), ha) in d.utterances.iter().zip(b).zip(a) {
            let r = vocab.decode(&hb.hypothesis);
            let s = vocab.decode(&ha.hypothesis);
            if cer(&u.words, &s).errors() < cer(&u.words, &r).errors() {
                out.push(Correction {
                    conv_id: d.id.clone(),
                    utt_index: hb.utt_index,
                    reference: u.words.join(" "),
                    before: r.join(" "),
                    after: s.join(" "),
                });
            }
        }
    }
    out
}

/// A rescoring model and the tag it was trained with (`None` for plain text).
#[derive(Debug, Clone)]
pub struct GridModel {
    pub name: String,
    pub tag: TagKind,
    pub lm: AnyLm,
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub rescore: RescoreOptions,
    pub n: usize,
    pub thresholds: Vec<f64>,
    pub depth: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rescore: RescoreOptions::default(),
            n: 4,
            thresholds: THRESHOLDS.to_vec(),
            depth: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub condition: String,
    pub model: String,
    pub tag: TagKind,
    pub policy: String,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
    pub cer: f64,
    pub concatenated: usize,
    pub rel_vs_first_pass: f64,
    pub rel_vs_rescore: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentGrid {
    pub lm_scale: f64,
    pub n: usize,
    pub rescore_mode: crate::rescore::RescoreMode,
    pub rows: Vec<GridRow>,
    #[serde(skip)]
    pub hyps: Vec<(String, Vec<Vec<UtteranceResult>>)>,
}

impl ExperimentGrid {
    pub fn row(&self, condition: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    pub fn hyps_for(&self, condition: &str) -> Option<&[Vec<UtteranceResult>]> {
        self.hyps
            .iter()
            .find(|(c, _)| c == condition)
            .map(|(_, h)| h.as_slice())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "condition\tmodel\ttag\tpolicy\tcer\tsub\tins\tdel\tref_len\tconcatenated\trel_vs_first_pass\trel_vs_rescore"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}",
                r.condition,
                r.model,
                r.tag,
                r.policy,
                r.cer,
                r.substitutions,
                r.insertions,
                r.deletions,
                r.ref_len,
                r.concatenated,
                r.rel_vs_first_pass,
                r.rel_vs_rescore.map_or("-".to_string(), |x| format!("{x:.6}"))
            )?;
        }
        Ok(())
    }

    pub fn write_hyps<W: Write>(&self, mut w: W, vocab: &Vocabulary) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            condition: &'a str,
            conv_id: &'a str,
            utt_index: usize,
            hypothesis: String,
            similarity: Option<f64>,
            concatenated: bool,
            cost: f64,
        }
        for (cond, convs) in &self.hyps {
            for r in convs.iter().flatten() {
                let line = Line {
                    condition: cond,
                    conv_id: &r.conv_id,
                    utt_index: r.utt_index,
                    hypothesis: vocab.decode_line(&r.hypothesis),
                    similarity: r.similarity,
                    concatenated: r.concatenated,
                    cost: r.cost,
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// `grid_report.json`, `grid_report.tsv` and `hyps.jsonl` under `dir`.
    pub fn write_all(&self, dir: &Path, vocab: &Vocabulary) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_json(std::io::BufWriter::new(std::fs::File::create(dir.join("grid_report.json"))?))?;
        self.write_tsv(std::io::BufWriter::new(std::fs::File::create(dir.join("grid_report.tsv"))?))?;
        self.write_hyps(
            std::io::BufWriter::new(std::fs::File::create(dir.join("hyps.jsonl"))?),
            vocab,
        )?;
        Ok(())
    }
}

/// Pooled CER of per-conversation results against the corpus references.
pub fn score_results(corpus: &DialogueCorpus, vocab: &Vocabulary, results: &[Vec<UtteranceResult>]) -> CerReport {
    let mut total = CerReport::default();
    for (d, rs) in corpus.dialogues.iter().zip(results) {
        for (u, r) in d.utterances.iter().zip(rs) {
            total += cer(&u.words, &vocab.decode(&r.hypothesis));
        }
    }
    total
}

fn policy_name(gate: Gate) -> String {
    match gate {
        Gate::Never => "no-concat".into(),
        Gate::Always => "concat".into(),
        Gate::Above(t) => format!("concat>{t}"),
    }
}

/// Runs the comparison grid: first pass, plain rescoring, and for every
/// tagged model no-concat, always-concat and each selective threshold.
pub fn run_grid(
    corpus: &DialogueCorpus,
    lattices: &[Vec<Lattice>],
    vocab: &Vocabulary,
    first_pass: &NgramModel,
    models: &[GridModel],
    cfg: &GridConfig,
) -> Result<ExperimentGrid> {
    if corpus.dialogues.len() != lattices.len() {
        return Err(Error::Config("one lattice list per conversation required".into()));
    }
    let lm_scale = cfg.rescore.lm_scale;
    let subtract = first_pass.clone().with_boundary_tokens(tag_token_ids(vocab));
    let mut first: Vec<Vec<UtteranceResult>> = Vec::new();
    let mut first_hyps: Vec<Vec<TokenId>> = Vec::new();
    for (d, lats) in corpus.dialogues.iter().zip(lattices) {
        let mut conv = Vec::new();
        for (i, l) in lats.iter().enumerate() {
            let best = l.best_path(lm_scale)?;
            first_hyps.push(best.words.clone());
            conv.push(UtteranceResult {
                conv_id: d.id.clone(),
                utt_index: i,
                hypothesis: best.words,
                similarity: None,
                concatenated: false,
                context_utterances: 0,
                cost: best.cost,
                stats: Default::default(),
            });
        }
        first.push(conv);
    }
    let tfidf = fit_tfidf(&first_hyps)?;
    let mut runs: Vec<(String, String, TagKind, Gate, Vec<Vec<UtteranceResult>>)> = Vec::new();
    runs.push(("1-pass".into(), "first-pass".into(), TagKind::None, Gate::Never, first));
    for m in models {
        let diff = DifferenceLm::new(&subtract, &m.lm);
        let mut gates = vec![Gate::Never];
        if m.tag != TagKind::None {
            gates.push(Gate::Always);
            gates.extend(cfg.thresholds.iter().map(|&t| Gate::Above(t)));
        }
        for gate in gates {
            let opts = ContextOptions {
                policy: ConcatPolicy {
                    tag: if m.tag == TagKind::None { TagKind::Sp } else { m.tag },
                    gate,
                    depth: cfg.depth,
                },
                rescore: cfg.rescore,
                n: cfg.n,
            };
            let res = rescore_conversations(&corpus.dialogues, lattices, &diff, vocab, Some(&tfidf), &opts)?;
            let cond = format!("{}/{}", m.name, policy_name(gate));
            log::info!("grid condition {cond} done");
            runs.push((cond, m.name.clone(), m.tag, gate, res));
        }
    }
    let first_cer = score_results(corpus, vocab, &runs[0].4).cer().unwrap_or(0.0);
    let plain_cer = models
        .iter()
        .find(|m| m.tag == TagKind::None)
        .and_then(|m| runs.iter().find(|r| r.1 == m.name))
        .map(|r| score_results(corpus, vocab, &r.4).cer().unwrap_or(0.0));
    let rel = |base: f64, x: f64| if base > 0.0 { (base - x) / base } else { 0.0 };
    let mut rows = Vec::new();
    let mut hyps = Vec::new();
    for (cond, model, tag, gate, res) in runs {
        let rep = score_results(corpus, vocab, &res);
        let c = rep.cer().unwrap_or(0.0);
        rows.push(GridRow {
            condition: cond.clone(),
            model,
            tag,
            policy: policy_name(gate),
            substitutions: rep.substitutions,
            insertions: rep.insertions,
            deletions: rep.deletions,
            ref_len: rep.ref_len,
            cer: c,
            concatenated: res.iter().flatten().filter(|r| r.concatenated).count(),
            rel_vs_first_pass: rel(first_cer, c),
            rel_vs_rescore: plain_cer.map(|p| rel(p, c)),
        });
        hyps.push((cond, res));
    }
    Ok(ExperimentGrid {
        lm_scale,
        n: cfg.n,
        rescore_mode: cfg.rescore.mode,
        rows,
        hyps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Cost;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn cer_basics() {
        assert_eq!(cer(&w("a b c"), &w("a b c")).errors(), 0);
        let r = cer(&w("a b c"), &w("a b d"));
        assert_eq!((r.substitutions, r.insertions, r.deletions), (1, 0, 0));
        assert!((r.cer().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let r = cer(&w("a b"), &w("x a b y"));
        assert_eq!((r.substitutions, r.insertions, r.deletions), (0, 2, 0));
        let r = cer(&w("a b c"), &w("b"));
        assert_eq!((r.substitutions, r.insertions, r.deletions), (0, 0, 2));
        let r = cer::<&str>(&[], &w("a"));
        assert_eq!(r.insertions, 1);
        assert_eq!(r.cer(), None);
    }

    #[test]
    fn substitution_preferred_over_insert_delete() {
        let r = cer(&w("a"), &w("b"));
        assert_eq!((r.substitutions, r.insertions, r.deletions), (1, 0, 0));
    }

    #[test]
    fn nbest_single_path_and_budget() {
        let l = Lattice::linear(&[(4, Cost::new(1.0, 1.0)), (5, Cost::new(1.0, 1.0))], 0.0);
        let mut v = Vocabulary::with_specials();
        v.insert("a");
        v.insert("b");
        let ng = NgramModel::train_add_one(&[vec![4, 5]], &v, 2).unwrap();
        let diff = DifferenceLm::new(&ng, &ng);
        let r = oracle_rescore_nbest(&l, &diff, 1.0, 10).unwrap();
        assert_eq!(r.words, [4, 5]);
        assert!((r.cost - 4.0).abs() < 1e-9);
        let mut two = l.clone();
        two.add_arc(0, 1, 5, Cost::new(1.0, 1.0));
        assert!(matches!(
            oracle_rescore_nbest(&two, &diff, 1.0, 1),
            Err(Error::BudgetExceeded { budget: 1 })
        ));
    }
}
