//! ARPA back-off n-gram models.
//!
//! Probabilities are read as log10 and stored as natural logs. The model is
//! also a deterministic acceptor: a state is the longest known context
//! (at most `order - 1` tokens) and every (state, word) pair has exactly
//! one successor.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::error::{Error, ParseErrorKind, Result};
use crate::lm::LanguageModel;
use crate::vocab::{TokenId, Vocabulary, BOS_TOKEN, EOS_TOKEN, EPSILON, UNK_TOKEN};

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramEntry {
    /// Natural-log probability.
    pub logprob: f64,
    /// Natural-log back-off weight.
    pub backoff: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NgramStateId {
    pub history: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy)]
pub struct ArpaOptions {
    /// Reject count mismatches and missing prefix n-grams instead of
    /// warning and repairing.
    pub strict: bool,
    /// Drop n-grams mentioning words absent from the vocabulary.
    pub skip_unknown_words: bool,
}

impl Default for ArpaOptions {
    fn default() -> Self {
        ArpaOptions {
            strict: false,
            skip_unknown_words: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    entries: HashMap<Vec<TokenId>, NgramEntry>,
    bos: TokenId,
    eos: TokenId,
    unk: Option<TokenId>,
    boundary: HashSet<TokenId>,
}

impl NgramModel {
    fn empty(order: usize, vocab: &Vocabulary) -> Result<Self> {
        Ok(NgramModel {
            order,
            entries: HashMap::new(),
            bos: vocab.require(BOS_TOKEN)?,
            eos: vocab.require(EOS_TOKEN)?,
            unk: vocab.id(UNK_TOKEN),
            boundary: HashSet::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn entry(&self, ngram: &[TokenId]) -> Option<&NgramEntry> {
        self.entries.get(ngram)
    }

    pub fn num_entries(&self, k: usize) -> usize {
        self.entries.keys().filter(|key| key.len() == k).count()
    }

    pub fn has_unigram(&self, w: TokenId) -> bool {
        self.entries.contains_key(&[w][..])
    }

    /// Tokens this model assigns probability to (every unigram except `<s>`).
    pub fn predicted_tokens(&self) -> Vec<TokenId> {
        let mut v: Vec<TokenId> = self
            .entries
            .keys()
            .filter(|k| k.len() == 1 && k[0] != self.bos)
            .map(|k| k[0])
            .collect();
        v.sort_unstable();
        v
    }

    /// Explicit histories (entries of length < order), sorted.
    pub fn histories(&self) -> Vec<Vec<TokenId>> {
        let mut v: Vec<Vec<TokenId>> = self
            .entries
            .keys()
            .filter(|k| k.len() < self.order && k.last() != Some(&self.eos))
            .cloned()
            .collect();
        v.push(Vec::new());
        v.sort();
        v
    }

    /// Tokens treated as sentence boundaries when scored: cost of `</s>`
    /// followed by a reset to the `<s>` state. Used for tag words spliced
    /// between utterances in a first-pass model that never saw them.
    pub fn with_boundary_tokens(mut self, tokens: impl IntoIterator<Item = TokenId>) -> Self {
        self.boundary.extend(tokens);
        self
    }

    pub fn initial(&self) -> NgramStateId {
        self.shrink(vec![self.bos])
    }

    /// Longest suffix of `hist` (at most `order - 1` tokens) that is a known context.
    fn shrink(&self, mut hist: Vec<TokenId>) -> NgramStateId {
        let max = self.order.saturating_sub(1);
        if hist.len() > max {
            hist.drain(..hist.len() - max);
        }
        while !hist.is_empty() && !self.entries.contains_key(&hist) {
            hist.remove(0);
        }
        NgramStateId { history: hist }
    }

    /// `-ln P(w | hist)` by the back-off recursion. `w` must have a unigram.
    fn backoff_cost(&self, hist: &[TokenId], w: TokenId) -> f64 {
        let max = self.order.saturating_sub(1);
        let hist = &hist[hist.len().saturating_sub(max)..];
        let mut key = Vec::with_capacity(hist.len() + 1);
        let mut acc = 0.0;
        for start in 0..=hist.len() {
            let ctx = &hist[start..];
            key.clear();
            key.extend_from_slice(ctx);
            key.push(w);
            if let Some(e) = self.entries.get(&key) {
                return acc - e.logprob;
            }
            if let Some(e) = self.entries.get(ctx) {
                acc -= e.backoff;
            }
        }
        f64::INFINITY
    }

    fn resolve(&self, w: TokenId) -> Result<TokenId> {
        if self.has_unigram(w) {
            Ok(w)
        } else if let Some(unk) = self.unk.filter(|&u| self.has_unigram(u)) {
            Ok(unk)
        } else {
            Err(Error::UnknownTokenId(w))
        }
    }

    /// Cost `-ln P(word | state)` and the successor state.
    pub fn score_word(&self, state: &NgramStateId, word: TokenId) -> Result<(f64, NgramStateId)> {
        if word == EPSILON {
            return Err(Error::UnknownTokenId(word));
        }
        if self.boundary.contains(&word) {
            let cost = self.backoff_cost(&state.history, self.eos);
            return Ok((cost, self.initial()));
        }
        let w = self.resolve(word)?;
        let cost = self.backoff_cost(&state.history, w);
        let mut next = state.history.clone();
        next.push(w);
        Ok((cost, self.shrink(next)))
    }

    /// Sum of word costs for `<s> words </s>`.
    pub fn score_sentence(&self, words: &[TokenId]) -> Result<f64> {
        let mut state = self.initial();
        let mut total = 0.0;
        for &w in words {
            let (c, next) = self.score_word(&state, w)?;
            total += c;
            state = next;
        }
        Ok(total + self.backoff_cost(&state.history, self.eos))
    }

    fn validate_prefixes(&mut self, strict: bool, lines: &HashMap<Vec<TokenId>, usize>) -> Result<()> {
        let mut missing: HashSet<Vec<TokenId>> = HashSet::new();
        let mut stack: Vec<Vec<TokenId>> = self.entries.keys().filter(|k| k.len() > 1).cloned().collect();
        while let Some(key) = stack.pop() {
            let prefix = key[..key.len() - 1].to_vec();
            if !self.entries.contains_key(&prefix) && !missing.contains(&prefix) {
                if strict {
                    return Err(Error::MissingPrefix {
                        line: lines.get(&key).copied().unwrap_or(0),
                    });
                }
                if prefix.len() > 1 {
                    stack.push(prefix.clone());
                }
                missing.insert(prefix);
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        log::warn!("synthesizing {} missing prefix n-grams", missing.len());
        let mut missing: Vec<Vec<TokenId>> = missing.into_iter().collect();
        missing.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        for key in missing {
            let (hist, w) = key.split_at(key.len() - 1);
            let cost = if self.has_unigram(w[0]) {
                self.backoff_cost(hist, w[0])
            } else {
                return Err(Error::MissingPrefix {
                    line: lines.get(&key).copied().unwrap_or(0),
                });
            };
            self.entries.insert(
                key,
                NgramEntry {
                    logprob: -cost,
                    backoff: 0.0,
                },
            );
        }
        Ok(())
    }

    pub fn load_arpa<R: BufRead>(reader: R, vocab: &Vocabulary, opts: ArpaOptions) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            Preamble,
            Data,
            Grams(usize),
            End,
        }
        let mut section = Section::Preamble;
        let mut declared: BTreeMap<usize, usize> = BTreeMap::new();
        let mut parsed: BTreeMap<usize, usize> = BTreeMap::new();
        let mut entries = HashMap::new();
        let mut lines_of = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if t == "\\data\\" {
                section = Section::Data;
                continue;
            }
            if t == "\\end\\" {
                section = Section::End;
                break;
            }
            if let Some(rest) = t.strip_prefix('\\').and_then(|r| r.strip_suffix("-grams:")) {
                let k: usize = rest
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad section header {t}")))?;
                if k == 0 || !declared.contains_key(&k) {
                    return Err(Error::parse(lineno, format!("undeclared section {t}")));
                }
                section = Section::Grams(k);
                continue;
            }
            match section {
                Section::Preamble => {}
                Section::Data => {
                    let spec = t
                        .strip_prefix("ngram ")
                        .and_then(|r| r.split_once('='))
                        .ok_or_else(|| Error::parse(lineno, format!("expected ngram count, got {t}")))?;
                    let k: usize = spec.0.trim().parse().map_err(|_| Error::parse(lineno, "bad order"))?;
                    let c: usize = spec.1.trim().parse().map_err(|_| Error::parse(lineno, "bad count"))?;
                    declared.insert(k, c);
                }
                Section::Grams(k) => {
                    let fields: Vec<&str> = t.split_whitespace().collect();
                    if fields.len() != k + 1 && fields.len() != k + 2 {
                        return Err(Error::parse(lineno, format!("expected {} or {} fields", k + 1, k + 2)));
                    }
                    let lp: f64 = fields[0]
                        .parse()
                        .map_err(|_| Error::parse(lineno, "bad log-probability"))?;
                    let bo: f64 = match fields.get(k + 1) {
                        Some(f) => f.parse().map_err(|_| Error::parse(lineno, "bad back-off weight"))?,
                        None => 0.0,
                    };
                    let mut key = Vec::with_capacity(k);
                    let mut skip = false;
                    for w in &fields[1..=k] {
                        match vocab.id(w) {
                            Some(id) => key.push(id),
                            None if opts.skip_unknown_words => {
                                skip = true;
                                break;
                            }
                            None => return Err(Error::UnknownToken(format!("{w} (line {lineno})"))),
                        }
                    }
                    *parsed.entry(k).or_insert(0) += 1;
                    if skip {
                        continue;
                    }
                    lines_of.insert(key.clone(), lineno);
                    entries.insert(
                        key,
                        NgramEntry {
                            logprob: lp * LN_10,
                            backoff: bo * LN_10,
                        },
                    );
                }
                Section::End => unreachable!(),
            }
        }
        if section != Section::End {
            return Err(Error::Parse {
                line: 0,
                kind: ParseErrorKind::MissingEnd,
            });
        }
        for (&k, &d) in &declared {
            let p = parsed.get(&k).copied().unwrap_or(0);
            if p != d {
                if opts.strict {
                    return Err(Error::CountMismatch {
                        order: k,
                        declared: d,
                        parsed: p,
                    });
                }
                log::warn!("ARPA declares {d} {k}-grams but contains {p}");
            }
        }
        let order = declared
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&k, _)| k)
            .max()
            .ok_or_else(|| Error::parse(0, "no n-gram counts declared"))?;
        let mut model = NgramModel::empty(order, vocab)?;
        model.entries = entries;
        model.validate_prefixes(opts.strict, &lines_of)?;
        Ok(model)
    }

    pub fn write_arpa<W: Write>(&self, mut w: W, vocab: &Vocabulary) -> Result<()> {
        let mut by_order: Vec<Vec<(&Vec<TokenId>, &NgramEntry)>> = vec![Vec::new(); self.order + 1];
        for (k, e) in &self.entries {
            by_order[k.len()].push((k, e));
        }
        writeln!(w, "\\data\\")?;
        for (k, grams) in by_order.iter().enumerate().skip(1) {
            writeln!(w, "ngram {}={}", k, grams.len())?;
        }
        for (k, grams) in by_order.iter_mut().enumerate().skip(1) {
            grams.sort_by(|a, b| a.0.cmp(b.0));
            writeln!(w)?;
            writeln!(w, "\\{k}-grams:")?;
            for (key, e) in grams.iter() {
                let words: Vec<&str> = key
                    .iter()
                    .map(|&id| vocab.token(id).ok_or(Error::UnknownTokenId(id)))
                    .collect::<Result<_>>()?;
                let lp = e.logprob / LN_10;
                if k < self.order {
                    writeln!(w, "{}\t{}\t{}", lp, words.join(" "), e.backoff / LN_10)?;
                } else {
                    writeln!(w, "{}\t{}", lp, words.join(" "))?;
                }
            }
        }
        writeln!(w)?;
        writeln!(w, "\\end\\")?;
        Ok(())
    }

    /// Add-one smoothed back-off model for building small fixtures. Every
    /// vocabulary token except `<eps>` and `<s>` is predicted; seen n-grams
    /// get `(c + 1) / (c(h) + V)` and the leftover mass backs off.
    pub fn train_add_one(sentences: &[Vec<TokenId>], vocab: &Vocabulary, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("n-gram order must be >= 1".into()));
        }
        let mut model = NgramModel::empty(order, vocab)?;
        let predicted: Vec<TokenId> = (0..vocab.len() as TokenId)
            .filter(|&t| t != EPSILON && t != model.bos)
            .collect();
        let v = predicted.len() as f64;
        let mut counts: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
        for s in sentences {
            let mut toks = Vec::with_capacity(s.len() + 2);
            toks.push(model.bos);
            toks.extend_from_slice(s);
            toks.push(model.eos);
            for i in 1..toks.len() {
                for k in 1..=order.min(i + 1) {
                    *counts.entry(toks[i + 1 - k..=i].to_vec()).or_insert(0.0) += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().filter(|(k, _)| k.len() == 1).map(|(_, c)| c).sum();
        for &w in &predicted {
            let c = counts.get(&vec![w]).copied().unwrap_or(0.0);
            model.entries.insert(
                vec![w],
                NgramEntry {
                    logprob: ((c + 1.0) / (total + v)).ln(),
                    backoff: 0.0,
                },
            );
        }
        model.entries.insert(
            vec![model.bos],
            NgramEntry {
                logprob: -99.0 * LN_10,
                backoff: 0.0,
            },
        );
        for k in 2..=order {
            let mut by_ctx: BTreeMap<Vec<TokenId>, Vec<(TokenId, f64)>> = BTreeMap::new();
            for (key, &c) in counts.iter().filter(|(key, _)| key.len() == k) {
                by_ctx
                    .entry(key[..k - 1].to_vec())
                    .or_default()
                    .push((key[k - 1], c));
            }
            for (ctx, seen) in by_ctx {
                let ctx_total: f64 = seen.iter().map(|(_, c)| c).sum();
                let mut seen_mass = 0.0;
                let mut lower_mass = 0.0;
                for &(w, c) in &seen {
                    let p = (c + 1.0) / (ctx_total + v);
                    seen_mass += p;
                    lower_mass += (-model.backoff_cost(&ctx[1..], w)).exp();
                    let mut key = ctx.clone();
                    key.push(w);
                    model.entries.insert(
                        key,
                        NgramEntry {
                            logprob: p.ln(),
                            backoff: 0.0,
                        },
                    );
                }
                let left = 1.0 - seen_mass;
                let denom = 1.0 - lower_mass;
                let backoff = if left > 1e-15 && denom > 1e-15 {
                    (left / denom).ln()
                } else {
                    0.0
                };
                model
                    .entries
                    .get_mut(&ctx)
                    .expect("context of a counted n-gram is counted")
                    .backoff = backoff;
            }
        }
        Ok(model)
    }
}

impl LanguageModel for NgramModel {
    type State = NgramStateId;

    fn initial_state(&self) -> NgramStateId {
        self.initial()
    }

    fn score(&self, state: &NgramStateId, word: TokenId) -> Result<(f64, NgramStateId)> {
        self.score_word(state, word)
    }

    fn final_cost(&self, state: &NgramStateId) -> Result<f64> {
        Ok(self.backoff_cost(&state.history, self.eos))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::with_specials();
        for w in ["a", "b", "c"] {
            v.insert(w);
        }
        v
    }

    const UNIGRAM: &str = "\\data\\
ngram 1=5

\\1-grams:
-1.0\t</s>
-99\t<s>
-0.5\ta
-0.7\tb
-0.9\tc

\\end\\
";

    const BIGRAM: &str = "\\data\\
ngram 1=6
ngram 2=3

\\1-grams:
-0.8\t</s>
-99\t<s>\t-0.30
-0.6\ta\t-0.20
-0.7\tb\t-0.10
-0.9\tc
-1.5\t<unk>

\\2-grams:
-0.2\t<s> a
-0.3\ta b
-0.4\tb </s>

\\end\\
";

    #[test]
    fn unigram_order_and_costs() {
        let v = vocab();
        let m = NgramModel::load_arpa(UNIGRAM.as_bytes(), &v, ArpaOptions::default()).unwrap();
        assert_eq!(m.order(), 1);
        let a = v.id("a").unwrap();
        let (c, next) = m.score_word(&NgramStateId { history: vec![a, a] }, a).unwrap();
        assert!((c - 0.5 * LN_10).abs() < 1e-12);
        assert!(next.history.is_empty());
    }

    #[test]
    fn missing_end_is_parse_error() {
        let v = vocab();
        let src = UNIGRAM.replace("\\end\\", "");
        let err = NgramModel::load_arpa(src.as_bytes(), &v, ArpaOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                kind: ParseErrorKind::MissingEnd,
                ..
            }
        ));
    }

    #[test]
    fn explicit_bigram_and_backoff() {
        let v = vocab();
        let m = NgramModel::load_arpa(BIGRAM.as_bytes(), &v, ArpaOptions::default()).unwrap();
        let (a, b, c) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        let sa = NgramStateId { history: vec![a] };
        // explicit entry, read straight from the file
        let (cost, next) = m.score_word(&sa, b).unwrap();
        assert!((cost - 0.3 * LN_10).abs() < 1e-12);
        assert_eq!(next.history, vec![b]);
        // backoff: bo(a) + p(c)
        let (cost, next) = m.score_word(&sa, c).unwrap();
        assert!((cost - (0.2 + 0.9) * LN_10).abs() < 1e-12);
        // c has no backoff entry of its own but is a unigram, so it is a known context
        assert_eq!(next.history, vec![c]);
        // unknown words map to <unk>
        let mut v2 = v.clone();
        let z = v2.insert("z");
        let (cost, _) = m.score_word(&sa, z).unwrap();
        assert!((cost - (0.2 + 1.5) * LN_10).abs() < 1e-12);
    }

    #[test]
    fn sentence_scores() {
        let v = vocab();
        let m = NgramModel::load_arpa(BIGRAM.as_bytes(), &v, ArpaOptions::default()).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        // empty sentence: P(</s> | <s>) backs off: bo(<s>) + p(</s>)
        let empty = m.score_sentence(&[]).unwrap();
        assert!((empty - (0.3 + 0.8) * LN_10).abs() < 1e-12);
        // "a b": p(a|<s>) + p(b|a) + p(</s>|b), all explicit
        let ab = m.score_sentence(&[a, b]).unwrap();
        assert!((ab - (0.2 + 0.3 + 0.4) * LN_10).abs() < 1e-12);
    }

    #[test]
    fn unknown_without_unk_fails() {
        let v = vocab();
        let m = NgramModel::load_arpa(UNIGRAM.as_bytes(), &v, ArpaOptions::default()).unwrap();
        let mut v2 = v.clone();
        let z = v2.insert("z");
        // the vocabulary has <unk> but the model does not
        assert!(matches!(m.score_word(&m.initial(), z), Err(Error::UnknownTokenId(_))));
    }

    #[test]
    fn count_mismatch_strictness() {
        let v = vocab();
        let src = UNIGRAM.replace("ngram 1=5", "ngram 1=6");
        assert!(NgramModel::load_arpa(src.as_bytes(), &v, ArpaOptions::default()).is_ok());
        let strict = ArpaOptions {
            strict: true,
            ..ArpaOptions::default()
        };
        assert!(matches!(
            NgramModel::load_arpa(src.as_bytes(), &v, strict),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn missing_prefix_repair() {
        let v = vocab();
        let src = BIGRAM
            .replace("ngram 2=3", "ngram 2=1\nngram 3=1")
            .replace("-0.2\t<s> a\n-0.3\ta b\n-0.4\tb </s>\n", "-0.3\ta b\n\n\\3-grams:\n-0.1\tc a b\n");
        let strict = ArpaOptions {
            strict: true,
            ..ArpaOptions::default()
        };
        assert!(matches!(
            NgramModel::load_arpa(src.as_bytes(), &v, strict),
            Err(Error::MissingPrefix { .. })
        ));
        let m = NgramModel::load_arpa(src.as_bytes(), &v, ArpaOptions::default()).unwrap();
        let (a, c) = (v.id("a").unwrap(), v.id("c").unwrap());
        let e = m.entry(&[c, a]).expect("synthesized");
        // back-off value: p(a) since c has no backoff weight
        assert!((e.logprob + 0.6 * LN_10).abs() < 1e-12);
        assert_eq!(e.backoff, 0.0);
    }

    #[test]
    fn boundary_tokens_score_as_sentence_end() {
        let mut v = vocab();
        let sp = v.insert("SP");
        let m = NgramModel::load_arpa(BIGRAM.as_bytes(), &v, ArpaOptions::default())
            .unwrap()
            .with_boundary_tokens([sp]);
        let b = v.id("b").unwrap();
        let (cost, next) = m.score_word(&NgramStateId { history: vec![b] }, sp).unwrap();
        assert!((cost - 0.4 * LN_10).abs() < 1e-12);
        assert_eq!(next, m.initial());
    }

    #[test]
    fn add_one_round_trips_through_arpa() {
        let v = vocab();
        let (a, b, c) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        let m = NgramModel::train_add_one(&[vec![a, b], vec![a, c, b]], &v, 3).unwrap();
        let mut buf = Vec::new();
        m.write_arpa(&mut buf, &v).unwrap();
        let strict = ArpaOptions {
            strict: true,
            ..ArpaOptions::default()
        };
        let back = NgramModel::load_arpa(&buf[..], &v, strict).unwrap();
        for s in [vec![a], vec![b, c, a], vec![]] {
            let x = m.score_sentence(&s).unwrap();
            let y = back.score_sentence(&s).unwrap();
            assert!((x - y).abs() < 1e-9);
        }
    }
}
