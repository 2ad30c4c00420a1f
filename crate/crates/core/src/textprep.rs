//! Dialogue corpora, tagged training-text construction and vocabularies.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const SP_TAG: &str = "SP";
pub const SID_PREFIX: &str = "SID_";
pub const INT_PREFIX: &str = "INT_";

/// Junction marker placed between adjacent utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagKind {
    /// Plain joining, no token inserted.
    None,
    Sp,
    Sid,
    Int,
}

impl std::str::FromStr for TagKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(TagKind::None),
            "sp" => Ok(TagKind::Sp),
            "sid" => Ok(TagKind::Sid),
            "int" => Ok(TagKind::Int),
            _ => Err(Error::Config(format!("unknown tag kind {s:?} (none, sp, sid, int)"))),
        }
    }
}

impl std::fmt::Display for TagKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TagKind::None => "none",
            TagKind::Sp => "sp",
            TagKind::Sid => "sid",
            TagKind::Int => "int",
        })
    }
}

/// Which utterance of a junction supplies the speaker for SID tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SidSide {
    #[default]
    Earlier,
    Later,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub intent: Option<String>,
    pub words: Vec<String>,
    pub lattice_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn utterance_id(&self, i: usize) -> String {
        format!("{}#{}", self.id, i)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueCorpus {
    pub dialogues: Vec<Dialogue>,
}

/// One line of a conversation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub conv_id: String,
    pub utt_index: usize,
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    pub ref_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_path: Option<String>,
}

impl DialogueCorpus {
    /// Reads JSON Lines. Dialogues keep first-appearance order; utterances
    /// are ordered by `utt_index`.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut dialogues: Vec<(Dialogue, Vec<usize>)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: UtteranceRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, format!("conversation record: {e}")))?;
            let pos = match dialogues.iter().position(|(d, _)| d.id == rec.conv_id) {
                Some(p) => p,
                None => {
                    dialogues.push((
                        Dialogue {
                            id: rec.conv_id.clone(),
                            utterances: Vec::new(),
                        },
                        Vec::new(),
                    ));
                    dialogues.len() - 1
                }
            };
            let (d, idx) = &mut dialogues[pos];
            if idx.contains(&rec.utt_index) {
                return Err(Error::parse(
                    i + 1,
                    format!("duplicate utterance {} in {}", rec.utt_index, rec.conv_id),
                ));
            }
            idx.push(rec.utt_index);
            d.utterances.push(Utterance {
                speaker: rec.speaker,
                intent: rec.intent,
                words: rec.ref_text.split_whitespace().map(str::to_string).collect(),
                lattice_path: rec.lattice_path,
            });
        }
        let dialogues = dialogues
            .into_iter()
            .map(|(mut d, idx)| {
                let mut order: Vec<usize> = (0..idx.len()).collect();
                order.sort_by_key(|&k| idx[k]);
                d.utterances = order.iter().map(|&k| d.utterances[k].clone()).collect();
                d
            })
            .collect();
        Ok(DialogueCorpus { dialogues })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for d in &self.dialogues {
            for (i, u) in d.utterances.iter().enumerate() {
                let rec = UtteranceRecord {
                    conv_id: d.id.clone(),
                    utt_index: i,
                    speaker: u.speaker.clone(),
                    intent: u.intent.clone(),
                    ref_text: u.words.join(" "),
                    lattice_path: u.lattice_path.clone(),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn num_utterances(&self) -> usize {
        self.dialogues.iter().map(|d| d.utterances.len()).sum()
    }

    /// Every utterance as its own sequence.
    pub fn sentences(&self) -> Vec<Vec<String>> {
        self.dialogues
            .iter()
            .flat_map(|d| d.utterances.iter().map(|u| u.words.clone()))
            .collect()
    }
}

/// Tag token for the junction `earlier | later`, or `None` for plain joining.
pub fn junction_tag(kind: TagKind, earlier: &Utterance, later: &Utterance, side: SidSide, id: &str) -> Result<Option<String>> {
    Ok(match kind {
        TagKind::None => None,
        TagKind::Sp => Some(SP_TAG.to_string()),
        TagKind::Sid => {
            let u = match side {
                SidSide::Earlier => earlier,
                SidSide::Later => later,
            };
            Some(format!("{SID_PREFIX}{}", u.speaker))
        }
        TagKind::Int => {
            let intent = earlier
                .intent
                .as_deref()
                .ok_or_else(|| Error::MissingIntent(id.to_string()))?;
            Some(format!("{INT_PREFIX}{intent}"))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// A window starting at every utterance, wrapping past the end.
    #[default]
    Cyclic,
    /// Disjoint consecutive blocks; the last may be shorter.
    Blocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcatOptions {
    pub k: usize,
    pub tag: TagKind,
    pub mode: WindowMode,
    pub sid_side: SidSide,
}

impl Default for ConcatOptions {
    fn default() -> Self {
        ConcatOptions {
            k: 4,
            tag: TagKind::Sp,
            mode: WindowMode::Cyclic,
            sid_side: SidSide::Earlier,
        }
    }
}

/// Utterance indices of each window for a dialogue of `m` utterances.
pub fn windows(m: usize, k: usize, mode: WindowMode) -> Vec<Vec<usize>> {
    if m == 0 {
        return Vec::new();
    }
    match mode {
        WindowMode::Cyclic => (0..m).map(|i| (0..k).map(|j| (i + j) % m).collect()).collect(),
        WindowMode::Blocks => (0..m)
            .step_by(k)
            .map(|i| (i..(i + k).min(m)).collect())
            .collect(),
    }
}

/// Training sequences: windows of `k` utterances joined by junction tags.
pub fn build_concat_corpus(corpus: &DialogueCorpus, opts: &ConcatOptions) -> Result<Vec<Vec<String>>> {
    if opts.k == 0 {
        return Err(Error::Config("concatenation count k must be >= 1".into()));
    }
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        for win in windows(d.utterances.len(), opts.k, opts.mode) {
            let mut seq = Vec::new();
            for (j, &ui) in win.iter().enumerate() {
                if j > 0 {
                    let prev = win[j - 1];
                    let tag = junction_tag(
                        opts.tag,
                        &d.utterances[prev],
                        &d.utterances[ui],
                        opts.sid_side,
                        &d.utterance_id(prev),
                    )?;
                    seq.extend(tag);
                }
                seq.extend(d.utterances[ui].words.iter().cloned());
            }
            out.push(seq);
        }
    }
    Ok(out)
}

/// All tag tokens the corpus can produce for `kinds`, sorted. INT tags are
/// listed only for intents that occur.
pub fn tag_tokens(corpus: &DialogueCorpus, kinds: &[TagKind]) -> Vec<String> {
    let mut tags = BTreeSet::new();
    for kind in kinds {
        match kind {
            TagKind::None => {}
            TagKind::Sp => {
                tags.insert(SP_TAG.to_string());
            }
            TagKind::Sid => {
                for d in &corpus.dialogues {
                    for u in &d.utterances {
                        tags.insert(format!("{SID_PREFIX}{}", u.speaker));
                    }
                }
            }
            TagKind::Int => {
                for d in &corpus.dialogues {
                    for u in &d.utterances {
                        if let Some(i) = &u.intent {
                            tags.insert(format!("{INT_PREFIX}{i}"));
                        }
                    }
                }
            }
        }
    }
    tags.into_iter().collect()
}

/// `<eps>`, `<s>`, `</s>`, `<unk>`, then `tags` in the given order, then the
/// remaining words sorted.
pub fn build_vocab<'a, I>(sentences: I, tags: &[String]) -> Vocabulary
where
    I: IntoIterator<Item = &'a Vec<String>>,
{
    let mut v = Vocabulary::with_specials();
    for t in tags {
        v.insert(t);
    }
    let words: BTreeSet<&str> = sentences.into_iter().flatten().map(String::as_str).collect();
    for w in words {
        v.insert(w);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(speaker: &str, words: &str) -> Utterance {
        Utterance {
            speaker: speaker.into(),
            intent: None,
            words: words.split_whitespace().map(str::to_string).collect(),
            lattice_path: None,
        }
    }

    fn corpus(utts: Vec<Utterance>) -> DialogueCorpus {
        DialogueCorpus {
            dialogues: vec![Dialogue {
                id: "d0".into(),
                utterances: utts,
            }],
        }
    }

    fn join(seqs: &[Vec<String>]) -> Vec<String> {
        seqs.iter().map(|s| s.join(" ")).collect()
    }

    #[test]
    fn k_one_is_identity() {
        let c = corpus(vec![utt("A", "x y"), utt("B", "z")]);
        let opts = ConcatOptions {
            k: 1,
            ..ConcatOptions::default()
        };
        assert_eq!(build_concat_corpus(&c, &opts).unwrap(), c.sentences());
    }

    #[test]
    fn two_utterances_with_speaker_tags() {
        let c = corpus(vec![utt("A", "u1"), utt("B", "u2")]);
        let opts = ConcatOptions {
            k: 2,
            tag: TagKind::Sid,
            ..ConcatOptions::default()
        };
        let out = build_concat_corpus(&c, &opts).unwrap();
        assert_eq!(join(&out), ["u1 SID_A u2", "u2 SID_B u1"]);
    }

    #[test]
    fn windows_wrap_when_longer_than_dialogue() {
        let c = corpus(vec![utt("A", "a"), utt("B", "b"), utt("A", "c")]);
        let out = build_concat_corpus(&c, &ConcatOptions::default()).unwrap();
        assert_eq!(join(&out), ["a SP b SP c SP a", "b SP c SP a SP b", "c SP a SP b SP c"]);
    }

    #[test]
    fn block_mode() {
        let c = corpus(vec![utt("A", "a"), utt("B", "b"), utt("A", "c")]);
        let opts = ConcatOptions {
            k: 2,
            mode: WindowMode::Blocks,
            tag: TagKind::None,
            ..ConcatOptions::default()
        };
        assert_eq!(join(&build_concat_corpus(&c, &opts).unwrap()), ["a b", "c"]);
    }

    #[test]
    fn intent_tags_require_intents() {
        let mut a = utt("A", "a");
        a.intent = Some("ask".into());
        let b = utt("B", "b");
        let opts = ConcatOptions {
            k: 2,
            tag: TagKind::Int,
            ..ConcatOptions::default()
        };
        let err = build_concat_corpus(&corpus(vec![a, b]), &opts).unwrap_err();
        assert!(matches!(err, Error::MissingIntent(ref id) if id == "d0#1"));
    }

    #[test]
    fn vocab_layout() {
        let c = corpus(vec![utt("A", "b a"), utt("B", "a")]);
        let tags = tag_tokens(&c, &[TagKind::Sid, TagKind::Sp]);
        assert_eq!(tags, ["SID_A", "SID_B", "SP"]);
        let v = build_vocab(&c.sentences(), &tags);
        assert_eq!(v.tokens(), ["<eps>", "<s>", "</s>", "<unk>", "SID_A", "SID_B", "SP", "a", "b"]);
        let empty = build_vocab(&Vec::new(), &[]);
        assert_eq!(empty.len(), 4);
    }

    #[test]
    fn jsonl_round_trip_sorts_by_index() {
        let src = r#"{"conv_id":"c1","utt_index":1,"speaker":"B","ref_text":"y"}
{"conv_id":"c1","utt_index":0,"speaker":"A","intent":"ask","ref_text":"x z"}
{"conv_id":"c2","utt_index":0,"speaker":"A","ref_text":"w"}
"#;
        let c = DialogueCorpus::read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(c.dialogues.len(), 2);
        assert_eq!(c.dialogues[0].utterances[0].words, ["x", "z"]);
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = DialogueCorpus::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, c);
        assert!(DialogueCorpus::read_jsonl(&b"{bad"[..]).is_err());
    }
}
