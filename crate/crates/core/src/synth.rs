//! Seeded synthetic conversations with first-pass lattices.
//!
//! Each dialogue stays on one topic. Topics come in pairs whose named
//! entities are near-homophone twins ("huixin_garden" / "huixing_garden").
//! After an utterance that names an entity, the next utterance is, with
//! probability `entity_repeat_prob`, a short confirmation made of generic
//! words plus the same entity, so only the previous utterance tells the
//! entity apart from its twin. Lattices always offer the twin as an
//! acoustically close alternative.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Cost, Lattice};
use crate::lm::LanguageModel;
use crate::ngram::NgramModel;
use crate::textprep::{build_vocab, Dialogue, DialogueCorpus, Utterance, INT_PREFIX, SID_PREFIX, SP_TAG};
use crate::vocab::{TokenId, Vocabulary, BOS_TOKEN};

const GENERIC: [&str; 20] = [
    "ok", "yes", "the", "please", "is", "at", "it", "right", "so", "and", "we", "go", "to", "that", "there", "near",
    "one", "can", "you", "sure",
];
const SYLLABLES: [&str; 24] = [
    "ba", "de", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu", "va", "ze", "hu", "xi", "jia", "yuan", "fa", "gu",
    "tai", "wen", "shan", "bo", "le", "qi",
];
/// Syllable pairs that differ by one sound.
const CONFUSABLE: [(&str, &str); 10] = [
    ("xin", "xing"),
    ("ba", "pa"),
    ("de", "te"),
    ("gu", "ku"),
    ("zhi", "chi"),
    ("lan", "nan"),
    ("hui", "fei"),
    ("min", "ming"),
    ("shen", "sheng"),
    ("zao", "cao"),
];
const PLACES: [&str; 6] = ["garden", "road", "plaza", "tower", "park", "bridge"];
pub const SPEAKERS: [&str; 2] = ["A", "B"];
pub const INTENTS: [&str; 3] = ["chat", "confirm", "inform"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Must be even: topics are paired.
    pub num_topics: usize,
    pub topic_words: usize,
    pub entities_per_topic: usize,
    pub train_dialogues: usize,
    pub dev_dialogues: usize,
    pub test_dialogues: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub entity_prob: f64,
    pub entity_repeat_prob: f64,
    /// Chance that a non-entity position gets confusable alternatives.
    pub confusion_prob: f64,
    /// Acoustic cost of a confusion minus that of the reference word.
    pub confusion_margin: (f64, f64),
    /// Acoustic cost of the entity twin minus that of the entity.
    pub entity_margin: (f64, f64),
    pub acoustic_base: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_topics: 8,
            topic_words: 8,
            entities_per_topic: 3,
            train_dialogues: 300,
            dev_dialogues: 40,
            test_dialogues: 60,
            min_utterances: 6,
            max_utterances: 10,
            entity_prob: 0.8,
            entity_repeat_prob: 0.6,
            confusion_prob: 0.3,
            confusion_margin: (-0.3, 3.0),
            entity_margin: (-1.5, 1.0),
            acoustic_base: (1.0, 3.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_topics < 2 || self.num_topics % 2 != 0 {
            return bad("num_topics must be even and >= 2");
        }
        if self.num_topics / 2 * self.entities_per_topic > CONFUSABLE.len() * PLACES.len() * SYLLABLES.len() {
            return bad("too many entities requested");
        }
        if self.entities_per_topic < 2 {
            return bad("entities_per_topic must be >= 2");
        }
        if self.topic_words == 0 || self.num_topics * self.topic_words > SYLLABLES.len() * SYLLABLES.len() / 2 {
            return bad("topic_words out of range");
        }
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return bad("need 1 <= min_utterances <= max_utterances");
        }
        for (name, p) in [
            ("entity_prob", self.entity_prob),
            ("entity_repeat_prob", self.entity_repeat_prob),
            ("confusion_prob", self.confusion_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        for (name, (lo, hi)) in [
            ("confusion_margin", self.confusion_margin),
            ("entity_margin", self.entity_margin),
            ("acoustic_base", self.acoustic_base),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite range lo <= hi")));
            }
        }
        if self.acoustic_base.0 < 0.0 {
            return bad("acoustic_base must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Topic {
    pub words: Vec<String>,
    pub entities: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub vocab: Vocabulary,
    pub topics: Vec<Topic>,
    /// Entity and its twin from the paired topic.
    pub twins: Vec<(String, String)>,
    pub train: DialogueCorpus,
    pub dev: DialogueCorpus,
    pub test: DialogueCorpus,
    /// Add-one bigram trained on `train`; lattice graph costs come from it.
    pub first_pass: NgramModel,
    pub dev_lattices: Vec<Vec<Lattice>>,
    pub test_lattices: Vec<Vec<Lattice>>,
}

impl SynthData {
    pub fn twin_of(&self, entity: &str) -> Option<&str> {
        self.twins.iter().find_map(|(a, b)| {
            if a == entity {
                Some(b.as_str())
            } else if b == entity {
                Some(a.as_str())
            } else {
                None
            }
        })
    }

    pub fn is_entity(&self, w: &str) -> bool {
        self.twin_of(w).is_some()
    }
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn inventory(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (Vec<Topic>, Vec<(String, String)>) {
    let mut used: BTreeSet<String> = GENERIC.iter().map(|s| s.to_string()).collect();
    let mut topics: Vec<Topic> = (0..cfg.num_topics)
        .map(|_| {
            let mut words = Vec::new();
            while words.len() < cfg.topic_words {
                let w = format!(
                    "{}{}",
                    SYLLABLES.choose(rng).unwrap(),
                    SYLLABLES.choose(rng).unwrap()
                );
                if used.insert(w.clone()) {
                    words.push(w);
                }
            }
            Topic {
                words,
                entities: Vec::new(),
            }
        })
        .collect();
    let mut twins = Vec::new();
    for pair in 0..cfg.num_topics / 2 {
        for _ in 0..cfg.entities_per_topic {
            loop {
                let head = SYLLABLES.choose(rng).unwrap();
                let (x, y) = CONFUSABLE.choose(rng).unwrap();
                let place = PLACES.choose(rng).unwrap();
                let a = format!("{head}{x}_{place}");
                let b = format!("{head}{y}_{place}");
                if !used.contains(&a) && !used.contains(&b) {
                    used.insert(a.clone());
                    used.insert(b.clone());
                    topics[2 * pair].entities.push(a.clone());
                    topics[2 * pair + 1].entities.push(b.clone());
                    twins.push((a, b));
                    break;
                }
            }
        }
    }
    (topics, twins)
}

fn generic(rng: &mut ChaCha8Rng) -> String {
    GENERIC.choose(rng).unwrap().to_string()
}

fn dialogue(rng: &mut ChaCha8Rng, cfg: &SynthConfig, topics: &[Topic], id: String) -> Dialogue {
    let topic = &topics[rng.gen_range(0..topics.len())];
    let n = rng.gen_range(cfg.min_utterances..=cfg.max_utterances);
    let mut utterances = Vec::with_capacity(n);
    let mut prev_entity: Option<String> = None;
    for i in 0..n {
        let speaker = SPEAKERS[i % 2].to_string();
        let confirm = prev_entity.is_some() && rng.gen_bool(cfg.entity_repeat_prob);
        let (words, intent, entity) = if confirm {
            let e = prev_entity.clone().unwrap();
            let mut w: Vec<String> = (0..rng.gen_range(1..=2)).map(|_| generic(rng)).collect();
            w.push(e.clone());
            w.extend((0..rng.gen_range(0..=2)).map(|_| generic(rng)));
            (w, "confirm", Some(e))
        } else {
            let slots = rng.gen_range(3..=6);
            let mut w: Vec<String> = (0..slots)
                .map(|_| {
                    if rng.gen_bool(0.6) {
                        topic.words.choose(rng).unwrap().clone()
                    } else {
                        generic(rng)
                    }
                })
                .collect();
            if rng.gen_bool(cfg.entity_prob) {
                let choices: Vec<&String> = topic
                    .entities
                    .iter()
                    .filter(|e| Some(*e) != prev_entity.as_ref())
                    .collect();
                let e = (*choices.choose(rng).unwrap()).clone();
                let pos = rng.gen_range(1..=w.len());
                w.insert(pos, e.clone());
                (w, "inform", Some(e))
            } else {
                (w, "chat", None)
            }
        };
        prev_entity = entity;
        utterances.push(Utterance {
            speaker,
            intent: Some(intent.to_string()),
            words,
            lattice_path: None,
        });
    }
    Dialogue { id, utterances }
}

/// Sausage lattice whose states remember the previous word, so that graph
/// costs equal the first-pass bigram's path cost exactly.
fn utterance_lattice(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    words: &[TokenId],
    twin: impl Fn(TokenId) -> Option<TokenId>,
    pool: &[TokenId],
    first_pass: &NgramModel,
) -> Result<Lattice> {
    // alternatives per position: (word, acoustic)
    let mut positions: Vec<Vec<(TokenId, f64)>> = Vec::with_capacity(words.len());
    for &w in words {
        let base = range(rng, cfg.acoustic_base);
        let mut alts = vec![(w, base)];
        if let Some(t) = twin(w) {
            alts.push((t, (base + range(rng, cfg.entity_margin)).max(0.0)));
        } else if rng.gen_bool(cfg.confusion_prob) {
            for _ in 0..rng.gen_range(1..=2) {
                let c = *pool.choose(rng).unwrap();
                if alts.iter().all(|&(x, _)| x != c) {
                    alts.push((c, (base + range(rng, cfg.confusion_margin)).max(0.0)));
                }
            }
        }
        alts.shuffle(rng);
        positions.push(alts);
    }
    let mut lat = Lattice::with_states(1);
    lat.set_start(0);
    // states of the current layer: (previous word, state id, lm state)
    let init = first_pass.initial_state();
    let mut layer = vec![(first_pass.bos(), 0usize, init)];
    for alts in &positions {
        let base = lat.num_states();
        let mut next = Vec::with_capacity(alts.len());
        for (k, &(w, _)) in alts.iter().enumerate() {
            let (_, st) = first_pass.score(&layer[0].2, w)?;
            next.push((w, base + k, st));
        }
        for (_, src, st) in &layer {
            for (k, &(w, ac)) in alts.iter().enumerate() {
                let (g, _) = first_pass.score(st, w)?;
                lat.add_arc(*src, next[k].1, w, Cost::new(g, ac));
            }
        }
        layer = next;
    }
    for (_, s, st) in &layer {
        lat.set_final(*s, first_pass.final_cost(st)?);
    }
    Ok(lat)
}

fn corpus(rng: &mut ChaCha8Rng, cfg: &SynthConfig, topics: &[Topic], prefix: &str, n: usize) -> DialogueCorpus {
    DialogueCorpus {
        dialogues: (0..n)
            .map(|i| dialogue(rng, cfg, topics, format!("{prefix}{i:04}")))
            .collect(),
    }
}

pub fn generate_synthetic_conversations(seed: u64, cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (topics, twins) = inventory(&mut rng, cfg);
    let train = corpus(&mut rng, cfg, &topics, "train", cfg.train_dialogues);
    let dev = corpus(&mut rng, cfg, &topics, "dev", cfg.dev_dialogues);
    let test = corpus(&mut rng, cfg, &topics, "test", cfg.test_dialogues);

    let mut all_words: Vec<Vec<String>> = vec![GENERIC.iter().map(|s| s.to_string()).collect()];
    for t in &topics {
        all_words.push(t.words.clone());
        all_words.push(t.entities.clone());
    }
    let mut tags = vec![SP_TAG.to_string()];
    tags.extend(SPEAKERS.iter().map(|s| format!("{SID_PREFIX}{s}")));
    tags.extend(INTENTS.iter().map(|s| format!("{INT_PREFIX}{s}")));
    let vocab = build_vocab(&all_words, &tags);

    let encode = |c: &DialogueCorpus| -> Result<Vec<Vec<TokenId>>> {
        c.sentences()
            .iter()
            .map(|s| s.iter().map(|w| vocab.require(w)).collect())
            .collect()
    };
    let first_pass = NgramModel::train_add_one(&encode(&train)?, &vocab, 2)?;
    debug_assert_eq!(vocab.id(BOS_TOKEN), Some(first_pass.bos()));

    let twin_ids: Vec<(TokenId, TokenId)> = twins
        .iter()
        .map(|(a, b)| Ok((vocab.require(a)?, vocab.require(b)?)))
        .collect::<Result<_>>()?;
    let twin = |w: TokenId| {
        twin_ids
            .iter()
            .find_map(|&(a, b)| (a == w).then_some(b).or((b == w).then_some(a)))
    };
    let pool: Vec<TokenId> = GENERIC
        .iter()
        .map(|s| s.to_string())
        .chain(topics.iter().flat_map(|t| t.words.iter().cloned()))
        .map(|w| vocab.require(&w))
        .collect::<Result<_>>()?;
    let mut lattices_for = |c: &DialogueCorpus| -> Result<Vec<Vec<Lattice>>> {
        c.dialogues
            .iter()
            .map(|d| {
                d.utterances
                    .iter()
                    .map(|u| {
                        let ids: Vec<TokenId> = u.words.iter().map(|w| vocab.require(w)).collect::<Result<_>>()?;
                        utterance_lattice(&mut rng, cfg, &ids, twin, &pool, &first_pass)
                    })
                    .collect()
            })
            .collect()
    };
    let dev_lattices = lattices_for(&dev)?;
    let test_lattices = lattices_for(&test)?;
    Ok(SynthData {
        vocab,
        topics,
        twins,
        train,
        dev,
        test,
        first_pass,
        dev_lattices,
        test_lattices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_dialogues: 20,
            dev_dialogues: 3,
            test_dialogues: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_conversations(5, &small()).unwrap();
        let b = generate_synthetic_conversations(5, &small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test_lattices, b.test_lattices);
        assert_eq!(a.vocab, b.vocab);
    }

    #[test]
    fn invalid_config() {
        let cfg = SynthConfig {
            num_topics: 3,
            ..small()
        };
        assert!(matches!(generate_synthetic_conversations(1, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lattices_contain_reference_and_twin() {
        let d = generate_synthetic_conversations(9, &small()).unwrap();
        for (dlg, lats) in d.test.dialogues.iter().zip(&d.test_lattices) {
            for (u, lat) in dlg.utterances.iter().zip(lats) {
                lat.validate().unwrap();
                let ids: Vec<TokenId> = u.words.iter().map(|w| d.vocab.id(w).unwrap()).collect();
                // walk the reference through the lattice
                let mut s = lat.start();
                for &w in &ids {
                    s = lat.out_arcs(s).find(|a| a.word == w).expect("reference word present").dst;
                }
                assert!(lat.is_final(s));
                for w in &u.words {
                    if let Some(t) = d.twin_of(w) {
                        let t = d.vocab.id(t).unwrap();
                        assert!(lat.arcs().iter().any(|a| a.word == t));
                    }
                }
            }
        }
    }
}
