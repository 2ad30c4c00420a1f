use ctxrescore::textprep::{windows, Dialogue, Utterance, WindowMode};
use ctxrescore::*;
use proptest::prelude::*;

fn corpus(lens: &[usize]) -> DialogueCorpus {
    DialogueCorpus {
        dialogues: lens
            .iter()
            .enumerate()
            .map(|(d, &m)| Dialogue {
                id: format!("c{d}"),
                utterances: (0..m)
                    .map(|i| Utterance {
                        speaker: ["A", "B"][i % 2].into(),
                        intent: Some(["ask", "tell"][i % 2].into()),
                        words: vec![format!("u{i}"), "x".into()],
                        lattice_path: None,
                    })
                    .collect(),
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn cyclic_windows_cover_each_utterance_k_times(m in 1usize..12, k in 1usize..6) {
        let w = windows(m, k, WindowMode::Cyclic);
        prop_assert_eq!(w.len(), m);
        let mut seen = vec![0; m];
        for win in &w {
            prop_assert_eq!(win.len(), k);
            for &i in win {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == k));
    }

    #[test]
    fn blocks_partition_the_dialogue(m in 1usize..12, k in 1usize..6) {
        let flat: Vec<usize> = windows(m, k, WindowMode::Blocks).concat();
        prop_assert_eq!(flat, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn single_window_is_the_plain_corpus(lens in prop::collection::vec(1usize..6, 1..5)) {
        let c = corpus(&lens);
        let opts = ConcatOptions { k: 1, ..ConcatOptions::default() };
        prop_assert_eq!(build_concat_corpus(&c, &opts).unwrap(), c.sentences());
    }

    #[test]
    fn tag_count_per_sequence(lens in prop::collection::vec(1usize..6, 1..5), k in 1usize..5) {
        let c = corpus(&lens);
        for tag in [TagKind::Sp, TagKind::Sid, TagKind::Int] {
            let opts = ConcatOptions { k, tag, ..ConcatOptions::default() };
            let tags = ctxrescore::textprep::tag_tokens(&c, &[tag]);
            for seq in build_concat_corpus(&c, &opts).unwrap() {
                let n = seq.iter().filter(|w| tags.contains(w)).count();
                prop_assert_eq!(n, k - 1);
            }
        }
    }

    #[test]
    fn tfidf_similarity_is_symmetric_and_bounded(
        a in prop::collection::vec(0u32..8, 0..6),
        b in prop::collection::vec(0u32..8, 0..6),
    ) {
        let m = fit_tfidf(&[a.clone(), b.clone(), vec![1, 2, 3]]).unwrap();
        let s = m.similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - m.similarity(&b, &a)).abs() < 1e-12);
    }
}

#[test]
fn sid_uses_the_earlier_speaker() {
    let c = corpus(&[3]);
    let opts = ConcatOptions {
        k: 3,
        tag: TagKind::Sid,
        mode: WindowMode::Blocks,
        ..ConcatOptions::default()
    };
    let seqs = build_concat_corpus(&c, &opts).unwrap();
    assert_eq!(seqs[0].join(" "), "u0 x SID_A u1 x SID_B u2 x");
}

#[test]
fn jsonl_round_trip() {
    let c = corpus(&[2, 3]);
    let mut buf = Vec::new();
    c.write_jsonl(&mut buf).unwrap();
    assert_eq!(DialogueCorpus::read_jsonl(&buf[..]).unwrap(), c);
}

#[test]
fn vocab_order_is_specials_tags_words() {
    let c = corpus(&[2]);
    let tags = ctxrescore::textprep::tag_tokens(&c, &[TagKind::Sp, TagKind::Sid]);
    let v = build_vocab(&c.sentences(), &tags);
    let toks: Vec<&str> = v.tokens().iter().map(String::as_str).collect();
    assert_eq!(toks[..4], ["<eps>", "<s>", "</s>", "<unk>"]);
    assert_eq!(toks[4..], ["SID_A", "SID_B", "SP", "u0", "u1", "x"]);
}

#[test]
fn zero_k_is_rejected() {
    let opts = ConcatOptions {
        k: 0,
        ..ConcatOptions::default()
    };
    assert!(build_concat_corpus(&corpus(&[2]), &opts).is_err());
}
