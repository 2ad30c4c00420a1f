mod common;

use ctxrescore::*;
use proptest::prelude::*;

fn micro(cell: CellKind, layers: usize) -> RnnLmConfig {
    RnnLmConfig {
        embedding_dim: 4,
        hidden_dim: 5,
        num_layers: layers,
        cell,
        epochs: 2,
        seed: 4,
        ..RnnLmConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sentence_cost_is_sum_of_steps(seq in prop::collection::vec(0usize..6, 0..8), gated in any::<bool>()) {
        let f = common::fixture();
        let cell = if gated { CellKind::Gated } else { CellKind::Simple };
        let lm = RnnLm::init(micro(cell, 2), &f.vocab).unwrap();
        let words: Vec<TokenId> = seq.iter().map(|&i| f.words[i]).collect();
        let mut state = lm.initial();
        let mut total = 0.0;
        for &w in &words {
            let (c, s) = lm.step(&state, w).unwrap();
            prop_assert!((c + state.log_probs()[w as usize]).abs() < 1e-12);
            total += c;
            state = s;
        }
        total -= state.log_probs()[2];
        prop_assert!((lm.sentence_cost(&words).unwrap() - total).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..1000) {
        let f = common::fixture();
        let mut cfg = micro(CellKind::Gated, 1);
        cfg.seed = seed;
        cfg.init_range = 0.5;
        let mut lm = RnnLm::init(cfg, &f.vocab).unwrap();
        let tokens = [1, f.words[2], f.words[0], f.words[5]];
        let (_, grads) = lm.loss_and_gradients(&tokens).unwrap();
        // spot-check the first entry of every tensor
        for (t, g) in grads.iter().enumerate() {
            let orig = lm.parameters()[t].data[0];
            let h = 1e-5;
            lm.parameters_mut()[t].data[0] = orig + h;
            let up = lm.loss(&tokens).unwrap();
            lm.parameters_mut()[t].data[0] = orig - h;
            let down = lm.loss(&tokens).unwrap();
            lm.parameters_mut()[t].data[0] = orig;
            let num = (up - down) / (2.0 * h);
            prop_assert!((num - g.data[0]).abs() <= 1e-6 + 1e-4 * num.abs().max(g.data[0].abs()));
        }
    }
}

#[test]
fn training_lowers_perplexity() {
    let f = common::fixture();
    let mut lm = RnnLm::init(
        RnnLmConfig {
            epochs: 6,
            ..micro(CellKind::Gated, 1)
        },
        &f.vocab,
    )
    .unwrap();
    let before = lm.perplexity(&f.sentences).unwrap();
    let report = lm.train(&f.sentences, Some(&f.sentences)).unwrap();
    let after = lm.perplexity(&f.sentences).unwrap();
    assert!(after < before, "{after} >= {before}");
    assert_eq!(report.epochs.len(), 6);
    assert!((report.final_heldout_perplexity().unwrap() - after).abs() < 1e-9);
}

#[test]
fn save_load_round_trip() {
    let f = common::fixture();
    let mut lm = RnnLm::init(micro(CellKind::Simple, 2), &f.vocab).unwrap();
    lm.train(&f.sentences[..10], None).unwrap();
    let mut buf = Vec::new();
    lm.save(&mut buf).unwrap();
    let back = RnnLm::load_for_vocab(&buf[..], &f.vocab).unwrap();
    for s in &f.sentences[..10] {
        assert_eq!(lm.sentence_cost(s).unwrap(), back.sentence_cost(s).unwrap());
    }
    let mut bigger = f.vocab.clone();
    bigger.insert("extra");
    assert!(RnnLm::load_for_vocab(&buf[..], &bigger).is_err());
    assert!(RnnLm::load(&buf[..buf.len() - 3]).is_err());
}

#[test]
fn training_is_deterministic() {
    let f = common::fixture();
    let run = || {
        let mut lm = RnnLm::init(micro(CellKind::Gated, 1), &f.vocab).unwrap();
        lm.train(&f.sentences, None).unwrap();
        let mut buf = Vec::new();
        lm.save(&mut buf).unwrap();
        buf
    };
    assert_eq!(run(), run());
}
