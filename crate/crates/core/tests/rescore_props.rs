mod common;

use ctxrescore::*;
use proptest::prelude::*;

fn opts(mode: RescoreMode) -> RescoreOptions {
    RescoreOptions {
        mode,
        ..RescoreOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identical_models_leave_costs_unchanged(seed in any::<u64>()) {
        let f = common::fixture();
        let l = common::lattice(seed, &f.words, 10);
        let diff = DifferenceLm::new(&f.bigram, &f.bigram);
        let base = l.best_path(1.0).unwrap();
        for mode in [
            RescoreMode::Exact,
            RescoreMode::NgramApprox { n: 3 },
            RescoreMode::Pruned { n: 3, beam: 15.0 },
        ] {
            let out = rescore(&l, &diff, &opts(mode)).unwrap().lattice.best_path(1.0).unwrap();
            prop_assert!((out.cost - base.cost).abs() < 1e-9, "{mode:?}");
        }
    }

    #[test]
    fn rescored_cost_matches_direct_scoring(seed in any::<u64>()) {
        let f = common::fixture();
        let l = common::lattice(seed, &f.words, 10);
        let diff = DifferenceLm::new(&f.unigram, &f.trigram);
        let best = rescore_exact(&l, &diff, 1.0).unwrap().best_path(1.0).unwrap();
        // every original path, rescored by hand
        let direct = common::paths(&l, 1.0)
            .into_iter()
            .map(|(w, c)| c + diff.sentence_cost(&w).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((best.cost - direct).abs() < 1e-9);
    }

    #[test]
    fn wide_beam_equals_unpruned(seed in any::<u64>()) {
        let f = common::fixture();
        let l = common::lattice(seed, &f.words, 12);
        let diff = DifferenceLm::new(&f.bigram, &f.trigram);
        let full = rescore(&l, &diff, &opts(RescoreMode::NgramApprox { n: 3 })).unwrap();
        let wide = rescore(&l, &diff, &opts(RescoreMode::Pruned { n: 3, beam: 1e6 })).unwrap();
        let (a, b) = (full.lattice.best_path(1.0).unwrap(), wide.lattice.best_path(1.0).unwrap());
        prop_assert_eq!(a.words, b.words);
        prop_assert!((a.cost - b.cost).abs() < 1e-9);
        prop_assert!(wide.stats.output_states <= wide.stats.composed_states);
    }

    #[test]
    fn output_lattices_are_subsets_of_inputs(seed in any::<u64>(), beam in 0.0f64..20.0) {
        let f = common::fixture();
        let l = common::lattice(seed, &f.words, 12);
        let diff = DifferenceLm::new(&f.bigram, &f.trigram);
        let out = rescore(&l, &diff, &opts(RescoreMode::Pruned { n: 3, beam })).unwrap().lattice;
        let originals: std::collections::HashSet<Vec<TokenId>> =
            common::paths(&l, 1.0).into_iter().map(|p| p.0).collect();
        for (w, _) in common::paths(&out, 1.0) {
            prop_assert!(originals.contains(&w));
        }
    }
}

#[test]
fn zero_beam_yields_a_single_path() {
    let f = common::fixture();
    let l = common::lattice(5, &f.words, 12);
    let diff = DifferenceLm::new(&f.bigram, &f.trigram);
    let out = rescore(&l, &diff, &opts(RescoreMode::Pruned { n: 3, beam: 0.0 })).unwrap();
    assert_eq!(out.lattice.count_paths().unwrap(), 1);
}

#[test]
fn budget_is_enforced() {
    let f = common::fixture();
    let l = common::lattice(9, &f.words, 12);
    let diff = DifferenceLm::new(&f.bigram, &f.trigram);
    let o = RescoreOptions {
        budget: 2,
        mode: RescoreMode::Exact,
        ..RescoreOptions::default()
    };
    assert!(matches!(rescore(&l, &diff, &o), Err(Error::ExpansionBudgetExceeded { budget: 2 })));
}

#[test]
fn interpolation_weight_is_checked() {
    let f = common::fixture();
    assert!(DifferenceLm::new(&f.bigram, &f.trigram).with_weight(1.5).is_err());
    let half = DifferenceLm::new(&f.bigram, &f.trigram).with_weight(0.5).unwrap();
    let w = [f.words[0], f.words[1]];
    let expect = 0.5 * f.trigram.sentence_cost(&w).unwrap() - f.bigram.sentence_cost(&w).unwrap();
    assert!((half.sentence_cost(&w).unwrap() - expect).abs() < 1e-9);
}
