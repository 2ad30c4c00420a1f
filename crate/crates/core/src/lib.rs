//! Lattice rescoring with recurrent and back-off n-gram language models,
//! including cross-utterance context through lattice concatenation.

pub mod context;
pub mod error;
pub mod eval;
pub mod lattice;
pub mod lm;
pub mod ngram;
pub mod rescore;
pub mod rnnlm;
pub mod synth;
pub mod textprep;
pub mod tfidf;
pub mod vocab;

pub use context::{
    concat_lattices, extract_context_region, rescore_conversations, rescore_with_context, should_concat,
    ConcatPolicy, ContextOptions, Gate, RegionMode, TagWord, UtteranceResult,
};
pub use error::{Error, ParseErrorKind, Result};
pub use eval::{cer, oracle_rescore_nbest, run_grid, CerReport, ExperimentGrid, GridConfig, GridModel};
pub use lattice::{BestPath, Cost, Lattice, StateId};
pub use lm::{AnyLm, AnyLmState, LanguageModel};
pub use ngram::{ArpaOptions, NgramModel, NgramStateId};
pub use rescore::{
    rescore, rescore_exact, rescore_ngram_approx, rescore_pruned, DifferenceLm, RescoreMode, RescoreOptions,
    RescoreOutput, RescoreStats,
};
pub use rnnlm::{CellKind, RnnLm, RnnLmConfig, RnnState};
pub use synth::{generate_synthetic_conversations, SynthConfig, SynthData};
pub use textprep::{build_concat_corpus, build_vocab, ConcatOptions, DialogueCorpus, TagKind};
pub use tfidf::{fit_tfidf, TfIdfModel};
pub use vocab::{TokenId, Vocabulary, EPSILON};
