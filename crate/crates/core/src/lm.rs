//! Stepwise language-model interface used by composition-based rescoring.

use std::fmt::Debug;

use crate::error::Result;
use crate::ngram::{NgramModel, NgramStateId};
use crate::rnnlm::{RnnLm, RnnState};
use crate::vocab::TokenId;

/// A language model viewed as a deterministic on-demand acceptor: each
/// (state, word) pair has exactly one cost and successor state.
pub trait LanguageModel: Sync {
    type State: Clone + Debug + Send + Sync;

    /// State after consuming the sentence-begin marker.
    fn initial_state(&self) -> Self::State;

    /// `-ln P(word | state)` and the advanced state.
    fn score(&self, state: &Self::State, word: TokenId) -> Result<(f64, Self::State)>;

    /// `-ln P(</s> | state)`.
    fn final_cost(&self, state: &Self::State) -> Result<f64>;

    /// Total cost of `<s> words </s>`.
    fn sentence_cost(&self, words: &[TokenId]) -> Result<f64> {
        let mut state = self.initial_state();
        let mut total = 0.0;
        for &w in words {
            let (c, next) = self.score(&state, w)?;
            total += c;
            state = next;
        }
        Ok(total + self.final_cost(&state)?)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    type State = T::State;

    fn initial_state(&self) -> Self::State {
        (**self).initial_state()
    }

    fn score(&self, state: &Self::State, word: TokenId) -> Result<(f64, Self::State)> {
        (**self).score(state, word)
    }

    fn final_cost(&self, state: &Self::State) -> Result<f64> {
        (**self).final_cost(state)
    }
}

/// Either kind of model, for callers that pick one at run time.
#[derive(Debug, Clone)]
pub enum AnyLm {
    Rnn(RnnLm),
    Ngram(NgramModel),
}

#[derive(Debug, Clone)]
pub enum AnyLmState {
    Rnn(RnnState),
    Ngram(NgramStateId),
}

impl LanguageModel for AnyLm {
    type State = AnyLmState;

    fn initial_state(&self) -> AnyLmState {
        match self {
            AnyLm::Rnn(m) => AnyLmState::Rnn(m.initial_state()),
            AnyLm::Ngram(m) => AnyLmState::Ngram(m.initial_state()),
        }
    }

    fn score(&self, state: &AnyLmState, word: TokenId) -> Result<(f64, AnyLmState)> {
        match (self, state) {
            (AnyLm::Rnn(m), AnyLmState::Rnn(s)) => m.score(s, word).map(|(c, s)| (c, AnyLmState::Rnn(s))),
            (AnyLm::Ngram(m), AnyLmState::Ngram(s)) => {
                m.score(s, word).map(|(c, s)| (c, AnyLmState::Ngram(s)))
            }
            _ => panic!("language model state does not belong to this model"),
        }
    }

    fn final_cost(&self, state: &AnyLmState) -> Result<f64> {
        match (self, state) {
            (AnyLm::Rnn(m), AnyLmState::Rnn(s)) => m.final_cost(s),
            (AnyLm::Ngram(m), AnyLmState::Ngram(s)) => m.final_cost(s),
            _ => panic!("language model state does not belong to this model"),
        }
    }
}
