use thiserror::Error;

use crate::vocab::TokenId;

pub type Result<T> = std::result::Result<T, Error>;

/// Reasons a text input (lattice, ARPA, vocabulary, model) failed to parse.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("no start state")]
    NoStartState,
    #[error("missing \\end\\ marker")]
    MissingEnd,
    #[error("truncated input")]
    Truncated,
    #[error("{0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice contains a cycle through state {state}")]
    CyclicLattice { state: usize },
    #[error("state {state} is not on any start-to-final path")]
    UnreachableState { state: usize },
    #[error("lattice has no final state")]
    NoFinalState,
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("parse error at line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("unknown token id {0}")]
    UnknownTokenId(TokenId),
    #[error("declared {declared} {order}-grams but parsed {parsed}")]
    CountMismatch {
        order: usize,
        declared: usize,
        parsed: usize,
    },
    #[error("n-gram at line {line} has no prefix entry")]
    MissingPrefix { line: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    NumericalDivergence(String),
    #[error("model format version mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expansion budget of {budget} composed states exceeded")]
    ExpansionBudgetExceeded { budget: usize },
    #[error("no final state survived the beam; widen the beam")]
    EmptyResult,
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("concatenation created a cycle")]
    CycleCreated,
    #[error("tag token {0} not found on every path")]
    TagNotFound(TokenId),
    #[error("utterance {0} has no intent label")]
    MissingIntent(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("lattice has more than {budget} paths")]
    BudgetExceeded { budget: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            kind: ParseErrorKind::Malformed(msg.into()),
        }
    }

    /// Stable short identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::CyclicLattice { .. } => "CyclicLattice",
            Error::UnreachableState { .. } => "UnreachableState",
            Error::NoFinalState => "NoFinalState",
            Error::InvalidLattice(_) => "InvalidLattice",
            Error::Parse { .. } => "ParseError",
            Error::UnknownToken(_) | Error::UnknownTokenId(_) => "UnknownToken",
            Error::CountMismatch { .. } => "CountMismatch",
            Error::MissingPrefix { .. } => "MissingPrefix",
            Error::Config(_) => "ConfigError",
            Error::NumericalDivergence(_) => "NumericalDivergence",
            Error::FormatVersionMismatch(_) => "FormatVersionMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::ExpansionBudgetExceeded { .. } => "ExpansionBudgetExceeded",
            Error::EmptyResult => "EmptyResult",
            Error::VocabMismatch(_) => "VocabMismatch",
            Error::CycleCreated => "CycleCreated",
            Error::TagNotFound(_) => "TagNotFound",
            Error::MissingIntent(_) => "MissingIntent",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
