//! tf-idf weighted bag-of-words vectors and cosine similarity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Document frequencies over a fixed document collection. Raw term counts,
/// `idf = ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel<T: Eq + Hash = TokenId> {
    num_docs: usize,
    df: HashMap<T, usize>,
}

pub fn fit_tfidf<T: Eq + Hash + Clone>(documents: &[Vec<T>]) -> Result<TfIdfModel<T>> {
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut df: HashMap<T, usize> = HashMap::new();
    for doc in documents {
        let uniq: HashSet<&T> = doc.iter().collect();
        for t in uniq {
            *df.entry(t.clone()).or_insert(0) += 1;
        }
    }
    Ok(TfIdfModel {
        num_docs: documents.len(),
        df,
    })
}

impl<T: Eq + Hash + Clone + Ord> TfIdfModel<T> {
    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn df(&self, t: &T) -> usize {
        self.df.get(t).copied().unwrap_or(0)
    }

    pub fn idf(&self, t: &T) -> f64 {
        ((1.0 + self.num_docs as f64) / (1.0 + self.df(t) as f64)).ln() + 1.0
    }

    /// Sparse tf-idf vector, ordered by token.
    pub fn vector(&self, doc: &[T]) -> BTreeMap<T, f64> {
        let mut tf: BTreeMap<T, f64> = BTreeMap::new();
        for t in doc {
            *tf.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        for (t, v) in tf.iter_mut() {
            *v *= self.idf(t);
        }
        tf
    }

    /// Cosine of the two tf-idf vectors, clamped to [0, 1]. Empty input gives 0.
    pub fn similarity(&self, a: &[T], b: &[T]) -> f64 {
        let va = self.vector(a);
        let vb = self.vector(b);
        let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = va.iter().filter_map(|(t, x)| vb.get(t).map(|y| x * y)).sum();
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}
