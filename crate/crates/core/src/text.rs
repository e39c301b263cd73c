//! Unigram normalization, token bags and ROUGE-1 recall.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// Splits `text` into normalized unigrams.
///
/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of every token. Interior punctuation (hyphens,
/// apostrophes, decimal points) is kept. Tokens that end up empty are
/// dropped.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Multiset of normalized unigrams.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenBag {
    counts: BTreeMap<String, u32>,
    total: u32,
}

impl TokenBag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts the tokens of an already normalized sequence.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut bag = Self::new();
        for t in tokens {
            bag.add(t.into(), 1);
        }
        bag
    }

    /// Normalizes `text` and counts the result.
    pub fn from_text(text: &str) -> Self {
        Self::from_tokens(normalize_tokens(text))
    }

    /// Adds `n` occurrences of `token`. Empty tokens and `n == 0` are ignored.
    pub fn add(&mut self, token: String, n: u32) {
        if n == 0 || token.is_empty() {
            return;
        }
        *self.counts.entry(token).or_insert(0) += n;
        self.total += n;
    }

    /// Adds every count of `other` into `self`.
    pub fn merge(&mut self, other: &TokenBag) {
        for (w, &c) in &other.counts {
            self.add(w.clone(), c);
        }
    }

    pub fn count(&self, token: &str) -> u32 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Iterates `(unigram, count)` in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.counts.iter().map(|(w, &c)| (w.as_str(), c))
    }

    /// True when every count in `other` is covered by `self`.
    pub fn dominates(&self, other: &TokenBag) -> bool {
        other.iter().all(|(w, c)| self.count(w) >= c)
    }
}

/// ROUGE-1 recall together with the degenerate-reference flag.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RougeScore {
    pub score: f64,
    /// Set when the reference has no tokens; `score` is then 0.
    pub degenerate_reference: bool,
}

/// Unigram recall of `candidate` against `reference`:
/// `sum_w min(C_ref(w), C_cand(w)) / sum_w C_ref(w)` over the reference vocabulary.
pub fn rouge1_recall(reference: &TokenBag, candidate: &TokenBag) -> RougeScore {
    if reference.total == 0 {
        return RougeScore {
            score: 0.0,
            degenerate_reference: true,
        };
    }
    let overlap: u64 = reference
        .counts
        .iter()
        .map(|(w, &c)| u64::from(c.min(candidate.count(w))))
        .sum();
    RougeScore {
        score: overlap as f64 / f64::from(reference.total),
        degenerate_reference: false,
    }
}

/// How several raters' texts combine into one reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ReferenceAggregation {
    /// All raters' texts are pooled into a single bag.
    #[default]
    Concatenate,
    /// Each rater is scored separately and the best recall is kept.
    PerRaterMax,
}

/// ROUGE-1 recall of `candidate` against several rater references.
pub fn rouge1_multi(
    references: &[TokenBag],
    candidate: &TokenBag,
    aggregation: ReferenceAggregation,
) -> RougeScore {
    match aggregation {
        ReferenceAggregation::Concatenate => {
            let mut pooled = TokenBag::new();
            for r in references {
                pooled.merge(r);
            }
            rouge1_recall(&pooled, candidate)
        }
        ReferenceAggregation::PerRaterMax => {
            let mut best = RougeScore {
                score: 0.0,
                degenerate_reference: true,
            };
            for r in references {
                let s = rouge1_recall(r, candidate);
                if !s.degenerate_reference && (best.degenerate_reference || s.score > best.score) {
                    best = s;
                }
            }
            best
        }
    }
}
