//! Correlation and text-overlap metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::text::{rouge1_recall, TokenBag};
use crate::{Error, Result};

/// Two equal-length series of at least two points.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
}

impl<'a> PairedSeries<'a> {
    pub fn new(xs: &'a [f64], ys: &'a [f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                left: xs.len(),
                right: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(Error::UndefinedCorrelation("fewer than two points"));
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let mx = math::mean(xs);
    let my = math::mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant series"));
    }
    if !(sxx.is_finite() && syy.is_finite() && sxy.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite values"));
    }
    let prod = sxx * syy;
    let denom = if prod.is_finite() && prod > 0.0 {
        math::sqrt(prod)
    } else {
        math::sqrt(sxx) * math::sqrt(syy)
    };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// Pearson linear correlation coefficient.
pub fn plcc(series: &PairedSeries<'_>) -> Result<f64> {
    pearson(series.xs, series.ys)
}

/// Fractional ranks starting at 1; ties share the mean of their ranks.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson over fractional ranks.
pub fn srcc(series: &PairedSeries<'_>) -> Result<f64> {
    pearson(&fractional_ranks(series.xs), &fractional_ranks(series.ys))
}

/// Mean per-sample ROUGE-1 recall of `candidates` against `references`.
pub fn corpus_rouge1<S: AsRef<str>>(references: &[TokenBag], candidates: &[S]) -> Result<f64> {
    if references.len() != candidates.len() {
        return Err(Error::LengthMismatch {
            left: references.len(),
            right: candidates.len(),
        });
    }
    if references.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = references
        .iter()
        .zip(candidates)
        .map(|(r, c)| rouge1_recall(r, &TokenBag::from_text(c.as_ref())).score)
        .sum();
    Ok(sum / references.len() as f64)
}
