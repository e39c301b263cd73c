//! Linear-softmax autoregressive policy.
//!
//! At step `p` the next-token logits are `W x`, where `x` concatenates
//!
//! - a context embedding: bias, two stage flags, the image features (image
//!   stage only) and a caption token presence vector (caption stage only),
//! - a one-hot of the previous token (with a dedicated begin slot),
//! - a one-hot of `(stage, p)`.
//!
//! Everything is exact: sampling, log-likelihoods, score-function gradients
//! and per-step categorical KL.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::{Error, Result};

/// Ordered token list with an optional end token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    eos: Option<usize>,
}

impl Vocab {
    pub fn new<I, S>(tokens: I, eos: Option<&str>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid token {t:?}")));
            }
            if tokens[..i].contains(t) {
                return Err(Error::Config(format!("duplicate token {t:?}")));
            }
        }
        let eos = match eos {
            Some(e) => Some(
                tokens
                    .iter()
                    .position(|t| t == e)
                    .ok_or_else(|| Error::Config(format!("end token {e:?} not in vocabulary")))?,
            ),
            None => None,
        };
        Ok(Self { tokens, eos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> Option<usize> {
        self.eos
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined text of `ids`, stopping at the end token.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if Some(id) == self.eos {
                break;
            }
            if let Some(t) = self.token(id) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(t);
            }
        }
        out
    }

    /// Maps whitespace-separated words to ids, dropping unknown words.
    pub fn encode_known(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().filter_map(|w| self.id(w)).collect()
    }
}

/// What the policy is conditioned on.
///
/// The caption stage carries no image features at all; the variant itself
/// is the blindness guarantee.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "stage", rename_all = "snake_case"))]
pub enum Context {
    /// Image-conditioned prompt with synthetic visual attributes in `[0, 1]`.
    Image { features: Vec<f64> },
    /// Caption-only prompt: the model's own caption, as token ids.
    Caption { caption_tokens: Vec<usize> },
}

impl Context {
    pub fn stage_index(&self) -> usize {
        match self {
            Context::Image { .. } => 0,
            Context::Caption { .. } => 1,
        }
    }
}

/// Shape of the parameter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub max_len: usize,
}

const STAGES: usize = 2;

impl Layout {
    pub fn context_dim(&self) -> usize {
        1 + STAGES + self.feature_dim + self.vocab_size
    }

    fn prev_offset(&self) -> usize {
        self.context_dim()
    }

    fn pos_offset(&self) -> usize {
        self.prev_offset() + self.vocab_size + 1
    }

    pub fn input_dim(&self) -> usize {
        self.pos_offset() + STAGES * self.max_len
    }

    /// Column of the image feature `k`.
    pub fn feature_column(&self, k: usize) -> usize {
        1 + STAGES + k
    }

    /// Column of the caption-presence indicator of `token`.
    pub fn caption_column(&self, token: usize) -> usize {
        1 + STAGES + self.feature_dim + token
    }

    /// Column of the stage flag.
    pub fn stage_column(&self, stage: usize) -> usize {
        1 + stage
    }

    /// Column of the previous-token indicator; `None` is the begin slot.
    pub fn prev_column(&self, prev: Option<usize>) -> usize {
        self.prev_offset() + prev.unwrap_or(self.vocab_size)
    }

    pub fn position_column(&self, stage: usize, position: usize) -> usize {
        self.pos_offset() + stage * self.max_len + position
    }
}

/// Dense row-major matrix: one row per vocabulary token.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &Matrix) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

/// Immutable policy snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Arc<Vocab>,
    layout: Layout,
    weights: Matrix,
}

/// One sampled or decoded sequence with its log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    pub tokens: Vec<usize>,
    /// Probability of each emitted token under the generating policy.
    pub step_probs: Vec<f64>,
    pub log_prob_current: f64,
    pub log_prob_old: f64,
    pub log_prob_ref: f64,
    pub raw_text: String,
}

/// Sparse policy input: `(column, value)` pairs.
type Input = Vec<(usize, f64)>;

impl PolicyParams {
    pub fn zeros(vocab: Arc<Vocab>, feature_dim: usize, max_len: usize) -> Self {
        let layout = Layout {
            vocab_size: vocab.len(),
            feature_dim,
            max_len,
        };
        let weights = Matrix::zeros(layout.vocab_size, layout.input_dim());
        Self {
            vocab,
            layout,
            weights,
        }
    }

    pub fn from_weights(vocab: Arc<Vocab>, feature_dim: usize, max_len: usize, weights: Matrix) -> Result<Self> {
        let p = Self::zeros(vocab, feature_dim, max_len);
        if !p.weights.same_shape(&weights) {
            return Err(Error::Shape(format!(
                "expected {}x{} weights, got {}x{}",
                p.weights.rows, p.weights.cols, weights.rows, weights.cols
            )));
        }
        if weights.data.iter().any(|w| !w.is_finite()) {
            return Err(Error::Shape("non-finite weight".into()));
        }
        Ok(Self { weights, ..p })
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Copy with `weights + k * direction`. Entries where the direction is
    /// exactly zero keep their bits.
    pub fn stepped(&self, k: f64, direction: &Matrix) -> Self {
        let mut next = self.clone();
        if k != 0.0 {
            for (w, &d) in next.weights.data.iter_mut().zip(&direction.data) {
                if d != 0.0 {
                    *w += k * d;
                }
            }
        }
        next
    }

    /// Copy with one weight replaced; used to build priors and in tests.
    pub fn with_weight(&self, token: usize, column: usize, value: f64) -> Self {
        let mut next = self.clone();
        *next.weights.get_mut(token, column) = value;
        next
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    fn check_context(&self, context: &Context) -> Result<()> {
        match context {
            Context::Image { features } if features.len() != self.layout.feature_dim => Err(Error::Shape(format!(
                "context has {} features, policy expects {}",
                features.len(),
                self.layout.feature_dim
            ))),
            Context::Caption { caption_tokens } => {
                match caption_tokens.iter().find(|&&t| t >= self.layout.vocab_size) {
                    Some(&t) => Err(Error::TokenOutOfVocab {
                        token: t,
                        vocab: self.layout.vocab_size,
                    }),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    fn context_input(&self, context: &Context) -> Input {
        let l = &self.layout;
        let stage = context.stage_index();
        let mut x = vec![(0, 1.0), (l.stage_column(stage), 1.0)];
        match context {
            Context::Image { features } => {
                for (k, &f) in features.iter().enumerate() {
                    if f != 0.0 {
                        x.push((l.feature_column(k), f));
                    }
                }
            }
            Context::Caption { caption_tokens } => {
                let mut seen = vec![false; l.vocab_size];
                for &t in caption_tokens {
                    if !seen[t] {
                        seen[t] = true;
                        x.push((l.caption_column(t), 1.0));
                    }
                }
            }
        }
        x
    }

    fn step_input(&self, base: &Input, stage: usize, prev: Option<usize>, position: usize) -> Input {
        let mut x = base.clone();
        x.push((self.layout.prev_column(prev), 1.0));
        x.push((self.layout.position_column(stage, position), 1.0));
        x
    }

    fn logits_into(&self, x: &Input, out: &mut [f64]) {
        let cols = self.weights.cols;
        for (v, o) in out.iter_mut().enumerate() {
            let row = &self.weights.data[v * cols..(v + 1) * cols];
            *o = x.iter().map(|&(j, val)| row[j] * val).sum();
        }
    }

    /// Next-token log-probabilities after `prefix`.
    pub fn next_log_probs(&self, context: &Context, prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        let position = prefix.len();
        if position >= self.layout.max_len {
            return Err(Error::Shape(format!(
                "position {position} exceeds max length {}",
                self.layout.max_len
            )));
        }
        let base = self.context_input(context);
        let x = self.step_input(&base, context.stage_index(), prefix.last().copied(), position);
        let mut logits = vec![0.0; self.layout.vocab_size];
        self.logits_into(&x, &mut logits);
        let mut lp = vec![0.0; self.layout.vocab_size];
        math::log_softmax_into(&logits, &mut lp);
        Ok(lp)
    }

    /// Tokens up to and including the first end token.
    fn effective<'a>(&self, tokens: &'a [usize]) -> Result<&'a [usize]> {
        let n = match self.vocab.eos() {
            Some(e) => tokens.iter().position(|&t| t == e).map_or(tokens.len(), |i| i + 1),
            None => tokens.len(),
        };
        let tokens = &tokens[..n];
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.layout.vocab_size) {
            return Err(Error::TokenOutOfVocab {
                token: t,
                vocab: self.layout.vocab_size,
            });
        }
        if tokens.len() > self.layout.max_len {
            return Err(Error::Shape(format!(
                "sequence of length {} exceeds max length {}",
                tokens.len(),
                self.layout.max_len
            )));
        }
        Ok(tokens)
    }

    /// Visits every step of `tokens` with its input and log-softmax.
    fn walk<F>(&self, context: &Context, tokens: &[usize], mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &Input, &[f64]),
    {
        self.check_context(context)?;
        let tokens = self.effective(tokens)?;
        let stage = context.stage_index();
        let base = self.context_input(context);
        let v = self.layout.vocab_size;
        let mut logits = vec![0.0; v];
        let mut lp = vec![0.0; v];
        let mut prev = None;
        for (p, &tok) in tokens.iter().enumerate() {
            let x = self.step_input(&base, stage, prev, p);
            self.logits_into(&x, &mut logits);
            math::log_softmax_into(&logits, &mut lp);
            visit(tok, &x, &lp);
            prev = Some(tok);
        }
        Ok(())
    }

    /// Exact log-likelihood of `tokens`. Anything after the end token is ignored.
    pub fn log_prob(&self, context: &Context, tokens: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        self.walk(context, tokens, |tok, _, lp| total += lp[tok])?;
        Ok(total)
    }

    /// Adds `scale * grad log_prob(tokens)` into `out` and returns the log-likelihood.
    pub fn accumulate_grad_log_prob(
        &self,
        context: &Context,
        tokens: &[usize],
        scale: f64,
        out: &mut Matrix,
    ) -> Result<f64> {
        if !out.same_shape(&self.weights) {
            return Err(Error::Shape("gradient buffer shape".into()));
        }
        let cols = out.cols;
        let mut total = 0.0;
        self.walk(context, tokens, |tok, x, lp| {
            total += lp[tok];
            if scale == 0.0 {
                return;
            }
            for (v, &l) in lp.iter().enumerate() {
                let g = (if v == tok { 1.0 } else { 0.0 }) - math::exp(l);
                if g == 0.0 {
                    continue;
                }
                let row = &mut out.data[v * cols..(v + 1) * cols];
                for &(j, val) in x {
                    row[j] += scale * g * val;
                }
            }
        })?;
        Ok(total)
    }

    /// Gradient of [`Self::log_prob`] with respect to the weights.
    pub fn grad_log_prob(&self, context: &Context, tokens: &[usize]) -> Result<Matrix> {
        let mut g = Matrix::zeros(self.weights.rows, self.weights.cols);
        self.accumulate_grad_log_prob(context, tokens, 1.0, &mut g)?;
        Ok(g)
    }

    /// Draws a trajectory by ancestral sampling. Deterministic in `seed`.
    pub fn sample(&self, context: &Context, seed: u64, max_len: usize) -> Result<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.generate(context, max_len, |lp| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (v, &l) in lp.iter().enumerate() {
                acc += math::exp(l);
                if u < acc {
                    return v;
                }
            }
            // u landed in the rounding gap above the last cumulative sum
            lp.iter()
                .rposition(|&l| l > f64::NEG_INFINITY)
                .unwrap_or(lp.len() - 1)
        })
    }

    /// Argmax decoding; ties go to the lowest token id.
    pub fn greedy(&self, context: &Context, max_len: usize) -> Result<Trajectory> {
        self.generate(context, max_len, |lp| {
            let mut best = 0;
            for (v, &l) in lp.iter().enumerate() {
                if l > lp[best] {
                    best = v;
                }
            }
            best
        })
    }

    fn generate<F>(&self, context: &Context, max_len: usize, mut choose: F) -> Result<Trajectory>
    where
        F: FnMut(&[f64]) -> usize,
    {
        self.check_context(context)?;
        let max_len = max_len.min(self.layout.max_len);
        let stage = context.stage_index();
        let base = self.context_input(context);
        let v = self.layout.vocab_size;
        let mut logits = vec![0.0; v];
        let mut lp = vec![0.0; v];
        let mut tokens = Vec::new();
        let mut step_probs = Vec::new();
        let mut log_prob = 0.0;
        for p in 0..max_len {
            let x = self.step_input(&base, stage, tokens.last().copied(), p);
            self.logits_into(&x, &mut logits);
            math::log_softmax_into(&logits, &mut lp);
            let tok = choose(&lp);
            tokens.push(tok);
            step_probs.push(math::exp(lp[tok]));
            log_prob += lp[tok];
            if Some(tok) == self.vocab.eos() {
                break;
            }
        }
        let raw_text = self.vocab.detokenize(&tokens);
        Ok(Trajectory {
            tokens,
            step_probs,
            log_prob_current: log_prob,
            log_prob_old: log_prob,
            log_prob_ref: log_prob,
            raw_text,
        })
    }

    /// Mean per-step KL(self || other) over the prefixes visited by `tokens`.
    pub fn kl_divergence(&self, other: &PolicyParams, context: &Context, tokens: &[usize]) -> Result<f64> {
        self.kl_with_grad(other, context, tokens, None)
    }

    /// Same as [`Self::kl_divergence`], optionally adding `scale * grad` (with
    /// respect to `self`) into `out`.
    pub fn kl_with_grad(
        &self,
        other: &PolicyParams,
        context: &Context,
        tokens: &[usize],
        mut out: Option<(f64, &mut Matrix)>,
    ) -> Result<f64> {
        if self.layout != other.layout {
            return Err(Error::Shape("policies have different layouts".into()));
        }
        let n = self.effective(tokens)?.len();
        if n == 0 {
            return Ok(0.0);
        }
        let v = self.layout.vocab_size;
        let mut q_logits = vec![0.0; v];
        let mut lq = vec![0.0; v];
        let mut total = 0.0;
        let inv_n = 1.0 / n as f64;
        let cols = self.weights.cols;
        self.walk(context, tokens, |_, x, lp| {
            other.logits_into(x, &mut q_logits);
            math::log_softmax_into(&q_logits, &mut lq);
            let step: f64 = lp
                .iter()
                .zip(&lq)
                .map(|(&a, &b)| {
                    let pa = math::exp(a);
                    if pa == 0.0 {
                        0.0
                    } else {
                        pa * (a - b)
                    }
                })
                .sum();
            total += step;
            if let Some((scale, ref mut g)) = out {
                for j in 0..v {
                    let pj = math::exp(lp[j]);
                    let d = pj * (lp[j] - lq[j] - step) * scale * inv_n;
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut g.data[j * cols..(j + 1) * cols];
                    for &(c, val) in x {
                        row[c] += d * val;
                    }
                }
            }
        })?;
        Ok((total * inv_n).max(0.0))
    }
}

/// Categorical KL `sum p ln(p / q)`.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * math::ln(a / b))
        .sum()
}

// Snapshot encoding: five little-endian u32 header words (magic, version,
// vocab size, context dim, max length) followed by the row-major weights as
// little-endian f64.

pub const SNAPSHOT_MAGIC: u32 = u32::from_le_bytes(*b"HIQA");
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;

impl PolicyParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let l = &self.layout;
        let mut out = Vec::with_capacity(HEADER_BYTES + 8 * self.weights.data.len());
        for word in [
            SNAPSHOT_MAGIC,
            SNAPSHOT_VERSION,
            l.vocab_size as u32,
            l.context_dim() as u32,
            l.max_len as u32,
        ] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for w in &self.weights.data {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Decodes a snapshot; the vocabulary must match the one it was saved with.
    pub fn from_bytes(bytes: &[u8], vocab: Arc<Vocab>) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Snapshot("truncated header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        if word(0) as u32 != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        if word(1) as u32 != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {}", word(1))));
        }
        let (vocab_size, context_dim, max_len) = (word(2), word(3), word(4));
        if vocab_size != vocab.len() {
            return Err(Error::Shape(format!(
                "snapshot vocabulary size {vocab_size} does not match {}",
                vocab.len()
            )));
        }
        let feature_dim = context_dim
            .checked_sub(1 + STAGES + vocab_size)
            .ok_or_else(|| Error::Snapshot("context dim too small".into()))?;
        let mut params = Self::zeros(vocab, feature_dim, max_len);
        let body = &bytes[HEADER_BYTES..];
        if body.len() != 8 * params.weights.data.len() {
            return Err(Error::Snapshot(format!(
                "expected {} weight bytes, found {}",
                8 * params.weights.data.len(),
                body.len()
            )));
        }
        for (w, chunk) in params.weights.data.iter_mut().zip(body.chunks_exact(8)) {
            *w = f64::from_le_bytes(chunk.try_into().unwrap());
            if !w.is_finite() {
                return Err(Error::Snapshot("non-finite weight".into()));
            }
        }
        Ok(params)
    }
}

impl core::fmt::Display for Layout {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "vocab={} features={} max_len={} inputs={}",
            self.vocab_size,
            self.feature_dim,
            self.max_len,
            self.input_dim()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn vocab8() -> Arc<Vocab> {
        Arc::new(Vocab::new(["a", "b", "c", "d", "e", "f", "g", "<eos>"], Some("<eos>")).unwrap())
    }

    fn image(f: &[f64]) -> Context {
        Context::Image { features: f.to_vec() }
    }

    fn random_params(seed: u64, scale: f64) -> PolicyParams {
        let mut p = PolicyParams::zeros(vocab8(), 3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut p.weights_mut().data {
            *w = scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
        p
    }

    #[test]
    fn vocab_rules() {
        assert!(Vocab::new(Vec::<String>::new(), None).is_err());
        assert!(Vocab::new(["a", "a"], None).is_err());
        assert!(Vocab::new(["a b"], None).is_err());
        assert!(Vocab::new(["a"], Some("z")).is_err());
        let v = vocab8();
        assert_eq!(v.detokenize(&[0, 1, 7, 2]), "a b");
        assert_eq!(v.encode_known("a zz c"), vec![0, 2]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = random_params(1, 1.0);
        let ctx = image(&[0.2, 0.5, 0.9]);
        assert_eq!(p.sample(&ctx, 42, 6).unwrap(), p.sample(&ctx, 42, 6).unwrap());
    }

    #[test]
    fn zero_policy_is_uniform() {
        let p = PolicyParams::zeros(vocab8(), 3, 6);
        let ctx = image(&[0.1, 0.2, 0.3]);
        assert!((p.log_prob(&ctx, &[3]).unwrap() - (1.0f64 / 8.0).ln()).abs() < 1e-15);
        assert_eq!(p.log_prob(&ctx, &[]).unwrap(), 0.0);
        let n = 10_000;
        let mut counts = [0usize; 8];
        for s in 0..n {
            counts[p.sample(&ctx, s, 1).unwrap().tokens[0]] += 1;
        }
        let expect = n as f64 / 8.0;
        let sigma = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampled_frequencies_follow_softmax() {
        let l = PolicyParams::zeros(vocab8(), 3, 6).layout();
        let p = PolicyParams::zeros(vocab8(), 3, 6).with_weight(2, l.position_column(0, 0), 2.0);
        let ctx = image(&[0.0, 0.0, 0.0]);
        let z = 7.0 + 2.0f64.exp();
        let p_bump = 2.0f64.exp() / z;
        let n = 20_000;
        let hits = (0..n).filter(|&s| p.sample(&ctx, s, 1).unwrap().tokens[0] == 2).count();
        let sigma = (n as f64 * p_bump * (1.0 - p_bump)).sqrt();
        assert!((hits as f64 - n as f64 * p_bump).abs() < 4.0 * sigma);
    }

    #[test]
    fn log_prob_matches_recorded_step_probs() {
        for seed in 0..20 {
            let p = random_params(seed, 2.0);
            let ctx = image(&[0.3, 0.6, 0.1]);
            let t = p.sample(&ctx, seed + 100, 6).unwrap();
            let product: f64 = t.step_probs.iter().product();
            let sum: f64 = t.step_probs.iter().map(|q| q.ln()).sum();
            let lp = p.log_prob(&ctx, &t.tokens).unwrap();
            assert!((lp.exp() - product).abs() < 1e-12);
            assert!((lp - sum).abs() < 1e-12);
            assert!((lp - t.log_prob_current).abs() < 1e-12);
            assert!(lp <= 0.0);
        }
    }

    #[test]
    fn step_distributions_normalize() {
        let p = random_params(9, 3.0);
        let ctx = Context::Caption { caption_tokens: vec![1, 4, 4] };
        let lp = p.next_log_probs(&ctx, &[0, 2]).unwrap();
        let s: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocab_and_shape_errors() {
        let p = random_params(0, 1.0);
        let ctx = image(&[0.0, 0.0, 0.0]);
        assert!(matches!(p.log_prob(&ctx, &[9]), Err(Error::TokenOutOfVocab { .. })));
        assert!(p.grad_log_prob(&ctx, &[0, 99]).is_err());
        assert!(p.log_prob(&image(&[0.0]), &[0]).is_err());
        assert!(p.log_prob(&ctx, &[0; 7]).is_err());
        assert!(p.log_prob(&Context::Caption { caption_tokens: vec![8] }, &[0]).is_err());
    }

    #[test]
    fn padding_after_eos_is_ignored() {
        let p = random_params(3, 1.0);
        let ctx = image(&[0.4, 0.4, 0.4]);
        let a = p.log_prob(&ctx, &[1, 2, 7]).unwrap();
        let b = p.log_prob(&ctx, &[1, 2, 7, 3, 3, 3, 3, 3]).unwrap();
        assert_eq!(a, b);
    }

    fn central_difference<F: Fn(&PolicyParams) -> f64>(p: &PolicyParams, f: F) -> Matrix {
        let h = 1e-5;
        let mut g = Matrix::zeros(p.weights.rows, p.weights.cols);
        for i in 0..p.weights.data.len() {
            let mut plus = p.clone();
            plus.weights.data[i] += h;
            let mut minus = p.clone();
            minus.weights.data[i] -= h;
            g.data[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        d.norm() / a.norm().max(b.norm()).max(1e-12)
    }

    #[test]
    fn grad_log_prob_matches_finite_differences() {
        for seed in 0..5 {
            let p = random_params(seed, 1.0);
            let ctx = if seed % 2 == 0 {
                image(&[0.7, 0.2, 0.5])
            } else {
                Context::Caption { caption_tokens: vec![0, 3] }
            };
            let t = p.sample(&ctx, seed, 6).unwrap();
            let g = p.grad_log_prob(&ctx, &t.tokens).unwrap();
            let fd = central_difference(&p, |q| q.log_prob(&ctx, &t.tokens).unwrap());
            assert!(rel_err(&g, &fd) < 1e-6, "seed {seed}: {}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn grad_edge_cases() {
        let p = random_params(5, 1.0);
        let ctx = image(&[0.0, 0.5, 0.5]);
        assert!(p.grad_log_prob(&ctx, &[]).unwrap().is_zero());
        let g = p.grad_log_prob(&ctx, &[1, 2, 3]).unwrap();
        let col = p.layout().feature_column(0);
        for v in 0..8 {
            assert_eq!(g.get(v, col), 0.0);
        }
        // image contexts never touch caption columns
        let cap = p.layout().caption_column(2);
        assert!((0..8).all(|v| g.get(v, cap) == 0.0));
    }

    #[test]
    fn kl_examples() {
        let a = random_params(1, 1.0);
        let b = random_params(2, 1.0);
        let ctx = image(&[0.1, 0.9, 0.4]);
        let t = a.sample(&ctx, 5, 6).unwrap();
        assert_eq!(a.kl_divergence(&a, &ctx, &t.tokens).unwrap(), 0.0);
        assert!(a.kl_divergence(&b, &ctx, &t.tokens).unwrap() > 0.0);
        assert_eq!(a.kl_divergence(&b, &ctx, &[]).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_direct_summation_on_three_tokens() {
        let v = Arc::new(Vocab::new(["x", "y", "z"], None).unwrap());
        let l = PolicyParams::zeros(v.clone(), 0, 1).layout();
        let col = l.position_column(0, 0);
        let a = PolicyParams::zeros(v.clone(), 0, 1)
            .with_weight(0, col, 1.0)
            .with_weight(1, col, -0.5);
        let b = PolicyParams::zeros(v, 0, 1).with_weight(2, col, 0.75);
        // direct oracle from hand-built categoricals
        let softmax = |z: [f64; 3]| {
            let s: f64 = z.iter().map(|x| x.exp()).sum();
            [z[0].exp() / s, z[1].exp() / s, z[2].exp() / s]
        };
        let p = softmax([1.0, -0.5, 0.0]);
        let q = softmax([0.0, 0.0, 0.75]);
        let oracle: f64 = (0..3).map(|i| p[i] * (p[i] / q[i]).ln()).sum();
        let ctx = image(&[]);
        let kl = a.kl_divergence(&b, &ctx, &[1]).unwrap();
        assert!((kl - oracle).abs() < 1e-14);
        assert!((categorical_kl(&p, &q) - oracle).abs() < 1e-15);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let a = random_params(11, 1.0);
        let b = random_params(12, 1.0);
        let ctx = image(&[0.3, 0.3, 0.8]);
        let t = a.sample(&ctx, 3, 6).unwrap();
        let mut g = Matrix::zeros(a.weights.rows, a.weights.cols);
        a.kl_with_grad(&b, &ctx, &t.tokens, Some((1.0, &mut g))).unwrap();
        let fd = central_difference(&a, |q| q.kl_divergence(&b, &ctx, &t.tokens).unwrap());
        assert!(rel_err(&g, &fd) < 1e-6);
    }

    #[test]
    fn greedy_rules() {
        let p = PolicyParams::zeros(vocab8(), 3, 6);
        let ctx = image(&[0.5, 0.5, 0.5]);
        let t = p.greedy(&ctx, 6).unwrap();
        assert_eq!(t.tokens, vec![0; 6]);
        let q = random_params(4, 2.0);
        assert_eq!(q.greedy(&ctx, 6).unwrap(), q.greedy(&ctx, 6).unwrap());
    }

    #[test]
    fn snapshot_bytes_round_trip() {
        let p = random_params(8, 1.0);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"HIQA");
        assert_eq!(PolicyParams::from_bytes(&bytes, vocab8()).unwrap(), p);
        assert!(PolicyParams::from_bytes(&bytes[..bytes.len() - 1], vocab8()).is_err());
        let other = Arc::new(Vocab::new(["a", "b"], None).unwrap());
        assert!(matches!(PolicyParams::from_bytes(&bytes, other), Err(Error::Shape(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(PolicyParams::from_bytes(&bad, vocab8()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kl_is_nonnegative(sa in any::<u64>(), sb in any::<u64>(), st in any::<u64>()) {
            let a = random_params(sa, 2.0);
            let b = random_params(sb, 2.0);
            let ctx = image(&[0.5, 0.1, 0.9]);
            let t = a.sample(&ctx, st, 6).unwrap();
            prop_assert!(a.kl_divergence(&b, &ctx, &t.tokens).unwrap() >= 0.0);
        }
    }
}
