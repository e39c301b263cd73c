//! Reward components and their weighted total.
//!
//! Scores are compared on a normalized `[0, 1]` scale. The prediction and
//! self-consistency rewards share a raised-cosine shape of bandwidth `t`:
//! `0.5 * (1 + cos(pi * x / t))` for `x < t`, else 0, with `x` the absolute
//! normalized error. The format reward pays a fixed amount for a well-formed
//! transcript, and the reasoning reward is ROUGE-1 recall of the human
//! reference by the model's non-answer sections.

use alloc::format;
use alloc::string::String;

use crate::math;
use crate::protocol::StructuredOutput;
use crate::text::{rouge1_recall, RougeScore, TokenBag};
use crate::{Error, Result};

/// Shape of the prediction reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PredictionShape {
    /// Raised cosine of bandwidth `t`.
    #[default]
    Cosine,
    /// 1 when the error is below `t`, else 0.
    Discrete,
}

/// Per-component multipliers of the total reward.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RewardWeights {
    pub reasoning: f64,
    pub prediction: f64,
    pub self_consistency: f64,
    pub format: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            reasoning: 1.0,
            prediction: 1.0,
            self_consistency: 1.0,
            format: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RewardConfig {
    /// Bandwidth `t` on the normalized score scale, in `(0, 1]`.
    pub bandwidth: f64,
    /// Payout of a well-formed transcript.
    pub format_value: f64,
    /// Lowest raw rating.
    pub score_min: f64,
    /// Highest raw rating.
    pub score_max: f64,
    pub weights: RewardWeights,
    pub prediction_shape: PredictionShape,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.25,
            format_value: 0.5,
            score_min: 1.0,
            score_max: 5.0,
            weights: RewardWeights::default(),
            prediction_shape: PredictionShape::Cosine,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth <= 1.0) {
            return Err(Error::Config(format!(
                "reward.bandwidth must lie in (0, 1], got {}",
                self.bandwidth
            )));
        }
        if !(self.format_value >= 0.0) {
            return Err(Error::Config("reward.format_value must be >= 0".into()));
        }
        if !(self.score_min < self.score_max) || !self.score_min.is_finite() || !self.score_max.is_finite() {
            return Err(Error::Config(
                "reward.score_min must be finite and below reward.score_max".into(),
            ));
        }
        let w = &self.weights;
        for (name, v) in [
            ("reasoning", w.reasoning),
            ("prediction", w.prediction),
            ("self_consistency", w.self_consistency),
            ("format", w.format),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("reward.weights.{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Affine map of a raw rating onto `[0, 1]`, clamped.
pub fn normalize_score(raw: f64, config: &RewardConfig) -> f64 {
    let x = (raw - config.score_min) / (config.score_max - config.score_min);
    x.clamp(0.0, 1.0)
}

/// Raised-cosine reward for an absolute normalized error `x` and bandwidth `t`.
pub fn cosine_reward(x: f64, t: f64) -> f64 {
    if x < t {
        0.5 * (1.0 + math::cos(core::f64::consts::PI * x / t))
    } else {
        0.0
    }
}

/// Cosine reward between two normalized scores. A missing prediction earns 0.
pub fn cosine_score_reward(predicted: Option<f64>, ground_truth: f64, config: &RewardConfig) -> f64 {
    match predicted {
        Some(p) if p.is_finite() => cosine_reward((p - ground_truth).abs(), config.bandwidth),
        _ => 0.0,
    }
}

/// Prediction reward under the configured shape, on normalized scores.
pub fn prediction_reward(predicted: Option<f64>, ground_truth: f64, config: &RewardConfig) -> f64 {
    match config.prediction_shape {
        PredictionShape::Cosine => cosine_score_reward(predicted, ground_truth, config),
        PredictionShape::Discrete => match predicted {
            Some(p) if p.is_finite() && (p - ground_truth).abs() < config.bandwidth => 1.0,
            _ => 0.0,
        },
    }
}

/// Concatenated text of every non-answer section, in schema order.
pub fn explanation_text(output: &StructuredOutput, sections: &[String], answer: &str) -> String {
    let mut text = String::new();
    for name in sections.iter().filter(|s| s.as_str() != answer) {
        if let Some(body) = output.section(name) {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(body);
        }
    }
    text
}

/// ROUGE-1 recall of `human_reference` by the model's explanation text.
/// Malformed transcripts score 0.
pub fn reasoning_reward(
    output: &StructuredOutput,
    sections: &[String],
    answer: &str,
    human_reference: &TokenBag,
) -> RougeScore {
    let degenerate = human_reference.is_empty();
    if !output.well_formed {
        return RougeScore {
            score: 0.0,
            degenerate_reference: degenerate,
        };
    }
    let model = TokenBag::from_text(&explanation_text(output, sections, answer));
    rouge1_recall(human_reference, &model)
}

pub fn format_reward(output: &StructuredOutput, config: &RewardConfig) -> f64 {
    if output.well_formed {
        config.format_value
    } else {
        0.0
    }
}

/// Reward components of one trajectory and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardBreakdown {
    pub reasoning: f64,
    pub prediction: f64,
    pub self_consistency: f64,
    pub format: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn combine(
        reasoning: f64,
        prediction: f64,
        self_consistency: f64,
        format: f64,
        weights: &RewardWeights,
    ) -> Self {
        let total = weights.reasoning * reasoning
            + weights.self_consistency * self_consistency
            + weights.prediction * prediction
            + weights.format * format;
        Self {
            reasoning,
            prediction,
            self_consistency,
            format,
            total,
        }
    }
}

/// Scores an image-conditioned transcript.
///
/// `caption_only_rating` is the raw rating recovered from the caption alone;
/// it feeds the self-consistency component. Everything is gated on the
/// transcript being well formed.
pub fn assess_full(
    output: &StructuredOutput,
    sections: &[String],
    answer: &str,
    human_reference: &TokenBag,
    ground_truth_raw: f64,
    caption_only_rating: Option<f64>,
    config: &RewardConfig,
) -> RewardBreakdown {
    if !output.well_formed {
        return RewardBreakdown::combine(0.0, 0.0, 0.0, 0.0, &config.weights);
    }
    let gt = normalize_score(ground_truth_raw, config);
    let reasoning = reasoning_reward(output, sections, answer, human_reference).score;
    let prediction = prediction_reward(output.rating.map(|r| normalize_score(r, config)), gt, config);
    let self_consistency =
        cosine_score_reward(caption_only_rating.map(|r| normalize_score(r, config)), gt, config);
    RewardBreakdown::combine(
        reasoning,
        prediction,
        self_consistency,
        format_reward(output, config),
        &config.weights,
    )
}

/// Scores a caption-only transcript: self-consistency plus format.
pub fn assess_caption_only(
    output: &StructuredOutput,
    ground_truth_raw: f64,
    config: &RewardConfig,
) -> RewardBreakdown {
    let gt = normalize_score(ground_truth_raw, config);
    let rating = if output.well_formed { output.rating } else { None };
    let sc = cosine_score_reward(rating.map(|r| normalize_score(r, config)), gt, config);
    RewardBreakdown::combine(0.0, 0.0, sc, format_reward(output, config), &config.weights)
}
