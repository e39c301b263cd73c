//! Two-stage episodes, the training loop and policy evaluation.
//!
//! Stage one conditions on image features and emits caption, reasoning and
//! rating. Stage two sees only the caption produced in stage one and emits
//! reasoning and rating. Stage-one trajectories are scored on reasoning,
//! prediction, format and self-consistency, the last being the cosine reward
//! of a greedy caption-only readout. Stage-two trajectories form their own
//! groups, scored on self-consistency and format.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{level_of, AggregatedSample, LEVEL_WORDS};
use crate::grpo::{grpo_step, GrpoConfig, StepDiagnostics, TrajectoryGroup};
use crate::metrics::{corpus_rouge1, plcc, srcc, PairedSeries};
use crate::policy::{Context, PolicyParams, Trajectory, Vocab};
use crate::protocol::{parse_output, StructuredOutput, TagSchema};
use crate::reward::{assess_caption_only, assess_full, reasoning_reward, RewardBreakdown, RewardConfig};
use crate::text::{ReferenceAggregation, TokenBag};
use crate::{Error, Result};

pub const EOS: &str = "<eos>";

const FILLER_WORDS: [&str; 10] = [
    "the", "photo", "subject", "is", "with", "and", "light", "detail", "texture", "scene",
];

/// Rating tokens `1.0, 1.5, ..., 5.0`.
pub fn score_tokens(score_min: f64, score_max: f64, step: f64) -> Vec<String> {
    let n = libm::round((score_max - score_min) / step) as usize;
    (0..=n).map(|i| format!("{:.1}", score_min + step * i as f64)).collect()
}

/// Built-in vocabulary: schema tags, end token, attribute and filler words,
/// and half-point rating tokens over `[score_min, score_max]`.
pub fn default_vocab(score_min: f64, score_max: f64) -> Result<Vocab> {
    let mut tokens: Vec<String> = Vec::new();
    for name in ["caption", "think", "answer", "subject", "advantage", "flaw"] {
        tokens.push(format!("<{name}>"));
        tokens.push(format!("</{name}>"));
    }
    tokens.push(EOS.into());
    for level in LEVEL_WORDS {
        tokens.extend(level.iter().map(|w| String::from(*w)));
    }
    tokens.extend(FILLER_WORDS.iter().map(|w| String::from(*w)));
    tokens.extend(score_tokens(score_min, score_max, 0.5));
    Vocab::new(tokens, Some(EOS))
}

/// Token ids that are plain words (not tags, end token or ratings).
pub fn content_words(vocab: &Vocab) -> Vec<usize> {
    (0..vocab.len())
        .filter(|&i| {
            let t = vocab.token(i).unwrap_or("");
            !t.starts_with('<') && t.parse::<f64>().is_err()
        })
        .collect()
}

/// Token ids that parse as numbers.
pub fn rating_tokens(vocab: &Vocab) -> Vec<usize> {
    (0..vocab.len())
        .filter(|&i| vocab.token(i).is_some_and(|t| t.parse::<f64>().is_ok()))
        .collect()
}

/// Strength of the structural prior the policy starts from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PriorConfig {
    /// Words per free-text section in the template layout.
    pub section_words: usize,
    /// Logit bonus of the expected tag at each tag position.
    pub tag_strength: f64,
    /// Logit bonus of every word (or rating) at content positions.
    pub content_strength: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            section_words: 4,
            tag_strength: 7.0,
            content_strength: 4.0,
        }
    }
}

/// Positions of one stage's template: `Some(token)` for a fixed tag, `None`
/// for a content slot of the given kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Tag(usize),
    Words,
    Rating,
}

fn template(schema: &TagSchema, vocab: &Vocab, words: usize) -> Result<Vec<Slot>> {
    let mut slots = Vec::new();
    for name in schema.sections() {
        let open = vocab
            .id(&format!("<{name}>"))
            .ok_or_else(|| Error::Config(format!("vocabulary lacks tag <{name}>")))?;
        let close = vocab
            .id(&format!("</{name}>"))
            .ok_or_else(|| Error::Config(format!("vocabulary lacks tag </{name}>")))?;
        slots.push(Slot::Tag(open));
        if name == schema.answer_section() {
            slots.push(Slot::Rating);
        } else {
            slots.extend(core::iter::repeat_n(Slot::Words, words));
        }
        slots.push(Slot::Tag(close));
    }
    if let Some(e) = vocab.eos() {
        slots.push(Slot::Tag(e));
    }
    Ok(slots)
}

/// Policy whose position biases follow the two stage templates, with no
/// preference among words or ratings. This stands in for a pretrained model
/// that already follows the output format most of the time.
pub fn template_prior(
    vocab: Arc<Vocab>,
    feature_dim: usize,
    max_len: usize,
    schemas: [&TagSchema; 2],
    prior: &PriorConfig,
) -> Result<PolicyParams> {
    let mut params = PolicyParams::zeros(vocab.clone(), feature_dim, max_len);
    let layout = params.layout();
    let words = content_words(&vocab);
    let ratings = rating_tokens(&vocab);
    for (stage, schema) in schemas.iter().enumerate() {
        let slots = template(schema, &vocab, prior.section_words)?;
        if slots.len() > max_len {
            return Err(Error::Config(format!(
                "template needs {} positions but max_len is {max_len}",
                slots.len()
            )));
        }
        let w = params.weights_mut();
        for (pos, slot) in slots.iter().enumerate() {
            let col = layout.position_column(stage, pos);
            match *slot {
                Slot::Tag(t) => *w.get_mut(t, col) += prior.tag_strength,
                Slot::Words => words.iter().for_each(|&t| *w.get_mut(t, col) += prior.content_strength),
                Slot::Rating => ratings.iter().for_each(|&t| *w.get_mut(t, col) += prior.content_strength),
            }
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RolloutConfig {
    pub max_len: usize,
    /// Samples per training iteration.
    pub batch_size: usize,
    /// Gradient steps per sampled batch against the same behaviour policy.
    pub updates_per_batch: usize,
    pub stage1_sections: Vec<String>,
    pub stage2_sections: Vec<String>,
    pub answer_section: String,
    pub reference_aggregation: ReferenceAggregation,
    pub prior: PriorConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_len: 48,
            batch_size: 32,
            updates_per_batch: 1,
            stage1_sections: ["caption", "think", "answer"].map(String::from).to_vec(),
            stage2_sections: ["think", "answer"].map(String::from).to_vec(),
            answer_section: "answer".into(),
            reference_aggregation: ReferenceAggregation::Concatenate,
            prior: PriorConfig::default(),
        }
    }
}

impl RolloutConfig {
    pub fn stage1_schema(&self) -> Result<TagSchema> {
        TagSchema::new(self.stage1_sections.iter().cloned(), &self.answer_section)
    }

    pub fn stage2_schema(&self) -> Result<TagSchema> {
        TagSchema::new(self.stage2_sections.iter().cloned(), &self.answer_section)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("rollout.max_len must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("rollout.batch_size must be >= 1".into()));
        }
        if self.updates_per_batch == 0 {
            return Err(Error::Config("rollout.updates_per_batch must be >= 1".into()));
        }
        let s1 = self.stage1_schema()?;
        self.stage2_schema()?;
        if !s1.contains("caption") {
            return Err(Error::Config(
                "rollout.stage1_sections must contain a caption section".into(),
            ));
        }
        Ok(())
    }
}

/// Everything an episode needs: schemas, rewards and group settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSettings {
    pub stage1: TagSchema,
    pub stage2: TagSchema,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub max_len: usize,
    pub aggregation: ReferenceAggregation,
}

impl EpisodeSettings {
    pub fn new(rollout: &RolloutConfig, reward: &RewardConfig, grpo: &GrpoConfig) -> Result<Self> {
        rollout.validate()?;
        reward.validate()?;
        grpo.validate()?;
        Ok(Self {
            stage1: rollout.stage1_schema()?,
            stage2: rollout.stage2_schema()?,
            reward: reward.clone(),
            grpo: grpo.clone(),
            max_len: rollout.max_len,
            aggregation: rollout.reference_aggregation,
        })
    }
}

/// The three policies of the objective: current, behaviour and reference.
#[derive(Debug, Clone, Copy)]
pub struct Policies<'a> {
    pub current: &'a PolicyParams,
    pub old: &'a PolicyParams,
    pub reference: &'a PolicyParams,
}

impl<'a> Policies<'a> {
    /// All three roles played by one snapshot.
    pub fn single(p: &'a PolicyParams) -> Self {
        Self {
            current: p,
            old: p,
            reference: p,
        }
    }
}

/// Training or evaluation input for one image.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeSample {
    pub sample_id: String,
    pub features: Vec<f64>,
    /// Raw-scale ground-truth rating.
    pub ground_truth: f64,
    pub reference_text: String,
    pub reference: TokenBag,
    pub rater_references: Vec<TokenBag>,
}

/// Policy input width for `raw_dim` attributes under [`encode_features`].
pub fn encoded_feature_dim(raw_dim: usize) -> usize {
    raw_dim * 4
}

/// Policy encoding of attributes in `[0, 1]`: each value recentred to
/// `[-1, 1]`, then a one-hot of its tercile per attribute.
pub fn encode_features(raw: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = raw.iter().map(|f| 2.0 * f - 1.0).collect();
    for &f in raw {
        let mut bins = [0.0; 3];
        bins[level_of(f)] = 1.0;
        out.extend(bins);
    }
    out
}

impl EpisodeSample {
    /// Builds a sample from an aggregated record with synthetic attributes,
    /// applying [`encode_features`].
    pub fn from_aggregated(s: &AggregatedSample) -> Result<Self> {
        let features = encode_features(
            s.features
                .as_ref()
                .ok_or_else(|| Error::Config(format!("sample {} has no features", s.image_id)))?,
        );
        Ok(Self {
            sample_id: s.image_id.clone(),
            features,
            ground_truth: s.mean_overall,
            reference_text: s.reference_text.clone(),
            reference: s.reference_bag.clone(),
            rater_references: s.rater_bags.clone(),
        })
    }
}

/// One group together with the reward breakdown of every trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoredGroup {
    pub group: TrajectoryGroup,
    pub breakdowns: Vec<RewardBreakdown>,
    pub well_formed: Vec<bool>,
    /// Stage one only: rating of the greedy caption-only readout.
    pub caption_only_ratings: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Episode {
    pub sample_id: String,
    pub ground_truth_score: f64,
    pub human_reference: TokenBag,
    pub stage1: ScoredGroup,
    /// One caption-only group per stage-one trajectory, in the same order.
    pub stage2: Vec<ScoredGroup>,
}

/// SplitMix64 finalizer over `base` and `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts.iter().chain(core::iter::once(&0x9E37_79B9_7F4A_7C15)) {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy_decode(params: &PolicyParams, context: &Context, max_len: usize) -> Result<Trajectory> {
    params.greedy(context, max_len)
}

/// Caption token ids of a stage-one transcript; empty if there is no caption.
pub fn caption_tokens(output: &StructuredOutput, vocab: &Vocab) -> Vec<usize> {
    output
        .section("caption")
        .map(|c| vocab.encode_known(c))
        .unwrap_or_default()
}

fn reasoning_score(output: &StructuredOutput, sample: &EpisodeSample, s: &EpisodeSettings) -> f64 {
    let answer = s.stage1.answer_section();
    match s.aggregation {
        ReferenceAggregation::Concatenate => {
            reasoning_reward(output, s.stage1.sections(), answer, &sample.reference).score
        }
        ReferenceAggregation::PerRaterMax => sample
            .rater_references
            .iter()
            .map(|r| reasoning_reward(output, s.stage1.sections(), answer, r).score)
            .fold(0.0, f64::max),
    }
}

/// Greedy caption-only rating for `caption`, if the readout is well formed.
pub fn caption_only_rating(
    params: &PolicyParams,
    caption: Vec<usize>,
    settings: &EpisodeSettings,
) -> Result<(Option<f64>, Trajectory)> {
    let ctx = Context::Caption { caption_tokens: caption };
    let t = greedy_decode(params, &ctx, settings.max_len)?;
    let out = parse_output(&t.raw_text, &settings.stage2);
    Ok((if out.well_formed { out.rating } else { None }, t))
}

fn fill_log_probs(t: &mut Trajectory, ctx: &Context, p: &Policies<'_>) -> Result<()> {
    t.log_prob_current = p.current.log_prob(ctx, &t.tokens)?;
    t.log_prob_old = p.old.log_prob(ctx, &t.tokens)?;
    t.log_prob_ref = p.reference.log_prob(ctx, &t.tokens)?;
    Ok(())
}

/// Samples and scores the image-conditioned group. Trajectories are drawn
/// from `policies.old`.
pub fn run_stage1(
    policies: &Policies<'_>,
    sample: &EpisodeSample,
    settings: &EpisodeSettings,
    seed: u64,
) -> Result<ScoredGroup> {
    let ctx = Context::Image {
        features: sample.features.clone(),
    };
    let n = settings.grpo.group_size;
    let vocab = policies.old.vocab().clone();
    let mut trajectories = Vec::with_capacity(n);
    let mut breakdowns = Vec::with_capacity(n);
    let mut well_formed = Vec::with_capacity(n);
    let mut readouts = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = policies.old.sample(&ctx, derive_seed(seed, &[i as u64]), settings.max_len)?;
        fill_log_probs(&mut t, &ctx, policies)?;
        let out = parse_output(&t.raw_text, &settings.stage1);
        let (rating, _) = if out.well_formed {
            caption_only_rating(policies.current, caption_tokens(&out, &vocab), settings)?
        } else {
            (None, t.clone())
        };
        let mut b = assess_full(
            &out,
            settings.stage1.sections(),
            settings.stage1.answer_section(),
            &sample.reference,
            sample.ground_truth,
            rating,
            &settings.reward,
        );
        if out.well_formed && settings.aggregation != ReferenceAggregation::Concatenate {
            b = RewardBreakdown::combine(
                reasoning_score(&out, sample, settings),
                b.prediction,
                b.self_consistency,
                b.format,
                &settings.reward.weights,
            );
        }
        trajectories.push(t);
        breakdowns.push(b);
        well_formed.push(out.well_formed);
        readouts.push(rating);
    }
    let rewards = breakdowns.iter().map(|b| b.total).collect();
    Ok(ScoredGroup {
        group: TrajectoryGroup::new(ctx, trajectories, rewards, &settings.grpo)?,
        breakdowns,
        well_formed,
        caption_only_ratings: readouts,
    })
}

/// Samples and scores a caption-only group.
pub fn run_stage2(
    policies: &Policies<'_>,
    caption: Vec<usize>,
    ground_truth: f64,
    settings: &EpisodeSettings,
    seed: u64,
) -> Result<ScoredGroup> {
    let ctx = Context::Caption { caption_tokens: caption };
    let n = settings.grpo.group_size;
    let mut trajectories = Vec::with_capacity(n);
    let mut breakdowns = Vec::with_capacity(n);
    let mut well_formed = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = policies.old.sample(&ctx, derive_seed(seed, &[i as u64]), settings.max_len)?;
        fill_log_probs(&mut t, &ctx, policies)?;
        let out = parse_output(&t.raw_text, &settings.stage2);
        breakdowns.push(assess_caption_only(&out, ground_truth, &settings.reward));
        well_formed.push(out.well_formed);
        trajectories.push(t);
    }
    let rewards = breakdowns.iter().map(|b| b.total).collect();
    Ok(ScoredGroup {
        group: TrajectoryGroup::new(ctx, trajectories, rewards, &settings.grpo)?,
        breakdowns,
        well_formed,
        caption_only_ratings: Vec::new(),
    })
}

/// Full two-stage episode.
pub fn run_episode(
    policies: &Policies<'_>,
    sample: &EpisodeSample,
    settings: &EpisodeSettings,
    seed: u64,
) -> Result<Episode> {
    let stage1 = run_stage1(policies, sample, settings, derive_seed(seed, &[1]))?;
    let vocab = policies.old.vocab().clone();
    let mut stage2 = Vec::with_capacity(stage1.group.trajectories.len());
    for (i, t) in stage1.group.trajectories.iter().enumerate() {
        let out = parse_output(&t.raw_text, &settings.stage1);
        let caption = caption_tokens(&out, &vocab);
        stage2.push(run_stage2(
            policies,
            caption,
            sample.ground_truth,
            settings,
            derive_seed(seed, &[2, i as u64]),
        )?);
    }
    Ok(Episode {
        sample_id: sample.sample_id.clone(),
        ground_truth_score: sample.ground_truth,
        human_reference: sample.reference.clone(),
        stage1,
        stage2,
    })
}

/// Per-iteration training record.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub step: usize,
    /// Stage-one component means.
    pub reasoning: f64,
    pub prediction: f64,
    pub self_consistency: f64,
    pub format: f64,
    pub total: f64,
    /// Fraction of well-formed stage-one transcripts.
    pub format_compliance: f64,
    /// Stage-two component means.
    pub stage2_self_consistency: f64,
    pub stage2_format_compliance: f64,
    pub grpo: StepDiagnostics,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Summary of a set of episodes, without the optimizer diagnostics.
pub fn summarize_episodes(step: usize, episodes: &[Episode]) -> IterationRecord {
    let s1 = || episodes.iter().flat_map(|e| e.stage1.breakdowns.iter());
    let s2 = || episodes.iter().flat_map(|e| e.stage2.iter()).flat_map(|g| g.breakdowns.iter());
    let wf1 = || episodes.iter().flat_map(|e| e.stage1.well_formed.iter());
    let wf2 = || episodes.iter().flat_map(|e| e.stage2.iter()).flat_map(|g| g.well_formed.iter());
    IterationRecord {
        step,
        reasoning: mean_of(s1().map(|b| b.reasoning)),
        prediction: mean_of(s1().map(|b| b.prediction)),
        self_consistency: mean_of(s1().map(|b| b.self_consistency)),
        format: mean_of(s1().map(|b| b.format)),
        total: mean_of(s1().map(|b| b.total)),
        format_compliance: mean_of(wf1().map(|&w| f64::from(u8::from(w)))),
        stage2_self_consistency: mean_of(s2().map(|b| b.self_consistency)),
        stage2_format_compliance: mean_of(wf2().map(|&w| f64::from(u8::from(w)))),
        grpo: StepDiagnostics::default(),
    }
}

/// Output of one training iteration.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub record: IterationRecord,
    pub episodes: Vec<Episode>,
}

/// GRPO training over a fixed sample pool with a frozen reference policy.
/// The behaviour policy is refreshed after every update.
#[derive(Debug, Clone)]
pub struct Trainer {
    params: PolicyParams,
    reference: PolicyParams,
    samples: Vec<EpisodeSample>,
    settings: EpisodeSettings,
    batch_size: usize,
    updates_per_batch: usize,
    seed: u64,
    step: usize,
}

impl Trainer {
    pub fn new(
        init: PolicyParams,
        samples: Vec<EpisodeSample>,
        settings: EpisodeSettings,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("training needs at least one sample".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("rollout.batch_size must be >= 1".into()));
        }
        Ok(Self {
            reference: init.clone(),
            params: init,
            samples,
            settings,
            batch_size,
            updates_per_batch: 1,
            seed,
            step: 0,
        })
    }

    /// Number of gradient steps per batch; the diagnostics of an iteration
    /// describe its last step.
    pub fn with_updates_per_batch(mut self, updates: usize) -> Result<Self> {
        if updates == 0 {
            return Err(Error::Config("rollout.updates_per_batch must be >= 1".into()));
        }
        self.updates_per_batch = updates;
        Ok(self)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn settings(&self) -> &EpisodeSettings {
        &self.settings
    }

    /// Sample indices of the next batch, drawn with replacement.
    fn batch(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.step as u64, 0xBA7C]));
        (0..self.batch_size)
            .map(|_| rng.random_range(0..self.samples.len()))
            .collect()
    }

    pub fn iterate(&mut self) -> Result<IterationOutput> {
        let old = self.params.clone();
        let policies = Policies {
            current: &self.params,
            old: &old,
            reference: &self.reference,
        };
        let mut episodes = Vec::with_capacity(self.batch_size);
        for (slot, idx) in self.batch().into_iter().enumerate() {
            let seed = derive_seed(self.seed, &[self.step as u64, slot as u64, 0xE9]);
            episodes.push(run_episode(&policies, &self.samples[idx], &self.settings, seed)?);
        }
        let groups: Vec<TrajectoryGroup> = episodes
            .iter()
            .flat_map(|e| core::iter::once(&e.stage1).chain(e.stage2.iter()))
            .map(|g| g.group.clone())
            .collect();
        let mut record = summarize_episodes(self.step, &episodes);
        for _ in 0..self.updates_per_batch {
            let outcome = grpo_step(&groups, &self.params, &old, &self.reference, &self.settings.grpo)?;
            record.grpo = outcome.diagnostics;
            self.params = outcome.params;
        }
        self.step += 1;
        Ok(IterationOutput { record, episodes })
    }
}

/// How evaluation transcripts are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Decoding {
    Greedy,
    Sample,
}

/// Ratings and explanation for one sample. Missing ratings are excluded
/// from correlations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prediction {
    pub sample_id: String,
    pub ground_truth: f64,
    /// Image-conditioned rating.
    #[cfg_attr(feature = "serde", serde(default))]
    pub predicted: Option<f64>,
    /// Caption-only rating.
    #[cfg_attr(feature = "serde", serde(default))]
    pub caption_only_predicted: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub candidate_text: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub reference_text: String,
}

/// A [`Prediction`] with the transcripts that produced it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalRow {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub prediction: Prediction,
    pub stage1_text: String,
    /// Exact stage-two policy input.
    pub stage2_context: Context,
    pub stage2_text: String,
}

/// PLCC and SRCC over the rows that produced a rating.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrelationPair {
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    /// Rows with a rating.
    pub count: usize,
}

impl CorrelationPair {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let series = PairedSeries::new(&xs, &ys);
        Self {
            plcc: series.as_ref().ok().and_then(|s| plcc(s).ok()),
            srcc: series.as_ref().ok().and_then(|s| srcc(s).ok()),
            count: pairs.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalMetrics {
    pub samples: usize,
    pub image: CorrelationPair,
    pub caption_only: CorrelationPair,
    pub rouge1: f64,
}

/// Computes metrics over predictions.
pub fn eval_metrics(rows: &[Prediction]) -> Result<EvalMetrics> {
    let image: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.predicted.map(|p| (p, r.ground_truth)))
        .collect();
    let caption: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.caption_only_predicted.map(|p| (p, r.ground_truth)))
        .collect();
    let refs: Vec<TokenBag> = rows.iter().map(|r| TokenBag::from_text(&r.reference_text)).collect();
    let cands: Vec<&str> = rows.iter().map(|r| r.candidate_text.as_str()).collect();
    Ok(EvalMetrics {
        samples: rows.len(),
        image: CorrelationPair::from_pairs(&image),
        caption_only: CorrelationPair::from_pairs(&caption),
        rouge1: corpus_rouge1(&refs, &cands)?,
    })
}

/// Runs both stages on every sample and collects predictions.
pub fn evaluate(
    params: &PolicyParams,
    samples: &[EpisodeSample],
    settings: &EpisodeSettings,
    decoding: Decoding,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let vocab = params.vocab().clone();
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let decode = |ctx: &Context, stage: u64| match decoding {
            Decoding::Greedy => params.greedy(ctx, settings.max_len),
            Decoding::Sample => params.sample(ctx, derive_seed(seed, &[i as u64, stage]), settings.max_len),
        };
        let ctx1 = Context::Image {
            features: s.features.clone(),
        };
        let t1 = decode(&ctx1, 1)?;
        let out1 = parse_output(&t1.raw_text, &settings.stage1);
        let ctx2 = Context::Caption {
            caption_tokens: caption_tokens(&out1, &vocab),
        };
        let t2 = decode(&ctx2, 2)?;
        let out2 = parse_output(&t2.raw_text, &settings.stage2);
        let candidate_text = crate::reward::explanation_text(
            &out1,
            settings.stage1.sections(),
            settings.stage1.answer_section(),
        );
        rows.push(EvalRow {
            prediction: Prediction {
                sample_id: s.sample_id.clone(),
                ground_truth: s.ground_truth,
                predicted: out1.rating.filter(|_| out1.well_formed),
                caption_only_predicted: out2.rating.filter(|_| out2.well_formed),
                candidate_text,
                reference_text: s.reference_text.clone(),
            },
            stage1_text: t1.raw_text,
            stage2_context: ctx2,
            stage2_text: t2.raw_text,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_corpus, DatasetConfig, SyntheticConfig};

    fn setup() -> (Arc<Vocab>, EpisodeSettings, PolicyParams) {
        let vocab = Arc::new(default_vocab(1.0, 5.0).unwrap());
        let rc = RolloutConfig::default();
        let settings = EpisodeSettings::new(&rc, &RewardConfig::default(), &GrpoConfig::default()).unwrap();
        let prior = template_prior(
            vocab.clone(),
            encoded_feature_dim(4),
            rc.max_len,
            [&settings.stage1, &settings.stage2],
            &rc.prior,
        )
        .unwrap();
        (vocab, settings, prior)
    }

    fn sample() -> EpisodeSample {
        let c = make_synthetic_corpus(1, 5, &SyntheticConfig::default(), &DatasetConfig::default()).unwrap();
        EpisodeSample::from_aggregated(&c.samples[0]).unwrap()
    }

    #[test]
    fn vocabulary_layout() {
        let v = default_vocab(1.0, 5.0).unwrap();
        assert_eq!(v.token(0), Some("<caption>"));
        assert_ne!(v.eos(), Some(0));
        assert_eq!(rating_tokens(&v).len(), 9);
        assert_eq!(content_words(&v).len(), 22);
        assert!(v.id("4.5").is_some());
    }

    #[test]
    fn prior_mostly_follows_format() {
        let (_, settings, prior) = setup();
        let ctx = Context::Image {
            features: encode_features(&[0.5; 4]),
        };
        let ok = (0..400)
            .filter(|&s| parse_output(&prior.sample(&ctx, s, 48).unwrap().raw_text, &settings.stage1).well_formed)
            .count();
        assert!(ok > 200 && ok < 380, "{ok}");
    }

    #[test]
    fn episode_structure() {
        let (vocab, settings, prior) = setup();
        let s = sample();
        let e = run_episode(&Policies::single(&prior), &s, &settings, 11).unwrap();
        assert_eq!(e.stage1.group.trajectories.len(), 4);
        assert_eq!(e.stage2.len(), 4);
        for (t, g) in e.stage1.group.trajectories.iter().zip(&e.stage2) {
            let out = parse_output(&t.raw_text, &settings.stage1);
            let Context::Caption { caption_tokens: c } = &g.group.context else {
                panic!("stage two must be caption-only");
            };
            assert_eq!(c, &caption_tokens(&out, &vocab));
            for b in &g.breakdowns {
                assert!(b.total.is_finite() && (0.0..=1.5).contains(&b.total));
            }
        }
        for b in &e.stage1.breakdowns {
            let sum = b.reasoning + b.prediction + b.self_consistency + b.format;
            assert!((b.total - sum).abs() < 1e-12);
        }
        assert_eq!(run_episode(&Policies::single(&prior), &s, &settings, 11).unwrap(), e);
    }

    #[test]
    fn empty_caption_still_scores() {
        let (_, settings, prior) = setup();
        let g = run_stage2(&Policies::single(&prior), Vec::new(), 3.0, &settings, 4).unwrap();
        assert!(g.breakdowns.iter().all(|b| b.total.is_finite() && b.total >= 0.0));
    }

    #[test]
    fn seeds_differ_by_part() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(9, &[3, 4]), derive_seed(9, &[3, 4]));
    }
}
