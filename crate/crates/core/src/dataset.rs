//! Annotation records: validation, aggregation, statistics and a synthetic
//! stand-in corpus.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{plcc, srcc, PairedSeries};
use crate::text::{normalize_tokens, TokenBag};
use crate::{Error, Result};

/// One rater's answer to the eight annotation questions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AnnotationRecord {
    pub image_id: String,
    pub rater_id: String,
    pub semantic_theme: String,
    pub overall_quality: f64,
    pub good_impact: String,
    pub good_scale: f64,
    pub bad_impact: String,
    pub bad_scale: f64,
    pub suggestions: String,
    pub ideal_quality: f64,
}

impl AnnotationRecord {
    fn numeric_fields(&self) -> [(&'static str, f64); 4] {
        [
            ("overall_quality", self.overall_quality),
            ("good_scale", self.good_scale),
            ("bad_scale", self.bad_scale),
            ("ideal_quality", self.ideal_quality),
        ]
    }

    fn text_fields(&self) -> [(&'static str, &str); 4] {
        [
            ("semantic_theme", &self.semantic_theme),
            ("good_impact", &self.good_impact),
            ("bad_impact", &self.bad_impact),
            ("suggestions", &self.suggestions),
        ]
    }
}

/// Text fields that make up the human reference of a rater.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ReferenceFields {
    pub semantic_theme: bool,
    pub good_impact: bool,
    pub bad_impact: bool,
    pub suggestions: bool,
}

impl Default for ReferenceFields {
    fn default() -> Self {
        Self {
            semantic_theme: true,
            good_impact: true,
            bad_impact: true,
            suggestions: false,
        }
    }
}

impl ReferenceFields {
    /// Selected fields of `r`, space-joined in a fixed order.
    pub fn text_of(&self, r: &AnnotationRecord) -> String {
        let parts = [
            (self.semantic_theme, r.semantic_theme.as_str()),
            (self.good_impact, r.good_impact.as_str()),
            (self.bad_impact, r.bad_impact.as_str()),
            (self.suggestions, r.suggestions.as_str()),
        ];
        let mut out = String::new();
        for (on, text) in parts {
            if on && !text.trim().is_empty() {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(text.trim());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DatasetConfig {
    /// Lowest admissible value of every numeric field.
    pub score_min: f64,
    /// Highest admissible value of every numeric field.
    pub score_max: f64,
    pub min_raters: usize,
    pub reference_fields: ReferenceFields,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            score_min: 1.0,
            score_max: 5.0,
            min_raters: 3,
            reference_fields: ReferenceFields::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_min < self.score_max) {
            return Err(Error::Config("dataset.score_min must be below dataset.score_max".into()));
        }
        if self.min_raters == 0 {
            return Err(Error::Config("dataset.min_raters must be >= 1".into()));
        }
        Ok(())
    }
}

/// A line that did not become a record.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    /// Offending field, when one can be named.
    pub field: Option<String>,
    pub reason: String,
}

/// An accepted record with an empty text field.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmptyFieldFlag {
    pub line: usize,
    pub field: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    pub lines: usize,
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    pub empty_fields: Vec<EmptyFieldFlag>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty()
    }
}

/// Streaming validator: range checks plus `(image_id, rater_id)` uniqueness.
#[derive(Debug)]
pub struct RecordValidator {
    config: DatasetConfig,
    seen: BTreeSet<(String, String)>,
    report: ValidationReport,
}

impl RecordValidator {
    pub fn new(config: DatasetConfig) -> Self {
        Self {
            config,
            seen: BTreeSet::new(),
            report: ValidationReport::default(),
        }
    }

    /// Records a line that could not be decoded at all.
    pub fn reject_line(&mut self, line: usize, field: Option<String>, reason: String) {
        self.report.lines += 1;
        self.report.rejected.push(Rejection { line, field, reason });
    }

    /// Checks a decoded record. Returns it back when accepted.
    pub fn check(&mut self, line: usize, record: AnnotationRecord) -> Option<AnnotationRecord> {
        self.report.lines += 1;
        for (name, value) in [("image_id", &record.image_id), ("rater_id", &record.rater_id)] {
            if value.trim().is_empty() {
                self.report.rejected.push(Rejection {
                    line,
                    field: Some(name.into()),
                    reason: format!("{name} is empty"),
                });
                return None;
            }
        }
        for (name, value) in record.numeric_fields() {
            if !value.is_finite() || value < self.config.score_min || value > self.config.score_max {
                self.report.rejected.push(Rejection {
                    line,
                    field: Some(name.into()),
                    reason: format!(
                        "{name} = {value} outside [{}, {}]",
                        self.config.score_min, self.config.score_max
                    ),
                });
                return None;
            }
        }
        let key = (record.image_id.clone(), record.rater_id.clone());
        if self.seen.contains(&key) {
            self.report.rejected.push(Rejection {
                line,
                field: Some("rater_id".into()),
                reason: format!("duplicate rating of image {} by rater {}", key.0, key.1),
            });
            return None;
        }
        self.seen.insert(key);
        for (name, text) in record.text_fields() {
            if text.trim().is_empty() {
                self.report.empty_fields.push(EmptyFieldFlag {
                    line,
                    field: name.into(),
                });
            }
        }
        self.report.accepted += 1;
        Some(record)
    }

    pub fn finish(self) -> ValidationReport {
        self.report
    }
}

/// All ratings of one image.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregatedSample {
    pub image_id: String,
    pub raters: Vec<AnnotationRecord>,
    pub mean_overall: f64,
    pub mean_good_scale: f64,
    pub mean_bad_scale: f64,
    pub mean_ideal: f64,
    /// Pooled reference text of every rater.
    pub reference_text: String,
    pub reference_bag: TokenBag,
    /// Per-rater reference bags, in rater order.
    pub rater_bags: Vec<TokenBag>,
    /// Fewer raters than `min_raters`.
    pub under_rated: bool,
    pub features: Option<Vec<f64>>,
}

/// Shifted mean; exact when all values are equal.
fn stable_mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = xs.clone();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let n = xs.clone().count() as f64;
    first + xs.map(|x| x - first).sum::<f64>() / n
}

/// Groups records by image, in order of first appearance.
pub fn aggregate(records: &[AnnotationRecord], config: &DatasetConfig) -> Vec<AggregatedSample> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        let entry = groups.entry(r.image_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(r.image_id.as_str());
        }
        entry.push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let raters: Vec<AnnotationRecord> = groups[id].iter().map(|&r| r.clone()).collect();
            let texts: Vec<String> = raters
                .iter()
                .map(|r| config.reference_fields.text_of(r))
                .collect();
            let rater_bags: Vec<TokenBag> = texts.iter().map(|t| TokenBag::from_text(t)).collect();
            let mut reference_bag = TokenBag::new();
            for b in &rater_bags {
                reference_bag.merge(b);
            }
            let reference_text = texts
                .iter()
                .filter(|t| !t.is_empty())
                .cloned()
                .collect::<Vec<_>>()
                .join(" ");
            AggregatedSample {
                image_id: id.to_string(),
                mean_overall: stable_mean(raters.iter().map(|r| r.overall_quality)),
                mean_good_scale: stable_mean(raters.iter().map(|r| r.good_scale)),
                mean_bad_scale: stable_mean(raters.iter().map(|r| r.bad_scale)),
                mean_ideal: stable_mean(raters.iter().map(|r| r.ideal_quality)),
                under_rated: raters.len() < config.min_raters,
                raters,
                reference_text,
                reference_bag,
                rater_bags,
                features: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ImpactScale {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum QualityTarget {
    Overall,
    Ideal,
}

/// PLCC / SRCC of one impact scale against one quality score, over
/// individual ratings. `None` when undefined (constant column or < 2 rows).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrelationCell {
    pub scale: ImpactScale,
    pub target: QualityTarget,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StatsReport {
    pub samples: usize,
    pub ratings: usize,
    pub under_rated: usize,
    /// Most frequent unigrams over good and bad impact texts, count-descending
    /// then alphabetical.
    pub top_words: Vec<(String, u32)>,
    pub cells: Vec<CorrelationCell>,
}

impl StatsReport {
    pub fn cell(&self, scale: ImpactScale, target: QualityTarget) -> Option<&CorrelationCell> {
        self.cells.iter().find(|c| c.scale == scale && c.target == target)
    }
}

/// Word frequencies and the scale/quality correlation table.
pub fn summarize(samples: &[AggregatedSample], top_k: usize) -> StatsReport {
    let mut freq = TokenBag::new();
    let (mut good, mut bad, mut overall, mut ideal) = (vec![], vec![], vec![], vec![]);
    for s in samples {
        for r in &s.raters {
            for w in normalize_tokens(&r.good_impact)
                .into_iter()
                .chain(normalize_tokens(&r.bad_impact))
            {
                freq.add(w, 1);
            }
            good.push(r.good_scale);
            bad.push(r.bad_scale);
            overall.push(r.overall_quality);
            ideal.push(r.ideal_quality);
        }
    }
    let mut top_words: Vec<(String, u32)> = freq.iter().map(|(w, c)| (w.to_string(), c)).collect();
    top_words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top_words.truncate(top_k);

    let mut cells = Vec::with_capacity(4);
    for (scale, xs) in [(ImpactScale::Good, &good), (ImpactScale::Bad, &bad)] {
        for (target, ys) in [(QualityTarget::Overall, &overall), (QualityTarget::Ideal, &ideal)] {
            let series = PairedSeries::new(xs, ys);
            cells.push(CorrelationCell {
                scale,
                target,
                plcc: series.as_ref().ok().and_then(|s| plcc(s).ok()),
                srcc: series.as_ref().ok().and_then(|s| srcc(s).ok()),
            });
        }
    }
    StatsReport {
        samples: samples.len(),
        ratings: good.len(),
        under_rated: samples.iter().filter(|s| s.under_rated).count(),
        top_words,
        cells,
    }
}

/// Attribute order of synthetic feature vectors.
pub const FEATURE_NAMES: [&str; 4] = ["sharpness", "brightness", "noise", "salience"];

/// Level words per attribute, from worst to best perceived quality.
pub const LEVEL_WORDS: [[&str; 3]; 4] = [
    ["blurry", "soft", "sharp"],
    ["dark", "balanced", "bright"],
    ["noisy", "grainy", "clean"],
    ["cluttered", "plain", "clear"],
];

const SUGGESTION_WORDS: [&str; 4] = ["focus", "exposure", "denoise", "framing"];

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticConfig {
    pub raters: usize,
    /// Weights of the four quality attributes in the affine score; sum to 1
    /// so the noiseless score spans the full range.
    pub weights: [f64; 4],
    /// Half-width of the uniform noise added to the image score.
    pub score_noise: f64,
    /// Half-width of the uniform per-rater offset of `overall_quality`.
    pub rater_jitter: f64,
    /// Half-width of the per-rater perturbation of perceived attributes.
    pub perception_jitter: f64,
    /// Half-width of each attribute's spread around the image's latent
    /// quality. At 0.5 or more the attributes are independent uniforms.
    pub attribute_spread: f64,
    pub theme: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            raters: 3,
            weights: [0.35, 0.15, 0.3, 0.2],
            score_noise: 0.1,
            rater_jitter: 0.2,
            perception_jitter: 0.08,
            attribute_spread: 0.25,
            theme: "photo".into(),
        }
    }
}

/// Quality attributes: noise is inverted so that higher is always better.
pub fn quality_attributes(features: &[f64]) -> [f64; 4] {
    [features[0], features[1], 1.0 - features[2], features[3]]
}

/// Level index (0 worst, 2 best) of a perceived attribute.
pub fn level_of(q: f64) -> usize {
    if q < 1.0 / 3.0 {
        0
    } else if q > 2.0 / 3.0 {
        2
    } else {
        1
    }
}

impl SyntheticConfig {
    /// Noiseless score: `min + (max - min) * sum_k w_k q_k`, clamped.
    pub fn affine_score(&self, features: &[f64], data: &DatasetConfig) -> f64 {
        let q = quality_attributes(features);
        let z: f64 = q.iter().zip(&self.weights).map(|(a, w)| a * w).sum();
        (data.score_min + (data.score_max - data.score_min) * z).clamp(data.score_min, data.score_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticCorpus {
    pub samples: Vec<AggregatedSample>,
    /// Noiseless affine score of each sample, for oracle checks.
    pub affine_scores: Vec<f64>,
    pub generator: SyntheticConfig,
}

/// Raw attributes around a latent quality `u ~ U(0, 1)`. Noise runs
/// opposite to quality.
fn sample_attributes(rng: &mut ChaCha8Rng, spread: f64) -> Vec<f64> {
    if spread >= 0.5 {
        return (0..FEATURE_NAMES.len()).map(|_| rng.random::<f64>()).collect();
    }
    let u: f64 = rng.random();
    let q: Vec<f64> = (0..FEATURE_NAMES.len())
        .map(|_| (u + uniform_pm(rng, spread)).clamp(0.0, 1.0))
        .collect();
    vec![q[0], q[1], 1.0 - q[2], q[3]]
}

fn uniform_pm(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        return 0.0;
    }
    half_width * (2.0 * rng.random::<f64>() - 1.0)
}

/// Deterministic synthetic corpus with features, scores and rater texts.
pub fn make_synthetic_corpus(
    count: usize,
    seed: u64,
    synth: &SyntheticConfig,
    data: &DatasetConfig,
) -> Result<SyntheticCorpus> {
    if count == 0 {
        return Err(Error::Config("synthetic corpus size must be >= 1".into()));
    }
    if synth.raters == 0 {
        return Err(Error::Config("synthetic.raters must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (data.score_min, data.score_max);
    let mut records = Vec::with_capacity(count * synth.raters);
    let mut features_all = Vec::with_capacity(count);
    let mut affine_scores = Vec::with_capacity(count);
    for i in 0..count {
        let features = sample_attributes(&mut rng, synth.attribute_spread);
        let affine = synth.affine_score(&features, data);
        let score = (affine + uniform_pm(&mut rng, synth.score_noise)).clamp(lo, hi);
        let image_id = format!("syn-{i:05}");
        for r in 0..synth.raters {
            let q = quality_attributes(&features);
            let perceived: Vec<f64> = q
                .iter()
                .map(|&a| (a + uniform_pm(&mut rng, synth.perception_jitter)).clamp(0.0, 1.0))
                .collect();
            let (mut good_words, mut bad_words, mut suggestions) = (vec![], vec![], vec![]);
            let (mut good_q, mut bad_q) = (vec![], vec![]);
            for (k, &p) in perceived.iter().enumerate() {
                let word = LEVEL_WORDS[k][level_of(p)];
                if p >= 0.5 {
                    good_words.push(word);
                    good_q.push(p);
                } else {
                    bad_words.push(word);
                    bad_q.push(1.0 - p);
                    suggestions.push(SUGGESTION_WORDS[k]);
                }
            }
            let scale_of = |v: &[f64]| {
                if v.is_empty() {
                    lo
                } else {
                    lo + (hi - lo) * v.iter().sum::<f64>() / v.len() as f64
                }
            };
            let overall = (score + uniform_pm(&mut rng, synth.rater_jitter)).clamp(lo, hi);
            let bad_scale = scale_of(&bad_q);
            let ideal = (overall + 0.5 * (bad_scale - lo)).clamp(lo, hi);
            records.push(AnnotationRecord {
                image_id: image_id.clone(),
                rater_id: format!("r{r}"),
                semantic_theme: synth.theme.clone(),
                overall_quality: overall,
                good_impact: good_words.join(" "),
                good_scale: scale_of(&good_q),
                bad_impact: bad_words.join(" "),
                bad_scale,
                suggestions: suggestions.join(" "),
                ideal_quality: ideal,
            });
        }
        features_all.push(features);
        affine_scores.push(affine);
    }
    let mut samples = aggregate(&records, data);
    for (s, f) in samples.iter_mut().zip(features_all) {
        s.features = Some(f);
    }
    Ok(SyntheticCorpus {
        samples,
        affine_scores,
        generator: synth.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(image: &str, rater: &str, overall: f64) -> AnnotationRecord {
        AnnotationRecord {
            image_id: image.into(),
            rater_id: rater.into(),
            semantic_theme: "dog".into(),
            overall_quality: overall,
            good_impact: "sharp fur".into(),
            good_scale: 4.0,
            bad_impact: "dark corner".into(),
            bad_scale: 2.0,
            suggestions: "brighten".into(),
            ideal_quality: 5.0,
        }
    }

    #[test]
    fn validator_rules() {
        let mut v = RecordValidator::new(DatasetConfig::default());
        assert!(v.check(1, record("a", "r1", 3.0)).is_some());
        assert!(v.check(2, record("a", "r1", 4.0)).is_none());
        assert!(v.check(3, record("a", "r2", 6.0)).is_none());
        let mut blank = record("b", "r1", 3.0);
        blank.suggestions = "  ".into();
        assert!(v.check(4, blank).is_some());
        v.reject_line(5, None, "not json".into());
        let rep = v.finish();
        assert_eq!(rep.lines, 5);
        assert_eq!(rep.accepted, 2);
        assert_eq!(rep.rejected.len(), 3);
        assert!(rep.rejected[0].reason.contains("duplicate"));
        assert_eq!(rep.rejected[1].field.as_deref(), Some("overall_quality"));
        assert_eq!(rep.empty_fields, vec![EmptyFieldFlag { line: 4, field: "suggestions".into() }]);
    }

    #[test]
    fn aggregation_examples() {
        let recs = [record("x", "a", 3.0), record("x", "b", 4.0), record("x", "c", 5.0)];
        let s = aggregate(&recs, &DatasetConfig::default());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_overall, 4.0);
        assert!(!s[0].under_rated);

        let s = aggregate(&[record("y", "a", 2.5)], &DatasetConfig::default());
        assert!(s[0].under_rated);
        assert_eq!(s[0].mean_overall, 2.5);

        let mut a = record("z", "a", 3.0);
        let mut b = record("z", "b", 3.0);
        for (r, t) in [(&mut a, "blurry sky"), (&mut b, "sky too dark")] {
            r.semantic_theme = String::new();
            r.good_impact = String::new();
            r.bad_impact = t.into();
        }
        let s = aggregate(&[a, b], &DatasetConfig::default());
        let bag = &s[0].reference_bag;
        assert_eq!((bag.count("blurry"), bag.count("sky"), bag.count("too"), bag.count("dark")), (1, 2, 1, 1));
        assert_eq!(bag.total(), 5);
    }

    #[test]
    fn stable_mean_is_exact_for_equal_values() {
        let v = [0.1, 0.1, 0.1];
        assert_eq!(stable_mean(v.iter().copied()), 0.1);
    }

    #[test]
    fn summary_frequencies_double() {
        let one = aggregate(&[record("a", "r", 3.0)], &DatasetConfig::default());
        let two = aggregate(&[record("a", "r", 3.0), record("b", "r", 3.0)], &DatasetConfig::default());
        let s1 = summarize(&one, 10);
        let s2 = summarize(&two, 10);
        for ((w1, c1), (w2, c2)) in s1.top_words.iter().zip(&s2.top_words) {
            assert_eq!(w1, w2);
            assert_eq!(2 * c1, *c2);
        }
        assert!(s1.cells.iter().all(|c| c.plcc.is_none()));
    }

    #[test]
    fn synthetic_rules() {
        let data = DatasetConfig::default();
        let a = make_synthetic_corpus(20, 7, &SyntheticConfig::default(), &data).unwrap();
        let b = make_synthetic_corpus(20, 7, &SyntheticConfig::default(), &data).unwrap();
        assert_eq!(a, b);
        let quiet = SyntheticConfig {
            score_noise: 0.0,
            rater_jitter: 0.0,
            ..SyntheticConfig::default()
        };
        let c = make_synthetic_corpus(50, 3, &quiet, &data).unwrap();
        for (s, &affine) in c.samples.iter().zip(&c.affine_scores) {
            assert_eq!(s.mean_overall, affine);
            assert_eq!(affine, quiet.affine_score(s.features.as_ref().unwrap(), &data));
        }
        for s in &a.samples {
            assert_eq!(s.raters.len(), 3);
            let f = s.features.as_ref().unwrap();
            assert!(f.iter().all(|x| (0.0..=1.0).contains(x)));
            assert!((data.score_min..=data.score_max).contains(&s.mean_overall));
        }
        assert!(make_synthetic_corpus(0, 1, &quiet, &data).is_err());
    }

    #[test]
    fn level_words_follow_rule_table() {
        assert_eq!(LEVEL_WORDS[0][level_of(1.0)], "sharp");
        assert_eq!(LEVEL_WORDS[0][level_of(0.0)], "blurry");
        assert_eq!(LEVEL_WORDS[2][level_of(quality_attributes(&[0.0, 0.0, 1.0, 0.0])[2])], "noisy");
    }
}
