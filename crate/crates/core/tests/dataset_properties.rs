use hiqa_core::dataset::*;
use hiqa_core::metrics::{plcc, srcc, PairedSeries};
use hiqa_core::protocol::{parse_output, render, TagSchema};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn record(image: u8, rater: u8, overall: f64, good: f64) -> AnnotationRecord {
    AnnotationRecord {
        image_id: format!("img{image}"),
        rater_id: format!("r{rater}"),
        semantic_theme: "street".into(),
        overall_quality: overall,
        good_impact: "sharp".into(),
        good_scale: good,
        bad_impact: String::new(),
        bad_scale: 2.0,
        suggestions: String::new(),
        ideal_quality: 4.0,
    }
}

fn arb_record() -> impl Strategy<Value = AnnotationRecord> {
    (0u8..6, 0u8..4, 0.0f64..6.0, 0.5f64..5.5).prop_map(|(i, r, o, g)| record(i, r, o, g))
}

proptest! {
    #[test]
    fn validation_partitions_lines_and_aggregation_conserves_ratings(
        records in prop::collection::vec(arb_record(), 0..40),
    ) {
        let cfg = DatasetConfig::default();
        let mut v = RecordValidator::new(cfg.clone());
        let accepted: Vec<AnnotationRecord> = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| v.check(i + 1, r.clone()))
            .collect();
        let report = v.finish();
        prop_assert_eq!(report.lines, records.len());
        prop_assert_eq!(report.accepted + report.rejected.len(), records.len());
        prop_assert_eq!(report.accepted, accepted.len());
        let mut lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
        lines.dedup();
        prop_assert_eq!(lines.len(), report.rejected.len());

        let samples = aggregate(&accepted, &cfg);
        prop_assert_eq!(samples.iter().map(|s| s.raters.len()).sum::<usize>(), accepted.len());
        let ids: std::collections::BTreeSet<_> = accepted.iter().map(|r| r.image_id.clone()).collect();
        prop_assert_eq!(samples.len(), ids.len());
    }
}

#[test]
fn summary_cells_match_direct_metric_calls() {
    let corpus = make_synthetic_corpus(60, 21, &SyntheticConfig::default(), &DatasetConfig::default()).unwrap();
    let report = summarize(&corpus.samples, 5);
    let column = |f: fn(&AnnotationRecord) -> f64| -> Vec<f64> {
        corpus.samples.iter().flat_map(|s| s.raters.iter().map(f)).collect()
    };
    let good = column(|r| r.good_scale);
    let bad = column(|r| r.bad_scale);
    let overall = column(|r| r.overall_quality);
    let ideal = column(|r| r.ideal_quality);
    for (scale, xs) in [(ImpactScale::Good, &good), (ImpactScale::Bad, &bad)] {
        for (target, ys) in [(QualityTarget::Overall, &overall), (QualityTarget::Ideal, &ideal)] {
            let s = PairedSeries::new(xs, ys).unwrap();
            let cell = report.cell(scale, target).unwrap();
            assert_eq!(cell.plcc, Some(plcc(&s).unwrap()));
            assert_eq!(cell.srcc, Some(srcc(&s).unwrap()));
        }
    }
    assert_eq!(report.ratings, 180);
    assert_eq!(report.samples, 60);
}

#[test]
fn identical_scales_correlate_perfectly() {
    let records: Vec<AnnotationRecord> = (0..12)
        .flat_map(|i| (0..3).map(move |r| record(i, r, 1.0 + (i as f64 * 0.3 + r as f64 * 0.1) % 4.0, 0.0)))
        .map(|mut r| {
            r.good_scale = r.overall_quality;
            r
        })
        .collect();
    let report = summarize(&aggregate(&records, &DatasetConfig::default()), 3);
    let cell = report.cell(ImpactScale::Good, QualityTarget::Overall).unwrap();
    assert!((cell.plcc.unwrap() - 1.0).abs() < 1e-12);
    assert!((cell.srcc.unwrap() - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn transcripts_only_parse_under_their_own_schema(
        words in prop::collection::vec("[a-z]{1,6}", 5),
        rating in 1.0f64..5.0,
    ) {
        let detailed = TagSchema::detailed();
        let short = TagSchema::think_answer();
        let mut sections = BTreeMap::new();
        for (name, w) in detailed.sections().iter().zip(&words) {
            sections.insert(name.clone(), w.clone());
        }
        sections.insert("answer".to_string(), format!("{rating:.1}"));
        let long_text = render(&sections, &detailed);
        prop_assert!(parse_output(&long_text, &detailed).well_formed);
        prop_assert!(!parse_output(&long_text, &short).well_formed);

        let mut brief = BTreeMap::new();
        brief.insert("think".to_string(), words[0].clone());
        brief.insert("answer".to_string(), format!("{rating:.1}"));
        let short_text = render(&brief, &short);
        prop_assert!(parse_output(&short_text, &short).well_formed);
        prop_assert!(!parse_output(&short_text, &detailed).well_formed);
    }
}
