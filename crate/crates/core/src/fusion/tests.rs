use super::*;
use crate::dataset::{Annotations, Dims, Split};
use crate::temporal::{generate_windows, rank_cmp, tiou, Interval};
use crate::tensor::RngState;

fn iv(a: f64, b: f64) -> Interval {
    Interval::new(a, b).unwrap()
}

fn sm(a: f64, b: f64, s: f64) -> ScoredMoment {
    ScoredMoment::new(iv(a, b), s, None).unwrap()
}

fn random_moments(rng: &mut RngState, n: usize, span: f64) -> Vec<ScoredMoment> {
    (0..n)
        .map(|_| {
            let a = rng.uniform_range(0.0, span - 1.0);
            let b = a + rng.uniform_range(0.2, 15.0);
            sm(a, b.min(span), rng.uniform())
        })
        .collect()
}

fn dataset(queries: &[(&str, f64, f64, bool)]) -> GroundingDataset {
    GroundingDataset {
        root: ".".into(),
        annotations: Annotations {
            dims: Dims::default(),
            videos: vec![VideoRecord {
                id: "v".into(),
                fps: 5.0,
                num_frames: 1000,
                visual: "v.emb".into(),
                audio: None,
            }],
            queries: queries
                .iter()
                .map(|&(id, a, b, actionless)| QueryRecord {
                    id: id.into(),
                    video_id: "v".into(),
                    tokens: format!("{id}.emb"),
                    start_s: a,
                    end_s: b,
                    actionless,
                    split: Split::Test,
                })
                .collect(),
        },
    }
}

#[test]
fn fusion_multiplies_by_best_window() {
    let windows = generate_windows(128, 5.0, 64, 32).unwrap();
    let p = [0.2, 0.8, 0.5, 0.1];
    let out = fuse_scores(&[sm(7.0, 12.0, 0.5)], &p, &windows).unwrap();
    assert!((out[0].score - 0.4).abs() < 1e-15);
    assert_eq!(out[0].interval, iv(7.0, 12.0));
}

#[test]
fn unit_guidance_is_identity() {
    let mut rng = RngState::new(1);
    let windows = generate_windows(600, 5.0, 64, 32).unwrap();
    let preds = random_moments(&mut rng, 40, 120.0);
    let out = fuse_scores(&preds, &vec![1.0; windows.len()], &windows).unwrap();
    assert_eq!(out, preds);
}

#[test]
fn fusion_matches_exhaustive_scan() {
    let mut rng = RngState::new(2);
    for _ in 0..200 {
        let frames = 64 + rng.below(800);
        let windows = generate_windows(frames, 5.0, 64, 32).unwrap();
        let p: Vec<f64> = (0..windows.len()).map(|_| rng.uniform()).collect();
        let n = 1 + rng.below(20);
        let preds = random_moments(&mut rng, n, frames as f64 / 5.0);
        let out = fuse_scores(&preds, &p, &windows).unwrap();
        for (m, f) in preds.iter().zip(&out) {
            let mut best = (0, -1.0);
            for (j, w) in windows.iter().enumerate() {
                let iou = tiou(&m.interval, &w.interval);
                if iou > best.1 {
                    best = (j, iou);
                }
            }
            assert_eq!(f.score, m.score * p[best.0]);
        }
    }
}

#[test]
fn fusion_rejects_mismatched_guidance() {
    let windows = generate_windows(128, 5.0, 64, 32).unwrap();
    let err = fuse_scores(&[sm(0.0, 1.0, 0.5)], &[1.0], &windows).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn low_guidance_demotes_a_strong_prediction() {
    let windows = generate_windows(128, 5.0, 64, 64).unwrap();
    let preds = [sm(1.0, 5.0, 0.9), sm(14.0, 20.0, 0.5)];
    let fused = fuse_scores(&preds, &[0.1, 0.9], &windows).unwrap();
    let ranked = rerank_and_nms(&fused, 0.3);
    assert_eq!(ranked[0].interval, iv(14.0, 20.0));
    assert_eq!(ranked[1].interval, iv(1.0, 5.0));
    let unguided = rerank_and_nms(&preds, 0.3);
    assert_eq!(unguided[0].interval, iv(1.0, 5.0));
}

#[test]
fn rerank_matches_reference_composition() {
    let mut rng = RngState::new(3);
    for _ in 0..200 {
        let n = rng.below(30);
        let preds = random_moments(&mut rng, n, 60.0);
        let thr = [0.3, 0.5][rng.below(2)];
        let mut sorted = preds.clone();
        sorted.sort_by(rank_cmp);
        let mut kept: Vec<ScoredMoment> = Vec::new();
        for m in sorted {
            if kept.iter().all(|k| tiou(&k.interval, &m.interval) <= thr) {
                kept.push(m);
            }
        }
        assert_eq!(rerank_and_nms(&preds, thr), kept);
    }
}

#[test]
fn guidance_index_lookup_rules() {
    let ds = dataset(&[("q0", 1.0, 2.0, false), ("q1", 3.0, 4.0, false)]);
    let shared = GuidanceScores {
        video_id: "v".into(),
        query_id: None,
        scores: vec![0.5; 3],
    };
    let own = GuidanceScores {
        video_id: "v".into(),
        query_id: Some("q1".into()),
        scores: vec![0.25; 3],
    };
    let index = GuidanceIndex::new(vec![shared.clone(), own.clone()], 64).unwrap();
    assert_eq!(index.scores_for(ds.query("q0").unwrap()).unwrap()[0], 0.5);
    assert_eq!(index.scores_for(ds.query("q1").unwrap()).unwrap()[0], 0.25);
    let only_own = GuidanceIndex::new(vec![own.clone()], 64).unwrap();
    assert!(matches!(only_own.scores_for(ds.query("q0").unwrap()), Err(Error::Data(_))));
    assert!(GuidanceIndex::new(vec![own.clone(), own.clone()], 64).is_err());
    let bad = GuidanceScores {
        scores: vec![1.5],
        ..own
    };
    assert!(matches!(GuidanceIndex::new(vec![bad], 64), Err(Error::Data(_))));
    let text = guidance_to_json(&[shared.clone()]);
    assert!(!text.contains("query_id"));
    let back: Vec<GuidanceScores> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, vec![shared]);
}

#[test]
fn ranking_reports_missing_guidance() {
    let ds = dataset(&[("q0", 1.0, 2.0, false)]);
    let mut raw = Predictions::new();
    raw.insert("q0".into(), vec![sm(1.0, 2.0, 0.5)]);
    let index = GuidanceIndex::new(Vec::new(), 64).unwrap();
    assert!(matches!(rank_predictions(&ds, &raw, Some(&index), 0.3), Err(Error::Data(_))));
    let short = GuidanceIndex::new(
        vec![GuidanceScores {
            video_id: "v".into(),
            query_id: None,
            scores: vec![1.0],
        }],
        64,
    )
    .unwrap();
    assert!(matches!(rank_predictions(&ds, &raw, Some(&short), 0.3), Err(Error::Data(_))));
}

#[test]
fn recall_edge_cases() {
    let gt = [iv(2.0, 6.0)];
    let hit = [sm(2.0, 6.0, 0.9), sm(30.0, 31.0, 0.1)];
    let miss = [sm(30.0, 31.0, 0.9)];
    for theta in [0.1, 0.3, 0.5, 1.0] {
        assert_eq!(recall_at_k(&[&hit], &gt, 1, theta).unwrap(), 100.0);
        for k in [1, 5, 100] {
            assert_eq!(recall_at_k(&[&miss], &gt, k, theta).unwrap(), 0.0);
        }
    }
    let late = [sm(30.0, 31.0, 0.9), sm(2.0, 6.0, 0.5)];
    assert_eq!(recall_at_k(&[&late], &gt, 1, 0.5).unwrap(), 0.0);
    assert_eq!(recall_at_k(&[&late], &gt, 100, 0.5).unwrap(), 100.0);
    assert!(matches!(recall_at_k(&[], &[], 1, 0.5), Err(Error::Usage(_))));
}

#[test]
fn recall_matches_per_query_scan() {
    let mut rng = RngState::new(4);
    let lists: Vec<Vec<ScoredMoment>> = (0..50)
        .map(|_| {
            let n = rng.below(12);
            random_moments(&mut rng, n, 40.0)
        })
        .collect();
    let gts: Vec<Interval> = (0..50)
        .map(|_| {
            let a = rng.uniform_range(0.0, 30.0);
            iv(a, a + rng.uniform_range(1.0, 10.0))
        })
        .collect();
    let refs: Vec<&[ScoredMoment]> = lists.iter().map(Vec::as_slice).collect();
    for k in [1, 5, 10] {
        for theta in [0.1, 0.3, 0.5] {
            let mut hits = 0;
            for (list, gt) in lists.iter().zip(&gts) {
                let mut found = false;
                for (rank, m) in list.iter().enumerate() {
                    if rank < k && tiou(&m.interval, gt) >= theta {
                        found = true;
                    }
                }
                hits += found as usize;
            }
            let expected = 100.0 * hits as f64 / 50.0;
            assert_eq!(recall_at_k(&refs, &gts, k, theta).unwrap(), expected);
        }
    }
}

#[test]
fn means_follow_the_stated_formulas() {
    assert!((mean_recall_k(&[10.0, 20.0, 30.0], 3).unwrap() - 20.0).abs() < 1e-12);
    assert_eq!(mean_recall_k(&[7.5; 3], 3).unwrap(), 7.5);
    assert!(matches!(mean_recall_k(&[10.0, 20.0], 3), Err(Error::Usage(_))));
    let full = [11.38, 19.64, 24.27, 36.09, 42.12].map(Some);
    assert!((mean_recall_all(&full).unwrap() - 26.70).abs() < 0.005);
    let partial = [Some(6.72), Some(19.68), Some(23.85), Some(24.67), None];
    assert!((mean_recall_all(&partial).unwrap() - 18.73).abs() < 0.005);
    assert_eq!(mean_recall_all(&[None, Some(3.25)]).unwrap(), 3.25);
    assert!(matches!(mean_recall_all(&[None]), Err(Error::Usage(_))));
}

#[test]
fn eval_config_validation() {
    assert!(EvalConfig::default().validate().is_ok());
    let bad_k = EvalConfig {
        ks: vec![5, 1],
        ..EvalConfig::default()
    };
    assert!(matches!(bad_k.validate(), Err(Error::Config(_))));
    let bad_theta = EvalConfig {
        thetas: vec![0.0],
        ..EvalConfig::default()
    };
    assert!(bad_theta.validate().is_err());
    let parsed: EvalConfig = serde_json::from_str(r#"{"subset":"actionless"}"#).unwrap();
    assert_eq!(parsed.subset, Subset::Actionless);
    assert!(serde_json::from_str::<EvalConfig>(r#"{"k":[1]}"#).is_err());
}

#[test]
fn evaluate_perfect_and_subset_cases() {
    let ds = dataset(&[("q0", 1.0, 2.0, false), ("q1", 3.0, 9.0, true)]);
    let mut perfect = Predictions::new();
    for q in ds.queries() {
        perfect.insert(q.id.clone(), vec![ScoredMoment::new(q.ground_truth(), 1.0, None).unwrap()]);
    }
    let report = evaluate(&ds, &perfect, &EvalConfig::default()).unwrap();
    assert!(report.recall.iter().flatten().all(|&r| r == 100.0));
    assert_eq!(report.mean_recall_all, 100.0);
    assert_eq!(report.queries, 2);

    let actionless = EvalConfig {
        subset: Subset::Actionless,
        ..EvalConfig::default()
    };
    assert_eq!(evaluate(&ds, &perfect, &actionless).unwrap().queries, 1);
    let none_flagged = dataset(&[("q0", 1.0, 2.0, false)]);
    assert!(matches!(evaluate(&none_flagged, &perfect, &actionless), Err(Error::Usage(_))));

    let mut partial = perfect.clone();
    partial.remove("q1");
    let report = evaluate(&ds, &partial, &EvalConfig::default()).unwrap();
    assert_eq!(report.queries_without_predictions, 1);
    assert_eq!(report.recall_at(1, 0.5), Some(50.0));
}

#[test]
fn report_grid_is_monotone_and_serializes() {
    let mut rng = RngState::new(5);
    let specs: Vec<(String, f64, f64)> = (0..40)
        .map(|i| {
            let a = rng.uniform_range(0.0, 150.0);
            (format!("q{i}"), a, a + rng.uniform_range(1.0, 20.0))
        })
        .collect();
    let rows: Vec<(&str, f64, f64, bool)> =
        specs.iter().map(|(id, a, b)| (id.as_str(), *a, *b, false)).collect();
    let ds = dataset(&rows);
    let mut preds = Predictions::new();
    for q in ds.queries() {
        let mut list = random_moments(&mut rng, 120, 200.0);
        list.sort_by(rank_cmp);
        preds.insert(q.id.clone(), list);
    }
    let report = evaluate(&ds, &preds, &EvalConfig::default()).unwrap();
    for row in &report.recall {
        assert!(row.windows(2).all(|w| w[0] <= w[1]));
    }
    for ki in 0..report.ks.len() {
        assert!(report.recall.windows(2).all(|w| w[0][ki] >= w[1][ki]));
    }
    let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "theta,R@1,R@5,R@10,R@50,R@100");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.1,"));
}
