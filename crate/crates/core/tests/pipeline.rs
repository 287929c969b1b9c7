mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use rgbt_saliency::graph::ModalityGraph;
use rgbt_saliency::pipeline::{
    detect_with, fuse, select_queries, stage2, write_stage_dump, PipelineParams,
};
use rgbt_saliency::ranking::{MultitaskRanker, RankingProblem, INIT_WEIGHT};
use rgbt_saliency::{detect, Error};

fn normalised(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// The alternating scheme written against the dense oracles.
fn dense_alternation(inst: &Instance) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = inst.k;
    let quad = |b: usize, s: &[f64]| {
        let v = DVector::from_column_slice(s);
        (v.transpose() * &inst.dense[b] * &v)[(0, 0)].max(0.0)
    };
    let mut r = vec![INIT_WEIGHT; k];
    let mut gamma: Vec<f64> = Vec::new();
    let mut last: Option<f64> = None;
    let mut s = Vec::new();
    for _ in 0..50 {
        s = dense_solve(inst, &r);
        if gamma.is_empty() {
            gamma = (0..k).map(|b| quad(b, &s[b]).sqrt().max(1e-12)).collect();
        }
        r = (0..k).map(|b| gamma[b] * gamma[b] / (gamma[b] * gamma[b] + quad(b, &s[b]))).collect();
        let j = dense_objective(inst, &s, &r, Some(&gamma));
        if last.is_some_and(|p| (j - p).abs() / (k as f64) < 1e-4) {
            break;
        }
        last = Some(j);
    }
    (s, r)
}

#[test]
fn foreground_stage_matches_dense_oracle() {
    let mut rng = rng(61);
    let params = PipelineParams::default();
    for _ in 0..20 {
        let n = 5;
        let mut graphs = Vec::new();
        let mut dense = Vec::new();
        for _ in 0..2 {
            let edges = random_edges(&mut rng, n, 0.5);
            dense.push(dense_ranking_matrix(n, &edges));
            graphs.push(ModalityGraph::from_weighted_edges(n, &edges, 1.0).unwrap());
        }
        let queries: Vec<Vec<f64>> = (0..2).map(|_| random_queries(&mut rng, n, 0.3)).collect();
        let refs: Vec<&ModalityGraph> = graphs.iter().collect();
        let (scores, weights) = stage2(&refs, queries.clone(), &params, &MultitaskRanker::default()).unwrap();

        let prob = RankingProblem::from_graphs(&refs, queries.clone(), params.mu2, params.lambda).unwrap();
        let inst = Instance {
            n,
            k: 2,
            dense,
            y: queries,
            mu: params.mu2,
            lambda: params.lambda,
            prob,
        };
        let (s, r) = dense_alternation(&inst);
        for b in 0..2 {
            assert!(max_abs_diff(&scores[b], &normalised(&s[b])) < 1e-9);
            assert!((weights[b] - r[b]).abs() < 1e-9);
        }
        let fused = fuse(&scores, &weights);
        let mut want = vec![0.0; n];
        for b in 0..2 {
            for i in 0..n {
                want[i] += r[b] * normalised(&s[b])[i];
            }
        }
        assert!(max_abs_diff(&fused, &normalised(&want)) < 1e-9);
    }
}

#[test]
fn detection_is_deterministic() {
    let mut rng = rng(62);
    let pair = random_pair(&mut rng, 96, 72);
    let params = PipelineParams {
        n: 80,
        ..PipelineParams::default()
    };
    assert_eq!(detect(&pair, &params).unwrap(), detect(&pair, &params).unwrap());
}

#[test]
fn detection_outputs_are_well_formed() {
    let mut rng = rng(63);
    for _ in 0..5 {
        let pair = random_pair(&mut rng, 80, 64);
        let params = PipelineParams {
            n: 60,
            ..PipelineParams::default()
        };
        let det = detect_with(&pair, &params, &MultitaskRanker::default()).unwrap();
        let map = &det.saliency;
        let n = det.superpixels.len();
        assert_eq!((map.values.width(), map.values.height()), (80, 64));
        assert!(map.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(map.superpixel.len(), n);
        assert!(map.weights.iter().all(|&r| r > 0.0 && r <= 1.0));
        for k in 0..2 {
            assert!(map.queries[k].iter().any(|&q| q == 1.0), "modality {k} has no foreground query");
            assert!(map.first_stage[k].iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(map.queries[k], select_queries(&map.first_stage[k], params.epsilon));
        }
        let t = det.timings;
        assert!(t.segmentation + t.features + t.stage1 + t.stage2 <= t.total);
    }
}

#[test]
fn salient_square_stands_out() {
    let (pair, gt) = square_pair(120, 90);
    let map = detect(
        &pair,
        &PipelineParams {
            n: 150,
            ..PipelineParams::default()
        },
    )
    .unwrap();
    let (inside, outside) = mean_inside_outside(&map.values, &gt);
    assert!(inside > 3.0 * outside, "inside {inside}, outside {outside}");
}

#[test]
fn invalid_parameters_fail_before_work() {
    let mut rng = rng(64);
    let pair = random_pair(&mut rng, 32, 32);
    let params = PipelineParams {
        lambda: 0.0,
        ..PipelineParams::default()
    };
    assert!(matches!(detect(&pair, &params), Err(Error::Parameter(_))));
}

#[test]
fn too_many_superpixels_reports_the_stage() {
    let mut rng = rng(65);
    let pair = random_pair(&mut rng, 32, 32);
    let err = detect(&pair, &PipelineParams::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "segmentation", .. }), "{err:?}");
}

#[test]
fn stage_dump_lists_every_superpixel() {
    let mut rng = rng(66);
    let pair = random_pair(&mut rng, 64, 48);
    let params = PipelineParams {
        n: 40,
        ..PipelineParams::default()
    };
    let map = detect(&pair, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stages.csv");
    write_stage_dump(&map, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,fs_1,fs_2,query_1,query_2,ss_1,ss_2,fused"));
    assert_eq!(lines.clone().filter(|l| !l.starts_with('#')).count(), map.superpixel.len());
    assert!(text.lines().last().unwrap().starts_with("# weights,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queries_are_never_empty(values in proptest::collection::vec(0.0f64..1.0, 1..50), eps in 0.001f64..0.999) {
        let q = select_queries(&values, eps);
        prop_assert!(q.iter().any(|&v| v == 1.0));
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (v, flag) in values.iter().zip(&q) {
            prop_assert_eq!(*flag == 1.0, *v > max - eps);
        }
    }

    #[test]
    fn fused_scores_are_normalised(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = rng(seed);
        let scores: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        let weights = [rng.random::<f64>() + 0.01, rng.random::<f64>() + 0.01];
        let f = fuse(&scores, &weights);
        prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(f.iter().any(|&v| v == 1.0) && f.iter().any(|&v| v == 0.0));
    }
}
