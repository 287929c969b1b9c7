//! Two-stage detection: boundary-prior ranking, foreground query selection,
//! foreground ranking and weighted fusion of the modalities.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_modality_graph, build_topology, ModalityGraph};
use crate::imageio::{rgb_to_lab, AlignedImagePair};
use crate::raster::{min_max_normalize, min_max_normalized, Plane};
use crate::ranking::{MultitaskRanker, Ranker, RankingProblem};
use crate::superpixel::{compute_features, slic_channels, Side, SuperpixelMap};

/// Tunable parameters of the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PipelineParams {
    /// Target superpixel count.
    pub n: usize,
    /// SLIC spatial weight on `[0, 1]` features.
    pub compactness: f64,
    /// Affinity scale for the RGB (Lab) modality.
    pub gamma_rgb: f64,
    /// Affinity scale for the thermal modality.
    pub gamma_thermal: f64,
    /// Fitting weight for the boundary-prior stage.
    pub mu1: f64,
    /// Fitting weight for the foreground stage.
    pub mu2: f64,
    /// Cross-modality consistency weight.
    pub lambda: f64,
    /// Foreground query margin below the stage-one maximum.
    pub epsilon: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            n: 300,
            compactness: 10.0,
            gamma_rgb: 24.0,
            gamma_thermal: 12.0,
            mu1: 0.02,
            mu2: 0.06,
            lambda: 0.03,
            epsilon: 0.25,
        }
    }
}

impl PipelineParams {
    /// Keys accepted by [`PipelineParams::set`], matching the CLI flag names.
    pub const KEYS: [&'static str; 8] = [
        "n",
        "compactness",
        "gamma-rgb",
        "gamma-thermal",
        "mu1",
        "mu2",
        "lambda",
        "epsilon",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("compactness", self.compactness),
            ("gamma-rgb", self.gamma_rgb),
            ("gamma-thermal", self.gamma_thermal),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epsilon >= 1.0 {
            return Err(Error::Parameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.n < 4 {
            return Err(Error::Parameter(format!("n must be at least 4, got {}", self.n)));
        }
        Ok(())
    }

    /// Set one parameter from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let real = || -> Result<f64> {
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parameter(format!("{key}: cannot parse {value:?} as a number")))
        };
        match key {
            "n" => {
                self.n = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parameter(format!("n: cannot parse {value:?} as a count")))?
            }
            "compactness" => self.compactness = real()?,
            "gamma-rgb" => self.gamma_rgb = real()?,
            "gamma-thermal" => self.gamma_thermal = real()?,
            "mu1" => self.mu1 = real()?,
            "mu2" => self.mu2 = real()?,
            "lambda" => self.lambda = real()?,
            "epsilon" => self.epsilon = real()?,
            other => return Err(Error::Parameter(format!("unknown parameter {other:?}"))),
        }
        Ok(())
    }
}

/// Dense saliency plus the superpixel-level intermediates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// Per-pixel saliency in `[0, 1]`.
    pub values: Plane,
    /// Boundary-prior saliency per modality.
    pub first_stage: Vec<Vec<f64>>,
    /// Foreground query indicators per modality.
    pub queries: Vec<Vec<f64>>,
    /// Normalised foreground ranking per modality.
    pub second_stage: Vec<Vec<f64>>,
    /// Modality weights from the foreground ranking.
    pub weights: Vec<f64>,
    /// Fused, normalised superpixel saliency.
    pub superpixel: Vec<f64>,
}

/// Wall-clock time spent in each stage of [`detect_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub segmentation: Duration,
    pub features: Duration,
    pub stage1: Duration,
    pub stage2: Duration,
    pub total: Duration,
}

/// Full detection result.
#[derive(Debug, Clone)]
pub struct Detection {
    pub saliency: SaliencyMap,
    pub superpixels: SuperpixelMap,
    pub timings: StageTimings,
}

/// Boundary-prior saliency for each modality: one ranking per image side
/// with that side's segments as queries, normalised, complemented and
/// multiplied together.
pub fn stage1(
    graphs: &[&ModalityGraph],
    map: &SuperpixelMap,
    params: &PipelineParams,
    ranker: &dyn Ranker,
) -> Result<Vec<Vec<f64>>> {
    let n = map.len();
    let k = graphs.len();
    let mut saliency = vec![vec![1.0; n]; k];
    for side in Side::ALL {
        let y: Vec<f64> = map
            .sides()
            .iter()
            .map(|s| if s.contains(side) { 1.0 } else { 0.0 })
            .collect();
        if y.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateInput(format!(
                "no superpixel touches the {} side",
                side.name()
            )));
        }
        let prob = RankingProblem::from_graphs(graphs, vec![y; k], params.mu1, params.lambda)?;
        let sol = ranker.rank(&prob)?;
        for (acc, s) in saliency.iter_mut().zip(&sol.scores) {
            for (a, v) in acc.iter_mut().zip(min_max_normalized(s)) {
                *a *= 1.0 - v;
            }
        }
    }
    Ok(saliency)
}

/// Segments scoring strictly above `max - epsilon` become foreground queries.
pub fn select_queries(first_stage: &[f64], epsilon: f64) -> Vec<f64> {
    let max = first_stage.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - epsilon;
    first_stage
        .iter()
        .map(|&s| if s > threshold { 1.0 } else { 0.0 })
        .collect()
}

/// Foreground ranking; returns normalised per-modality scores and weights.
pub fn stage2(
    graphs: &[&ModalityGraph],
    queries: Vec<Vec<f64>>,
    params: &PipelineParams,
    ranker: &dyn Ranker,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let prob = RankingProblem::from_graphs(graphs, queries, params.mu2, params.lambda)?;
    let sol = ranker.rank(&prob)?;
    let scores = sol.scores.iter().map(|s| min_max_normalized(s)).collect();
    Ok((scores, sol.weights))
}

/// Weighted sum of the modality scores, min-max normalised.
pub fn fuse(scores: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    assert_eq!(scores.len(), weights.len());
    let n = scores.first().map_or(0, Vec::len);
    let mut fused = vec![0.0; n];
    for (s, &r) in scores.iter().zip(weights) {
        assert_eq!(s.len(), n);
        for (f, v) in fused.iter_mut().zip(s) {
            *f += r * v;
        }
    }
    min_max_normalize(&mut fused);
    fused
}

/// Run both ranking stages on prepared modality graphs and paint the result
/// onto the pixels of `map`.
pub fn rank_superpixels(
    map: &SuperpixelMap,
    graphs: &[&ModalityGraph],
    params: &PipelineParams,
    ranker: &dyn Ranker,
) -> Result<SaliencyMap> {
    let first_stage = stage1(graphs, map, params, ranker).map_err(|e| e.in_stage("stage 1"))?;
    finish(map, graphs, params, ranker, first_stage)
}

fn finish(
    map: &SuperpixelMap,
    graphs: &[&ModalityGraph],
    params: &PipelineParams,
    ranker: &dyn Ranker,
    first_stage: Vec<Vec<f64>>,
) -> Result<SaliencyMap> {
    let queries: Vec<Vec<f64>> = first_stage
        .iter()
        .map(|s| select_queries(s, params.epsilon))
        .collect();
    let (second_stage, weights) =
        stage2(graphs, queries.clone(), params, ranker).map_err(|e| e.in_stage("stage 2"))?;
    let superpixel = fuse(&second_stage, &weights);
    Ok(SaliencyMap {
        values: map.broadcast(&superpixel),
        first_stage,
        queries,
        second_stage,
        weights,
        superpixel,
    })
}

/// Detect salient objects in an RGB-T pair with the default solver.
pub fn detect(pair: &AlignedImagePair, params: &PipelineParams) -> Result<SaliencyMap> {
    detect_with(pair, params, &MultitaskRanker::default()).map(|d| d.saliency)
}

/// Detect with a caller-supplied ranker, keeping intermediates and timings.
pub fn detect_with(
    pair: &AlignedImagePair,
    params: &PipelineParams,
    ranker: &dyn Ranker,
) -> Result<Detection> {
    params.validate()?;
    let start = Instant::now();

    let lab = rgb_to_lab(pair);
    let superpixels = slic_channels(
        &[&lab[0], &lab[1], &lab[2], pair.thermal()],
        params.n,
        params.compactness,
    )
    .map_err(|e| e.in_stage("segmentation"))?;
    let t_seg = start.elapsed();

    let graphs = (|| -> Result<Vec<ModalityGraph>> {
        let (rgb_feats, thermal_feats) = compute_features(&superpixels, &lab, pair.thermal())?;
        let topo = build_topology(&superpixels)?;
        Ok(vec![
            build_modality_graph(&topo, &rgb_feats, params.gamma_rgb)?,
            build_modality_graph(&topo, &thermal_feats, params.gamma_thermal)?,
        ])
    })()
    .map_err(|e| e.in_stage("graph construction"))?;
    let graph_refs: Vec<&ModalityGraph> = graphs.iter().collect();
    let t_feat = start.elapsed();

    let first_stage = stage1(&graph_refs, &superpixels, params, ranker).map_err(|e| e.in_stage("stage 1"))?;
    let t_stage1 = start.elapsed();

    let saliency = finish(&superpixels, &graph_refs, params, ranker, first_stage)?;
    let total = start.elapsed();

    Ok(Detection {
        saliency,
        superpixels,
        timings: StageTimings {
            segmentation: t_seg,
            features: t_feat - t_seg,
            stage1: t_stage1 - t_feat,
            stage2: total - t_stage1,
            total,
        },
    })
}

/// Write the per-superpixel intermediates as CSV:
/// `id,fs_1..fs_K,query_1..query_K,ss_1..ss_K,fused`.
pub fn write_stage_dump(map: &SaliencyMap, path: &Path) -> Result<()> {
    let k = map.first_stage.len();
    let mut out = String::from("id");
    for prefix in ["fs", "query", "ss"] {
        for m in 1..=k {
            out.push_str(&format!(",{prefix}_{m}"));
        }
    }
    out.push_str(",fused\n");
    for i in 0..map.superpixel.len() {
        out.push_str(&i.to_string());
        for block in [&map.first_stage, &map.queries, &map.second_stage] {
            for m in 0..k {
                out.push_str(&format!(",{:.9}", block[m][i]));
            }
        }
        out.push_str(&format!(",{:.9}\n", map.superpixel[i]));
    }
    out.push_str(&format!(
        "# weights,{}\n",
        map.weights
            .iter()
            .map(|r| format!("{r:.9}"))
            .collect::<Vec<_>>()
            .join(",")
    ));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queries_use_strict_threshold() {
        assert_eq!(select_queries(&[0.9, 0.7, 0.1], 0.25), vec![1.0, 1.0, 0.0]);
        assert_eq!(select_queries(&[1.0, 0.75, 0.5], 0.25), vec![1.0, 0.0, 0.0]);
        assert_eq!(select_queries(&[0.4; 3], 0.25), vec![1.0; 3]);
    }

    #[test]
    fn fuse_examples() {
        let s = vec![0.2, 0.6, 1.0];
        assert_eq!(fuse(&[s.clone(), s.clone()], &[0.5, 0.5]), min_max_normalized(&s));
        assert_eq!(fuse(&[vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 0.3]], &[1.0, 0.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(fuse(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.6, 0.4]), vec![1.0, 0.0]);
    }

    #[test]
    fn params_defaults_and_overrides() {
        let mut p = PipelineParams::default();
        p.validate().unwrap();
        p.set("mu1", "0.5").unwrap();
        assert_eq!(p.mu1, 0.5);
        p.set("gamma-thermal", "3").unwrap();
        assert_eq!(p.gamma_thermal, 3.0);
        assert!(p.set("bogus", "1").is_err());
        assert!(p.set("n", "ten").is_err());
        p.set("mu1", "-1").unwrap();
        assert!(p.validate().is_err());
        let mut p = PipelineParams::default();
        p.epsilon = 1.0;
        assert!(p.validate().is_err());
    }
}
