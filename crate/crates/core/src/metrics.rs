//! Precision/recall curves, adaptive-threshold F-measure and MAE, with
//! dataset and challenge-subset aggregation.
//!
//! Conventions where the usual definitions leave a gap:
//! * an empty detection scores `P = R = 0`, and `F = 0` when `P = R = 0`;
//! * PR curves binarise the 8-bit quantised map with `round(255 s) >= t`;
//! * the adaptive-threshold F-measure binarises the real map with `s > T`;
//! * images whose ground truth has no salient pixel are skipped.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imageio::{quantize, Challenge, DatasetRecord, GroundTruth};
use crate::raster::Plane;

pub const BETA2: f64 = 0.3;
pub const PR_POINTS: usize = 256;

pub const CONVENTIONS: [&str; 4] = [
    "empty detection: precision = recall = 0; F = 0 when precision = recall = 0",
    "PR curve: pixel salient iff round(255 * s) >= threshold, threshold in 0..=255",
    "adaptive F: pixel salient iff s > T with T = 2 * mean(s); beta^2 = 0.3",
    "images with an all-zero ground truth are excluded",
];

fn check_dims(s: &Plane, g: &GroundTruth) -> Result<()> {
    if s.width() != g.width() || s.height() != g.height() {
        return Err(Error::Dimension(format!(
            "saliency map {}x{} vs ground truth {}x{}",
            s.width(),
            s.height(),
            g.width(),
            g.height()
        )));
    }
    Ok(())
}

/// Twice the mean saliency.
pub fn adaptive_threshold(s: &Plane) -> f64 {
    2.0 * s.mean()
}

fn pr_from_counts(hits: usize, detected: usize, positives: usize) -> (f64, f64) {
    if detected == 0 {
        return (0.0, 0.0);
    }
    (
        hits as f64 / detected as f64,
        hits as f64 / positives as f64,
    )
}

/// Precision and recall of the binarisation `s > t`.
pub fn precision_recall(s: &Plane, g: &GroundTruth, t: f64) -> Result<(f64, f64)> {
    check_dims(s, g)?;
    let positives = g.salient_count();
    if positives == 0 {
        return Err(Error::EmptyGroundTruth("map".into()));
    }
    let (mut hits, mut detected) = (0usize, 0usize);
    for (&v, &m) in s.data().iter().zip(g.mask()) {
        if v > t {
            detected += 1;
            hits += m as usize;
        }
    }
    Ok(pr_from_counts(hits, detected, positives))
}

/// `(1 + beta2) P R / (beta2 P + R)`, zero when either input is zero.
pub fn f_measure(p: f64, r: f64, beta2: f64) -> f64 {
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    // Same value, evaluated so that P == R returns exactly P.
    r * (p / (p + (r - p) / (1.0 + beta2)))
}

/// Mean absolute difference between the map and the binary mask.
pub fn mae(s: &Plane, g: &GroundTruth) -> Result<f64> {
    check_dims(s, g)?;
    let total: f64 = s
        .data()
        .iter()
        .zip(g.mask())
        .map(|(&v, &m)| (v - if m { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at each 8-bit threshold `0..=255`.
pub fn pr_curve(s: &Plane, g: &GroundTruth) -> Result<Vec<PrPoint>> {
    check_dims(s, g)?;
    let positives = g.salient_count();
    if positives == 0 {
        return Err(Error::EmptyGroundTruth("map".into()));
    }
    let mut hist_pos = [0usize; PR_POINTS];
    let mut hist_all = [0usize; PR_POINTS];
    for (&v, &m) in s.data().iter().zip(g.mask()) {
        let q = quantize(v) as usize;
        hist_all[q] += 1;
        hist_pos[q] += m as usize;
    }
    // Suffix sums give counts of q >= t.
    let mut points = vec![
        PrPoint {
            threshold: 0,
            precision: 0.0,
            recall: 0.0
        };
        PR_POINTS
    ];
    let (mut hits, mut detected) = (0usize, 0usize);
    for t in (0..PR_POINTS).rev() {
        hits += hist_pos[t];
        detected += hist_all[t];
        let (precision, recall) = pr_from_counts(hits, detected, positives);
        points[t] = PrPoint {
            threshold: t,
            precision,
            recall,
        };
    }
    Ok(points)
}

/// Scores of one image at its adaptive threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScores {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mae: f64,
    pub adaptive_threshold: f64,
}

/// Mean scores over a set of images.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub images: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mae: f64,
}

impl Aggregate {
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a ImageScores>) -> Self {
        let mut agg = Aggregate::default();
        for s in scores {
            agg.images += 1;
            agg.precision += s.precision;
            agg.recall += s.recall;
            agg.f_measure += s.f_measure;
            agg.mae += s.mae;
        }
        if agg.images > 0 {
            let n = agg.images as f64;
            agg.precision /= n;
            agg.recall /= n;
            agg.f_measure /= n;
            agg.mae /= n;
        }
        agg
    }
}

pub fn score_image(id: &str, s: &Plane, g: &GroundTruth) -> Result<(ImageScores, Vec<PrPoint>)> {
    if g.salient_count() == 0 {
        check_dims(s, g)?;
        return Err(Error::EmptyGroundTruth(id.to_string()));
    }
    let t = adaptive_threshold(s);
    let (precision, recall) = precision_recall(s, g, t)?;
    let scores = ImageScores {
        id: id.to_string(),
        precision,
        recall,
        f_measure: f_measure(precision, recall, BETA2),
        mae: mae(s, g)?,
        adaptive_threshold: t,
    };
    Ok((scores, pr_curve(s, g)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub conventions: Vec<String>,
    pub overall: Aggregate,
    pub per_challenge: BTreeMap<Challenge, Aggregate>,
    pub per_image: Vec<ImageScores>,
    pub pr_curve: Vec<PrPoint>,
    pub excluded: Vec<String>,
}

/// Score every record. `maps` and `truths` are keyed by record id.
pub fn evaluate(
    records: &[DatasetRecord],
    maps: &BTreeMap<String, Plane>,
    truths: &BTreeMap<String, GroundTruth>,
) -> Result<EvaluationReport> {
    let mut per_image = Vec::new();
    let mut curves = Vec::new();
    let mut excluded = Vec::new();
    let mut tags: BTreeMap<Challenge, Vec<usize>> = BTreeMap::new();
    for rec in records {
        let s = maps
            .get(&rec.id)
            .ok_or_else(|| Error::MissingMap(rec.id.clone()))?;
        let g = truths.get(&rec.id).ok_or_else(|| Error::MissingFile {
            id: rec.id.clone(),
            path: rec.gt_path.clone(),
        })?;
        match score_image(&rec.id, s, g) {
            Ok((scores, curve)) => {
                for &c in &rec.challenges {
                    tags.entry(c).or_default().push(per_image.len());
                }
                per_image.push(scores);
                curves.push(curve);
            }
            Err(Error::EmptyGroundTruth(id)) => {
                log::warn!("skipping {id}: ground truth has no salient pixels");
                excluded.push(id);
            }
            Err(e) => return Err(e),
        }
    }

    let mut pr = vec![
        PrPoint {
            threshold: 0,
            precision: 0.0,
            recall: 0.0
        };
        PR_POINTS
    ];
    for (t, p) in pr.iter_mut().enumerate() {
        p.threshold = t;
        if !curves.is_empty() {
            let m = curves.len() as f64;
            p.precision = curves.iter().map(|c| c[t].precision).sum::<f64>() / m;
            p.recall = curves.iter().map(|c| c[t].recall).sum::<f64>() / m;
        }
    }

    let per_challenge = tags
        .into_iter()
        .map(|(c, idx)| (c, Aggregate::of(idx.iter().map(|&i| &per_image[i]))))
        .collect();
    Ok(EvaluationReport {
        conventions: CONVENTIONS.iter().map(|s| s.to_string()).collect(),
        overall: Aggregate::of(&per_image),
        per_challenge,
        per_image,
        pr_curve: pr,
        excluded,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("id,precision,recall,f_measure,mae,adaptive_threshold\n");
        for s in &self.per_image {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                s.id, s.precision, s.recall, s.f_measure, s.mae, s.adaptive_threshold
            ));
        }
        out
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.pr_curve {
            out.push_str(&format!("{},{:.6},{:.6}\n", p.threshold, p.precision, p.recall));
        }
        out
    }

    /// Recall on x, precision on y, both on `[0, 1]`.
    pub fn pr_curve_svg(&self) -> String {
        const SIZE: f64 = 400.0;
        const PAD: f64 = 40.0;
        let sx = |r: f64| PAD + r * SIZE;
        let sy = |p: f64| PAD + (1.0 - p) * SIZE;
        let points: Vec<String> = self
            .pr_curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.recall), sy(p.precision)))
            .collect();
        let full = SIZE + 2.0 * PAD;
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{full}\" height=\"{full}\" viewBox=\"0 0 {full} {full}\">\n",
                "<rect x=\"{pad}\" y=\"{pad}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"black\"/>\n",
                "<text x=\"{mid}\" y=\"{bottom}\" text-anchor=\"middle\" font-size=\"14\">Recall</text>\n",
                "<text x=\"12\" y=\"{mid}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 12 {mid})\">Precision</text>\n",
                "<text x=\"{legend_x}\" y=\"{legend_y}\" font-size=\"12\">F = {f:.3}</text>\n",
                "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"{points}\"/>\n",
                "</svg>\n"
            ),
            full = full,
            pad = PAD,
            size = SIZE,
            mid = PAD + SIZE / 2.0,
            bottom = full - 8.0,
            legend_x = PAD + 10.0,
            legend_y = PAD + SIZE - 10.0,
            f = self.overall.f_measure,
            points = points.join(" ")
        )
    }

    /// Write `<stem>.json`, `<stem>_per_image.csv`, `<stem>_pr_curve.csv`
    /// and `<stem>_pr_curve.svg` next to `json_path`.
    pub fn write_all(&self, json_path: &Path) -> Result<()> {
        let stem = json_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".to_string());
        let dir = json_path.parent().unwrap_or_else(|| Path::new(""));
        write_file(json_path, &self.to_json()?)?;
        write_file(&dir.join(format!("{stem}_per_image.csv")), &self.per_image_csv())?;
        write_file(&dir.join(format!("{stem}_pr_curve.csv")), &self.pr_curve_csv())?;
        write_file(&dir.join(format!("{stem}_pr_curve.svg")), &self.pr_curve_svg())
    }
}
