//! Shared fixtures and independent dense oracles for the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgbt_saliency::graph::ModalityGraph;
use rgbt_saliency::ranking::RankingProblem;
use rgbt_saliency::superpixel::SuperpixelMap;
use rgbt_saliency::{AlignedImagePair, GroundTruth, Plane};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected weighted graph: a path plus extra edges with
/// probability `p`, weights in `(0.05, 1]`.
pub fn random_edges(rng: &mut impl Rng, n: usize, p: f64) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random_bool(p) {
                edges.push((i, j, 0.05 + 0.95 * rng.random::<f64>()));
            }
        }
    }
    edges
}

/// `I - D^-1/2 W D^-1/2`, built directly from the edge list.
pub fn dense_ranking_matrix(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for &(i, j, v) in edges {
        w[(i, j)] += v;
        w[(j, i)] += v;
    }
    let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - w[(i, j)] / (d[i] * d[j]).sqrt()
    })
}

pub struct Instance {
    pub n: usize,
    pub k: usize,
    pub dense: Vec<DMatrix<f64>>,
    pub y: Vec<Vec<f64>>,
    pub mu: f64,
    pub lambda: f64,
    pub prob: RankingProblem,
}

pub fn random_queries(rng: &mut impl Rng, n: usize, density: f64) -> Vec<f64> {
    let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 }).collect();
    let forced = rng.random_range(0..n);
    y[forced] = 1.0;
    y
}

pub fn random_instance(rng: &mut impl Rng, n: usize, k: usize, edge_p: f64, mu: f64, lambda: f64) -> Instance {
    let mut graphs = Vec::new();
    let mut dense = Vec::new();
    for _ in 0..k {
        let edges = random_edges(rng, n, edge_p);
        dense.push(dense_ranking_matrix(n, &edges));
        graphs.push(ModalityGraph::from_weighted_edges(n, &edges, 1.0).unwrap());
    }
    let y: Vec<Vec<f64>> = (0..k).map(|_| random_queries(rng, n, 0.3)).collect();
    let refs: Vec<&ModalityGraph> = graphs.iter().collect();
    let prob = RankingProblem::from_graphs(&refs, y.clone(), mu, lambda).unwrap();
    Instance {
        n,
        k,
        dense,
        y,
        mu,
        lambda,
        prob,
    }
}

/// Consecutive-block difference operator, `(K-1) n x K n`.
pub fn dense_consistency(n: usize, k: usize) -> DMatrix<f64> {
    let rows = n * k.saturating_sub(1);
    let mut c = DMatrix::zeros(rows, n * k);
    for b in 1..k {
        for i in 0..n {
            c[((b - 1) * n + i, b * n + i)] = 1.0;
            c[((b - 1) * n + i, (b - 1) * n + i)] = -1.0;
        }
    }
    c
}

pub fn stack(blocks: &[Vec<f64>]) -> DVector<f64> {
    DVector::from_iterator(blocks.iter().map(Vec::len).sum(), blocks.iter().flatten().copied())
}

pub fn unstack(v: &DVector<f64>, n: usize) -> Vec<Vec<f64>> {
    v.as_slice().chunks(n).map(<[f64]>::to_vec).collect()
}

/// `diag(R) A diag(R) + lambda C'C + mu I`.
pub fn dense_system(inst: &Instance, r: &[f64]) -> DMatrix<f64> {
    let (n, k) = (inst.n, inst.k);
    let mut m = DMatrix::zeros(n * k, n * k);
    for b in 0..k {
        let block = &inst.dense[b] * (r[b] * r[b]);
        m.view_mut((b * n, b * n), (n, n)).copy_from(&block);
    }
    if k > 1 {
        let c = dense_consistency(n, k);
        m += c.transpose() * c * inst.lambda;
    }
    m + DMatrix::identity(n * k, n * k) * inst.mu
}

/// Minimiser of the quadratic in `S` by explicit inversion.
pub fn dense_solve(inst: &Instance, r: &[f64]) -> Vec<Vec<f64>> {
    let inv = dense_system(inst, r).try_inverse().expect("SPD system is invertible");
    unstack(&(inv * stack(&inst.y) * inst.mu), inst.n)
}

/// Objective evaluated term by term with dense algebra.
pub fn dense_objective(inst: &Instance, s: &[Vec<f64>], r: &[f64], gamma: Option<&[f64]>) -> f64 {
    let mut j = 0.0;
    for b in 0..inst.k {
        let sv = DVector::from_column_slice(&s[b]);
        let yv = DVector::from_column_slice(&inst.y[b]);
        j += r[b] * r[b] * (sv.transpose() * &inst.dense[b] * &sv)[(0, 0)];
        j += inst.mu * (&sv - &yv).norm_squared();
        if let Some(g) = gamma {
            j += (g[b] * (1.0 - r[b])).powi(2);
        }
    }
    if inst.k > 1 {
        j += inst.lambda * (dense_consistency(inst.n, inst.k) * stack(s)).norm_squared();
    }
    j
}

/// Gradient of the dense objective in the stacked `S`.
pub fn dense_gradient_s(inst: &Instance, s: &[Vec<f64>], r: &[f64]) -> DVector<f64> {
    (dense_system(inst, r) * stack(s) - stack(&inst.y) * inst.mu) * 2.0
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn lcg(seed: &mut u64) -> f64 {
    *seed = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (*seed >> 11) as f64 / (1u64 << 53) as f64
}

pub fn centred_square(w: usize, h: usize) -> impl Fn(usize, usize) -> bool {
    move |x, y| x >= w * 3 / 8 && x < w * 5 / 8 && y >= h * 3 / 8 && y < h * 5 / 8
}

/// Red square on a blue-grey background, hot square on a cool background.
pub fn square_pair(w: usize, h: usize) -> (AlignedImagePair, GroundTruth) {
    let inside = centred_square(w, h);
    let rgb = (0..w * h)
        .map(|p| if inside(p % w, p / w) { [230, 60, 40] } else { [60, 90, 120] })
        .collect();
    let thermal = Plane::from_fn(w, h, |x, y| if inside(x, y) { 0.9 } else { 0.2 });
    (
        AlignedImagePair::new(w, h, rgb, thermal).unwrap(),
        GroundTruth::from_fn(w, h, &inside),
    )
}

/// RGB of independent random colours on `block`-pixel cells; thermal is the
/// clean centred square.
pub fn noise_rgb_pair(w: usize, h: usize, block: usize, seed: u64) -> (AlignedImagePair, GroundTruth) {
    let inside = centred_square(w, h);
    let mut state = seed;
    let bw = w.div_ceil(block);
    let cells: Vec<[u8; 3]> = (0..bw * h.div_ceil(block))
        .map(|_| [0, 0, 0].map(|_: u8| (lcg(&mut state) * 255.0) as u8))
        .collect();
    let rgb = (0..w * h)
        .map(|p| cells[(p / w / block) * bw + (p % w) / block])
        .collect();
    let thermal = Plane::from_fn(w, h, |x, y| if inside(x, y) { 0.9 } else { 0.2 });
    (
        AlignedImagePair::new(w, h, rgb, thermal).unwrap(),
        GroundTruth::from_fn(w, h, &inside),
    )
}

/// Random blobs over a smooth gradient with mild per-pixel noise.
pub fn random_pair(rng: &mut impl Rng, w: usize, h: usize) -> AlignedImagePair {
    let blobs: Vec<(f64, f64, f64, [f64; 4])> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random::<f64>() * w as f64,
                rng.random::<f64>() * h as f64,
                (0.05 + 0.25 * rng.random::<f64>()) * w.min(h) as f64,
                [rng.random(), rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let base: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
    let colour = |x: usize, y: usize, rng: &mut dyn rand::RngCore| -> [f64; 4] {
        let mut c = base.map(|b| 0.6 * b + 0.2 * x as f64 / w as f64 + 0.2 * y as f64 / h as f64);
        for &(cx, cy, rad, col) in &blobs {
            if (x as f64 - cx).hypot(y as f64 - cy) < rad {
                c = col;
            }
        }
        c.map(|v| (v + 0.04 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0))
    };
    let mut rgb = Vec::with_capacity(w * h);
    let mut thermal = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let c = colour(x, y, rng);
            rgb.push([c[0], c[1], c[2]].map(|v| (v * 255.0).round() as u8));
            thermal.push(c[3]);
        }
    }
    AlignedImagePair::new(w, h, rgb, Plane::new(w, h, thermal).unwrap()).unwrap()
}

/// Number of 4-connected components of each label.
pub fn component_counts(map: &SuperpixelMap) -> Vec<usize> {
    let (w, h) = (map.width(), map.height());
    let mut seen = vec![false; w * h];
    let mut counts = vec![0usize; map.len()];
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let label = map.labels()[start];
        counts[label as usize] += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if !seen[q] && map.labels()[q] == label {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
    }
    counts
}

pub fn mean_inside_outside(values: &Plane, gt: &GroundTruth) -> (f64, f64) {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in values.data().iter().zip(gt.mask()) {
        if m {
            si += v;
            ni += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    (si / ni as f64, so / no as f64)
}
