//! Single- and multi-task manifold ranking.
//!
//! The multi-task objective over `K` modalities with stacked scores
//! `S = [s^1; ...; s^K]` and modality weights `r` is
//!
//! ```text
//! J(S, r) = sum_k (r^k)^2 s^k' A^k s^k + mu sum_k |s^k - y^k|^2
//!         + sum_k (G^k)^2 (1 - r^k)^2 + lambda |C S|^2
//! ```
//!
//! where `A^k` is the normalised Laplacian of modality `k`, `C` stacks the
//! differences of consecutive modality blocks and `G^k` is a scale fixed once
//! from the first `S` iterate. Both block updates are closed form:
//!
//! * `S`: `(diag(R) A diag(R) + lambda C'C + mu I) S = mu Y`, an SPD system;
//! * `r^k = 1 / (1 + s^k' A^k s^k / (G^k)^2)`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::ModalityGraph;
use crate::linalg::{Cholesky, CsrMatrix, DenseMatrix};

/// Floor applied to each `G^k`.
pub const GAMMA_FLOOR: f64 = 1e-12;
/// Stopping threshold on `|J_t - J_{t-1}| / K`.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
/// Default starting weight, independent of `K`. Must stay below 1/2: larger
/// starts drive every `r^k` toward zero and switch off the smoothness term.
pub const INIT_WEIGHT: f64 = 0.25;

/// Input to the multi-task solver.
#[derive(Debug, Clone)]
pub struct RankingProblem {
    blocks: Vec<CsrMatrix>,
    queries: Vec<Vec<f64>>,
    mu: f64,
    lambda: f64,
}

impl RankingProblem {
    /// `blocks[k]` is `A^k`; `queries[k]` the 0/1 indicator for modality `k`.
    pub fn new(blocks: Vec<CsrMatrix>, queries: Vec<Vec<f64>>, mu: f64, lambda: f64) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Parameter("ranking problem needs at least one modality".into()));
        }
        if blocks.len() != queries.len() {
            return Err(Error::Dimension(format!(
                "{} ranking matrices but {} query vectors",
                blocks.len(),
                queries.len()
            )));
        }
        let n = blocks[0].dim();
        if n == 0 {
            return Err(Error::Parameter("empty graph".into()));
        }
        for (k, (a, y)) in blocks.iter().zip(&queries).enumerate() {
            if a.dim() != n || y.len() != n {
                return Err(Error::Dimension(format!(
                    "modality {k}: matrix {} and queries {} do not match n = {n}",
                    a.dim(),
                    y.len()
                )));
            }
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Parameter(format!(
                    "modality {k}: query indicator entries must be 0 or 1"
                )));
            }
            if y.iter().all(|&v| v == 0.0) {
                return Err(Error::DegenerateInput(format!("modality {k} has no queries")));
            }
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be non-negative, got {lambda}")));
        }
        Ok(Self {
            blocks,
            queries,
            mu,
            lambda,
        })
    }

    pub fn from_graphs(graphs: &[&ModalityGraph], queries: Vec<Vec<f64>>, mu: f64, lambda: f64) -> Result<Self> {
        Self::new(
            graphs.iter().map(|g| g.ranking().clone()).collect(),
            queries,
            mu,
            lambda,
        )
    }

    /// `K`.
    pub fn modalities(&self) -> usize {
        self.blocks.len()
    }

    /// `n`.
    pub fn nodes(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn blocks(&self) -> &[CsrMatrix] {
        &self.blocks
    }

    pub fn queries(&self) -> &[Vec<f64>] {
        &self.queries
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Output of [`multitask_rank`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankingSolution {
    /// `s^k` per modality.
    pub scores: Vec<Vec<f64>>,
    /// Modality weights `r^k`, each in `(0, 1]`.
    pub weights: Vec<f64>,
    /// Scale parameters `G^k`.
    pub gamma: Vec<f64>,
    /// Objective after each iteration's weight update.
    pub objective_trace: Vec<f64>,
    /// Weights after each iteration's update.
    pub weight_trace: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl RankingSolution {
    /// Write `t,J,r1,...,rK`, one row per iteration.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,J");
        for k in 1..=self.weights.len() {
            out.push_str(&format!(",r{k}"));
        }
        out.push('\n');
        for (t, (j, weights)) in self.objective_trace.iter().zip(&self.weight_trace).enumerate() {
            out.push_str(&format!("{},{j:.12e}", t + 1));
            for r in weights {
                out.push_str(&format!(",{r:.12}"));
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Cross-modality difference operator: row block `k` (for `k = 1..K-1`)
/// holds `+I` at column block `k-1` and `-I` at column block `k`, so `C S`
/// stacks `s^{k-1} - s^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsistencyMatrix {
    n: usize,
    k: usize,
}

impl ConsistencyMatrix {
    pub fn rows(&self) -> usize {
        self.n * (self.k - 1)
    }

    pub fn cols(&self) -> usize {
        self.n * self.k
    }

    /// `(plus_col, minus_col)` of each row.
    pub fn row_entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows()).map(move |r| (r, r + self.n))
    }

    /// Entry `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col == row {
            1.0
        } else if col == row + self.n {
            -1.0
        } else {
            0.0
        }
    }

    pub fn apply(&self, stacked: &[f64]) -> Vec<f64> {
        assert_eq!(stacked.len(), self.cols());
        self.row_entries()
            .map(|(p, m)| stacked[p] - stacked[m])
            .collect()
    }

    /// Add `scale * C'C` into `m`.
    fn add_gram(&self, m: &mut DenseMatrix, scale: f64) {
        for (p, q) in self.row_entries() {
            m[(p, p)] += scale;
            m[(q, q)] += scale;
            m[(p, q)] -= scale;
            m[(q, p)] -= scale;
        }
    }
}

pub fn build_consistency(n: usize, k: usize) -> Result<ConsistencyMatrix> {
    if k < 2 {
        return Err(Error::Parameter(format!(
            "consistency needs at least 2 modalities, got {k}"
        )));
    }
    Ok(ConsistencyMatrix { n, k })
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Solver(format!("non-finite {what}")))
    }
}

/// Classic manifold ranking: `s = (A / mu + I)^-1 y`.
pub fn manifold_rank(a: &CsrMatrix, y: &[f64], mu: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
    }
    if y.len() != a.dim() {
        return Err(Error::Dimension(format!(
            "query vector of length {} for {} nodes",
            y.len(),
            a.dim()
        )));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("empty query vector".into()));
    }
    check_finite("query vector", y)?;
    let mut m = a.to_dense();
    for i in 0..a.dim() {
        m[(i, i)] += mu;
    }
    let rhs: Vec<f64> = y.iter().map(|v| mu * v).collect();
    let s = Cholesky::factor(&m)?.solve(&rhs);
    check_finite("scores", &s)?;
    Ok(s)
}

fn stack(blocks: &[Vec<f64>]) -> Vec<f64> {
    blocks.concat()
}

fn unstack(stacked: &[f64], n: usize) -> Vec<Vec<f64>> {
    stacked.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Minimise `J` over `S` for fixed weights `r`.
pub fn solve_s(prob: &RankingProblem, r: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (n, k) = (prob.nodes(), prob.modalities());
    if r.len() != k {
        return Err(Error::Dimension(format!("{} weights for {k} modalities", r.len())));
    }
    check_finite("weights", r)?;
    if r.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Parameter("modality weights must be positive".into()));
    }
    for (a, y) in prob.blocks.iter().zip(&prob.queries) {
        check_finite("query vector", y)?;
        for i in 0..n {
            check_finite("ranking matrix", &a.row(i).map(|(_, v)| v).collect::<Vec<_>>())?;
        }
    }

    let mut m = DenseMatrix::zeros(n * k);
    for (b, a) in prob.blocks.iter().enumerate() {
        let scale = r[b] * r[b];
        let off = b * n;
        for i in 0..n {
            for (j, v) in a.row(i) {
                m[(off + i, off + j)] += scale * v;
            }
        }
    }
    if k > 1 && prob.lambda > 0.0 {
        build_consistency(n, k)?.add_gram(&mut m, prob.lambda);
    }
    for i in 0..n * k {
        m[(i, i)] += prob.mu;
    }
    let rhs: Vec<f64> = stack(&prob.queries).iter().map(|v| prob.mu * v).collect();
    let s = Cholesky::factor(&m)?.solve(&rhs);
    check_finite("scores", &s)?;
    Ok(unstack(&s, n))
}

/// `s' A s` for each modality. `A` is PSD, so rounding below zero is clamped.
pub fn smoothness(scores: &[Vec<f64>], blocks: &[CsrMatrix]) -> Vec<f64> {
    scores
        .iter()
        .zip(blocks)
        .map(|(s, a)| a.quad_form(s).max(0.0))
        .collect()
}

/// `G^k = sqrt(max(0, s^k' A^k s^k))`, floored at [`GAMMA_FLOOR`].
pub fn update_gamma(scores: &[Vec<f64>], blocks: &[CsrMatrix]) -> Vec<f64> {
    smoothness(scores, blocks)
        .into_iter()
        .map(|q| q.sqrt().max(GAMMA_FLOOR))
        .collect()
}

/// `r^k = 1 / (1 + s^k' A^k s^k / (G^k)^2)`.
pub fn update_r(scores: &[Vec<f64>], blocks: &[CsrMatrix], gamma: &[f64]) -> Vec<f64> {
    smoothness(scores, blocks)
        .into_iter()
        .zip(gamma)
        .map(|(q, g)| 1.0 / (1.0 + q / (g * g)))
        .collect()
}

/// Full objective `J`. The `G` term is left out while `gamma` is `None`.
pub fn objective(scores: &[Vec<f64>], r: &[f64], prob: &RankingProblem, gamma: Option<&[f64]>) -> f64 {
    let smooth: f64 = smoothness(scores, &prob.blocks)
        .iter()
        .zip(r)
        .map(|(q, w)| w * w * q)
        .sum();
    let fit: f64 = scores
        .iter()
        .zip(&prob.queries)
        .map(|(s, y)| s.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        * prob.mu;
    let reg: f64 = gamma.map_or(0.0, |g| {
        g.iter().zip(r).map(|(g, w)| (g * (1.0 - w)).powi(2)).sum()
    });
    let consistency = if scores.len() > 1 {
        scores
            .windows(2)
            .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            * prob.lambda
    } else {
        0.0
    };
    smooth + fit + reg + consistency
}

/// Starting value of the modality weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// The same `r^k = c` for every `K`.
    Constant(f64),
    /// `r^k = 1 / K`. With `K = 2` the first weight update reproduces the
    /// starting weights, so the loop stops at `r = (1/2, 1/2)`.
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub init: WeightInit,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            init: WeightInit::Constant(INIT_WEIGHT),
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Alternate the closed-form `S` and `r` updates with default options.
pub fn multitask_rank(prob: &RankingProblem) -> Result<RankingSolution> {
    multitask_rank_with(prob, &SolverOptions::default())
}

pub fn multitask_rank_with(prob: &RankingProblem, opts: &SolverOptions) -> Result<RankingSolution> {
    let k = prob.modalities();
    let mut r = vec![
        match opts.init {
            WeightInit::Constant(c) => c,
            WeightInit::Reciprocal => 1.0 / k as f64,
        };
        k
    ];
    let mut gamma: Vec<f64> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut weight_trace: Vec<Vec<f64>> = Vec::new();
    let mut scores = Vec::new();
    let mut converged = false;
    for t in 1..=opts.max_iterations.max(1) {
        scores = solve_s(prob, &r)?;
        if t == 1 {
            gamma = update_gamma(&scores, &prob.blocks);
        }
        r = update_r(&scores, &prob.blocks, &gamma);
        let j = objective(&scores, &r, prob, Some(&gamma));
        // Per modality, so a duplicated modality stops at the same iteration.
        let delta = trace.last().map(|prev| (j - prev).abs() / k as f64);
        trace.push(j);
        weight_trace.push(r.clone());
        if delta.is_some_and(|d| d < opts.tolerance) {
            converged = true;
            break;
        }
    }
    Ok(RankingSolution {
        scores,
        weights: r,
        gamma,
        iterations: trace.len(),
        objective_trace: trace,
        weight_trace,
        converged,
    })
}

/// Something that solves ranking problems; lets callers instrument or swap
/// the solver used by the detection pipeline.
pub trait Ranker {
    fn rank(&self, prob: &RankingProblem) -> Result<RankingSolution>;
}

/// The alternating solver above.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultitaskRanker {
    pub options: SolverOptions,
}

impl Ranker for MultitaskRanker {
    fn rank(&self, prob: &RankingProblem) -> Result<RankingSolution> {
        multitask_rank_with(prob, &self.options)
    }
}
