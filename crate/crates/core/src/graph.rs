//! Superpixel graph construction and per-modality affinity/ranking matrices.
//!
//! Two segments are joined when they touch (8-connectivity between pixels),
//! when one touches a neighbour of the other, or when both lie on the image
//! border. Each modality then weights the shared edge set with
//! `exp(-gamma * |c_i - c_j|)` on its own features.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::superpixel::{ModalityFeatures, SuperpixelMap};

/// Undirected edge set over `n` nodes; every edge is stored once as `(i, j)`
/// with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl GraphTopology {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::DegenerateGraph(format!("self-loop on node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Dimension(format!(
                    "edge ({a}, {b}) outside {n} nodes"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }
}

/// Pairs of segments with 8-adjacent pixels.
pub fn adjacency(map: &SuperpixelMap) -> Vec<BTreeSet<usize>> {
    let (w, h) = (map.width(), map.height());
    let mut adj = vec![BTreeSet::new(); map.len()];
    let mut link = |a: usize, b: usize| {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let l = map.label(x, y);
            if x + 1 < w {
                link(l, map.label(x + 1, y));
            }
            if y + 1 < h {
                link(l, map.label(x, y + 1));
                if x + 1 < w {
                    link(l, map.label(x + 1, y + 1));
                }
                if x > 0 {
                    link(l, map.label(x - 1, y + 1));
                }
            }
        }
    }
    adj
}

/// Connect neighbours, neighbours of neighbours, and all border segments.
pub fn build_topology(map: &SuperpixelMap) -> Result<GraphTopology> {
    let n = map.len();
    if n < 2 {
        return Err(Error::DegenerateGraph(format!(
            "{n} segment(s); at least 2 are needed"
        )));
    }
    let adj = adjacency(map);
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for &j in &adj[i] {
            edges.insert((i.min(j), i.max(j)));
            for &k in &adj[j] {
                if k != i {
                    edges.insert((i.min(k), i.max(k)));
                }
            }
        }
    }
    let border: Vec<usize> = (0..n).filter(|&i| !map.sides()[i].is_empty()).collect();
    for (a, &i) in border.iter().enumerate() {
        for &j in &border[a + 1..] {
            edges.insert((i, j));
        }
    }
    GraphTopology::new(n, edges)
}

/// One modality's weighted view of the shared topology.
#[derive(Debug, Clone)]
pub struct ModalityGraph {
    gamma: f64,
    affinity: CsrMatrix,
    degrees: Vec<f64>,
    ranking: CsrMatrix,
}

impl ModalityGraph {
    /// Build from explicit positive edge weights. `A = I - D^-1/2 W D^-1/2`.
    pub fn from_weighted_edges(n: usize, edges: &[(usize, usize, f64)], gamma: f64) -> Result<Self> {
        let mut triplets = Vec::with_capacity(2 * edges.len());
        for &(i, j, wt) in edges {
            if i == j {
                return Err(Error::DegenerateGraph(format!("self-loop on node {i}")));
            }
            if !(wt > 0.0) || !wt.is_finite() {
                return Err(Error::Parameter(format!(
                    "edge ({i}, {j}) weight {wt} is not positive and finite"
                )));
            }
            triplets.push((i, j, wt));
            triplets.push((j, i, wt));
        }
        let affinity = CsrMatrix::from_triplets(n, &triplets)?;
        let degrees: Vec<f64> = (0..n).map(|i| affinity.row(i).map(|(_, v)| v).sum()).collect();
        if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DegenerateGraph(format!("node {i} has no edges")));
        }
        let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut a = Vec::with_capacity(affinity.nnz() + n);
        for i in 0..n {
            a.push((i, i, 1.0));
            for (j, wt) in affinity.row(i) {
                // Scale product first so that A is exactly symmetric.
                a.push((i, j, -wt * (inv_sqrt[i] * inv_sqrt[j])));
            }
        }
        let ranking = CsrMatrix::from_triplets(n, &a)?;
        Ok(Self {
            gamma,
            affinity,
            degrees,
            ranking,
        })
    }

    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `W`.
    pub fn affinity(&self) -> &CsrMatrix {
        &self.affinity
    }

    /// Diagonal of `D`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// `A = I - D^-1/2 W D^-1/2`.
    pub fn ranking(&self) -> &CsrMatrix {
        &self.ranking
    }
}

/// Affinity `exp(-gamma * |c_i - c_j|_2)` on every topology edge.
pub fn build_modality_graph(
    topo: &GraphTopology,
    feats: &ModalityFeatures,
    gamma: f64,
) -> Result<ModalityGraph> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    if feats.len() != topo.node_count() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            feats.len(),
            topo.node_count()
        )));
    }
    let edges: Vec<(usize, usize, f64)> = topo
        .edges()
        .iter()
        .map(|&(i, j)| {
            let dist = feats
                .row(i)
                .iter()
                .zip(feats.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            // Clamp away from zero so an extreme gamma cannot drop an edge.
            (i, j, (-gamma * dist).exp().max(f64::MIN_POSITIVE))
        })
        .collect();
    ModalityGraph::from_weighted_edges(topo.node_count(), &edges, gamma)
}

/// Export `i,j,w_<modality>...` for each edge.
pub fn write_edge_csv(
    topo: &GraphTopology,
    graphs: &[&ModalityGraph],
    names: &[&str],
    path: &Path,
) -> Result<()> {
    let mut out = String::from("i,j");
    for name in names {
        out.push_str(&format!(",w_{name}"));
    }
    out.push('\n');
    for &(i, j) in topo.edges() {
        out.push_str(&format!("{i},{j}"));
        for g in graphs {
            out.push_str(&format!(",{:.9}", g.affinity().get(i, j)));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
