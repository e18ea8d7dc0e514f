//! MAP-to-MAP link structure and the connectivity metrics derived from it.

use std::collections::VecDeque;

use crate::eigen::{symmetric_eigenvalues, DenseMatrix};
use crate::error::ParamError;
use crate::kernels::{sigma_norm_vec, KernelParams};
use crate::vec2::Vec2;

/// λ₂ above this value declares the graph connected.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

/// Link structure over the active MAPs. Row `i` corresponds to the MAP with
/// original id `active_index_map[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphView {
    smooth: DenseMatrix,
    binary: DenseMatrix,
    degrees: Vec<usize>,
    active_index_map: Vec<usize>,
}

impl GraphView {
    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    /// a_ij
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.smooth.get(i, j)
    }

    #[inline]
    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.binary.get(i, j) > 0.0
    }

    pub fn smooth_adjacency(&self) -> &DenseMatrix {
        &self.smooth
    }

    pub fn binary_adjacency(&self) -> &DenseMatrix {
        &self.binary
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn active_index_map(&self) -> &[usize] {
        &self.active_index_map
    }

    /// Indices `j` with `a_ij > 0`, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.binary
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(j, _)| j)
    }
}

/// Build the graph over `positions`, labelling rows `0..n`.
pub fn build_graph(positions: &[Vec2], params: &KernelParams) -> GraphView {
    let ids: Vec<usize> = (0..positions.len()).collect();
    build_graph_with_ids(positions, &ids, params)
}

/// Build the graph over `positions` whose original MAP ids are `ids`.
pub fn build_graph_with_ids(positions: &[Vec2], ids: &[usize], params: &KernelParams) -> GraphView {
    assert_eq!(positions.len(), ids.len(), "one id per position");
    let n = positions.len();
    let mut smooth = DenseMatrix::zeros(n);
    let mut binary = DenseMatrix::zeros(n);
    let mut degrees = vec![0usize; n];
    let r_sq = params.r() * params.r();
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = positions[j] - positions[i];
            // link weight is exactly zero at or beyond r
            if diff.norm_sq() >= r_sq {
                continue;
            }
            let w = params.link_weight(sigma_norm_vec(diff, params.epsilon()));
            if w > 0.0 {
                smooth.set(i, j, w);
                smooth.set(j, i, w);
                binary.set(i, j, 1.0);
                binary.set(j, i, 1.0);
                degrees[i] += 1;
                degrees[j] += 1;
            }
        }
    }
    GraphView {
        smooth,
        binary,
        degrees,
        active_index_map: ids.to_vec(),
    }
}

/// Combinatorial Laplacian `D − A` of the binary link graph.
pub fn laplacian(g: &GraphView) -> DenseMatrix {
    let n = g.len();
    let mut l = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                l.set(i, i, g.degrees[i] as f64);
            } else if g.linked(i, j) {
                l.set(i, j, -1.0);
            }
        }
    }
    l
}

/// Second-smallest Laplacian eigenvalue. Values in `[-tol, 0]` are clamped to 0.
pub fn fiedler_value(laplacian: &DenseMatrix, tol: f64) -> Result<f64, ParamError> {
    if laplacian.asymmetry() > tol {
        return Err(ParamError::new("Laplacian must be symmetric"));
    }
    if laplacian.n() < 2 {
        return Ok(0.0);
    }
    let ev = symmetric_eigenvalues(laplacian)?;
    let l2 = ev[1];
    if l2 < -tol {
        return Err(ParamError::new(format!(
            "Laplacian has eigenvalue {l2} below -tol; not positive semi-definite"
        )));
    }
    Ok(l2.max(0.0))
}

/// Breadth-first reachability from node 0 over the binary links.
pub fn is_connected(g: &GraphView) -> bool {
    let n = g.len();
    if n <= 1 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in g.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// Mean-field upper bound on each node's steady-state informed probability,
/// `1 − 1/(1 + τ·deg)`.
pub fn epidemic_bound(degrees: &[usize], tau: f64) -> Vec<f64> {
    degrees
        .iter()
        .map(|&d| {
            let td = tau * d as f64;
            td / (1.0 + td)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMetrics {
    pub fiedler: f64,
    pub connected: bool,
    pub epidemic_bounds: Vec<f64>,
    pub coverage: f64,
}

impl ConnectivityMetrics {
    pub fn compute(g: &GraphView, tau: f64, coverage: f64) -> Result<Self, ParamError> {
        let fiedler = fiedler_value(&laplacian(g), CONNECTIVITY_TOL)?;
        // an overlay with fewer than two MAPs has no algebraic connectivity
        let connected = fiedler > CONNECTIVITY_TOL;
        Ok(Self {
            fiedler,
            connected,
            epidemic_bounds: epidemic_bound(g.degrees(), tau),
            coverage,
        })
    }

    pub fn mean_epidemic_bound(&self) -> f64 {
        if self.epidemic_bounds.is_empty() {
            0.0
        } else {
            self.epidemic_bounds.iter().sum::<f64>() / self.epidemic_bounds.len() as f64
        }
    }
}
