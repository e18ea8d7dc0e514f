//! Distributed MAP control law: σ-gradient interaction with capacity-driven
//! attraction, velocity consensus and goal tracking.
//!
//! Every per-MAP term works in the compact index space of the [`GraphView`]
//! (row `i` is the MAP `graph.active_index_map()[i]`).

use serde::{Deserialize, Serialize};

use crate::association::{nearest_center, Matching};
use crate::error::ParamError;
use crate::graph::GraphView;
use crate::kernels::{sigma_gradient_vec, sigma_norm_scalar, sigma_norm_vec, Bump, KernelParams};
use crate::state::MapState;
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub kernel: KernelParams,
    /// Position goal gain.
    pub c1: f64,
    /// Velocity goal gain.
    pub c2: f64,
    /// Serving capacity per MAP.
    pub n_max: usize,
}

impl ControlParams {
    pub fn new(kernel: KernelParams, c1: f64, c2: f64, n_max: usize) -> Result<Self, ParamError> {
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(ParamError::new("c1 must be > 0"));
        }
        if !(c2.is_finite() && c2 > 0.0) {
            return Err(ParamError::new("c2 must be > 0"));
        }
        if n_max == 0 {
            return Err(ParamError::new("n_max must be >= 1"));
        }
        Ok(Self { kernel, c1, c2, n_max })
    }
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            kernel: KernelParams::default(),
            c1: 0.2,
            c2: 0.1,
            n_max: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    /// One acceleration per MAP (original ids); inactive MAPs hold zero.
    pub u: Vec<Vec2>,
    pub max_norm: f64,
}

/// Ψ contribution of a MAP at `qj` on a MAP at `qi`.
#[inline]
pub fn psi_force(qi: Vec2, qj: Vec2, kernel: &KernelParams) -> Vec2 {
    let diff = qj - qi;
    let z = sigma_norm_vec(diff, kernel.epsilon());
    kernel.psi(z) * sigma_gradient_vec(diff, kernel.epsilon())
}

/// Attraction gain exerted by a neighbour with `aspirants` MSDs aspiring to it:
/// `a(1 − bump(‖(N_u − N^max)⁺‖_σ / ‖N^max‖_σ; 0, 1))`, in `[0, a]`.
#[inline]
pub fn capacity_gain(aspirants: usize, params: &ControlParams) -> f64 {
    let excess = aspirants.saturating_sub(params.n_max);
    if excess == 0 {
        return 0.0;
    }
    let eps = params.kernel.epsilon();
    let ratio = sigma_norm_scalar(excess as f64, eps) / sigma_norm_scalar(params.n_max as f64, eps);
    let unit = Bump::new(0.0, 1.0).expect("fixed cut-offs");
    params.kernel.a() * (1.0 - unit.eval(ratio))
}

/// Interaction term for MAP `i`: Ψ repulsion/attraction plus load sharing towards
/// overloaded neighbours, summed over linked neighbours.
pub fn gradient_term(
    i: usize,
    positions: &[Vec2],
    graph: &GraphView,
    aspirants_per_map: &[usize],
    params: &ControlParams,
) -> Vec2 {
    let k = &params.kernel;
    let qi = positions[i];
    let mut acc = Vec2::ZERO;
    for j in graph.neighbors(i) {
        let diff = positions[j] - qi;
        let z = sigma_norm_vec(diff, k.epsilon());
        let gain = k.psi(z) + capacity_gain(aspirants_per_map[j], params);
        acc += gain * sigma_gradient_vec(diff, k.epsilon());
    }
    acc
}

/// Σ_j a_ij (p_j − p_i) over linked neighbours.
pub fn velocity_consensus(i: usize, velocities: &[Vec2], graph: &GraphView) -> Vec2 {
    let pi = velocities[i];
    graph
        .neighbors(i)
        .fold(Vec2::ZERO, |acc, j| acc + graph.weight(i, j) * (velocities[j] - pi))
}

/// `c1 (q_ref − q) − c2 p`: drive towards the reference point and come to rest.
pub fn goal_term(position: Vec2, velocity: Vec2, q_ref: Vec2, params: &ControlParams) -> Vec2 {
    params.c1 * (q_ref - position) - params.c2 * velocity
}

/// Control input for every MAP from one state snapshot. `graph` and `matching`
/// must have been built over the active MAPs of `state`, in ascending id order.
pub fn control_input(
    state: &MapState,
    graph: &GraphView,
    matching: &Matching,
    centers: &[Vec2],
    params: &ControlParams,
) -> Result<ControlInput, ParamError> {
    let ids = graph.active_index_map();
    if matching.aspirants_per_map.len() != ids.len() {
        return Err(ParamError::new("matching and graph cover different MAP sets"));
    }
    let positions: Vec<Vec2> = ids.iter().map(|&id| state.q[id]).collect();
    let velocities: Vec<Vec2> = ids.iter().map(|&id| state.p[id]).collect();

    let mut u = vec![Vec2::ZERO; state.len()];
    let mut max_norm = 0.0f64;
    for (i, &id) in ids.iter().enumerate() {
        let q_ref = nearest_center(positions[i], centers)?;
        let ui = gradient_term(i, &positions, graph, &matching.aspirants_per_map, params)
            + velocity_consensus(i, &velocities, graph)
            + goal_term(positions[i], velocities[i], q_ref, params);
        max_norm = max_norm.max(ui.norm());
        u[id] = ui;
    }
    Ok(ControlInput { u, max_norm })
}
