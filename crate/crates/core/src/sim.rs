//! Scenario engine. One call to [`Simulation::step`] runs the full feedback loop:
//! MSD mobility, clustering, matching, graph construction, control, integration,
//! scheduled failures and metrics.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::association::{coverage_proportion, lloyd_cluster, match_msds, ClusterSet, Matching};
use crate::config::{GmmComponent, MapRegion, ScenarioConfig};
use crate::controller::{control_input, ControlInput, ControlParams};
use crate::error::{ParamError, SimError};
use crate::graph::{build_graph_with_ids, ConnectivityMetrics, GraphView, CONNECTIVITY_TOL};
use crate::kernels::KernelParams;
use crate::state::{MapState, MsdState};
use crate::vec2::Vec2;

/// Independent random streams derived from one master seed. Draws on one stream
/// never shift another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    MsdInit = 1,
    MapInit = 2,
    Mobility = 3,
    Failure = 4,
    Clustering = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Cholesky factor (lower triangular) of a 2×2 SPD matrix.
fn cholesky2(cov: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2], ParamError> {
    let [[a, b], [_, d]] = *cov;
    if a <= 0.0 {
        return Err(ParamError::new("covariance is not positive definite"));
    }
    let l11 = a.sqrt();
    let l21 = b / l11;
    let rem = d - l21 * l21;
    if rem <= 0.0 {
        return Err(ParamError::new("covariance is not positive definite"));
    }
    Ok([[l11, 0.0], [l21, rem.sqrt()]])
}

/// `m` independent draws from a Gaussian mixture.
pub fn sample_msds<R: Rng + ?Sized>(gmm: &[GmmComponent], m: usize, rng: &mut R) -> Result<MsdState, ParamError> {
    if m == 0 {
        return Ok(MsdState { y: Vec::new() });
    }
    if gmm.is_empty() {
        return Err(ParamError::new("mixture has no components"));
    }
    let factors = gmm
        .iter()
        .map(|g| cholesky2(&g.cov))
        .collect::<Result<Vec<_>, _>>()?;
    let total: f64 = gmm.iter().map(|g| g.weight).sum();
    let mut y = Vec::with_capacity(m);
    for _ in 0..m {
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut c = gmm.len() - 1;
        for (i, g) in gmm.iter().enumerate() {
            acc += g.weight;
            if u < acc {
                c = i;
                break;
            }
        }
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let l = &factors[c];
        let mean = gmm[c].mean;
        y.push(Vec2::new(mean[0] + l[0][0] * z0, mean[1] + l[1][0] * z0 + l[1][1] * z1));
    }
    Ok(MsdState { y })
}

#[inline]
fn uniform_in<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Area MAPs are dropped into; `Auto` is the MSD bounding box grown by `r`.
pub fn init_region(config: &ScenarioConfig, msds: &MsdState) -> ([f64; 2], [f64; 2]) {
    match config.map_init.region {
        MapRegion::Box { min, max } => (min, max),
        MapRegion::Auto => {
            let r = config.kernel.r;
            if msds.is_empty() {
                return ([-r, -r], [r, r]);
            }
            let mut min = [f64::INFINITY; 2];
            let mut max = [f64::NEG_INFINITY; 2];
            for p in &msds.y {
                min[0] = min[0].min(p.x);
                min[1] = min[1].min(p.y);
                max[0] = max[0].max(p.x);
                max[1] = max[1].max(p.y);
            }
            ([min[0] - r, min[1] - r], [max[0] + r, max[1] + r])
        }
    }
}

/// Uniform positions over the configured region, uniform velocity components over
/// the configured interval; all MAPs active.
pub fn init_maps<R: Rng + ?Sized>(config: &ScenarioConfig, msds: &MsdState, rng: &mut R) -> MapState {
    let (min, max) = init_region(config, msds);
    let [vlo, vhi] = config.map_init.velocity;
    let mut q = Vec::with_capacity(config.l);
    let mut p = Vec::with_capacity(config.l);
    for _ in 0..config.l {
        q.push(Vec2::new(uniform_in(min[0], max[0], rng), uniform_in(min[1], max[1], rng)));
    }
    for _ in 0..config.l {
        p.push(Vec2::new(uniform_in(vlo, vhi, rng), uniform_in(vlo, vhi, rng)));
    }
    MapState::new(q, p)
}

/// Random-walk step `y ← y + s·ξ`, ξ uniform on [−1, 1]².
pub fn mobility_step<R: Rng + ?Sized>(msds: &mut MsdState, s: f64, rng: &mut R) {
    if s == 0.0 {
        return;
    }
    for y in &mut msds.y {
        let dx = uniform_in(-1.0, 1.0, rng);
        let dy = uniform_in(-1.0, 1.0, rng);
        *y += s * Vec2::new(dx, dy);
    }
}

/// Semi-implicit Euler: velocity first, then position with the new velocity.
/// Inactive MAPs are left untouched.
pub fn integrate_step(state: &mut MapState, u: &ControlInput, delta: f64) -> Result<(), String> {
    if u.u.len() != state.len() {
        return Err("control input length differs from MAP count".into());
    }
    if let Some(i) = (0..state.len()).find(|&i| state.active[i] && !u.u[i].is_finite()) {
        return Err(format!("non-finite control input for MAP {i}: {:?}", u.u[i]));
    }
    for i in 0..state.len() {
        if !state.active[i] {
            continue;
        }
        state.p[i] += delta * u.u[i];
        state.q[i] += delta * state.p[i];
    }
    Ok(())
}

/// Fail ⌊fraction · active⌋ uniformly chosen active MAPs. Returns their ids.
pub fn apply_failure<R: Rng + ?Sized>(state: &mut MapState, fraction: f64, rng: &mut R) -> Vec<usize> {
    let active = state.active_ids();
    // the nudge keeps products such as 0.29 · 100 from flooring one short
    let count = ((fraction * active.len() as f64) + 1e-9).floor() as usize;
    let count = count.min(active.len());
    if count == 0 {
        return Vec::new();
    }
    let mut failed: Vec<usize> = index::sample(rng, active.len(), count)
        .into_iter()
        .map(|k| active[k])
        .collect();
    failed.sort_unstable();
    for &id in &failed {
        state.active[id] = false;
    }
    failed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: f64,
    pub coverage: f64,
    pub fiedler: f64,
    pub connected: bool,
    pub mean_epidemic_bound: f64,
    pub max_u_norm: f64,
    pub active_maps: usize,
}

impl MetricsRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.coverage,
            self.fiedler,
            self.mean_epidemic_bound,
            self.max_u_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Stages of one loop iteration, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Mobility,
    Clustering,
    Matching,
    Graph,
    Control,
    Integrate,
    Failure,
    Metrics,
}

/// Complete state at one instant, as handed to snapshot consumers.
#[derive(Debug, Clone)]
pub struct SnapshotView<'a> {
    pub step: usize,
    pub t: f64,
    pub elevation: f64,
    pub msds: &'a MsdState,
    pub maps: &'a MapState,
    /// Matching over the active MAPs (compact indices, see `active_ids`).
    pub matching: &'a Matching,
    pub active_ids: &'a [usize],
    pub centers: &'a [Vec2],
}

/// Receives everything a run produces. All methods default to no-ops.
pub trait RunObserver {
    fn phase(&mut self, _step: usize, _phase: Phase) {}
    fn record(&mut self, _record: &MetricsRecord) -> Result<(), SimError> {
        Ok(())
    }
    fn wants_snapshots(&self) -> bool {
        false
    }
    fn snapshot(&mut self, _snap: &SnapshotView<'_>) -> Result<(), SimError> {
        Ok(())
    }
    fn failure(&mut self, _t: f64, _failed: &[usize]) {}
}

/// Observer that discards everything.
pub struct NullObserver;
impl RunObserver for NullObserver {}

/// Observer that keeps every metrics record in memory.
#[derive(Debug, Default)]
pub struct RecordCollector {
    pub records: Vec<MetricsRecord>,
}

impl RunObserver for RecordCollector {
    fn record(&mut self, record: &MetricsRecord) -> Result<(), SimError> {
        self.records.push(*record);
        Ok(())
    }
}

/// End-of-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_metrics: Option<MetricsRecord>,
    /// `max_u_norm` at the horizon is below the convergence tolerance.
    pub converged: bool,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

pub struct Simulation {
    config: ScenarioConfig,
    kernel: KernelParams,
    control: ControlParams,
    msds: MsdState,
    maps: MapState,
    centers: Option<Vec<Vec2>>,
    step: usize,
    mobility_rng: ChaCha8Rng,
    failure_rng: ChaCha8Rng,
    clustering_rng: ChaCha8Rng,
    last_matching: Matching,
    last_active: Vec<usize>,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let kernel = config.kernel_params();
        let control = config.control_params();
        let msds = sample_msds(&config.gmm, config.m, &mut stream_rng(config.seed, Stream::MsdInit))?;
        let maps = init_maps(&config, &msds, &mut stream_rng(config.seed, Stream::MapInit));
        let last_active = maps.active_ids();
        let last_matching = match_msds(&msds.y, &maps.active_positions(), kernel.r(), control.n_max);
        Ok(Self {
            mobility_rng: stream_rng(config.seed, Stream::Mobility),
            failure_rng: stream_rng(config.seed, Stream::Failure),
            clustering_rng: stream_rng(config.seed, Stream::Clustering),
            config,
            kernel,
            control,
            msds,
            maps,
            centers: None,
            step: 0,
            last_matching,
            last_active,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }
    pub fn msds(&self) -> &MsdState {
        &self.msds
    }
    pub fn maps(&self) -> &MapState {
        &self.maps
    }
    pub fn centers(&self) -> &[Vec2] {
        self.centers.as_deref().unwrap_or(&[])
    }
    pub fn steps_done(&self) -> usize {
        self.step
    }
    pub fn time(&self) -> f64 {
        self.config.step_time(self.step)
    }
    /// Matching of the current state (as used for the latest metrics).
    pub fn matching(&self) -> &Matching {
        &self.last_matching
    }

    pub fn snapshot_view(&self) -> SnapshotView<'_> {
        SnapshotView {
            step: self.step,
            t: self.time(),
            elevation: self.config.h,
            msds: &self.msds,
            maps: &self.maps,
            matching: &self.last_matching,
            active_ids: &self.last_active,
            centers: self.centers(),
        }
    }

    fn graph(&self, ids: &[usize]) -> GraphView {
        let positions: Vec<Vec2> = ids.iter().map(|&i| self.maps.q[i]).collect();
        build_graph_with_ids(&positions, ids, &self.kernel)
    }

    /// Advance one sampling interval and return the metrics at its end.
    pub fn step(&mut self, obs: &mut dyn RunObserver) -> Result<MetricsRecord, SimError> {
        let n = self.step + 1;
        let t = self.config.step_time(n);
        let fault = |message: String| SimError::Fault { t, message };

        obs.phase(n, Phase::Mobility);
        mobility_step(&mut self.msds, self.config.s, &mut self.mobility_rng);

        obs.phase(n, Phase::Clustering);
        let clusters: ClusterSet = lloyd_cluster(
            &self.msds.y,
            self.config.k,
            self.centers.as_deref(),
            self.config.lloyd_options(),
            &mut self.clustering_rng,
        )?;
        self.centers = Some(clusters.centers);

        obs.phase(n, Phase::Matching);
        let ids = self.maps.active_ids();
        let positions: Vec<Vec2> = ids.iter().map(|&i| self.maps.q[i]).collect();
        let matching = match_msds(&self.msds.y, &positions, self.kernel.r(), self.control.n_max);

        obs.phase(n, Phase::Graph);
        let graph = build_graph_with_ids(&positions, &ids, &self.kernel);

        obs.phase(n, Phase::Control);
        let u = control_input(&self.maps, &graph, &matching, self.centers(), &self.control)?;

        obs.phase(n, Phase::Integrate);
        integrate_step(&mut self.maps, &u, self.config.delta).map_err(fault)?;

        obs.phase(n, Phase::Failure);
        for f in &self.config.failures {
            if self.config.step_of_time(f.time) == n {
                let failed = apply_failure(&mut self.maps, f.fraction, &mut self.failure_rng);
                obs.failure(t, &failed);
            }
        }

        obs.phase(n, Phase::Metrics);
        // metrics describe the post-update state
        let ids = self.maps.active_ids();
        let positions: Vec<Vec2> = ids.iter().map(|&i| self.maps.q[i]).collect();
        let matching = match_msds(&self.msds.y, &positions, self.kernel.r(), self.control.n_max);
        let coverage = coverage_proportion(&matching, self.msds.len())?;
        let graph = self.graph(&ids);
        let conn = ConnectivityMetrics::compute(&graph, self.config.tau, coverage)?;
        let record = MetricsRecord {
            t,
            coverage,
            fiedler: conn.fiedler,
            connected: conn.fiedler > CONNECTIVITY_TOL,
            mean_epidemic_bound: conn.mean_epidemic_bound(),
            max_u_norm: u.max_norm,
            active_maps: ids.len(),
        };
        if !record.is_finite() || self.maps.q.iter().chain(&self.maps.p).any(|v| !v.is_finite()) {
            return Err(fault("non-finite state or metric".into()));
        }
        self.last_matching = matching;
        self.last_active = ids;
        self.step = n;
        obs.record(&record)?;
        Ok(record)
    }

    /// Steps at which a snapshot is due: periodic ones plus the steps immediately
    /// before and at each failure.
    fn snapshot_due(&self, n: usize) -> bool {
        let every = self.config.output.snapshot_every;
        if every > 0.0 {
            let stride = ((every / self.config.ts).round() as usize).max(1);
            if n.is_multiple_of(stride) {
                return true;
            }
        }
        self.config.failures.iter().any(|f| {
            let nf = self.config.step_of_time(f.time);
            n == nf || n + 1 == nf
        })
    }
}

/// Run a whole scenario, streaming records and snapshots to `obs`.
pub fn run_scenario(config: &ScenarioConfig, obs: &mut dyn RunObserver) -> Result<RunSummary, SimError> {
    let start = Instant::now();
    let mut sim = Simulation::new(config.clone())?;
    let steps = config.step_count();
    let snapshots = obs.wants_snapshots();
    if snapshots {
        obs.snapshot(&sim.snapshot_view())?;
    }
    let mut last = None;
    for _ in 0..steps {
        let rec = sim.step(obs)?;
        if snapshots && sim.snapshot_due(sim.steps_done()) {
            obs.snapshot(&sim.snapshot_view())?;
        }
        last = Some(rec);
    }
    Ok(RunSummary {
        steps,
        final_metrics: last,
        converged: last.is_some_and(|r| r.max_u_norm < config.convergence_tol),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
