//! Scenario configuration: a TOML document whose every field is optional. Missing
//! fields fall back to the reference scenario (2000 MSDs, 80 MAPs, three-component
//! Gaussian mixture, 20 % failure at t = 10 s).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::LloydOptions;
use crate::controller::ControlParams;
use crate::error::ConfigError;
use crate::kernels::KernelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Number of MSDs.
    pub m: usize,
    /// Number of MAPs.
    pub l: usize,
    /// Number of MSD clusters.
    pub k: usize,
    /// MAP elevation; reported in snapshots only.
    pub h: f64,
    /// MSD mobility scale.
    pub s: f64,
    /// Effective spreading rate for the epidemic bound.
    pub tau: f64,
    /// Sampling interval.
    pub ts: f64,
    /// Integration step.
    pub delta: f64,
    /// Simulated seconds.
    pub horizon: f64,
    /// `max ‖u_i‖` below which a run counts as converged.
    pub convergence_tol: f64,
    pub kernel: KernelSection,
    pub control: ControlSection,
    pub clustering: ClusteringSection,
    pub map_init: MapInitSection,
    pub output: OutputSection,
    pub gmm: Vec<GmmComponent>,
    pub failures: Vec<FailureEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub r: f64,
    pub d: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub c1: f64,
    pub c2: f64,
    pub n_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapInitSection {
    pub region: MapRegion,
    /// Interval each initial velocity component is drawn from.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Seconds between periodic snapshots; 0 disables them.
    pub snapshot_every: f64,
}

/// Initial MAP placement area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionRepr", into = "RegionRepr")]
pub enum MapRegion {
    /// MSD bounding box grown by `r` on every side.
    Auto,
    Box { min: [f64; 2], max: [f64; 2] },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RegionRepr {
    Named(String),
    Box { min: [f64; 2], max: [f64; 2] },
}

impl TryFrom<RegionRepr> for MapRegion {
    type Error = String;
    fn try_from(r: RegionRepr) -> Result<Self, String> {
        match r {
            RegionRepr::Named(s) if s == "auto" => Ok(MapRegion::Auto),
            RegionRepr::Named(s) => Err(format!("region must be \"auto\" or {{ min, max }}, got \"{s}\"")),
            RegionRepr::Box { min, max } => Ok(MapRegion::Box { min, max }),
        }
    }
}

impl From<MapRegion> for RegionRepr {
    fn from(r: MapRegion) -> Self {
        match r {
            MapRegion::Auto => RegionRepr::Named("auto".into()),
            MapRegion::Box { min, max } => RegionRepr::Box { min, max },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEvent {
    /// Seconds.
    pub time: f64,
    /// Fraction of the currently active MAPs to fail.
    pub fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            m: 2000,
            l: 80,
            k: 3,
            h: 20.0,
            s: 0.2,
            tau: 1.0,
            ts: 0.01,
            delta: 0.01,
            horizon: 25.0,
            convergence_tol: 1e-3,
            kernel: KernelSection::default(),
            control: ControlSection::default(),
            clustering: ClusteringSection::default(),
            map_init: MapInitSection::default(),
            output: OutputSection::default(),
            gmm: default_gmm(),
            failures: vec![FailureEvent {
                time: 10.0,
                fraction: 0.2,
            }],
        }
    }
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            r: 24.0,
            d: 20.0,
            epsilon: 0.1,
            gamma: 0.2,
            a: 5.0,
            b: 5.0,
        }
    }
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            c1: 0.2,
            c2: 0.1,
            n_max: 80,
        }
    }
}

impl Default for ClusteringSection {
    fn default() -> Self {
        let o = LloydOptions::default();
        Self {
            max_iter: o.max_iter,
            tol: o.tol,
        }
    }
}

impl Default for MapInitSection {
    fn default() -> Self {
        Self {
            region: MapRegion::Auto,
            velocity: [-2.0, -1.0],
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { snapshot_every: 1.0 }
    }
}

pub fn default_gmm() -> Vec<GmmComponent> {
    let w = 1.0 / 3.0;
    vec![
        GmmComponent {
            weight: w,
            mean: [30.0, 40.0],
            cov: [[200.0, 0.0], [0.0, 100.0]],
        },
        GmmComponent {
            weight: w,
            mean: [-20.0, -20.0],
            cov: [[500.0, 0.0], [0.0, 200.0]],
        },
        GmmComponent {
            weight: w,
            mean: [-80.0, 60.0],
            cov: [[150.0, 0.0], [0.0, 300.0]],
        },
    ]
}

impl ScenarioConfig {
    /// Parse and validate a TOML document. Validation errors carry the line of the
    /// offending key when it is present in `source`.
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate().map_err(|e| match e {
            ConfigError::Invalid { field, message, .. } => {
                let line = locate_field(source, &field);
                ConfigError::Invalid { field, message, line }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn kernel_params(&self) -> KernelParams {
        let k = &self.kernel;
        KernelParams::new(k.epsilon, k.gamma, k.r, k.d, k.a, k.b).expect("validated config")
    }

    pub fn control_params(&self) -> ControlParams {
        ControlParams::new(self.kernel_params(), self.control.c1, self.control.c2, self.control.n_max)
            .expect("validated config")
    }

    pub fn lloyd_options(&self) -> LloydOptions {
        LloydOptions {
            max_iter: self.clustering.max_iter,
            tol: self.clustering.tol,
        }
    }

    /// Number of simulation steps, ⌈horizon / T_s⌉.
    pub fn step_count(&self) -> usize {
        if self.horizon <= 0.0 {
            return 0;
        }
        (self.horizon / self.ts - 1e-9).ceil().max(0.0) as usize
    }

    /// Time at the end of step `n` (1-based).
    pub fn step_time(&self, n: usize) -> f64 {
        n as f64 * self.ts
    }

    /// Step (1-based) whose window `(t_{n-1}, t_n]` contains `time`; the first
    /// window also includes t = 0.
    pub fn step_of_time(&self, time: f64) -> usize {
        ((time / self.ts - 1e-9).ceil().max(1.0)) as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
            ConfigError::Invalid {
                field: field.into(),
                message: message.into(),
                line: None,
            }
        }
        fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(bad(field, "must be finite"))
            }
        }

        if self.m == 0 {
            return Err(bad("m", "must be >= 1"));
        }
        if self.l == 0 {
            return Err(bad("l", "must be >= 1"));
        }
        if self.k == 0 {
            return Err(bad("k", "must be >= 1"));
        }
        if self.k > self.m {
            return Err(bad("k", "must not exceed the number of MSDs m"));
        }
        for (name, v) in [
            ("h", self.h),
            ("s", self.s),
            ("tau", self.tau),
            ("ts", self.ts),
            ("delta", self.delta),
            ("horizon", self.horizon),
            ("convergence_tol", self.convergence_tol),
        ] {
            finite(name, v)?;
        }
        if self.h < 0.0 {
            return Err(bad("h", "must be >= 0"));
        }
        if self.s < 0.0 {
            return Err(bad("s", "must be >= 0"));
        }
        if self.tau <= 0.0 {
            return Err(bad("tau", "must be > 0"));
        }
        if self.ts <= 0.0 {
            return Err(bad("ts", "must be > 0"));
        }
        if self.delta <= 0.0 {
            return Err(bad("delta", "must be > 0"));
        }
        if self.horizon < 0.0 {
            return Err(bad("horizon", "must be >= 0"));
        }
        if self.convergence_tol <= 0.0 {
            return Err(bad("convergence_tol", "must be > 0"));
        }

        let k = &self.kernel;
        for (name, v) in [
            ("kernel.r", k.r),
            ("kernel.d", k.d),
            ("kernel.epsilon", k.epsilon),
            ("kernel.gamma", k.gamma),
            ("kernel.a", k.a),
            ("kernel.b", k.b),
        ] {
            finite(name, v)?;
        }
        if k.epsilon <= 0.0 {
            return Err(bad("kernel.epsilon", "must be > 0"));
        }
        if !(k.gamma > 0.0 && k.gamma < 1.0) {
            return Err(bad("kernel.gamma", "must lie in (0, 1)"));
        }
        if k.r <= 0.0 {
            return Err(bad("kernel.r", "must be > 0"));
        }
        if k.d < 0.0 {
            return Err(bad("kernel.d", "must be >= 0"));
        }
        if k.d >= k.r {
            return Err(bad("kernel.d", "d must be < r"));
        }
        if k.a <= 0.0 {
            return Err(bad("kernel.a", "must be > 0"));
        }
        if k.b <= 0.0 {
            return Err(bad("kernel.b", "must be > 0"));
        }

        let c = &self.control;
        if !(c.c1.is_finite() && c.c1 > 0.0) {
            return Err(bad("control.c1", "must be > 0"));
        }
        if !(c.c2.is_finite() && c.c2 > 0.0) {
            return Err(bad("control.c2", "must be > 0"));
        }
        if c.n_max == 0 {
            return Err(bad("control.n_max", "must be >= 1"));
        }

        if self.clustering.max_iter == 0 {
            return Err(bad("clustering.max_iter", "must be >= 1"));
        }
        if !(self.clustering.tol.is_finite() && self.clustering.tol > 0.0) {
            return Err(bad("clustering.tol", "must be > 0"));
        }

        if let MapRegion::Box { min, max } = self.map_init.region {
            if min.iter().chain(&max).any(|v| !v.is_finite()) {
                return Err(bad("map_init.region", "bounds must be finite"));
            }
            if min[0] > max[0] || min[1] > max[1] {
                return Err(bad("map_init.region", "min must not exceed max"));
            }
        }
        let [lo, hi] = self.map_init.velocity;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(bad("map_init.velocity", "must be a finite interval [lo, hi] with lo <= hi"));
        }

        if !(self.output.snapshot_every.is_finite() && self.output.snapshot_every >= 0.0) {
            return Err(bad("output.snapshot_every", "must be >= 0"));
        }

        if self.gmm.is_empty() {
            return Err(bad("gmm", "at least one mixture component is required"));
        }
        let mut total = 0.0;
        for (i, g) in self.gmm.iter().enumerate() {
            if !(g.weight.is_finite() && g.weight >= 0.0) {
                return Err(bad(format!("gmm[{i}].weight"), "must be >= 0"));
            }
            if g.mean.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("gmm[{i}].mean"), "must be finite"));
            }
            let [[a, b], [c, d]] = g.cov;
            if [a, b, c, d].iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("gmm[{i}].cov"), "must be finite"));
            }
            if (b - c).abs() > 1e-12 * (1.0 + b.abs().max(c.abs())) {
                return Err(bad(format!("gmm[{i}].cov"), "covariance must be symmetric"));
            }
            if !(a > 0.0 && a * d - b * c > 0.0) {
                return Err(bad(format!("gmm[{i}].cov"), "covariance must be positive definite"));
            }
            total += g.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad("gmm", format!("weights must sum to 1 (got {total})")));
        }

        for (i, f) in self.failures.iter().enumerate() {
            if !(f.time.is_finite() && f.time >= 0.0) {
                return Err(bad(format!("failures[{i}].time"), "must be >= 0"));
            }
            if !(f.fraction.is_finite() && (0.0..=1.0).contains(&f.fraction)) {
                return Err(bad(format!("failures[{i}].fraction"), "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&text)
}

/// 1-based line where `field` (e.g. `kernel.d`, `gmm[1].cov`, `seed`) is assigned.
/// Falls back to the section header when the key itself is absent.
fn locate_field(source: &str, field: &str) -> Option<usize> {
    let (section, key) = match field.rsplit_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, field),
    };
    let (section_name, wanted_index) = match section {
        Some(s) => match s.split_once('[') {
            Some((name, rest)) => (Some(name), rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (Some(s), None),
        },
        None => (None, None),
    };

    let mut current: Option<String> = None;
    let mut occurrence: Option<usize> = None;
    let mut counts = std::collections::HashMap::<String, usize>::new();
    let mut header_line = None;
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let is_array = line.starts_with("[[");
            let name = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if is_array {
                let c = counts.entry(name.clone()).or_insert(0);
                occurrence = Some(*c);
                *c += 1;
            } else {
                occurrence = None;
            }
            let whole_table = section_name.is_none() && name == key;
            current = Some(name);
            if whole_table || (current.as_deref() == section_name && occurrence == wanted_index) {
                header_line.get_or_insert(n + 1);
            }
            continue;
        }
        let in_section = current.as_deref() == section_name && (wanted_index.is_none() || occurrence == wanted_index);
        if !in_section {
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            if lhs.trim() == key {
                return Some(n + 1);
            }
        }
    }
    header_line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.m, 2000);
        assert_eq!(cfg.l, 80);
        assert_eq!(cfg.kernel.r, 24.0);
        assert_eq!(cfg.kernel.d, 20.0);
        assert_eq!(cfg.kernel.epsilon, 0.1);
        assert_eq!(cfg.control.n_max, 80);
        assert_eq!(cfg.h, 20.0);
        assert_eq!(cfg.k, 3);
        assert_eq!((cfg.kernel.a, cfg.kernel.b), (5.0, 5.0));
        assert_eq!((cfg.control.c1, cfg.control.c2), (0.2, 0.1));
        assert_eq!(cfg.s, 0.2);
        assert_eq!(cfg.tau, 1.0);
        assert_eq!(cfg.ts, 0.01);
        assert_eq!(cfg.kernel.gamma, 0.2);
        assert_eq!(cfg.gmm[2].mean, [-80.0, 60.0]);
        assert_eq!(cfg.gmm[1].cov, [[500.0, 0.0], [0.0, 200.0]]);
        assert_eq!(cfg.step_count(), 2500);
    }

    #[test]
    fn d_not_below_r_is_rejected_with_line() {
        let src = "seed = 3\n[kernel]\nr = 24\nd = 30\n";
        let err = ScenarioConfig::from_toml_str(src).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d must be < r"), "{msg}");
        assert!(msg.starts_with("line 4:"), "{msg}");
    }

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.map_init.region = MapRegion::Box {
            min: [-1.0, 0.0],
            max: [1.0, 2.5],
        };
        cfg.failures.push(FailureEvent {
            time: 12.0,
            fraction: 0.1,
        });
        for c in [ScenarioConfig::default(), cfg] {
            let text = c.to_toml_string();
            assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), c, "{text}");
        }
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(matches!(
            ScenarioConfig::from_toml_str("m = \"many\""),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ScenarioConfig::from_toml_str("bogus = 1"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ScenarioConfig::from_toml_str("[map_init]\nregion = \"everywhere\""),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn locate_array_of_tables() {
        let src = "[[gmm]]\nweight = 0.5\nmean = [0, 0]\ncov = [[1, 0], [0, 1]]\n[[gmm]]\nweight = 0.5\nmean = [1, 1]\ncov = [[1, 2], [2, 1]]\n";
        let err = ScenarioConfig::from_toml_str(src).unwrap_err();
        assert!(err.to_string().starts_with("line 8: gmm[1].cov"), "{err}");
    }

    #[test]
    fn step_windows() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.step_of_time(10.0), 1000);
        assert_eq!(cfg.step_of_time(0.0), 1);
        assert_eq!(cfg.step_of_time(0.015), 2);
        let mut zero = cfg.clone();
        zero.horizon = 0.0;
        assert_eq!(zero.step_count(), 0);
    }
}
