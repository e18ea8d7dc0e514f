//! Before/after summaries of a failure event from a metrics series.

use serde::{Deserialize, Serialize};

use crate::sim::MetricsRecord;

/// Averaging windows, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryWindows {
    /// Span immediately before the failure used for the steady pre-failure mean.
    pub pre: f64,
    /// Span at the end of the run used for the recovered mean.
    pub tail: f64,
}

impl Default for RecoveryWindows {
    fn default() -> Self {
        Self { pre: 2.0, tail: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub failure_time: f64,
    pub pre_coverage: f64,
    pub post_min_coverage: f64,
    pub recovered_coverage: f64,
    /// recovered / pre
    pub coverage_ratio: f64,
    pub pre_epidemic: f64,
    pub post_min_epidemic: f64,
    pub recovered_epidemic: f64,
    pub epidemic_ratio: f64,
    pub final_fiedler: f64,
    pub final_connected: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Summarise recovery from a failure at `failure_time`. Returns `None` when the
/// series has no records before the failure or none after it.
pub fn recovery_stats(records: &[MetricsRecord], failure_time: f64, w: RecoveryWindows) -> Option<RecoveryStats> {
    const EPS: f64 = 1e-9;
    let last = records.last()?;
    let pre: Vec<&MetricsRecord> = records
        .iter()
        .filter(|r| r.t < failure_time - EPS && r.t >= failure_time - w.pre - EPS)
        .collect();
    let post: Vec<&MetricsRecord> = records.iter().filter(|r| r.t >= failure_time - EPS).collect();
    let tail: Vec<&MetricsRecord> = records.iter().filter(|r| r.t > last.t - w.tail + EPS).collect();
    if pre.is_empty() || post.is_empty() {
        return None;
    }
    let pre_coverage = mean(pre.iter().map(|r| r.coverage))?;
    let pre_epidemic = mean(pre.iter().map(|r| r.mean_epidemic_bound))?;
    let recovered_coverage = mean(tail.iter().map(|r| r.coverage))?;
    let recovered_epidemic = mean(tail.iter().map(|r| r.mean_epidemic_bound))?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Some(RecoveryStats {
        failure_time,
        pre_coverage,
        post_min_coverage: post.iter().map(|r| r.coverage).fold(f64::INFINITY, f64::min),
        recovered_coverage,
        coverage_ratio: ratio(recovered_coverage, pre_coverage),
        pre_epidemic,
        post_min_epidemic: post
            .iter()
            .map(|r| r.mean_epidemic_bound)
            .fold(f64::INFINITY, f64::min),
        recovered_epidemic,
        epidemic_ratio: ratio(recovered_epidemic, pre_epidemic),
        final_fiedler: last.fiedler,
        final_connected: last.connected,
    })
}
