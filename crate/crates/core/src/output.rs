//! File formats: per-step metrics (comma-separated), per-instant state snapshots
//! (JSON) and the end-of-run summary (JSON).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::association::{coverage_proportion, match_msds};
use crate::error::SimError;
use crate::sim::{MetricsRecord, RunObserver, RunSummary, SnapshotView};
use crate::vec2::Vec2;

pub const METRICS_HEADER: &str = "t,coverage,fiedler,connected,mean_epidemic_bound,max_u_norm,active_maps";

/// Fixed scientific notation with 13 significant digits.
fn real(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn format_metrics_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        real(r.t),
        real(r.coverage),
        real(r.fiedler),
        r.connected,
        real(r.mean_epidemic_bound),
        real(r.max_u_norm),
        r.active_maps
    )
}

/// Streaming metrics writer; the header goes out on creation.
pub struct MetricsWriter<W: Write> {
    out: W,
    rows: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out, rows: 0 })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> std::io::Result<()> {
        self.rows += 1;
        writeln!(self.out, "{}", format_metrics_row(r))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Write a full record sequence to `path`.
pub fn write_metrics<'a>(records: impl IntoIterator<Item = &'a MetricsRecord>, path: &Path) -> Result<(), SimError> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = MetricsWriter::new(BufWriter::new(file)).map_err(|e| SimError::io(path, e))?;
    for r in records {
        w.write(r).map_err(|e| SimError::io(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

/// Parse a metrics file written by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let bad = |line: usize, what: &str| {
        SimError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {line}: {what}")),
        )
    };
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n + 2, "expected 7 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n + 2, "bad number"));
            Ok(MetricsRecord {
                t: num(f[0])?,
                coverage: num(f[1])?,
                fiedler: num(f[2])?,
                connected: f[3].parse().map_err(|_| bad(n + 2, "bad bool"))?,
                mean_epidemic_bound: num(f[4])?,
                max_u_norm: num(f[5])?,
                active_maps: f[6].parse().map_err(|_| bad(n + 2, "bad integer"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdRow {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    /// Original id of the MAP this MSD aspires to.
    pub aspirant: Option<usize>,
    pub served: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub active: bool,
}

/// One state dump, enough to redraw the network externally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub msds: Vec<MsdRow>,
    pub maps: Vec<MapRow>,
    pub centers: Vec<[f64; 2]>,
}

impl Snapshot {
    pub fn from_view(v: &SnapshotView<'_>) -> Self {
        let msds = v
            .msds
            .y
            .iter()
            .enumerate()
            .map(|(i, p)| MsdRow {
                id: i,
                x: p.x,
                y: p.y,
                aspirant: v.matching.aspirant_of[i].map(|j| v.active_ids[j]),
                served: v.matching.served[i],
            })
            .collect();
        let maps = (0..v.maps.len())
            .map(|i| MapRow {
                id: i,
                x: v.maps.q[i].x,
                y: v.maps.q[i].y,
                z: v.elevation,
                vx: v.maps.p[i].x,
                vy: v.maps.p[i].y,
                active: v.maps.active[i],
            })
            .collect();
        Self {
            step: v.step,
            t: v.t,
            msds,
            maps,
            centers: v.centers.iter().map(|&c| c.into()).collect(),
        }
    }

    pub fn file_name(step: usize) -> String {
        format!("snapshot_{step:06}.json")
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| SimError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
    }

    /// Coverage recomputed from the stored positions alone.
    pub fn recompute_coverage(&self, r: f64, n_max: usize) -> f64 {
        let msds: Vec<Vec2> = self.msds.iter().map(|m| Vec2::new(m.x, m.y)).collect();
        let maps: Vec<Vec2> = self
            .maps
            .iter()
            .filter(|m| m.active)
            .map(|m| Vec2::new(m.x, m.y))
            .collect();
        let matching = match_msds(&msds, &maps, r, n_max);
        coverage_proportion(&matching, msds.len()).unwrap_or(0.0)
    }
}

/// Write one snapshot document into `dir`.
pub fn export_snapshot(view: &SnapshotView<'_>, dir: &Path) -> Result<PathBuf, SimError> {
    let path = dir.join(Snapshot::file_name(view.step));
    let file = File::create(&path).map_err(|e| SimError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &Snapshot::from_view(view))
        .map_err(|e| SimError::io(&path, std::io::Error::other(e)))?;
    w.flush().map_err(|e| SimError::io(&path, e))?;
    Ok(path)
}

/// Paths produced by a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub metrics_path: PathBuf,
    pub snapshots_dir: Option<PathBuf>,
    pub summary_path: PathBuf,
}

impl RunOutputs {
    pub fn in_dir(dir: &Path, with_snapshots: bool) -> Self {
        Self {
            metrics_path: dir.join("metrics.csv"),
            snapshots_dir: with_snapshots.then(|| dir.join("snapshots")),
            summary_path: dir.join("summary.json"),
        }
    }
}

/// Observer that streams metrics and snapshots to disk.
pub struct FileSink {
    metrics: MetricsWriter<BufWriter<File>>,
    metrics_path: PathBuf,
    snapshots_dir: Option<PathBuf>,
    failures: Vec<(f64, Vec<usize>)>,
}

impl FileSink {
    pub fn create(outputs: &RunOutputs) -> Result<Self, SimError> {
        if let Some(parent) = outputs.metrics_path.parent() {
            fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
        }
        if let Some(dir) = &outputs.snapshots_dir {
            fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        }
        let path = &outputs.metrics_path;
        let file = File::create(path).map_err(|e| SimError::io(path, e))?;
        Ok(Self {
            metrics: MetricsWriter::new(BufWriter::new(file)).map_err(|e| SimError::io(path, e))?,
            metrics_path: path.clone(),
            snapshots_dir: outputs.snapshots_dir.clone(),
            failures: Vec::new(),
        })
    }

    pub fn flush(&mut self) -> Result<(), SimError> {
        self.metrics.flush().map_err(|e| SimError::io(&self.metrics_path, e))
    }

    /// Failure events seen so far: time and failed MAP ids.
    pub fn failures(&self) -> &[(f64, Vec<usize>)] {
        &self.failures
    }
}

impl RunObserver for FileSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<(), SimError> {
        self.metrics
            .write(record)
            .map_err(|e| SimError::io(&self.metrics_path, e))
    }

    fn wants_snapshots(&self) -> bool {
        self.snapshots_dir.is_some()
    }

    fn snapshot(&mut self, snap: &SnapshotView<'_>) -> Result<(), SimError> {
        match &self.snapshots_dir {
            Some(dir) => export_snapshot(snap, dir).map(|_| ()),
            None => Ok(()),
        }
    }

    fn failure(&mut self, t: f64, failed: &[usize]) {
        self.failures.push((t, failed.to_vec()));
    }
}

impl Drop for FileSink {
    fn drop(&mut self) {
        let _ = self.metrics.flush();
    }
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), SimError> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| SimError::io(path, std::io::Error::other(e)))?;
    fs::write(path, text + "\n").map_err(|e| SimError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64) -> MetricsRecord {
        MetricsRecord {
            t,
            coverage: 0.123456789012,
            fiedler: 0.0,
            connected: false,
            mean_epidemic_bound: 0.5,
            max_u_norm: 12.5,
            active_maps: 80,
        }
    }

    #[test]
    fn empty_stream_is_header_only() {
        let w = MetricsWriter::new(Vec::new()).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn rows_keep_nine_significant_digits() {
        let row = format_metrics_row(&rec(0.01));
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "1.234567890120e-1");
        let back: f64 = fields[1].parse().unwrap();
        assert!((back - 0.123456789012).abs() < 1e-12);
        assert_eq!(fields[3], "false");
        assert_eq!(fields[6], "80");
    }

    #[test]
    fn metrics_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let recs: Vec<_> = (1..=5).map(|i| rec(i as f64 * 0.01)).collect();
        write_metrics(&recs, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in back.iter().zip(&recs) {
            assert!((a.t - b.t).abs() < 1e-14 && a.active_maps == b.active_maps);
        }
    }
}
