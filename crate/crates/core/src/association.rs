//! MSD-to-MAP association and the cluster centres that steer MAP goals.

use rand::Rng;

use crate::error::ParamError;
use crate::vec2::Vec2;

/// Result of matching MSDs to MAPs. MAP indices refer to the slice of MAP
/// positions handed to [`match_msds`].
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Nearest in-range MAP of each MSD, if any.
    pub aspirant_of: Vec<Option<usize>>,
    pub served: Vec<bool>,
    /// N_u: number of MSDs whose nearest in-range MAP is this one.
    pub aspirants_per_map: Vec<usize>,
    pub served_per_map: Vec<usize>,
}

impl Matching {
    pub fn served_count(&self) -> usize {
        self.served_per_map.iter().sum()
    }
}

/// Each MSD aspires to its nearest MAP strictly within ground range `r` (ties to
/// the lowest MAP index). Each MAP then serves its `n_max` closest aspirants
/// (ties to the lowest MSD index); the rest stay unserved.
pub fn match_msds(msds: &[Vec2], maps: &[Vec2], r: f64, n_max: usize) -> Matching {
    let r_sq = r * r;
    let mut aspirant_of = vec![None; msds.len()];
    let mut best_dist = vec![f64::INFINITY; msds.len()];
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); maps.len()];
    let grid = CellGrid::new(maps, r);

    for (i, &y) in msds.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_d = r_sq;
        grid.for_each_near(y, |j| {
            let d = y.dist_sq(maps[j]);
            if d < best_d || (d == best_d && best.is_some_and(|b| j < b)) {
                best_d = d;
                best = Some(j);
            }
        });
        if let Some(j) = best {
            aspirant_of[i] = Some(j);
            best_dist[i] = best_d;
            buckets[j].push(i);
        }
    }

    let mut served = vec![false; msds.len()];
    let mut served_per_map = vec![0; maps.len()];
    let aspirants_per_map: Vec<usize> = buckets.iter().map(Vec::len).collect();
    for (j, bucket) in buckets.iter_mut().enumerate() {
        if bucket.len() > n_max {
            // buckets are filled in ascending MSD order, so a stable sort keeps the id tie-break
            bucket.sort_by(|&a, &b| best_dist[a].total_cmp(&best_dist[b]));
        }
        for &i in bucket.iter().take(n_max) {
            served[i] = true;
        }
        served_per_map[j] = bucket.len().min(n_max);
    }

    Matching {
        aspirant_of,
        served,
        aspirants_per_map,
        served_per_map,
    }
}

/// Bucket grid with cells of side `r`: every point within distance `r` of a query
/// lies in the query's cell or one of its eight neighbours.
struct CellGrid {
    origin: Vec2,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl CellGrid {
    fn new(points: &[Vec2], cell: f64) -> Self {
        if points.is_empty() {
            return Self {
                origin: Vec2::ZERO,
                cell,
                cols: 0,
                rows: 0,
                cells: Vec::new(),
            };
        }
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let cols = ((hi.x - lo.x) / cell).floor() as usize + 1;
        let rows = ((hi.y - lo.y) / cell).floor() as usize + 1;
        let mut cells = vec![Vec::new(); cols * rows];
        for (j, p) in points.iter().enumerate() {
            let cx = (((p.x - lo.x) / cell).floor() as usize).min(cols - 1);
            let cy = (((p.y - lo.y) / cell).floor() as usize).min(rows - 1);
            cells[cy * cols + cx].push(j);
        }
        Self {
            origin: lo,
            cell,
            cols,
            rows,
            cells,
        }
    }

    #[inline]
    fn for_each_near(&self, q: Vec2, mut f: impl FnMut(usize)) {
        if self.cols == 0 {
            return;
        }
        let fx = ((q.x - self.origin.x) / self.cell).floor();
        let fy = ((q.y - self.origin.y) / self.cell).floor();
        if fx < -1.0 || fy < -1.0 || fx > self.cols as f64 || fy > self.rows as f64 {
            return;
        }
        let (cx, cy) = (fx as i64, fy as i64);
        for y in (cy - 1).max(0)..=(cy + 1).min(self.rows as i64 - 1) {
            for x in (cx - 1).max(0)..=(cx + 1).min(self.cols as i64 - 1) {
                for &j in &self.cells[y as usize * self.cols + x as usize] {
                    f(j);
                }
            }
        }
    }
}

/// Fraction of the `m` MSDs that are served.
pub fn coverage_proportion(matching: &Matching, m: usize) -> Result<f64, ParamError> {
    if m == 0 {
        return Err(ParamError::new("coverage is undefined for zero MSDs"));
    }
    Ok(matching.served.iter().filter(|&&s| s).count() as f64 / m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub centers: Vec<Vec2>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every assignment pass, in order.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LloydOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LloydOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Index of the nearest centre; ties go to the lowest index.
#[inline]
fn nearest_index(p: Vec2, centers: &[Vec2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, &center) in centers.iter().enumerate() {
        let d = p.dist_sq(center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Nearest centre to `q` (ties to the lowest index).
pub fn nearest_center(q: Vec2, centers: &[Vec2]) -> Result<Vec2, ParamError> {
    if centers.is_empty() {
        return Err(ParamError::new("nearest_center needs at least one centre"));
    }
    Ok(centers[nearest_index(q, centers)])
}

/// D²-weighted sampling of `k` distinct points (k-means++ seeding).
pub fn seed_centers<R: Rng + ?Sized>(points: &[Vec2], k: usize, rng: &mut R) -> Result<Vec<Vec2>, ParamError> {
    if k == 0 {
        return Err(ParamError::new("k must be >= 1"));
    }
    if k > points.len() {
        return Err(ParamError::new(format!(
            "cannot seed {k} centres from {} points",
            points.len()
        )));
    }
    let mut chosen = vec![false; points.len()];
    let first = rng.random_range(0..points.len());
    chosen[first] = true;
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist_sq(points[first])).collect();

    while centers.len() < k {
        let total: f64 = d2
            .iter()
            .zip(&chosen)
            .filter(|(_, &c)| !c)
            .map(|(d, _)| *d)
            .sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            let mut last = None;
            for (i, (&d, &c)) in d2.iter().zip(&chosen).enumerate() {
                if c || d == 0.0 {
                    continue;
                }
                last = Some(i);
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            pick.or(last).expect("positive mass implies a candidate")
        } else {
            // every remaining point coincides with a centre
            let free: Vec<usize> = (0..points.len()).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist_sq(points[pick]));
        }
    }
    Ok(centers)
}

fn assign(points: &[Vec2], centers: &[Vec2], assignment: &mut [usize]) -> f64 {
    let mut objective = 0.0;
    for (a, &p) in assignment.iter_mut().zip(points) {
        *a = nearest_index(p, centers);
        objective += p.dist_sq(centers[*a]);
    }
    objective
}

/// Lloyd's algorithm. Without `init_centers`, the centres are seeded from the data
/// with [`seed_centers`].
pub fn lloyd_cluster<R: Rng + ?Sized>(
    points: &[Vec2],
    k: usize,
    init_centers: Option<&[Vec2]>,
    opts: LloydOptions,
    rng: &mut R,
) -> Result<ClusterSet, ParamError> {
    if k == 0 {
        return Err(ParamError::new("k must be >= 1"));
    }
    if opts.max_iter == 0 {
        return Err(ParamError::new("max_iter must be >= 1"));
    }
    let mut centers = match init_centers {
        Some(c) if c.len() != k => {
            return Err(ParamError::new(format!(
                "expected {k} initial centres, got {}",
                c.len()
            )))
        }
        Some(c) => c.to_vec(),
        None => seed_centers(points, k, rng)?,
    };

    let mut assignment = vec![0usize; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    if points.is_empty() {
        return Ok(ClusterSet {
            centers,
            assignment,
            objective: 0.0,
            iterations,
            trace,
        });
    }

    while iterations < opts.max_iter {
        iterations += 1;
        trace.push(assign(points, &centers, &mut assignment));

        let mut sums = vec![Vec2::ZERO; k];
        let mut counts = vec![0usize; k];
        for (&a, &p) in assignment.iter().zip(points) {
            sums[a] += p;
            counts[a] += 1;
        }
        let mut next: Vec<Vec2> = (0..k)
            .map(|c| {
                if counts[c] > 0 {
                    sums[c] * (1.0 / counts[c] as f64)
                } else {
                    centers[c]
                }
            })
            .collect();

        // Empty clusters move onto the points farthest from their current centres.
        if counts.contains(&0) {
            let mut spread: Vec<(usize, f64)> = assignment
                .iter()
                .zip(points)
                .enumerate()
                .map(|(i, (&a, &p))| (i, p.dist_sq(next[a])))
                .collect();
            spread.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            let mut donors = spread.into_iter().map(|(i, _)| i);
            for c in 0..k {
                if counts[c] == 0 {
                    if let Some(i) = donors.next() {
                        next[c] = points[i];
                    }
                }
            }
        }

        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| a.dist(*b))
            .fold(0.0, f64::max);
        centers = next;
        if shift < opts.tol {
            break;
        }
    }

    let objective = assign(points, &centers, &mut assignment);
    trace.push(objective);
    Ok(ClusterSet {
        centers,
        assignment,
        objective,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn match_in_range() {
        let m = match_msds(&[Vec2::new(5.0, 0.0)], &[Vec2::ZERO], 24.0, 80);
        assert_eq!(m.aspirant_of, vec![Some(0)]);
        assert_eq!(m.served, vec![true]);
    }

    #[test]
    fn match_out_of_range() {
        let m = match_msds(&[Vec2::new(30.0, 0.0)], &[Vec2::ZERO], 24.0, 80);
        assert_eq!(m.aspirant_of, vec![None]);
        assert_eq!(m.served, vec![false]);
        // exactly at r is out of range
        let m = match_msds(&[Vec2::new(24.0, 0.0)], &[Vec2::ZERO], 24.0, 80);
        assert_eq!(m.aspirant_of, vec![None]);
    }

    #[test]
    fn match_capacity_split() {
        let msds = [Vec2::new(2.0, 0.0), Vec2::new(1.0, 0.0)];
        let m = match_msds(&msds, &[Vec2::ZERO], 24.0, 1);
        assert_eq!(m.aspirants_per_map, vec![2]);
        assert_eq!(m.served_per_map, vec![1]);
        assert_eq!(m.served, vec![false, true]);
        assert_eq!(coverage_proportion(&m, 2).unwrap(), 0.5);
    }

    #[test]
    fn match_tie_breaks() {
        // equidistant MAPs: lowest index wins
        let m = match_msds(&[Vec2::ZERO], &[Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)], 24.0, 5);
        assert_eq!(m.aspirant_of, vec![Some(0)]);
        // equidistant MSDs competing for one slot: lowest MSD id served
        let msds = [Vec2::new(0.0, 3.0), Vec2::new(3.0, 0.0)];
        let m = match_msds(&msds, &[Vec2::ZERO], 24.0, 1);
        assert_eq!(m.served, vec![true, false]);
    }

    #[test]
    fn match_without_maps() {
        let m = match_msds(&[Vec2::ZERO, Vec2::new(1.0, 1.0)], &[], 24.0, 80);
        assert!(m.aspirant_of.iter().all(Option::is_none));
        assert_eq!(coverage_proportion(&m, 2).unwrap(), 0.0);
    }

    #[test]
    fn coverage_needs_msds() {
        let m = match_msds(&[], &[Vec2::ZERO], 24.0, 80);
        assert!(coverage_proportion(&m, 0).is_err());
    }

    #[test]
    fn coverage_ratio() {
        let m = Matching {
            aspirant_of: vec![Some(0); 2000],
            served: (0..2000).map(|i| i < 1000).collect(),
            aspirants_per_map: vec![2000],
            served_per_map: vec![1000],
        };
        assert_eq!(coverage_proportion(&m, 2000).unwrap(), 0.5);
    }

    #[test]
    fn nearest_center_rules() {
        let c = [Vec2::new(1.0, 0.0), Vec2::new(5.0, 0.0)];
        assert_eq!(nearest_center(Vec2::ZERO, &c).unwrap(), c[0]);
        assert_eq!(nearest_center(Vec2::new(3.0, 0.0), &c).unwrap(), c[0]);
        assert_eq!(nearest_center(Vec2::new(9.0, 9.0), &c[1..]).unwrap(), c[1]);
        assert!(nearest_center(Vec2::ZERO, &[]).is_err());
    }

    #[test]
    fn lloyd_single_cluster_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec2> = (0..50)
            .map(|i| Vec2::new((i * 7 % 13) as f64, (i * 3 % 11) as f64 - 4.0))
            .collect();
        let mean = pts.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / pts.len() as f64);
        let cs = lloyd_cluster(&pts, 1, Some(&[Vec2::new(100.0, -3.0)]), LloydOptions::default(), &mut rng)
            .unwrap();
        assert!(cs.centers[0].dist(mean) < 1e-12);
    }

    #[test]
    fn lloyd_two_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = [Vec2::ZERO, Vec2::new(2.0, 0.0)];
        let cs = lloyd_cluster(&pts, 2, None, LloydOptions::default(), &mut rng).unwrap();
        let mut c = cs.centers.clone();
        c.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(c, pts.to_vec());
        assert_eq!(cs.objective, 0.0);
    }

    #[test]
    fn lloyd_rejects_bad_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = [Vec2::ZERO];
        assert!(lloyd_cluster(&pts, 2, None, LloydOptions::default(), &mut rng).is_err());
        assert!(lloyd_cluster(&pts, 0, None, LloydOptions::default(), &mut rng).is_err());
        let init = [Vec2::ZERO, Vec2::new(1.0, 1.0)];
        assert!(lloyd_cluster(&pts, 2, Some(&init), LloydOptions::default(), &mut rng).is_ok());
    }

    #[test]
    fn lloyd_repairs_empty_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = [Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(10.0, 0.0)];
        // second centre is far away and captures nothing at first
        let init = [Vec2::new(0.5, 0.0), Vec2::new(1e6, 1e6)];
        let cs = lloyd_cluster(&pts, 2, Some(&init), LloydOptions::default(), &mut rng).unwrap();
        let mut c = cs.centers.clone();
        c.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert!(c[0].dist(Vec2::new(0.5, 0.0)) < 1e-12);
        assert!(c[1].dist(Vec2::new(10.0, 0.0)) < 1e-12);
        assert!((cs.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn seeding_picks_distinct_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = [Vec2::ZERO, Vec2::ZERO, Vec2::ZERO, Vec2::new(1.0, 0.0)];
        let c = seed_centers(&pts, 4, &mut rng).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.iter().filter(|p| **p == Vec2::ZERO).count(), 3);
    }
}
