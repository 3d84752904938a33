//! K-means on scaled contract features: k-means++ seeding followed by Lloyd iterations.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::portfolio::{unscale, Portfolio, PortfolioEntry, ProductLine, N_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// `K x d`
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment and update step, in order.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for every point. A point keeps its current cluster when that
/// cluster is tied for nearest, so coincident centroids do not empty each other.
fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, current: &[usize]) -> Vec<(usize, f64)> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (usize::MAX, f64::INFINITY);
            for (k, c) in centroids.outer_iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (k, d);
                }
            }
            if let Some(&own) = current.get(i) {
                let d = sq_dist(p, centroids.row(own));
                if d <= best.1 {
                    best = (own, d);
                }
            }
            best
        })
        .collect()
}

fn inertia(points: ArrayView2<f64>, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &k)| sq_dist(points.row(i), centroids.row(k)))
        .sum()
}

fn sizes(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0; k];
    for &a in assignment {
        s[a] += 1;
    }
    s
}

/// Moves the point farthest from its centroid (among clusters that can spare one)
/// into each empty cluster. Returns whether anything changed.
fn fill_empty(points: ArrayView2<f64>, centroids: &mut Array2<f64>, assignment: &mut [usize]) -> bool {
    let k = centroids.nrows();
    let mut size = sizes(assignment, k);
    let mut changed = false;
    while let Some(empty) = size.iter().position(|&s| s == 0) {
        let far = (0..points.nrows())
            .filter(|&i| size[assignment[i]] > 1)
            .map(|i| (i, sq_dist(points.row(i), centroids.row(assignment[i]))))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
            .expect("k <= n leaves a cluster with two or more points");
        size[assignment[far]] -= 1;
        size[empty] = 1;
        assignment[far] = empty;
        centroids.row_mut(empty).assign(&points.row(far));
        changed = true;
    }
    changed
}

fn plus_plus_seeds(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

fn update(points: ArrayView2<f64>, centroids: &mut Array2<f64>, assignment: &[usize]) -> f64 {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let size = sizes(assignment, k);
    for (i, &a) in assignment.iter().enumerate() {
        let mut row = sums.row_mut(a);
        row += &points.row(i);
    }
    let mut shift = 0.0f64;
    for (c, (mut old, sum)) in centroids.outer_iter_mut().zip(sums.outer_iter()).enumerate() {
        let new = &sum / size[c] as f64;
        shift = shift.max(sq_dist(old.view(), new.view()).sqrt());
        old.assign(&new);
    }
    shift
}

const INERTIA_SLACK: f64 = 1e-12;

fn check_descent(trace: &[f64], next: f64) {
    if let Some(&prev) = trace.last() {
        assert!(
            next <= prev + INERTIA_SLACK * prev.max(1.0),
            "k-means inertia increased from {prev} to {next}"
        );
    }
}

/// Lloyd's algorithm from k-means++ seeds on the rows of `points`.
pub fn kmeans(points: ArrayView2<f64>, k: usize, config: &KMeansConfig) -> Result<ClusterModel> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Size(format!("k-means needs 1 <= K <= N, got K = {k}, N = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignment: Vec<usize> = assign(points, &centroids, &[]).into_iter().map(|a| a.0).collect();
    fill_empty(points, &mut centroids, &mut assignment);
    let mut trace = vec![inertia(points, &centroids, &assignment)];
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let shift = update(points, &mut centroids, &assignment);
        let after_update = inertia(points, &centroids, &assignment);
        check_descent(&trace, after_update);
        trace.push(after_update);

        let next: Vec<usize> = assign(points, &centroids, &assignment)
            .into_iter()
            .map(|a| a.0)
            .collect();
        let moved = next != assignment;
        assignment = next;
        let refilled = fill_empty(points, &mut centroids, &mut assignment);
        let after_assign = inertia(points, &centroids, &assignment);
        check_descent(&trace, after_assign);
        trace.push(after_assign);
        if !refilled && (!moved || shift < config.tol) {
            break;
        }
    }
    Ok(ClusterModel {
        sizes: sizes(&assignment, k),
        inertia: *trace.last().expect("nonempty trace"),
        centroids,
        assignment,
        inertia_trace: trace,
        iterations,
    })
}

#[derive(Serialize, Deserialize)]
struct ClusterDoc {
    centroids: Vec<Vec<f64>>,
    sizes: Vec<usize>,
    inertia: f64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Indices of the points in each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k()];
        for (i, &a) in self.assignment.iter().enumerate() {
            m[a].push(i);
        }
        m
    }

    /// Centroids and sizes as JSON.
    pub fn to_json(&self) -> String {
        let doc = ClusterDoc {
            centroids: self.centroids.outer_iter().map(|r| r.to_vec()).collect(),
            sizes: self.sizes.clone(),
            inertia: self.inertia,
        };
        serde_json::to_string_pretty(&doc).expect("cluster model serializes")
    }

    /// `contract_index,cluster`
    pub fn write_assignment_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Csv {
            line: 0,
            msg: e.to_string(),
        };
        out.write_record(["contract_index", "cluster"]).map_err(err)?;
        for (i, a) in self.assignment.iter().enumerate() {
            out.write_record([i.to_string(), a.to_string()]).map_err(err)?;
        }
        out.flush().map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn save(&self, json_path: &Path, assignment_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))?;
        let f = std::fs::File::create(assignment_path).map_err(|e| Error::io(assignment_path, e))?;
        self.write_assignment_csv(std::io::BufWriter::new(f))
    }
}

/// Scaled feature matrix of a portfolio, one row per entry.
pub fn feature_matrix(p: &Portfolio) -> Result<Array2<f64>> {
    let rows = p.scaled_features()?;
    Ok(Array2::from_shape_fn((rows.len(), N_FEATURES), |(i, j)| rows[i][j]))
}

/// Clusters the entries of a portfolio. Entries with counts above 1 are weighted
/// by repetition, so a portfolio and its expanded form cluster alike.
pub fn cluster_portfolio(p: &Portfolio, k: usize, config: &KMeansConfig) -> Result<(ClusterModel, Vec<usize>)> {
    let feats = feature_matrix(p)?;
    let rows: Vec<usize> = p
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| std::iter::repeat_n(i, e.count as usize))
        .collect();
    let expanded = feats.select(Axis(0), &rows);
    Ok((kmeans(expanded.view(), k, config)?, rows))
}

/// Centroids as fractional model points, each held with its cluster size.
pub fn baseline_grouping(model: &ClusterModel, line: ProductLine) -> Result<Portfolio> {
    if model.centroids.ncols() != N_FEATURES {
        return Err(Error::Shape(format!(
            "centroids have {} features, contracts {N_FEATURES}",
            model.centroids.ncols()
        )));
    }
    let entries = model
        .centroids
        .outer_iter()
        .zip(&model.sizes)
        .map(|(c, &size)| {
            let mut z = [0.0; N_FEATURES];
            for (zi, v) in z.iter_mut().zip(c) {
                // means of points in [-1, 1] can overshoot by an ulp
                *zi = v.clamp(-1.0, 1.0);
            }
            Ok(PortfolioEntry {
                contract: unscale(line, &z)?,
                count: size as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Portfolio::new(line, entries)
}
