//! Model-point optimization through a frozen surrogate, and backtests of groupings
//! against the exact valuation.
//!
//! Each cluster `C` is replaced by `m` points `tanh(W_i)` in scaled feature space,
//! held with equal weights. `W` is fitted so that `|C| * mean_i R̂(tanh W_i)` matches
//! the cluster's exact aggregate `R(C)` under mean squared error.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuarial::{bounds_for_model_point, value_contracts, value_portfolio, ValuationAssumptions};
use crate::clustering::{cluster_portfolio, feature_matrix, KMeansConfig};
use crate::error::{Error, Result};
use crate::neural::{OptimizerKind, TrainState};
use crate::portfolio::{unscale, Contract, Portfolio, PortfolioEntry, ProductLine, N_FEATURES};
use crate::stats::{mean, pairwise_sum_paths, percentile_nearest_rank};
use crate::surrogate::Surrogate;

/// Scaled coordinates are kept this far inside (-1, 1) so `atanh` stays finite.
pub const EDGE: f64 = 1.0 - 1e-6;
/// Half-width of the uniform jitter applied to multiple initial points.
pub const JITTER: f64 = 0.05;

pub type Point = [f64; N_FEATURES];

/// Per-feature `[lo, hi]` constraint in scaled coordinates.
pub type FeatureBox = [(f64, f64); N_FEATURES];

pub const FULL_BOX: FeatureBox = [(-1.0, 1.0); N_FEATURES];

fn clamp_to_box(z: f64, (lo, hi): (f64, f64)) -> f64 {
    z.clamp(lo.max(-EDGE), hi.min(EDGE))
}

/// Componentwise min / max of the given scaled points.
pub fn bounding_box<'a>(points: impl IntoIterator<Item = &'a Point>) -> FeatureBox {
    let mut b = [(f64::INFINITY, f64::NEG_INFINITY); N_FEATURES];
    for p in points {
        for (bi, &v) in b.iter_mut().zip(p) {
            *bi = (bi.0.min(v), bi.1.max(v));
        }
    }
    b
}

/// Initial weights `W` (one row per model point) with `tanh(W)` at the centroid for
/// `m = 1`, or at jittered copies of it for `m > 1`. The flag reports whether the
/// centroid had to be pulled inside the open cube.
pub fn init_from_centroid<R: Rng>(
    centroid: &Point,
    m: usize,
    feature_box: &FeatureBox,
    rng: &mut R,
) -> (Array2<f64>, bool) {
    let clamped = centroid.iter().any(|v| v.abs() > EDGE);
    let mut w = Array2::zeros((m, N_FEATURES));
    for mut row in w.outer_iter_mut() {
        for (j, wj) in row.iter_mut().enumerate() {
            let z = if m == 1 {
                centroid[j].clamp(-EDGE, EDGE)
            } else {
                clamp_to_box(centroid[j] + rng.gen_range(-JITTER..=JITTER), feature_box[j])
            };
            *wj = z.atanh();
        }
    }
    (w, clamped)
}

pub fn points_of(w: &Array2<f64>) -> Vec<Point> {
    w.outer_iter()
        .map(|r| {
            let mut p = [0.0; N_FEATURES];
            for (pi, v) in p.iter_mut().zip(r) {
                *pi = v.tanh();
            }
            p
        })
        .collect()
}

/// One cluster's optimization problem.
#[derive(Debug, Clone)]
pub struct ModelPointProblem {
    /// Aggregate policy values the model points must reproduce.
    pub target: Vec<f64>,
    pub cluster_size: f64,
    pub m: usize,
    pub centroid: Point,
    pub feature_box: FeatureBox,
}

impl ModelPointProblem {
    fn validate<S: Surrogate + ?Sized>(&self, surrogate: &S) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("need at least one model point per cluster".into()));
        }
        if self.target.len() != surrogate.output_dim() {
            return Err(Error::Shape(format!(
                "target has {} steps, surrogate predicts {}",
                self.target.len(),
                surrogate.output_dim()
            )));
        }
        if surrogate.input_dim() != N_FEATURES {
            return Err(Error::Shape(format!(
                "surrogate takes {} inputs",
                surrogate.input_dim()
            )));
        }
        Ok(())
    }

    /// Squared magnitude that makes the loss dimensionless for the update step.
    fn step_normalizer(&self) -> f64 {
        let peak = self.target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            peak * peak
        } else {
            1.0
        }
    }
}

/// Loss `MSE(|C| * mean_i R̂(tanh W_i), target)` and its gradient with respect to `W`.
pub fn objective<S: Surrogate + ?Sized>(
    problem: &ModelPointProblem,
    surrogate: &S,
    w: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let z = w.mapv(f64::tanh);
    let m = w.nrows() as f64;
    let size = problem.cluster_size;
    let steps = problem.target.len() as f64;
    let mut loss = 0.0;
    let (_, dz) = surrogate.predict_with_input_grad(z.view(), &mut |pred| {
        let o = pred.mean_axis(Axis(0)).expect("at least one point");
        let mut up = Array2::zeros(pred.raw_dim());
        loss = 0.0;
        for (t, (&ot, &yt)) in o.iter().zip(&problem.target).enumerate() {
            let d = size * ot - yt;
            loss += d * d / steps;
            up.column_mut(t).fill(2.0 * size * d / (steps * m));
        }
        up
    })?;
    let grad = dz * z.mapv(|v| 1.0 - v * v);
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Exact valuation of the cluster.
    Exact,
    /// Surrogate prediction summed over the cluster.
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeOptions {
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            optimizer: OptimizerKind::FixedStep { lr: 0.05 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedModelPoints {
    /// Scaled coordinates.
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Loss at every visited iterate; entry 0 is the (possibly jittered) start.
    pub loss_trace: Vec<f64>,
    /// Loss with all points at the centroid.
    pub centroid_loss: f64,
    pub best_loss: f64,
    /// Index into `loss_trace` of the returned iterate, `None` if the centroid won.
    pub best_step: Option<usize>,
    pub init_clamped: bool,
}

/// Gradient descent on `W` with projection onto the feature box after every step.
/// Returns the best iterate seen, the centroid itself included as a candidate.
pub fn optimize_model_points<S: Surrogate + ?Sized>(
    problem: &ModelPointProblem,
    surrogate: &S,
    opts: &OptimizeOptions,
) -> Result<OptimizedModelPoints> {
    problem.validate(surrogate)?;
    let m = problem.m;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut w, init_clamped) = init_from_centroid(&problem.centroid, m, &problem.feature_box, &mut rng);
    let centroid_w = init_from_centroid(&problem.centroid, 1, &problem.feature_box, &mut rng).0;
    let centroid_w = centroid_w
        .broadcast((m, N_FEATURES))
        .expect("one row broadcasts")
        .to_owned();
    let (centroid_loss, _) = objective(problem, surrogate, &centroid_w)?;
    if !centroid_loss.is_finite() {
        return Err(Error::OptimizationNaN { step: 0 });
    }

    let limits: Vec<(f64, f64)> = problem
        .feature_box
        .iter()
        .map(|&b| (clamp_to_box(-1.0, b).atanh(), clamp_to_box(1.0, b).atanh()))
        .collect();
    let norm = problem.step_normalizer();
    let mut state = TrainState::new(opts.optimizer, &[w.len()], opts.seed);
    let mut best = (centroid_loss, None, centroid_w);
    let mut trace = Vec::with_capacity(opts.steps + 1);
    for step in 0..=opts.steps {
        let (loss, grad) = objective(problem, surrogate, &w)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::OptimizationNaN { step });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, Some(step), w.clone());
        }
        if step == opts.steps {
            break;
        }
        let g = (grad / norm).into_raw_vec_and_offset().0;
        state.step(&mut [w.as_slice_mut().expect("standard layout")], &[g]);
        for mut row in w.outer_iter_mut() {
            for (v, &(lo, hi)) in row.iter_mut().zip(&limits) {
                *v = v.clamp(lo, hi);
            }
        }
    }
    Ok(OptimizedModelPoints {
        points: points_of(&best.2)
            .into_iter()
            .map(|p| {
                let mut q = p;
                for (v, &b) in q.iter_mut().zip(&problem.feature_box) {
                    // tanh(atanh(x)) can land an ulp outside
                    *v = clamp_to_box(*v, b);
                }
                q
            })
            .collect(),
        weights: vec![1.0 / m as f64; m],
        loss_trace: trace,
        centroid_loss,
        best_loss: best.0,
        best_step: best.1,
        init_clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingOptions {
    pub k: usize,
    pub m: usize,
    pub kmeans: KMeansConfig,
    pub optimize: OptimizeOptions,
    /// Restrict each cluster's model points to the bounding box of its members.
    pub use_box: bool,
    pub target: TargetKind,
}

impl Default for GroupingOptions {
    fn default() -> Self {
        Self {
            k: 10,
            m: 1,
            kmeans: KMeansConfig::default(),
            optimize: OptimizeOptions::default(),
            use_box: true,
            target: TargetKind::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub cluster: usize,
    pub size: u64,
    pub centroid: Point,
    pub optimized: OptimizedModelPoints,
    /// Integer counts of the model points; they sum to `size`.
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingResult {
    pub line: ProductLine,
    pub k: usize,
    pub m: usize,
    pub clusters: Vec<ClusterResult>,
}

/// A fractional contract standing in for `multiplicity` contracts of its cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoint {
    pub cluster: usize,
    pub contract: Contract,
    pub scaled: Point,
    pub count: u64,
    pub weight: f64,
    /// `|C| * weight`, the exact share of the cluster this point represents.
    pub multiplicity: f64,
}

/// Equal integer split of `size` over `m` points, remainder to the first points.
pub fn split_counts(size: u64, m: usize) -> Vec<u64> {
    let m64 = m as u64;
    (0..m64).map(|i| size / m64 + u64::from(i < size % m64)).collect()
}

fn centroid_of(points: &[Point]) -> Point {
    let mut c = [0.0; N_FEATURES];
    for p in points {
        for (ci, v) in c.iter_mut().zip(p) {
            *ci += v;
        }
    }
    c.map(|v| v / points.len() as f64)
}

/// Clusters the portfolio (skipped for `K = 1`) and optimizes `m` model points per
/// cluster against the cluster's aggregate policy values.
pub fn group_portfolio<S: Surrogate + ?Sized>(
    p: &Portfolio,
    surrogate: &S,
    a: &ValuationAssumptions,
    opts: &GroupingOptions,
) -> Result<GroupingResult> {
    if opts.k == 0 || opts.m == 0 {
        return Err(Error::Config("K and m must be at least 1".into()));
    }
    p.check_structure()?;
    if p.is_empty() {
        return Err(Error::Size("cannot group an empty portfolio".into()));
    }
    let feats = feature_matrix(p)?;
    // one row per contract, entries with count s repeated s times
    let (members, rows, centroids): (Vec<Vec<usize>>, Vec<usize>, Vec<Point>) = if opts.k == 1 {
        let rows: Vec<usize> = p
            .entries
            .iter()
            .enumerate()
            .flat_map(|(i, e)| std::iter::repeat_n(i, e.count as usize))
            .collect();
        let all: Vec<Point> = rows.iter().map(|&r| row_point(&feats, r)).collect();
        (vec![(0..rows.len()).collect()], rows, vec![centroid_of(&all)])
    } else {
        let (model, rows) = cluster_portfolio(p, opts.k, &opts.kmeans)?;
        let cents = model
            .centroids
            .outer_iter()
            .map(|r| {
                let mut c = [0.0; N_FEATURES];
                for (ci, v) in c.iter_mut().zip(r) {
                    *ci = *v;
                }
                c
            })
            .collect();
        (model.members(), rows, cents)
    };

    let exact = match opts.target {
        TargetKind::Exact => Some(value_contracts(p, a)?),
        TargetKind::Surrogate => None,
    };
    let predicted = match opts.target {
        TargetKind::Exact => None,
        TargetKind::Surrogate => Some(surrogate.predict(feats.view())?),
    };
    let seeds = crate::surrogate::member_seeds(opts.optimize.seed, members.len());

    let clusters = members
        .par_iter()
        .enumerate()
        .map(|(c, idx)| {
            let paths: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| match (&exact, &predicted) {
                    (Some(ex), _) => ex[rows[i]].0.clone(),
                    (_, Some(pr)) => pr.row(rows[i]).to_vec(),
                    _ => unreachable!("one target source is always set"),
                })
                .collect();
            let pts: Vec<Point> = idx.iter().map(|&i| row_point(&feats, rows[i])).collect();
            let problem = ModelPointProblem {
                target: pairwise_sum_paths(&paths),
                cluster_size: idx.len() as f64,
                m: opts.m,
                centroid: centroids[c],
                feature_box: if opts.use_box { bounding_box(&pts) } else { FULL_BOX },
            };
            let optimized = optimize_model_points(
                &problem,
                surrogate,
                &OptimizeOptions {
                    seed: seeds[c],
                    ..opts.optimize
                },
            )?;
            Ok(ClusterResult {
                cluster: c,
                size: idx.len() as u64,
                centroid: centroids[c],
                counts: split_counts(idx.len() as u64, opts.m),
                optimized,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupingResult {
        line: p.line,
        k: opts.k,
        m: opts.m,
        clusters,
    })
}

fn row_point(feats: &Array2<f64>, r: usize) -> Point {
    let mut p = [0.0; N_FEATURES];
    for (pi, v) in p.iter_mut().zip(feats.row(r)) {
        *pi = *v;
    }
    p
}

fn to_contract(line: ProductLine, z: &Point) -> Result<Contract> {
    unscale(line, &z.map(|v| v.clamp(-1.0, 1.0)))
}

impl GroupingResult {
    pub fn model_points(&self) -> Result<Vec<ModelPoint>> {
        let mut out = Vec::new();
        for c in &self.clusters {
            for ((z, &w), &count) in c.optimized.points.iter().zip(&c.optimized.weights).zip(&c.counts) {
                if count == 0 {
                    // more points than contracts in the cluster
                    continue;
                }
                out.push(ModelPoint {
                    cluster: c.cluster,
                    contract: to_contract(self.line, z)?,
                    scaled: *z,
                    count,
                    weight: w,
                    multiplicity: c.size as f64 * w,
                });
            }
        }
        Ok(out)
    }

    /// Optimized model points with their integer counts.
    pub fn grouped_portfolio(&self) -> Result<Portfolio> {
        let entries = self
            .model_points()?
            .into_iter()
            .map(|mp| PortfolioEntry {
                contract: mp.contract,
                count: mp.count,
            })
            .collect();
        Portfolio::new(self.line, entries)
    }

    /// The clusters' centroids held with the cluster sizes.
    pub fn centroid_portfolio(&self) -> Result<Portfolio> {
        let entries = self
            .clusters
            .iter()
            .map(|c| {
                Ok(PortfolioEntry {
                    contract: to_contract(self.line, &c.centroid)?,
                    count: c.size,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Portfolio::new(self.line, entries)
    }

    /// Model points in the portfolio CSV layout plus a `weight` column.
    pub fn write_model_points_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Csv {
            line: 0,
            msg: e.to_string(),
        };
        out.write_record(["line", "x1", "x2", "x3", "x4", "x5", "count", "weight"])
            .map_err(err)?;
        for mp in self.model_points()? {
            let mut rec = vec![self.line.tag().to_string()];
            rec.extend(mp.contract.x.iter().map(|v| format!("{v}")));
            rec.push(mp.count.to_string());
            rec.push(format!("{}", mp.weight));
            out.write_record(&rec).map_err(err)?;
        }
        out.flush().map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Clusters whose optimized loss exceeds the loss at their centroid.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // a NaN loss is a violation
    pub fn dominance_violations(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .filter(|c| !(c.optimized.best_loss <= c.optimized.centroid_loss))
            .map(|c| c.cluster)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: usize,
    pub target: f64,
    pub ann_pred: f64,
    pub ann_low: f64,
    pub ann_mid: f64,
    pub ann_high: f64,
    pub km_low: f64,
    pub km_mid: f64,
    pub km_high: f64,
}

pub const METHODS: [&str; 7] = [
    "ann_pred", "ann_low", "ann_mid", "ann_high", "km_low", "km_mid", "km_high",
];

impl SeriesRow {
    fn method(&self, name: &str) -> f64 {
        match name {
            "ann_pred" => self.ann_pred,
            "ann_low" => self.ann_low,
            "ann_mid" => self.ann_mid,
            "ann_high" => self.ann_high,
            "km_low" => self.km_low,
            "km_mid" => self.km_mid,
            "km_high" => self.km_high,
            other => panic!("unknown method {other}"),
        }
    }
}

/// Error statistics of one aggregate against the exact portfolio target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_e: f64,
    pub mean_abs_e: f64,
    /// Over steps with a positive target.
    pub mean_re: f64,
    pub mean_abs_re: f64,
    pub pc99_abs_re: f64,
    pub max_abs_re: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLoss {
    pub cluster: usize,
    pub size: u64,
    pub centroid_loss: f64,
    pub best_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    pub line: ProductLine,
    pub k: usize,
    pub m: usize,
    pub baseline_points: usize,
    pub series: Vec<SeriesRow>,
    pub summary: Vec<MethodSummary>,
    pub clusters: Vec<ClusterLoss>,
    /// Whether every low bound is at most its high bound, for both groupings.
    pub bounds_ordered: bool,
    /// Model points whose bound rounding had to be clamped.
    pub clamped_points: usize,
}

fn add_scaled(acc: &mut [f64], v: &[f64], s: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

/// Compares the optimized grouping and a baseline grouping with the exact portfolio
/// value: surrogate prediction of the model points plus exact low / mid / high
/// bounds of both groupings.
pub fn backtest<S: Surrogate + ?Sized>(
    grouped: &GroupingResult,
    baseline: &Portfolio,
    original: &Portfolio,
    surrogate: &S,
    a: &ValuationAssumptions,
) -> Result<GroupingReport> {
    if grouped.line != original.line || baseline.line != original.line {
        return Err(Error::InvalidPortfolio(
            "groupings and portfolio must share a product line".into(),
        ));
    }
    let target = value_portfolio(original, a)?.0;
    let steps = target.len();
    if surrogate.output_dim() != steps {
        return Err(Error::Shape(format!(
            "surrogate predicts {} steps, valuation has {steps}",
            surrogate.output_dim()
        )));
    }
    let mps = grouped.model_points()?;
    let z = Array2::from_shape_fn((mps.len(), N_FEATURES), |(i, j)| mps[i].scaled[j]);
    let pred = surrogate.predict(z.view())?;

    let mut ann_pred = vec![0.0; steps];
    let mut ann = [vec![0.0; steps], vec![0.0; steps], vec![0.0; steps]];
    let mut km = [vec![0.0; steps], vec![0.0; steps], vec![0.0; steps]];
    let mut clamped_points = 0;
    let mut bounds_ordered = true;
    for (mp, row) in mps.iter().zip(pred.outer_iter()) {
        add_scaled(
            &mut ann_pred,
            row.as_slice().expect("row-major prediction"),
            mp.multiplicity,
        );
        let b = bounds_for_model_point(&mp.contract, a)?;
        clamped_points += usize::from(b.clamped);
        bounds_ordered &= b.low.0.iter().zip(&b.high.0).all(|(l, h)| l <= h);
        for (acc, path) in ann.iter_mut().zip([&b.low, &b.mid, &b.high]) {
            add_scaled(acc, &path.0, mp.multiplicity);
        }
    }
    for e in &baseline.entries {
        let b = bounds_for_model_point(&e.contract, a)?;
        clamped_points += usize::from(b.clamped);
        bounds_ordered &= b.low.0.iter().zip(&b.high.0).all(|(l, h)| l <= h);
        for (acc, path) in km.iter_mut().zip([&b.low, &b.mid, &b.high]) {
            add_scaled(acc, &path.0, e.count as f64);
        }
    }

    let series: Vec<SeriesRow> = (0..steps)
        .map(|t| SeriesRow {
            t,
            target: target[t],
            ann_pred: ann_pred[t],
            ann_low: ann[0][t],
            ann_mid: ann[1][t],
            ann_high: ann[2][t],
            km_low: km[0][t],
            km_mid: km[1][t],
            km_high: km[2][t],
        })
        .collect();
    let summary = METHODS
        .iter()
        .map(|&name| {
            let e: Vec<f64> = series.iter().map(|r| r.method(name) - r.target).collect();
            let re: Vec<f64> = series
                .iter()
                .filter(|r| r.target > 0.0)
                .map(|r| (r.method(name) - r.target) / r.target)
                .collect();
            let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
            MethodSummary {
                method: name.to_string(),
                mean_e: mean(&e).unwrap_or(0.0),
                mean_abs_e: mean(&abs(&e)).unwrap_or(0.0),
                mean_re: mean(&re).unwrap_or(0.0),
                mean_abs_re: mean(&abs(&re)).unwrap_or(0.0),
                pc99_abs_re: percentile_nearest_rank(&abs(&re), 0.99).unwrap_or(0.0),
                max_abs_re: abs(&re).into_iter().fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(GroupingReport {
        line: grouped.line,
        k: grouped.k,
        m: grouped.m,
        baseline_points: baseline.len(),
        series,
        summary,
        clusters: grouped
            .clusters
            .iter()
            .map(|c| ClusterLoss {
                cluster: c.cluster,
                size: c.size,
                centroid_loss: c.optimized.centroid_loss,
                best_loss: c.optimized.best_loss,
            })
            .collect(),
        bounds_ordered,
        clamped_points,
    })
}

/// Default acceptance thresholds, increasing in `t`.
pub fn default_thresholds(steps: usize) -> Vec<f64> {
    (0..steps).map(|t| 0.02 + 0.002 * t as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub accepted: bool,
    /// Steps where the relative error of the surrogate aggregate reached the threshold.
    pub failing_steps: Vec<usize>,
}

/// Accepts iff `|R_t(P) - R̂_t(P̃)| / R_t(P) < alpha_t` at every step with a positive target;
/// an exact match passes any threshold.
pub fn threshold_check(report: &GroupingReport, alpha: &[f64]) -> Result<ThresholdCheck> {
    if alpha.len() != report.series.len() {
        return Err(Error::Config(format!(
            "{} thresholds for {} steps",
            alpha.len(),
            report.series.len()
        )));
    }
    let failing_steps: Vec<usize> = report
        .series
        .iter()
        .zip(alpha)
        .filter(|(r, &al)| {
            let re = (r.ann_pred - r.target).abs() / r.target;
            r.target > 0.0 && !(re < al || re == 0.0)
        })
        .map(|(r, _)| r.t)
        .collect();
    Ok(ThresholdCheck {
        accepted: failing_steps.is_empty(),
        failing_steps,
    })
}

impl GroupingReport {
    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `t,target,ann_pred,ann_low,ann_mid,ann_high,km_low,km_mid,km_high`
    pub fn write_series_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Csv {
            line: 0,
            msg: e.to_string(),
        };
        let mut header = vec!["t", "target"];
        header.extend(METHODS);
        out.write_record(&header).map_err(err)?;
        for r in &self.series {
            let mut rec = vec![r.t.to_string(), format!("{}", r.target)];
            rec.extend(METHODS.iter().map(|m| format!("{}", r.method(m))));
            out.write_record(&rec).map_err(err)?;
        }
        out.flush().map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })
    }

    /// `method,stat,value`
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Csv {
            line: 0,
            msg: e.to_string(),
        };
        out.write_record(["method", "stat", "value"]).map_err(err)?;
        for s in &self.summary {
            for (stat, v) in [
                ("mean_e", s.mean_e),
                ("mean_abs_e", s.mean_abs_e),
                ("mean_re", s.mean_re),
                ("mean_abs_re", s.mean_abs_re),
                ("pc99_abs_re", s.pc99_abs_re),
                ("max_abs_re", s.max_abs_re),
            ] {
                out.write_record([s.method.as_str(), stat, &format!("{v}")])
                    .map_err(err)?;
            }
        }
        out.flush().map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Writes `report.json`, `series.csv` and `summary.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        for (name, f) in [
            (
                "series.csv",
                Self::write_series_csv as fn(&Self, std::io::BufWriter<std::fs::File>) -> Result<()>,
            ),
            ("summary.csv", Self::write_summary_csv),
        ] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f(self, std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}
