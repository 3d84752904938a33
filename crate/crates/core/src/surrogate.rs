//! Neural surrogate of the exact valuation: data splits, training with early stopping,
//! ensembles, and error statistics against exact policy values.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::actuarial::{value_contracts, ValuationAssumptions};
use crate::error::{Error, Result};
use crate::neural::{serial, Layer, LossKind, Network, OptimizerKind, ScaleKind, TrainState};
use crate::portfolio::{Portfolio, ProductLine, N_FEATURES};
use crate::stats::{mean, percentile_nearest_rank};

/// Anything that maps scaled contract features to policy value paths and can
/// differentiate that map with respect to its inputs.
pub trait Surrogate: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// `batch x input_dim` to `batch x output_dim`.
    fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Runs the forward pass, asks `upstream` for the gradient of a scalar objective
    /// with respect to the outputs, and returns `(outputs, input gradient)`.
    fn predict_with_input_grad(
        &self,
        x: ArrayView2<f64>,
        upstream: &mut dyn FnMut(&Array2<f64>) -> Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)>;
}

impl Surrogate for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Network::output_dim(self)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_batch(x)
    }

    fn predict_with_input_grad(
        &self,
        x: ArrayView2<f64>,
        upstream: &mut dyn FnMut(&Array2<f64>) -> Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let trace = self.forward_trace(x)?;
        let up = upstream(trace.output());
        let (_, dx) = self.backward(&trace, up.view(), false)?;
        Ok((trace.output().clone(), dx))
    }
}

/// Scaled features and exact policy value paths, one row per contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} target rows",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(Self { x, y })
    }

    /// One row per portfolio entry (counts are ignored), valued exactly.
    pub fn from_portfolio(p: &Portfolio, a: &ValuationAssumptions) -> Result<Self> {
        let feats = p.scaled_features()?;
        let paths = value_contracts(p, a)?;
        let t = paths.first().map_or(0, |v| v.len());
        let x = Array2::from_shape_fn((feats.len(), N_FEATURES), |(i, j)| feats[i][j]);
        let y = Array2::from_shape_fn((paths.len(), t), |(i, j)| paths[i].0[j]);
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
        }
    }

    fn target_range(&self) -> (f64, f64) {
        self.y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }
}

/// Disjoint train / validation / test partition, stored as row indices into the
/// original dataset together with the materialized parts.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub train_idx: Vec<usize>,
    pub validation_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Test gets 30% of the rows, validation 25% of the remainder, train the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n * 3 / 10;
    let validation = n * 175 / 1000;
    (n - test - validation, validation, test)
}

pub fn split(data: &Dataset, seed: u64) -> Result<DataSplit> {
    let n = data.len();
    if n < 10 {
        return Err(Error::Size(format!("need at least 10 rows to split, got {n}")));
    }
    let (_, n_val, n_test) = split_sizes(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_idx = idx[..n_test].to_vec();
    let validation_idx = idx[n_test..n_test + n_val].to_vec();
    let train_idx = idx[n_test + n_val..].to_vec();
    Ok(DataSplit {
        train: data.select(&train_idx),
        validation: data.select(&validation_idx),
        test: data.select(&test_idx),
        train_idx,
        validation_idx,
        test_idx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Width of the dense layer and of the recurrent state.
    pub hidden: usize,
    pub scale: ScaleKind,
    pub loss: LossKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            scale: ScaleKind::Linear,
            loss: LossKind::Mse,
            max_epochs: 300,
            patience: 50,
            batch_size: 64,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the output scaling suited to the product line: logarithmic for
    /// term life, whose policy values span several orders of magnitude.
    pub fn for_line(line: ProductLine) -> Self {
        Self {
            scale: match line {
                ProductLine::TermLife => ScaleKind::Log,
                ProductLine::DcPlan => ScaleKind::Linear,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Dense(tanh) on the static features, an Elman layer unrolled over the horizon,
/// a per-step linear read-out and the fixed output scaling.
pub fn build_network(
    hidden: usize,
    steps: usize,
    scale: ScaleKind,
    target_range: (f64, f64),
    seed: u64,
) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (min, max) = target_range;
    Network::new(
        N_FEATURES,
        vec![
            Layer::dense(N_FEATURES, hidden, true, &mut rng),
            Layer::Tanh,
            Layer::recurrent(hidden, hidden, steps, &mut rng),
            Layer::dense(hidden, 1, true, &mut rng),
            Layer::scale(scale, min, max),
        ],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub network: Network,
    /// Epoch 0 holds the losses of the initial weights.
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainedNetwork {
    pub fn best_val_loss(&self) -> f64 {
        self.log[self.best_epoch].val_loss
    }
}

pub fn write_training_log<W: Write>(log: &[EpochRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss"]).map_err(csv_err)?;
    for r in log {
        out.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Csv {
        line: 0,
        msg: e.to_string(),
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        line: e.position().map_or(0, |p| p.line()),
        msg: e.to_string(),
    }
}

/// Mean per-sample loss over a dataset, evaluated in chunks.
pub fn dataset_loss(net: &Network, data: &Dataset, kind: LossKind) -> Result<f64> {
    const CHUNK: usize = 512;
    let mut total = 0.0;
    let mut scratch = vec![0.0; data.y.ncols()];
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let pred = net.forward_batch(data.x.slice(s![start..end, ..]))?;
        for (p, t) in pred.outer_iter().zip(data.y.slice(s![start..end, ..]).outer_iter()) {
            total += kind.accumulate(
                p.as_slice().expect("row-major prediction"),
                &t.to_vec(),
                0.0,
                &mut scratch,
            );
        }
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch Adam on raw-currency targets (the loss is taken after the scale layer),
/// early stopping on validation loss with the best weights restored.
pub fn train_surrogate(split: &DataSplit, config: &TrainConfig) -> Result<TrainedNetwork> {
    config.validate()?;
    let train = &split.train;
    if train.is_empty() || split.validation.is_empty() {
        return Err(Error::Size("training and validation sets must be nonempty".into()));
    }
    let steps = train.y.ncols();
    let mut net = build_network(config.hidden, steps, config.scale, train.target_range(), config.seed)?;
    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut state = TrainState::new(OptimizerKind::adam(config.learning_rate), &shapes, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5ee_d0fb_a7c4);

    let mut log = vec![EpochRecord {
        epoch: 0,
        train_loss: dataset_loss(&net, train, config.loss)?,
        val_loss: dataset_loss(&net, &split.validation, config.loss)?,
    }];
    let mut best = (0usize, log[0].val_loss, net.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        state.epoch = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = train.x.select(Axis(0), batch);
            let trace = net.forward_trace(xb.view())?;
            let pred = trace.output();
            let mut upstream = Array2::<f64>::zeros((batch.len(), steps));
            let weight = 1.0 / batch.len() as f64;
            for (k, &i) in batch.iter().enumerate() {
                let target = train.y.row(i);
                let mut g = upstream.row_mut(k);
                epoch_loss += config.loss.accumulate(
                    pred.row(k).as_slice().expect("row-major prediction"),
                    target.as_slice().expect("row-major target"),
                    weight,
                    g.as_slice_mut().expect("row-major upstream"),
                );
            }
            let (grads, _) = net.backward(&trace, upstream.view(), true)?;
            let grads = grads.expect("parameter gradients requested");
            if !epoch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, log });
            }
            state.step(&mut net.params_mut(), &grads.0);
        }
        let val_loss = dataset_loss(&net, &split.validation, config.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, log });
        }
        log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, net.clone());
        } else if epoch - best.0 >= config.patience {
            break;
        }
    }
    Ok(TrainedNetwork {
        network: best.2,
        log,
        best_epoch: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleLosses {
    Mse,
    Mae,
    /// Alternates MSE and MAE, starting with MSE.
    Mixed,
}

impl EnsembleLosses {
    pub fn member_loss(self, i: usize) -> LossKind {
        match self {
            EnsembleLosses::Mse => LossKind::Mse,
            EnsembleLosses::Mae => LossKind::Mae,
            EnsembleLosses::Mixed if i.is_multiple_of(2) => LossKind::Mse,
            EnsembleLosses::Mixed => LossKind::Mae,
        }
    }
}

impl std::str::FromStr for EnsembleLosses {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "mae" => Ok(Self::Mae),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!(
                "unknown loss mix {other:?}; expected mse, mae or mixed"
            ))),
        }
    }
}

/// Equal-architecture networks whose prediction is the mean of the member outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEnsemble {
    members: Vec<Network>,
    member_losses: Vec<LossKind>,
}

const ENSEMBLE_FORMAT: &str = "modelpoint-ensemble";

impl SurrogateEnsemble {
    pub fn new(members: Vec<Network>, member_losses: Vec<LossKind>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Size("an ensemble needs at least one member".into()))?;
        if members.len() != member_losses.len() {
            return Err(Error::Shape(format!(
                "{} members but {} loss kinds",
                members.len(),
                member_losses.len()
            )));
        }
        for (i, m) in members.iter().enumerate() {
            if m.input_dim() != first.input_dim() || m.output_dim() != first.output_dim() {
                return Err(Error::Shape(format!("member {i} dimensions differ from member 0")));
            }
        }
        Ok(Self { members, member_losses })
    }

    pub fn members(&self) -> &[Network] {
        &self.members
    }

    pub fn member_losses(&self) -> &[LossKind] {
        &self.member_losses
    }

    pub fn to_json(&self) -> String {
        let members: Vec<Value> = self
            .members
            .iter()
            .zip(&self.member_losses)
            .map(|(n, l)| json!({ "loss": l, "network": serial::to_value(n) }))
            .collect();
        let doc = json!({ "format": ENSEMBLE_FORMAT, "members": members });
        serde_json::to_string_pretty(&doc).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)?;
        let parse = |msg: String| Error::ModelParse { layer: None, msg };
        if doc.get("format").and_then(Value::as_str) != Some(ENSEMBLE_FORMAT) {
            return Err(parse(format!(
                "missing or wrong \"format\"; expected {ENSEMBLE_FORMAT:?}"
            )));
        }
        let list = doc
            .get("members")
            .and_then(Value::as_array)
            .ok_or_else(|| parse("missing field \"members\"".into()))?;
        let mut members = Vec::with_capacity(list.len());
        let mut losses = Vec::with_capacity(list.len());
        for (i, m) in list.iter().enumerate() {
            let loss = m
                .get("loss")
                .ok_or_else(|| parse(format!("member {i}: missing field \"loss\"")))?;
            losses.push(serde_json::from_value(loss.clone())?);
            let net = m
                .get("network")
                .ok_or_else(|| parse(format!("member {i}: missing field \"network\"")))?;
            members.push(serial::from_value(net)?);
        }
        Self::new(members, losses)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Surrogate for SurrogateEnsemble {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn output_dim(&self) -> usize {
        self.members[0].output_dim()
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut sum = self.members[0].forward_batch(x)?;
        for m in &self.members[1..] {
            sum += &m.forward_batch(x)?;
        }
        Ok(sum / self.members.len() as f64)
    }

    fn predict_with_input_grad(
        &self,
        x: ArrayView2<f64>,
        upstream: &mut dyn FnMut(&Array2<f64>) -> Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let traces = self
            .members
            .iter()
            .map(|m| m.forward_trace(x))
            .collect::<Result<Vec<_>>>()?;
        let n = self.members.len() as f64;
        let mut out = traces[0].output().clone();
        for t in &traces[1..] {
            out += t.output();
        }
        out /= n;
        let up = upstream(&out) / n;
        let mut dx = Array2::zeros(x.raw_dim());
        for (m, t) in self.members.iter().zip(&traces) {
            dx += &m.backward(t, up.view(), false)?.1;
        }
        Ok((out, dx))
    }
}

/// Member seeds derived from one base seed.
pub fn member_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Trains `n_members` networks with distinct derived seeds (in parallel) and returns
/// the ensemble together with each member's training record.
pub fn train_ensemble(
    split: &DataSplit,
    config: &TrainConfig,
    n_members: usize,
    losses: EnsembleLosses,
) -> Result<(SurrogateEnsemble, Vec<TrainedNetwork>)> {
    if n_members == 0 {
        return Err(Error::Size("an ensemble needs at least one member".into()));
    }
    let seeds = member_seeds(config.seed, n_members);
    let trained = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let cfg = TrainConfig {
                seed,
                loss: losses.member_loss(i),
                ..config.clone()
            };
            train_surrogate(split, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let ensemble = SurrogateEnsemble::new(
        trained.iter().map(|t| t.network.clone()).collect(),
        (0..n_members).map(|i| losses.member_loss(i)).collect(),
    )?;
    Ok((ensemble, trained))
}

/// Lower edges of the relative-volume buckets; the last bucket is closed at 1.
pub const VOLUME_BUCKET_EDGES: [f64; 7] = [0.0, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeBucket {
    pub lower: f64,
    pub upper: f64,
    pub contracts: usize,
    /// Number of `(contract, t)` pairs with a defined relative error.
    pub pairs: usize,
    pub mean_re: Option<f64>,
    pub mean_abs_re: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStep {
    pub t: usize,
    pub mean_e: f64,
    pub mean_wre: Option<f64>,
    pub mean_abs_wre: Option<f64>,
    /// Relative error of the summed prediction against the summed target.
    pub aggregate_re: Option<f64>,
}

/// Error statistics of a surrogate on a dataset, relative to a reference portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub contracts: usize,
    pub mean_e: f64,
    pub pc99_abs_e: f64,
    pub mean_wre: f64,
    pub mean_abs_wre: f64,
    pub pc99_abs_wre: f64,
    pub mean_re: Option<f64>,
    pub mean_abs_re: Option<f64>,
    /// Mean over steps of |aggregate relative error|.
    pub mean_abs_aggregate_re: f64,
    pub per_step: Vec<PerStep>,
    pub re_by_volume_bucket: Vec<VolumeBucket>,
}

fn bucket_of(v: f64) -> usize {
    let last = VOLUME_BUCKET_EDGES.len() - 2;
    (0..=last).find(|&b| v < VOLUME_BUCKET_EDGES[b + 1]).unwrap_or(last)
}

/// Absolute errors `e_t`, relative errors `re_t` (where the target is positive) and
/// weighted relative errors `wre_t` against `reference` totals per step; `reference`
/// defaults to the dataset's own column sums.
pub fn evaluate<S: Surrogate + ?Sized>(model: &S, data: &Dataset, reference: Option<&[f64]>) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Size("cannot evaluate on an empty dataset".into()));
    }
    let steps = data.y.ncols();
    let pred = model.predict(data.x.view())?;
    if pred.dim() != data.y.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match targets {:?}",
            pred.dim(),
            data.y.dim()
        )));
    }
    let own_totals: Vec<f64>;
    let totals = match reference {
        Some(r) if r.len() == steps => r,
        Some(r) => {
            return Err(Error::Shape(format!(
                "reference has {} steps, targets {steps}",
                r.len()
            )))
        }
        None => {
            own_totals = data.y.sum_axis(Axis(0)).to_vec();
            &own_totals
        }
    };
    let e = &pred - &data.y;
    let pred_totals = pred.sum_axis(Axis(0));
    let data_totals = data.y.sum_axis(Axis(0));

    let mut wre = Vec::new();
    let mut re_all = Vec::new();
    let mut per_step = Vec::with_capacity(steps);
    for t in 0..steps {
        let col = e.column(t);
        let w: Vec<f64> = if totals[t] > 0.0 {
            col.iter().map(|v| v / totals[t]).collect()
        } else {
            Vec::new()
        };
        per_step.push(PerStep {
            t,
            mean_e: col.mean().expect("nonempty"),
            mean_wre: mean(&w),
            mean_abs_wre: mean(&w.iter().map(|v| v.abs()).collect::<Vec<_>>()),
            aggregate_re: (data_totals[t] > 0.0).then(|| (pred_totals[t] - data_totals[t]) / data_totals[t]),
        });
        wre.extend(w);
    }

    let max_all = data.y.iter().copied().fold(0.0f64, f64::max);
    let mut buckets: Vec<(usize, Vec<f64>)> = vec![(0, Vec::new()); VOLUME_BUCKET_EDGES.len() - 1];
    for (i, row) in data.y.outer_iter().enumerate() {
        let volume = row.iter().copied().fold(0.0f64, f64::max);
        let b = bucket_of(if max_all > 0.0 { volume / max_all } else { 0.0 });
        buckets[b].0 += 1;
        for t in 0..steps {
            if row[t] > 0.0 {
                let r = e[[i, t]] / row[t];
                buckets[b].1.push(r);
                re_all.push(r);
            }
        }
    }

    let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
    let abs_e: Vec<f64> = e.iter().map(|v| v.abs()).collect();
    let abs_wre = abs(&wre);
    let agg: Vec<f64> = per_step.iter().filter_map(|p| p.aggregate_re.map(f64::abs)).collect();
    Ok(EvalReport {
        contracts: data.len(),
        mean_e: e.mean().expect("nonempty"),
        pc99_abs_e: percentile_nearest_rank(&abs_e, 0.99).unwrap_or(0.0),
        mean_wre: mean(&wre).unwrap_or(0.0),
        mean_abs_wre: mean(&abs_wre).unwrap_or(0.0),
        pc99_abs_wre: percentile_nearest_rank(&abs_wre, 0.99).unwrap_or(0.0),
        mean_re: mean(&re_all),
        mean_abs_re: mean(&abs(&re_all)),
        mean_abs_aggregate_re: mean(&agg).unwrap_or(0.0),
        per_step,
        re_by_volume_bucket: buckets
            .into_iter()
            .enumerate()
            .map(|(b, (contracts, re))| VolumeBucket {
                lower: VOLUME_BUCKET_EDGES[b],
                upper: VOLUME_BUCKET_EDGES[b + 1],
                contracts,
                pairs: re.len(),
                mean_re: mean(&re),
                mean_abs_re: mean(&abs(&re)),
            })
            .collect(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long format `stat,t,value`; `t` is empty for whole-dataset statistics and
    /// bucket statistics are named by their volume range.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["stat", "t", "value"]).map_err(csv_err)?;
        let mut row = |stat: &str, t: Option<usize>, v: Option<f64>| -> Result<()> {
            if let Some(v) = v {
                out.write_record([
                    stat.to_string(),
                    t.map(|t| t.to_string()).unwrap_or_default(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
            Ok(())
        };
        row("contracts", None, Some(self.contracts as f64))?;
        row("mean_e", None, Some(self.mean_e))?;
        row("pc99_abs_e", None, Some(self.pc99_abs_e))?;
        row("mean_wre", None, Some(self.mean_wre))?;
        row("mean_abs_wre", None, Some(self.mean_abs_wre))?;
        row("pc99_abs_wre", None, Some(self.pc99_abs_wre))?;
        row("mean_re", None, self.mean_re)?;
        row("mean_abs_re", None, self.mean_abs_re)?;
        row("mean_abs_aggregate_re", None, Some(self.mean_abs_aggregate_re))?;
        for p in &self.per_step {
            row("mean_e", Some(p.t), Some(p.mean_e))?;
            row("mean_wre", Some(p.t), p.mean_wre)?;
            row("mean_abs_wre", Some(p.t), p.mean_abs_wre)?;
            row("aggregate_re", Some(p.t), p.aggregate_re)?;
        }
        for b in &self.re_by_volume_bucket {
            let name = |s: &str| format!("{s}[{},{})", b.lower, b.upper);
            row(&name("bucket_contracts"), None, Some(b.contracts as f64))?;
            row(&name("bucket_mean_re"), None, b.mean_re)?;
            row(&name("bucket_mean_abs_re"), None, b.mean_abs_re)?;
        }
        out.flush().map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })
    }
}
