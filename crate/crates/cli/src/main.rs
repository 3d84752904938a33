use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use modelpoint::actuarial::{value_contracts, value_portfolio, ValuationAssumptions};
use modelpoint::clustering::ClusterModel;
use modelpoint::grouping::{
    backtest, default_thresholds, group_portfolio, threshold_check, GroupingOptions, GroupingReport, TargetKind,
};
use modelpoint::neural::OptimizerKind;
use modelpoint::portfolio::{synthesize, Portfolio, ProductLine};
use modelpoint::surrogate::{
    evaluate, split, train_ensemble, write_training_log, Dataset, EnsembleLosses, SurrogateEnsemble, TrainConfig,
};
use modelpoint::Error;

const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_REJECTED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "modelpoint", version, about = "Model-point grouping of insurance portfolios")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a portfolio from a Sobol sequence.
    Generate(GenerateArgs),
    /// Exact policy values of a portfolio.
    Value(ValueArgs),
    /// Train a surrogate ensemble on a portfolio.
    Train(TrainArgs),
    /// Group a portfolio into model points and backtest the grouping.
    Group(GroupArgs),
    /// Summarize a saved grouping report and re-check thresholds.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_line)]
    line: Option<ProductLine>,
    #[arg(long)]
    n: Option<usize>,
    /// Output CSV (default: `<out-dir>/portfolio.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValueArgs {
    #[arg(long)]
    portfolio: PathBuf,
    /// Write the count-weighted portfolio total instead of one row per entry.
    #[arg(long)]
    aggregate: bool,
    /// Output CSV (default: `<out-dir>/values.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    portfolio: PathBuf,
    #[arg(long)]
    members: Option<usize>,
    /// mse, mae or mixed
    #[arg(long)]
    losses: Option<EnsembleLosses>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct GroupArgs {
    #[arg(long)]
    portfolio: PathBuf,
    /// Surrogate ensemble JSON written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Model points per cluster.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Constant acceptance threshold for every step.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `report.json` written by `group`.
    #[arg(long)]
    report: PathBuf,
    /// Constant acceptance threshold for every step.
    #[arg(long)]
    alpha: Option<f64>,
}

fn parse_line(s: &str) -> Result<ProductLine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Optional settings shared by all subcommands, read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: Option<u64>,
    line: Option<ProductLine>,
    n: Option<usize>,
    /// `{A, B, c, rr, i}`
    assumptions: Option<serde_json::Value>,
    train: Option<TrainConfig>,
    members: Option<usize>,
    losses: Option<EnsembleLosses>,
    grouping: Option<GroupingOptions>,
    /// One threshold per step.
    alpha: Option<Vec<f64>>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Rejected,
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

struct Run {
    cfg: RunConfig,
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Run {
    fn assumptions(&self) -> anyhow::Result<ValuationAssumptions> {
        match &self.cfg.assumptions {
            Some(v) => Ok(ValuationAssumptions::from_json(&v.to_string())?),
            None => Ok(ValuationAssumptions::default()),
        }
    }

    fn out(&self, explicit: Option<&PathBuf>, name: &str) -> PathBuf {
        explicit.cloned().unwrap_or_else(|| self.out_dir.join(name))
    }

    fn alpha(&self, flag: Option<f64>, steps: usize) -> Result<Vec<f64>, Failure> {
        let alpha = match (flag, &self.cfg.alpha) {
            (Some(a), _) => vec![a; steps],
            (None, Some(v)) => {
                if v.len() != steps {
                    return Err(usage(format!(
                        "config has {} thresholds, the valuation {steps} steps",
                        v.len()
                    )));
                }
                v.clone()
            }
            (None, None) => default_thresholds(steps),
        };
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(usage("thresholds must lie in [0, 1]"));
        }
        Ok(alpha)
    }
}

fn load_portfolio(path: &Path) -> anyhow::Result<Portfolio> {
    let p = Portfolio::load_csv(path).with_context(|| format!("{}", path.display()))?;
    p.validate().with_context(|| format!("{}", path.display()))?;
    Ok(p)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(ctx: &Run, args: &GenerateArgs) -> Outcome {
    let line = args
        .line
        .or(ctx.cfg.line)
        .ok_or_else(|| usage("generate needs --line (tl or dc)"))?;
    let n = args.n.or(ctx.cfg.n).ok_or_else(|| usage("generate needs --n"))?;
    // seed s starts the sequence at point s + 1, past the origin
    let skip = ctx
        .seed
        .unwrap_or(0)
        .checked_add(1)
        .ok_or_else(|| usage("seed too large"))?;
    let p = synthesize(line, n, skip)?;
    let out = ctx.out(args.out.as_ref(), "portfolio.csv");
    p.write_csv(create(&out)?)?;

    println!("wrote {} {} contracts to {}", p.len(), line.tag(), out.display());
    for (j, spec) in line.features().iter().enumerate() {
        let (lo, hi) = p
            .contracts()
            .map(|c| c.x[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        println!("  {:<12} [{lo}, {hi}]", spec.name);
    }
    Ok(())
}

fn cmd_value(ctx: &Run, args: &ValueArgs) -> Outcome {
    let a = ctx.assumptions()?;
    let p = load_portfolio(&args.portfolio)?;
    let out = ctx.out(args.out.as_ref(), "values.csv");
    let mut w = csv::Writer::from_writer(create(&out)?);
    if args.aggregate {
        let total = value_portfolio(&p, &a)?;
        w.write_record(["t", "value"]).context("writing values")?;
        for (t, v) in total.values().iter().enumerate() {
            w.write_record([t.to_string(), v.to_string()])
                .context("writing values")?;
        }
        println!("portfolio value at t = 0: {}", total.values()[0]);
    } else {
        let paths = value_contracts(&p, &a)?;
        let steps = paths.first().map_or(0, |v| v.len());
        let mut header = vec!["entry".to_string(), "count".to_string()];
        header.extend((0..steps).map(|t| format!("v{t}")));
        w.write_record(&header).context("writing values")?;
        for (i, (path, e)) in paths.iter().zip(&p.entries).enumerate() {
            let mut rec = vec![i.to_string(), e.count.to_string()];
            rec.extend(path.values().iter().map(|v| v.to_string()));
            w.write_record(&rec).context("writing values")?;
        }
        println!("valued {} entries", paths.len());
    }
    w.flush().with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn cmd_train(ctx: &Run, args: &TrainArgs) -> Outcome {
    let a = ctx.assumptions()?;
    let p = load_portfolio(&args.portfolio)?;
    let mut cfg = ctx.cfg.train.clone().unwrap_or_else(|| TrainConfig::for_line(p.line));
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.hidden = args.hidden.unwrap_or(cfg.hidden);
    cfg.max_epochs = args.epochs.unwrap_or(cfg.max_epochs);
    cfg.patience = args.patience.unwrap_or(cfg.patience);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = args.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let members = args.members.or(ctx.cfg.members).unwrap_or(3);
    let losses = args.losses.or(ctx.cfg.losses).unwrap_or(EnsembleLosses::Mse);

    let data = Dataset::from_portfolio(&p, &a)?;
    let sp = split(&data, cfg.seed)?;
    fs::create_dir_all(&ctx.out_dir).with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    let (ensemble, trained) = match train_ensemble(&sp, &cfg, members, losses) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, log }) => {
            let path = ctx.out_dir.join("training_log.csv");
            write_training_log(&log, create(&path)?)?;
            return Err(Failure::Runtime(anyhow!(
                "training diverged at epoch {epoch}; log kept in {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    ensemble.save(&ctx.out_dir.join("ensemble.json"))?;
    for (i, t) in trained.iter().enumerate() {
        let name = if members == 1 {
            "training_log.csv".to_string()
        } else {
            format!("training_log_{i}.csv")
        };
        write_training_log(&t.log, create(&ctx.out_dir.join(name))?)?;
        println!(
            "member {i}: best epoch {} of {}, validation loss {:.6e}",
            t.best_epoch,
            t.log.len() - 1,
            t.best_val_loss()
        );
    }
    let report = evaluate(&ensemble, &sp.test, None)?;
    write(&ctx.out_dir.join("eval.json"), &report.to_json())?;
    report.write_csv(create(&ctx.out_dir.join("eval.csv"))?)?;
    println!(
        "test set: mean |wre| {:.3e}, pc99 |wre| {:.3e}, mean aggregate |re| {:.4}",
        report.mean_abs_wre, report.pc99_abs_wre, report.mean_abs_aggregate_re
    );
    Ok(())
}

fn print_summary(report: &GroupingReport) {
    println!(
        "{:<10} {:>12} {:>12} {:>12}",
        "method", "mean re", "mean |re|", "max |re|"
    );
    for s in &report.summary {
        println!(
            "{:<10} {:>12.5} {:>12.5} {:>12.5}",
            s.method, s.mean_re, s.mean_abs_re, s.max_abs_re
        );
    }
}

fn accept(report: &GroupingReport, alpha: &[f64]) -> Outcome {
    let check = threshold_check(report, alpha)?;
    if check.accepted {
        println!("grouping accepted");
        Ok(())
    } else {
        println!("grouping rejected at steps {:?}", check.failing_steps);
        Err(Failure::Rejected)
    }
}

fn cmd_group(ctx: &Run, args: &GroupArgs) -> Outcome {
    let a = ctx.assumptions()?;
    let p = load_portfolio(&args.portfolio)?;
    let surrogate = SurrogateEnsemble::load(&args.model)?;
    let mut opts = ctx.cfg.grouping.unwrap_or_default();
    if let Some(s) = ctx.seed {
        opts.kmeans.seed = s;
        opts.optimize.seed = s;
    }
    opts.k = args.k.unwrap_or(opts.k);
    opts.m = args.m.unwrap_or(opts.m);
    opts.optimize.steps = args.steps.unwrap_or(opts.optimize.steps);
    if let Some(lr) = args.learning_rate {
        opts.optimize.optimizer = match opts.optimize.optimizer {
            OptimizerKind::FixedStep { .. } => OptimizerKind::FixedStep { lr },
            OptimizerKind::Adam { beta1, beta2, eps, .. } => OptimizerKind::Adam { lr, beta1, beta2, eps },
        };
    }
    if opts.k == 0 || opts.m == 0 {
        return Err(usage("--k and --m must be positive"));
    }
    if opts.target == TargetKind::Surrogate {
        println!("note: optimizing against surrogate cluster targets");
    }

    let grouped = group_portfolio(&p, &surrogate, &a, &opts)?;
    let (cluster_model, baseline) = baseline(&p, &grouped, &opts)?;
    let report = backtest(&grouped, &baseline, &p, &surrogate, &a)?;
    let alpha = ctx.alpha(args.alpha, report.series.len())?;

    fs::create_dir_all(&ctx.out_dir).with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    report.save(&ctx.out_dir)?;
    grouped.write_model_points_csv(create(&ctx.out_dir.join("model_points.csv"))?)?;
    if let Some(m) = cluster_model {
        m.save(&ctx.out_dir.join("clusters.json"), &ctx.out_dir.join("assignment.csv"))?;
    }
    let violations = grouped.dominance_violations();
    if !violations.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "optimized loss above the centroid loss in clusters {violations:?}"
        )));
    }
    print_summary(&report);
    accept(&report, &alpha)
}

/// K-means baseline with as many model points as the optimized grouping: the
/// grouping's own centroids when it has one point per cluster, otherwise a fresh
/// clustering into `K * m` clusters.
fn baseline(
    p: &Portfolio,
    grouped: &modelpoint::grouping::GroupingResult,
    opts: &GroupingOptions,
) -> anyhow::Result<(Option<ClusterModel>, Portfolio)> {
    use modelpoint::clustering::{baseline_grouping, cluster_portfolio};
    let points = opts.k * opts.m;
    if opts.m == 1 && opts.k > 1 {
        let (model, _) = cluster_portfolio(p, opts.k, &opts.kmeans)?;
        return Ok((Some(model), grouped.centroid_portfolio()?));
    }
    let (model, _) = cluster_portfolio(p, points, &opts.kmeans)?;
    let b = baseline_grouping(&model, p.line)?;
    Ok((Some(model), b))
}

fn cmd_report(ctx: &Run, args: &ReportArgs) -> Outcome {
    let text = fs::read_to_string(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report: GroupingReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.report.display()))?;
    let alpha = ctx.alpha(args.alpha, report.series.len())?;
    fs::create_dir_all(&ctx.out_dir).with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    report
        .write_series_csv(create(&ctx.out_dir.join("series.csv"))?)
        .map_err(anyhow::Error::from)?;
    report
        .write_summary_csv(create(&ctx.out_dir.join("summary.csv"))?)
        .map_err(anyhow::Error::from)?;
    println!(
        "{} grouping, K = {}, m = {}, baseline of {} points",
        report.line.tag(),
        report.k,
        report.m,
        report.baseline_points
    );
    print_summary(&report);
    accept(&report, &alpha)
}

fn run(cli: &Cli) -> Outcome {
    let cfg: RunConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed);
    let ctx = Run {
        cfg,
        seed,
        out_dir: cli.out_dir.clone(),
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Value(a) => cmd_value(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Group(a) => cmd_group(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rejected) => ExitCode::from(EXIT_REJECTED),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
