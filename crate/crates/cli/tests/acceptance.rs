//! End-to-end acceptance checks, one line per criterion.
//!
//! `ACCEPTANCE_ONLY=5,7` runs a subset; `ACCEPTANCE_EPOCHS` caps surrogate training.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use modelpoint::actuarial::{tl_reserves, value_contracts, MortalityModel, ValuationAssumptions};
use modelpoint::clustering::{baseline_grouping, cluster_portfolio};
use modelpoint::grouping::{backtest, group_portfolio, GroupingOptions, GroupingReport, GroupingResult};
use modelpoint::neural::{GradSession, Layer, Network, ScaleKind};
use modelpoint::portfolio::{synthesize, Portfolio, ProductLine};
use modelpoint::surrogate::{evaluate, split, train_ensemble, Dataset, EnsembleLosses, SurrogateEnsemble, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DESK_N: usize = 20_000;
const SCALE_N: usize = 100_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- criteria 1-3

fn term_life_terminal_reserve() -> Verdict {
    let t0 = Instant::now();
    let p = synthesize(ProductLine::TermLife, 10_000, 1).unwrap();
    let m = MortalityModel::default();
    let mut worst = 0.0f64;
    for c in p.contracts() {
        let v = tl_reserves(c, &m).unwrap();
        worst = worst.max(v.last().unwrap().abs() / c.x[1]);
    }
    let el = t0.elapsed();
    verdict(
        worst <= 1e-8 && el < Duration::from_secs(10),
        format!(
            "max |terminal reserve| / sum insured = {worst:.2e} over 10000 contracts ({:.2}s)",
            secs(el)
        ),
    )
}

/// `V_t = F G(0, t) + k S sum_{j=1..t} (1+g)^j G(j-1, t)` with
/// `G(a, b) = prod_{s=a}^{b-1} (1+i)(1-rr_{x+s}) p_{x+s}`.
fn dc_closed_form(c: &modelpoint::portfolio::Contract, a: &ValuationAssumptions) -> Vec<f64> {
    let [age, fund, salary, scale, contribution] = c.x;
    let m = &a.mortality;
    let horizon = (67.0 - age) as usize;
    let factor = |s: usize| {
        let x = age + s as f64;
        let p = (-m.a - m.b / m.c.ln() * m.c.powf(x) * (m.c - 1.0)).exp();
        let rr = a.retirement.rate(x as u32);
        (1.0 + a.dc_fund_rate) * (1.0 - rr) * p
    };
    let growth = |from: usize, to: usize| (from..to).map(factor).product::<f64>();
    (0..=horizon)
        .map(|t| {
            fund * growth(0, t)
                + (1..=t)
                    .map(|j| contribution * salary * (1.0 + scale).powi(j as i32) * growth(j - 1, t))
                    .sum::<f64>()
        })
        .collect()
}

fn dc_recursion_vs_closed_form() -> Verdict {
    let t0 = Instant::now();
    let a = ValuationAssumptions::default();
    let p = synthesize(ProductLine::DcPlan, 10_000, 1).unwrap();
    let paths = value_contracts(&p, &a).unwrap();
    let mut worst = 0.0f64;
    for (c, path) in p.contracts().zip(&paths) {
        for (x, y) in dc_closed_form(c, &a).iter().zip(path.values()) {
            worst = worst.max((x - y).abs() / x.abs().max(1e-300));
        }
    }
    let el = t0.elapsed();
    verdict(
        worst <= 1e-10 && el < Duration::from_secs(10),
        format!("max relative gap {worst:.2e} over 10000 contracts ({:.2}s)", secs(el)),
    )
}

fn data_scale() -> Verdict {
    let t0 = Instant::now();
    let a = ValuationAssumptions::default();
    let max_of = |line| -> Vec<f64> {
        let p = synthesize(line, SCALE_N, 1).unwrap();
        value_contracts(&p, &a).unwrap().iter().map(|v| v.max()).collect()
    };
    let tl_max = max_of(ProductLine::TermLife).into_iter().fold(0.0, f64::max);
    let mut dc = max_of(ProductLine::DcPlan);
    dc.sort_by(f64::total_cmp);
    let dc_median = 0.5 * (dc[SCALE_N / 2 - 1] + dc[SCALE_N / 2]);
    let el = t0.elapsed();
    let (tl_ref, dc_ref) = (785_665.97, 557_979.15);
    let within = |v: f64, r: f64| (v / r - 1.0).abs() <= 0.2;
    verdict(
        within(tl_max, tl_ref) && within(dc_median, dc_ref) && el < Duration::from_secs(120),
        format!(
            "TL max {tl_max:.2} ({:+.1}% of {tl_ref}), DC median {dc_median:.2} ({:+.1}% of {dc_ref}) ({:.1}s)",
            100.0 * (tl_max / tl_ref - 1.0),
            100.0 * (dc_median / dc_ref - 1.0),
            secs(el)
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn random_stack(rng: &mut ChaCha8Rng, scale: Option<ScaleKind>) -> Network {
    let input = rng.gen_range(1..=5);
    let mut layers = Vec::new();
    let mut width = input;
    let mut steps: Option<usize> = None;
    for _ in 0..rng.gen_range(1..=3) {
        match rng.gen_range(0..3) {
            0 => {
                let out = rng.gen_range(1..=6);
                layers.push(Layer::dense(width, out, rng.gen_bool(0.5), rng));
                width = out;
            }
            1 => layers.push(Layer::Tanh),
            _ => {
                let hidden = rng.gen_range(1..=5);
                let t = *steps.get_or_insert_with(|| rng.gen_range(1..=6));
                let mut l = Layer::recurrent(width, hidden, t, rng);
                if let Layer::Recurrent(r) = &mut l {
                    r.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
                }
                layers.push(l);
                width = hidden;
            }
        }
    }
    layers.push(Layer::dense(width, rng.gen_range(1..=3), true, rng));
    layers.push(Layer::Tanh);
    match scale {
        Some(ScaleKind::Linear) => layers.push(Layer::scale(
            ScaleKind::Linear,
            rng.gen_range(-5.0..0.0),
            rng.gen_range(1.0..50.0),
        )),
        Some(ScaleKind::Log) => layers.push(Layer::scale(ScaleKind::Log, 0.0, rng.gen_range(1.0..1e4))),
        None => {}
    }
    let mut net = Network::new(input, layers).unwrap();
    for p in net.params_mut() {
        p.iter_mut().for_each(|v| *v *= 1.5);
    }
    net
}

fn directional(net: &Network, z: &[f64], u: &[f64]) -> f64 {
    net.forward(z).unwrap().iter().zip(u).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn gradient_integrity() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let (mut worst_in, mut worst_param) = (0.0f64, 0.0f64);
    let kinds = [Some(ScaleKind::Linear), Some(ScaleKind::Log), None];
    for i in 0..1000 {
        let net = random_stack(&mut rng, kinds[i % 3]);
        let z: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut s = GradSession::new(&net);
        let out = s.forward(&z).unwrap();
        let (pg, ig) = s.backward(&u).unwrap();
        // central differences carry roundoff of about |out| * 1e-11 at this step size
        let floor = 1e-6 * out.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (j, g) in ig.iter().enumerate() {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += h;
            zm[j] -= h;
            let fd = (directional(&net, &zp, &u) - directional(&net, &zm, &u)) / (2.0 * h);
            worst_in = worst_in.max(rel_err(*g, fd, floor));
        }
        for (tensor, grads) in pg.0.iter().enumerate() {
            for (idx, g) in grads.iter().enumerate() {
                let at = |d: f64| {
                    let mut n = net.clone();
                    n.params_mut()[tensor][idx] += d;
                    directional(&n, &z, &u)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                worst_param = worst_param.max(rel_err(*g, fd, floor));
            }
        }
    }
    let el = t0.elapsed();
    verdict(
        worst_in <= 1e-4 && worst_param <= 1e-4 && el < Duration::from_secs(60),
        format!(
            "1000 stacks, max rel err input {worst_in:.2e}, parameters {worst_param:.2e} ({:.1}s)",
            secs(el)
        ),
    )
}

// ---------------------------------------------------------------- criteria 5-8

struct Trained {
    portfolio: Portfolio,
    ensemble: SurrogateEnsemble,
    elapsed: Duration,
    mean_abs_wre: f64,
    aggregate_re: f64,
    epochs: Vec<usize>,
}

fn max_epochs() -> usize {
    std::env::var("ACCEPTANCE_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(300)
}

fn train_line(line: ProductLine) -> Trained {
    let a = ValuationAssumptions::default();
    let t0 = Instant::now();
    let portfolio = synthesize(line, DESK_N, 1).unwrap();
    let data = Dataset::from_portfolio(&portfolio, &a).unwrap();
    let sp = split(&data, 0).unwrap();
    let cfg = TrainConfig {
        hidden: 32,
        max_epochs: max_epochs(),
        ..TrainConfig::for_line(line)
    };
    let (ensemble, trained) = train_ensemble(&sp, &cfg, 3, EnsembleLosses::Mse).unwrap();
    let report = evaluate(&ensemble, &sp.test, None).unwrap();
    Trained {
        portfolio,
        ensemble,
        elapsed: t0.elapsed(),
        mean_abs_wre: report.mean_abs_wre,
        aggregate_re: report.mean_abs_aggregate_re,
        epochs: trained.iter().map(|t| t.log.len() - 1).collect(),
    }
}

fn surrogate_quality(t: &Trained, line: ProductLine, limit: f64) -> (bool, String) {
    let ok = t.mean_abs_wre <= limit && t.elapsed <= Duration::from_secs(30 * 60);
    (
        ok,
        format!(
            "{}: mean |wre| {:.2e} (limit {limit}), aggregate mean |re| {:.4}, epochs {:?}, {:.0}s",
            line.tag(),
            t.mean_abs_wre,
            t.aggregate_re,
            t.epochs,
            secs(t.elapsed)
        ),
    )
}

fn grouped(t: &Trained, k: usize, m: usize) -> (GroupingResult, Duration) {
    let t0 = Instant::now();
    let opts = GroupingOptions {
        k,
        m,
        ..GroupingOptions::default()
    };
    let g = group_portfolio(&t.portfolio, &t.ensemble, &ValuationAssumptions::default(), &opts).unwrap();
    (g, t0.elapsed())
}

fn mean_abs_re(r: &GroupingReport, method: &str) -> f64 {
    r.summary_for(method).unwrap().mean_abs_re
}

fn term_life_grouping(t: &Trained) -> (Verdict, GroupingResult) {
    let t0 = Instant::now();
    let (g, _) = grouped(t, 10, 1);
    let baseline = g.centroid_portfolio().unwrap();
    let r = backtest(
        &g,
        &baseline,
        &t.portfolio,
        &t.ensemble,
        &ValuationAssumptions::default(),
    )
    .unwrap();
    let el = t0.elapsed();
    let (ann, km) = (mean_abs_re(&r, "ann_mid"), mean_abs_re(&r, "km_mid"));
    let v = verdict(
        ann <= 0.5 * km && el <= Duration::from_secs(15 * 60),
        format!(
            "K = 10: mean |re| ANN mid {ann:.4} vs K-means mid {km:.4} (factor {:.2}, need >= 2), ANN prediction {:.4} ({:.0}s)",
            km / ann,
            mean_abs_re(&r, "ann_pred"),
            secs(el)
        ),
    );
    (v, g)
}

fn dc_multi_point(t: &Trained) -> (Verdict, GroupingResult) {
    let t0 = Instant::now();
    let (g, _) = grouped(t, 1, 10);
    let (km_model, _) = cluster_portfolio(&t.portfolio, 10, &Default::default()).unwrap();
    let baseline = baseline_grouping(&km_model, ProductLine::DcPlan).unwrap();
    let r = backtest(
        &g,
        &baseline,
        &t.portfolio,
        &t.ensemble,
        &ValuationAssumptions::default(),
    )
    .unwrap();
    let el = t0.elapsed();
    let (ann, km) = (mean_abs_re(&r, "ann_pred"), mean_abs_re(&r, "km_mid"));
    let mean_re = |m: &str| r.summary_for(m).unwrap().mean_re;
    let v = verdict(
        ann * 1.5 <= km && el <= Duration::from_secs(15 * 60),
        format!(
            "K = 1, m = 10: mean |re| ANN prediction {ann:.4} vs 10-means mid {km:.4} (factor {:.2}, need >= 1.5); mean re {:+.4} vs {:+.4}; ANN mid {:.4} ({:.0}s)",
            km / ann,
            mean_re("ann_pred"),
            mean_re("km_mid"),
            mean_abs_re(&r, "ann_mid"),
            secs(el)
        ),
    );
    (v, g)
}

fn dominance(runs: &[(&str, &GroupingResult)]) -> Verdict {
    let mut clusters = 0;
    let mut bad = Vec::new();
    for (name, g) in runs {
        clusters += g.clusters.len();
        for c in g.dominance_violations() {
            bad.push(format!("{name}#{c}"));
        }
    }
    verdict(
        bad.is_empty() && clusters > 0,
        format!("{clusters} clusters checked, violations {bad:?}"),
    )
}

// ---------------------------------------------------------------- criterion 9

fn run_cli(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_modelpoint"))
        .arg("--out-dir")
        .arg(dir)
        .arg("--seed")
        .arg("11")
        .args(args)
        .output()
        .expect("cli runs");
    out.status.code().unwrap_or(-1)
}

fn pipeline(dir: &Path) -> Vec<i32> {
    let p = dir.join("portfolio.csv");
    let model = dir.join("ensemble.json");
    let (p, model) = (p.to_str().unwrap(), model.to_str().unwrap());
    let group = dir.join("group");
    vec![
        run_cli(dir, &["generate", "--line", "dc", "--n", "1500"]),
        run_cli(
            dir,
            &[
                "train",
                "--portfolio",
                p,
                "--members",
                "2",
                "--losses",
                "mixed",
                "--hidden",
                "8",
                "--epochs",
                "4",
            ],
        ),
        run_cli(
            &group,
            &[
                "group",
                "--portfolio",
                p,
                "--model",
                model,
                "--k",
                "4",
                "--m",
                "2",
                "--steps",
                "200",
            ],
        ),
    ]
}

fn files(dir: &Path) -> BTreeSet<std::path::PathBuf> {
    let mut out = BTreeSet::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(
                files(&path)
                    .into_iter()
                    .map(|p| Path::new(path.file_name().unwrap()).join(p)),
            );
        } else {
            out.insert(path.file_name().unwrap().into());
        }
    }
    out
}

fn determinism() -> Verdict {
    let t0 = Instant::now();
    let a = tempfile::TempDir::new().unwrap();
    let b = tempfile::TempDir::new().unwrap();
    let codes = (pipeline(a.path()), pipeline(b.path()));
    let names = files(a.path());
    let mut differing = Vec::new();
    for f in &names {
        if std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    let ran = codes.0[..2] == [0, 0] && matches!(codes.0[2], 0 | 3);
    verdict(
        ran && codes.0 == codes.1 && names == files(b.path()) && differing.is_empty(),
        format!(
            "generate -> train -> group twice: exit codes {:?}, {} files compared, differing {differing:?} ({:.1}s)",
            codes.0,
            names.len(),
            secs(t0.elapsed())
        ),
    )
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|s| s.contains(&n));
    let mut failed = Vec::new();
    let mut report = |n: u32, name: &str, v: Verdict| {
        println!(
            "criterion {n} {} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(n);
        }
    };

    if wanted(1) {
        report(1, "term life terminal reserve", term_life_terminal_reserve());
    }
    if wanted(2) {
        report(2, "DC recursion vs closed form", dc_recursion_vs_closed_form());
    }
    if wanted(3) {
        report(3, "data scale", data_scale());
    }
    if wanted(4) {
        report(4, "gradient integrity", gradient_integrity());
    }

    let need_tl = [5, 6, 8].iter().any(|&n| wanted(n));
    let need_dc = [5, 7, 8].iter().any(|&n| wanted(n));
    let dc = need_dc.then(|| train_line(ProductLine::DcPlan));
    let tl = need_tl.then(|| train_line(ProductLine::TermLife));
    if wanted(5) {
        let (a, da) = surrogate_quality(dc.as_ref().unwrap(), ProductLine::DcPlan, 0.02);
        let (b, db) = surrogate_quality(tl.as_ref().unwrap(), ProductLine::TermLife, 0.05);
        report(5, "surrogate quality", verdict(a && b, format!("{da}; {db}")));
    }
    let mut runs = Vec::new();
    if let Some(t) = &tl {
        let (v, g) = term_life_grouping(t);
        if wanted(6) {
            report(6, "term life grouping beats K-means", v);
        }
        runs.push(("tl K=10", g));
    }
    if let Some(t) = &dc {
        let (v, g) = dc_multi_point(t);
        if wanted(7) {
            report(7, "DC multiple model points", v);
        }
        runs.push(("dc K=1 m=10", g));
    }
    if wanted(8) {
        let refs: Vec<(&str, &GroupingResult)> = runs.iter().map(|(n, g)| (*n, g)).collect();
        report(8, "optimizer dominance", dominance(&refs));
    }
    if wanted(9) {
        report(9, "determinism", determinism());
    }

    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
