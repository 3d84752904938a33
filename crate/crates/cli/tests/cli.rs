use std::path::Path;
use std::process::{Command, Output};

use modelpoint::actuarial::{tl_premium, value_contracts, MortalityModel, ValuationAssumptions};
use modelpoint::neural::{Dense, Layer, LossKind, Network};
use modelpoint::portfolio::{Contract, Portfolio, ProductLine};
use modelpoint::surrogate::SurrogateEnsemble;
use ndarray::{Array1, Array2};
use tempfile::TempDir;

fn modelpoint(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modelpoint"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, line: &str, n: usize) -> std::path::PathBuf {
    let o = modelpoint(dir, &["generate", "--line", line, "--n", &n.to_string(), "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("portfolio.csv")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn generate_writes_requested_rows_reproducibly() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let pa = generate(a.path(), "tl", 1000);
    let pb = generate(b.path(), "tl", 1000);
    let text = std::fs::read(&pa).unwrap();
    assert_eq!(text, std::fs::read(&pb).unwrap());
    assert_eq!(read_csv(&pa).len(), 1001);
    let p = Portfolio::load_csv(&pa).unwrap();
    assert_eq!(p.len(), 1000);
    p.validate().unwrap();
}

#[test]
fn different_seeds_give_different_portfolios() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (seed, out) in [("1", &a), ("2", &b)] {
        let o = modelpoint(
            dir.path(),
            &[
                "generate",
                "--line",
                "dc",
                "--n",
                "50",
                "--seed",
                seed,
                "--out",
                path_str(out),
            ],
        );
        assert_eq!(code(&o), 0);
    }
    assert_ne!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&modelpoint(dir.path(), &["generate", "--line", "annuity", "--n", "5"])),
        2
    );
    assert_eq!(code(&modelpoint(dir.path(), &["generate", "--n", "5"])), 2);
    assert_eq!(code(&modelpoint(dir.path(), &["frobnicate"])), 2);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"line": "tl", "n": 3, "colour": "red"}"#).unwrap();
    assert_eq!(
        code(&modelpoint(dir.path(), &["--config", path_str(&cfg), "generate"])),
        2
    );
}

#[test]
fn config_file_supplies_parameters() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"line": "dc", "n": 12, "seed": 7}"#).unwrap();
    let o = modelpoint(
        dir.path(),
        &[
            "--config",
            path_str(&cfg),
            "generate",
            "--out",
            path_str(&dir.path().join("c.csv")),
        ],
    );
    assert_eq!(code(&o), 0);
    let flags = generate(dir.path(), "dc", 12);
    assert_eq!(
        std::fs::read(flags).unwrap(),
        std::fs::read(dir.path().join("c.csv")).unwrap()
    );
}

#[test]
fn aggregate_of_single_contract_equals_its_row() {
    let dir = TempDir::new().unwrap();
    let c = Contract::new(ProductLine::TermLife, [40.0, 100_000.0, 10.0, 0.0, 0.02]).unwrap();
    let p = Portfolio::from_contracts(ProductLine::TermLife, [c]).unwrap();
    let file = dir.path().join("one.csv");
    p.save_csv(&file).unwrap();
    let rows = dir.path().join("rows.csv");
    let agg = dir.path().join("agg.csv");
    assert_eq!(
        code(&modelpoint(
            dir.path(),
            &["value", "--portfolio", path_str(&file), "--out", path_str(&rows)]
        )),
        0
    );
    assert_eq!(
        code(&modelpoint(
            dir.path(),
            &[
                "value",
                "--portfolio",
                path_str(&file),
                "--aggregate",
                "--out",
                path_str(&agg)
            ]
        )),
        0
    );
    let rows = read_csv(&rows);
    let agg = read_csv(&agg);
    let per: Vec<f64> = rows[1][2..].iter().map(|v| v.parse().unwrap()).collect();
    let total: Vec<f64> = agg[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(per, total);
}

#[test]
fn term_life_reserve_runs_off_to_zero() {
    let dir = TempDir::new().unwrap();
    let (age, sum, dur, rate) = (50.0, 250_000.0, 12.0, 0.03);
    let c = Contract::new(ProductLine::TermLife, [age, sum, dur, 0.0, rate]).unwrap();
    let file = dir.path().join("one.csv");
    Portfolio::from_contracts(ProductLine::TermLife, [c])
        .unwrap()
        .save_csv(&file)
        .unwrap();
    let out = dir.path().join("v.csv");
    assert_eq!(
        code(&modelpoint(
            dir.path(),
            &["value", "--portfolio", path_str(&file), "--out", path_str(&out)]
        )),
        0
    );
    let rows = read_csv(&out);
    let v: Vec<f64> = rows[1][2..].iter().map(|s| s.parse().unwrap()).collect();
    let n = dur as usize;
    assert_eq!(v[n], 0.0);

    // one year before maturity the reserve is the discounted claim minus the premium
    let m = MortalityModel::default();
    let x = age + dur - 1.0;
    let q = 1.0 - (-m.a - m.b / m.c.ln() * m.c.powf(x) * (m.c - 1.0)).exp();
    let premium = tl_premium(&c, &m).unwrap();
    let prospective = sum * q / (1.0 + rate) - premium;
    assert!(
        (v[n - 1] - prospective).abs() <= 1e-8 * sum,
        "reserve {} vs prospective {prospective}",
        v[n - 1]
    );
}

#[test]
fn zero_count_row_is_rejected_with_its_line() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("bad.csv");
    std::fs::write(
        &file,
        "line,x1,x2,x3,x4,x5,count\ntl,40,100000,10,0,0.02,1\ntl,41,100000,10,0,0.02,0\n",
    )
    .unwrap();
    let o = modelpoint(dir.path(), &["value", "--portfolio", path_str(&file)]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

fn train(dir: &Path, portfolio: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--portfolio",
        path_str(portfolio),
        "--hidden",
        "4",
        "--epochs",
        "2",
        "--seed",
        "3",
    ];
    args.extend(extra);
    modelpoint(dir, &args)
}

#[test]
fn train_writes_model_log_and_report() {
    let dir = TempDir::new().unwrap();
    let p = generate(dir.path(), "dc", 300);
    let o = train(dir.path(), &p, &["--members", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ensemble.json", "training_log.csv", "eval.json", "eval.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let ens = SurrogateEnsemble::load(&dir.path().join("ensemble.json")).unwrap();
    assert_eq!(ens.members().len(), 1);
    assert_eq!(read_csv(&dir.path().join("training_log.csv")).len(), 4);
}

#[test]
fn training_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let p = generate(a.path(), "tl", 300);
    for d in [&a, &b] {
        assert_eq!(code(&train(d.path(), &p, &["--members", "2", "--losses", "mixed"])), 0);
    }
    for f in [
        "ensemble.json",
        "training_log_0.csv",
        "training_log_1.csv",
        "eval.json",
        "eval.csv",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    let ens = SurrogateEnsemble::load(&a.path().join("ensemble.json")).unwrap();
    assert_eq!(ens.member_losses(), &[LossKind::Mse, LossKind::Mae]);
}

/// A surrogate predicting `factor` times the mean contract path for every input, so
/// the grouped aggregate misses the portfolio by exactly `factor - 1` at each step.
fn constant_surrogate(p: &Portfolio, factor: f64, path: &Path) {
    let paths = value_contracts(p, &ValuationAssumptions::default()).unwrap();
    let steps = paths[0].len();
    let n = p.total_count() as f64;
    let mut mean = Array1::<f64>::zeros(steps);
    for (v, e) in paths.iter().zip(&p.entries) {
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += factor * e.count as f64 * x / n;
        }
    }
    let net = Network::new(
        5,
        vec![Layer::Dense(Dense {
            weight: Array2::zeros((5, steps)),
            bias: Some(mean),
        })],
    )
    .unwrap();
    SurrogateEnsemble::new(vec![net], vec![LossKind::Mse])
        .unwrap()
        .save(path)
        .unwrap();
}

#[test]
fn thresholds_decide_the_exit_code() {
    let dir = TempDir::new().unwrap();
    let p = generate(dir.path(), "dc", 200);
    let model = dir.path().join("const.json");
    constant_surrogate(&Portfolio::load_csv(&p).unwrap(), 1.01, &model);
    let group = |alpha: &str, out: &str| {
        let out = dir.path().join(out);
        let o = modelpoint(
            &out,
            &[
                "group",
                "--portfolio",
                path_str(&p),
                "--model",
                path_str(&model),
                "--k",
                "4",
                "--steps",
                "5",
                "--alpha",
                alpha,
            ],
        );
        (code(&o), out)
    };
    let (c1, out) = group("1", "a1");
    assert_eq!(c1, 0);
    assert_eq!(group("0.02", "a02").0, 0);
    assert_eq!(group("0.005", "a005").0, 3);
    assert_eq!(group("0", "a0").0, 3);
    assert_eq!(group("1.5", "bad").0, 2);

    let series = read_csv(&out.join("series.csv"));
    assert_eq!(series[0][..3], ["t", "target", "ann_pred"]);
    assert_eq!(series.len(), 1 + 43);
    for f in [
        "report.json",
        "summary.csv",
        "model_points.csv",
        "clusters.json",
        "assignment.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let mps = read_csv(&out.join("model_points.csv"));
    assert_eq!(mps.len(), 1 + 4);
    let total: u64 = mps[1..].iter().map(|r| r[6].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 200);
}

#[test]
fn report_reproduces_series_and_applies_thresholds() {
    let dir = TempDir::new().unwrap();
    let p = generate(dir.path(), "dc", 100);
    let model = dir.path().join("const.json");
    constant_surrogate(&Portfolio::load_csv(&p).unwrap(), 1.01, &model);
    let g = dir.path().join("g");
    let o = modelpoint(
        &g,
        &[
            "group",
            "--portfolio",
            path_str(&p),
            "--model",
            path_str(&model),
            "--k",
            "2",
            "--steps",
            "5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = dir.path().join("r");
    let report = g.join("report.json");
    assert_eq!(code(&modelpoint(&r, &["report", "--report", path_str(&report)])), 0);
    assert_eq!(
        std::fs::read(g.join("series.csv")).unwrap(),
        std::fs::read(r.join("series.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(g.join("summary.csv")).unwrap(),
        std::fs::read(r.join("summary.csv")).unwrap()
    );
    assert_eq!(
        code(&modelpoint(
            &r,
            &["report", "--report", path_str(&report), "--alpha", "0"]
        )),
        3
    );
}

#[test]
fn multiple_points_per_cluster_use_a_matching_baseline() {
    let dir = TempDir::new().unwrap();
    let p = generate(dir.path(), "dc", 150);
    let model = dir.path().join("const.json");
    constant_surrogate(&Portfolio::load_csv(&p).unwrap(), 1.0, &model);
    let o = modelpoint(
        dir.path(),
        &[
            "group",
            "--portfolio",
            path_str(&p),
            "--model",
            path_str(&model),
            "--k",
            "1",
            "--m",
            "3",
            "--steps",
            "5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["baseline_points"], 3);
    assert_eq!(doc["m"], 3);
}

#[test]
fn missing_model_file_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let p = generate(dir.path(), "dc", 20);
    let o = modelpoint(
        dir.path(),
        &[
            "group",
            "--portfolio",
            path_str(&p),
            "--model",
            "/nonexistent/model.json",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/model.json"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let p = generate(a.path(), "dc", 200);
    let model = a.path().join("const.json");
    constant_surrogate(&Portfolio::load_csv(&p).unwrap(), 1.0, &model);
    for (d, threads) in [(&a, "1"), (&b, "3")] {
        let o = modelpoint(
            d.path(),
            &[
                "--threads",
                threads,
                "group",
                "--portfolio",
                path_str(&p),
                "--model",
                path_str(&model),
                "--k",
                "5",
                "--steps",
                "5",
            ],
        );
        assert_eq!(code(&o), 0);
    }
    for f in ["report.json", "model_points.csv", "assignment.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
