//! Contract and portfolio types, quasi-random portfolio synthesis, feature scaling
//! and the portfolio CSV interchange format.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sobol::Sobol;

pub const N_FEATURES: usize = 5;

/// Issue ages for term life contracts.
pub const TL_ISSUE_AGE: (f64, f64) = (25.0, 67.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProductLine {
    #[serde(rename = "tl")]
    TermLife,
    #[serde(rename = "dc")]
    DcPlan,
}

impl ProductLine {
    pub fn tag(self) -> &'static str {
        match self {
            ProductLine::TermLife => "tl",
            ProductLine::DcPlan => "dc",
        }
    }

    pub fn features(self) -> &'static [FeatureSpec; N_FEATURES] {
        match self {
            ProductLine::TermLife => &TERM_LIFE_FEATURES,
            ProductLine::DcPlan => &DC_FEATURES,
        }
    }
}

impl fmt::Display for ProductLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ProductLine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tl" | "term_life" | "termlife" => Ok(ProductLine::TermLife),
            "dc" | "dc_plan" | "dcplan" => Ok(ProductLine::DcPlan),
            other => Err(Error::InvalidContract(format!("unknown product line `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub name: &'static str,
    pub lower: f64,
    pub upper: f64,
    pub integer_valued: bool,
    pub unit: &'static str,
}

impl FeatureSpec {
    const fn new(name: &'static str, lower: f64, upper: f64, integer_valued: bool, unit: &'static str) -> Self {
        Self {
            name,
            lower,
            upper,
            integer_valued,
            unit,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }

    fn check(&self, value: f64) -> Result<()> {
        if self.contains(value) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                feature: self.name,
                value,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }

    /// Value drawn from a unit-interval coordinate, rounded when integer valued.
    fn at_unit(&self, u: f64) -> f64 {
        let x = self.lower + u * self.width();
        if self.integer_valued {
            x.round()
        } else {
            x
        }
    }
}

// Current age upper bound: issue age <= 67 plus lapsed duration <= 39.
pub static TERM_LIFE_FEATURES: [FeatureSpec; N_FEATURES] = [
    FeatureSpec::new("age", 25.0, 106.0, true, "years"),
    FeatureSpec::new("sum_insured", 1.0e3, 1.0e6, true, "EUR"),
    FeatureSpec::new("duration", 2.0, 40.0, true, "years"),
    FeatureSpec::new("lapsed_duration", 0.0, 39.0, true, "years"),
    FeatureSpec::new("interest_rate", -0.01, 0.04, false, "numeric"),
];

pub static DC_FEATURES: [FeatureSpec; N_FEATURES] = [
    FeatureSpec::new("age", 25.0, 60.0, true, "years"),
    FeatureSpec::new("fund_volume", 0.0, 2.0e5, false, "EUR"),
    FeatureSpec::new("salary", 2.0e4, 2.0e5, false, "EUR"),
    FeatureSpec::new("salary_scale", 0.01, 0.05, false, "numeric"),
    FeatureSpec::new("contribution", 0.01, 0.1, false, "numeric"),
];

/// One policy in raw feature units.
///
/// Term life: `[current age, sum insured, duration, lapsed duration, interest rate]`.
/// DC plan: `[current age, fund volume, salary, salary scale, contribution rate]`.
///
/// Model points produced by grouping are also carried as `Contract`s and may hold
/// fractional values in integer-valued features; [`Contract::validate`] enforces the
/// full invariants of a real policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub line: ProductLine,
    pub x: [f64; N_FEATURES],
}

impl Contract {
    pub fn new(line: ProductLine, x: [f64; N_FEATURES]) -> Result<Self> {
        let c = Self { line, x };
        c.validate()?;
        Ok(c)
    }

    pub fn age(&self) -> f64 {
        self.x[0]
    }

    /// Term life only: current age minus lapsed duration.
    pub fn issue_age(&self) -> f64 {
        self.x[0] - self.x[3]
    }

    pub fn is_integral(&self) -> bool {
        self.line
            .features()
            .iter()
            .zip(&self.x)
            .all(|(spec, v)| !spec.integer_valued || v.fract() == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (spec, &v) in self.line.features().iter().zip(&self.x) {
            if !v.is_finite() {
                return Err(Error::InvalidContract(format!("{} is not finite", spec.name)));
            }
            spec.check(v)?;
            if spec.integer_valued && v.fract() != 0.0 {
                return Err(Error::InvalidContract(format!(
                    "{} = {v} must be an integer",
                    spec.name
                )));
            }
        }
        if self.line == ProductLine::TermLife {
            if self.x[3] > self.x[2] - 1.0 {
                return Err(Error::InvalidContract(format!(
                    "lapsed duration {} must be below duration {}",
                    self.x[3], self.x[2]
                )));
            }
            let issue = self.issue_age();
            if issue < TL_ISSUE_AGE.0 || issue > TL_ISSUE_AGE.1 {
                return Err(Error::InvalidContract(format!("issue age {issue} outside [25, 67]")));
            }
        }
        Ok(())
    }
}

/// Affine map of every feature onto [-1, 1].
pub fn scale_to_unit(c: &Contract) -> Result<[f64; N_FEATURES]> {
    let mut z = [0.0; N_FEATURES];
    for ((zi, spec), &x) in z.iter_mut().zip(c.line.features()).zip(&c.x) {
        spec.check(x)?;
        *zi = 2.0 * (x - spec.lower) / spec.width() - 1.0;
    }
    Ok(z)
}

/// Inverse of [`scale_to_unit`]; no rounding is applied.
pub fn unscale(line: ProductLine, z: &[f64; N_FEATURES]) -> Result<Contract> {
    let mut x = [0.0; N_FEATURES];
    for (i, (xi, spec)) in x.iter_mut().zip(line.features()).enumerate() {
        let zi = z[i];
        if !(-1.0..=1.0).contains(&zi) {
            return Err(Error::OutOfRange {
                feature: spec.name,
                value: zi,
                lower: -1.0,
                upper: 1.0,
            });
        }
        *xi = spec.lower + (zi + 1.0) * 0.5 * spec.width();
    }
    Ok(Contract { line, x })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioEntry {
    pub contract: Contract,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub line: ProductLine,
    pub entries: Vec<PortfolioEntry>,
}

impl Portfolio {
    pub fn new(line: ProductLine, entries: Vec<PortfolioEntry>) -> Result<Self> {
        let p = Self { line, entries };
        p.check_structure()?;
        Ok(p)
    }

    pub fn from_contracts(line: ProductLine, contracts: impl IntoIterator<Item = Contract>) -> Result<Self> {
        Self::new(
            line,
            contracts
                .into_iter()
                .map(|contract| PortfolioEntry { contract, count: 1 })
                .collect(),
        )
    }

    /// Total number of contracts N, i.e. the sum of counts.
    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contracts(&self) -> impl Iterator<Item = &Contract> {
        self.entries.iter().map(|e| &e.contract)
    }

    /// Line consistency and positive counts; contracts may be fractional model points.
    pub fn check_structure(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.count == 0 {
                return Err(Error::InvalidPortfolio(format!("entry {i} has zero count")));
            }
            if e.contract.line != self.line {
                return Err(Error::InvalidPortfolio(format!(
                    "entry {i} is {} in a {} portfolio",
                    e.contract.line, self.line
                )));
            }
        }
        Ok(())
    }

    /// Structure plus full contract invariants for every entry.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        for (i, e) in self.entries.iter().enumerate() {
            e.contract
                .validate()
                .map_err(|err| Error::InvalidPortfolio(format!("entry {i}: {err}")))?;
        }
        Ok(())
    }

    /// Scaled feature rows, one per entry.
    pub fn scaled_features(&self) -> Result<Vec<[f64; N_FEATURES]>> {
        self.contracts().map(scale_to_unit).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Csv {
            line: 0,
            msg: e.to_string(),
        };
        wtr.write_record(["line", "x1", "x2", "x3", "x4", "x5", "count"])
            .map_err(csv_err)?;
        for e in &self.entries {
            let mut rec = vec![self.line.tag().to_string()];
            rec.extend(e.contract.x.iter().map(|v| format!("{v}")));
            rec.push(e.count.to_string());
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::Csv {
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads the portfolio CSV format. Extra trailing columns (e.g. `weight`) are ignored.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Csv {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        let expected = ["line", "x1", "x2", "x3", "x4", "x5", "count"];
        if headers.len() < expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Csv {
                line: 1,
                msg: format!("expected header `{}`", expected.join(",")),
            });
        }
        let mut line_tag = None;
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Csv {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                msg: e.to_string(),
            })?;
            let lineno = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |msg: String| Error::Csv { line: lineno, msg };
            let line: ProductLine = rec[0].parse().map_err(|e: Error| bad(e.to_string()))?;
            if *line_tag.get_or_insert(line) != line {
                return Err(bad("mixed product lines".into()));
            }
            let mut x = [0.0f64; N_FEATURES];
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = rec[i + 1]
                    .parse()
                    .map_err(|_| bad(format!("x{} = `{}` is not a number", i + 1, &rec[i + 1])))?;
                if !xi.is_finite() {
                    return Err(bad(format!("x{} is not finite", i + 1)));
                }
            }
            let count: u64 = rec[6]
                .parse()
                .map_err(|_| bad(format!("count `{}` is not a non-negative integer", &rec[6])))?;
            if count == 0 {
                return Err(bad("count must be positive".into()));
            }
            entries.push(PortfolioEntry {
                contract: Contract { line, x },
                count,
            });
        }
        let line = line_tag.ok_or_else(|| Error::Csv {
            line: 2,
            msg: "portfolio file has no rows".into(),
        })?;
        Portfolio::new(line, entries)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Term life portfolio from Sobol points `skip..skip+n`.
///
/// Coordinates map to issue age, sum insured, duration, lapsed fraction and interest
/// rate. Lapsed duration is `round(u * (duration - 1))`, so no contract is matured.
pub fn synth_term_life(n: usize, skip: u64) -> Result<Portfolio> {
    if n == 0 {
        return Err(Error::Size("synth_term_life needs n >= 1".into()));
    }
    let issue_age = FeatureSpec::new("issue_age", TL_ISSUE_AGE.0, TL_ISSUE_AGE.1, true, "years");
    let spec = &TERM_LIFE_FEATURES;
    let mut gen = Sobol::new(N_FEATURES, skip)?;
    let mut u = [0.0; N_FEATURES];
    let contracts = (0..n).map(|_| {
        gen.next_into(&mut u);
        let issue = issue_age.at_unit(u[0]);
        let sum_insured = spec[1].at_unit(u[1]);
        let duration = spec[2].at_unit(u[2]);
        let lapsed = (u[3] * (duration - 1.0)).round();
        let rate = spec[4].at_unit(u[4]);
        Contract {
            line: ProductLine::TermLife,
            x: [issue + lapsed, sum_insured, duration, lapsed, rate],
        }
    });
    Portfolio::from_contracts(ProductLine::TermLife, contracts.collect::<Vec<_>>())
}

/// DC plan portfolio from Sobol points `skip..skip+n`, age rounded to whole years.
pub fn synth_dc(n: usize, skip: u64) -> Result<Portfolio> {
    if n == 0 {
        return Err(Error::Size("synth_dc needs n >= 1".into()));
    }
    let spec = &DC_FEATURES;
    let mut gen = Sobol::new(N_FEATURES, skip)?;
    let mut u = [0.0; N_FEATURES];
    let contracts: Vec<_> = (0..n)
        .map(|_| {
            gen.next_into(&mut u);
            let mut x = [0.0; N_FEATURES];
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = spec[i].at_unit(u[i]);
            }
            Contract {
                line: ProductLine::DcPlan,
                x,
            }
        })
        .collect();
    Portfolio::from_contracts(ProductLine::DcPlan, contracts)
}

pub fn synthesize(line: ProductLine, n: usize, skip: u64) -> Result<Portfolio> {
    match line {
        ProductLine::TermLife => synth_term_life(n, skip),
        ProductLine::DcPlan => synth_dc(n, skip),
    }
}
