//! Exact valuation: Makeham survival model, term life reserves under the premium
//! equivalence principle, expected DC fund projection, zero-padded policy value paths,
//! portfolio aggregation and rounding bounds for fractional model points.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::portfolio::{Contract, Portfolio, ProductLine, N_FEATURES};
use crate::stats::pairwise_sum_paths;

/// Path length for term life: t = 0..=40 (maximal duration).
pub const TL_PATH_LEN: usize = 41;
/// Path length for DC plans: t = 0..=42 (retirement age 67 minus minimal age 25).
pub const DC_PATH_LEN: usize = 43;
pub const RETIREMENT_AGE: u32 = 67;

pub fn path_len(line: ProductLine) -> usize {
    match line {
        ProductLine::TermLife => TL_PATH_LEN,
        ProductLine::DcPlan => DC_PATH_LEN,
    }
}

/// Makeham law `t_p_x = exp(-A t - B / ln(c) * c^x (c^t - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MortalityModel {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub c: f64,
}

impl Default for MortalityModel {
    fn default() -> Self {
        Self {
            a: 0.00022,
            b: 2.7e-7,
            c: 1.124,
        }
    }
}

impl MortalityModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.c > 1.0) {
            return Err(Error::Config(format!(
                "mortality needs A >= 0, B >= 0, c > 1 (got {}, {}, {})",
                self.a, self.b, self.c
            )));
        }
        Ok(())
    }

    fn log_survival(&self, x: f64, t: f64) -> f64 {
        let ln_c = self.c.ln();
        -self.a * t - self.b / ln_c * self.c.powf(x) * (t * ln_c).exp_m1()
    }

    pub fn survival_prob(&self, x: f64, t: f64) -> f64 {
        self.log_survival(x, t).exp()
    }

    /// One-year death probability `q_x`.
    pub fn death_prob(&self, x: f64) -> f64 {
        -self.log_survival(x, 1.0).exp_m1()
    }
}

pub fn survival_prob(m: &MortalityModel, x: f64, t: f64) -> f64 {
    m.survival_prob(x, t)
}

/// Early retirement rates for ages `first_age..first_age + rates.len()`; zero before,
/// certain from [`RETIREMENT_AGE`] on.
#[derive(Debug, Clone, PartialEq)]
pub struct RetirementTable {
    pub first_age: u32,
    pub rates: Vec<f64>,
}

impl Default for RetirementTable {
    fn default() -> Self {
        Self {
            first_age: 60,
            rates: vec![0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
        }
    }
}

impl RetirementTable {
    pub fn rate(&self, age: u32) -> f64 {
        if age >= RETIREMENT_AGE {
            1.0
        } else if age < self.first_age {
            0.0
        } else {
            self.rates.get((age - self.first_age) as usize).copied().unwrap_or(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_age as usize + self.rates.len() > RETIREMENT_AGE as usize {
            return Err(Error::Config("retirement rates extend past age 67".into()));
        }
        if self.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("retirement rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValuationAssumptions {
    pub mortality: MortalityModel,
    pub retirement: RetirementTable,
    pub dc_fund_rate: f64,
}

impl Default for ValuationAssumptions {
    fn default() -> Self {
        Self {
            mortality: MortalityModel::default(),
            retirement: RetirementTable::default(),
            dc_fund_rate: 0.03,
        }
    }
}

/// JSON document `{A, B, c, rr: [...], i}`; `rr` lists rates from age 60.
#[derive(Serialize, Deserialize)]
struct AssumptionsDoc {
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    c: f64,
    rr: Vec<f64>,
    i: f64,
}

impl ValuationAssumptions {
    pub fn validate(&self) -> Result<()> {
        self.mortality.validate()?;
        self.retirement.validate()?;
        if self.dc_fund_rate.is_nan() || self.dc_fund_rate <= -1.0 {
            return Err(Error::Config("fund rate must exceed -1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = AssumptionsDoc {
            a: self.mortality.a,
            b: self.mortality.b,
            c: self.mortality.c,
            rr: self.retirement.rates.clone(),
            i: self.dc_fund_rate,
        };
        serde_json::to_string_pretty(&doc).expect("assumptions serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: AssumptionsDoc = serde_json::from_str(s)?;
        let a = Self {
            mortality: MortalityModel {
                a: doc.a,
                b: doc.b,
                c: doc.c,
            },
            retirement: RetirementTable {
                first_age: 60,
                rates: doc.rr,
            },
            dc_fund_rate: doc.i,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Zero-padded policy values `Y_0..Y_{T-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValuePath(pub Vec<f64>);

impl PolicyValuePath {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<path csv>", e);
        writeln!(w, "t,value").map_err(io)?;
        for (t, v) in self.0.iter().enumerate() {
            writeln!(w, "{t},{v}").map_err(io)?;
        }
        Ok(())
    }
}

fn whole(v: f64, what: &str) -> Result<u32> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(Error::InvalidContract(format!(
            "{what} = {v} must be a non-negative integer for exact valuation"
        )));
    }
    Ok(v as u32)
}

struct TermLifeTerms {
    issue_age: f64,
    sum_insured: f64,
    duration: u32,
    lapsed: u32,
    rate: f64,
}

fn term_life_terms(c: &Contract) -> Result<TermLifeTerms> {
    if c.line != ProductLine::TermLife {
        return Err(Error::InvalidContract("expected a term life contract".into()));
    }
    let duration = whole(c.x[2], "duration")?;
    let lapsed = whole(c.x[3], "lapsed duration")?;
    if duration == 0 || lapsed >= duration || duration as usize >= TL_PATH_LEN {
        return Err(Error::InvalidContract(format!(
            "need 0 <= lapsed ({lapsed}) < duration ({duration}) <= {}",
            TL_PATH_LEN - 1
        )));
    }
    if c.x[4] <= -1.0 {
        return Err(Error::InvalidContract("interest rate must exceed -1".into()));
    }
    Ok(TermLifeTerms {
        issue_age: c.issue_age(),
        sum_insured: c.x[1],
        duration,
        lapsed,
        rate: c.x[4],
    })
}

/// Level annual premium (paid in advance) from the equivalence principle.
pub fn tl_premium(c: &Contract, m: &MortalityModel) -> Result<f64> {
    let terms = term_life_terms(c)?;
    Ok(premium(&terms, m))
}

fn premium(terms: &TermLifeTerms, m: &MortalityModel) -> f64 {
    let v = 1.0 / (1.0 + terms.rate);
    let x0 = terms.issue_age;
    let (mut benefits, mut annuity) = (0.0, 0.0);
    let mut disc = 1.0;
    for t in 0..terms.duration {
        let tp = m.survival_prob(x0, t as f64);
        annuity += disc * tp;
        disc *= v;
        benefits += disc * tp * m.death_prob(x0 + t as f64);
    }
    terms.sum_insured * benefits / annuity
}

/// Reserves `_tV` for `t = 0..=duration` from issue, `_0V = 0`, via the forward
/// recursion `(_tV + P)(1 + i) = q S + p _{t+1}V`. The last entry is the terminal
/// reserve, zero up to rounding.
pub fn tl_reserves(c: &Contract, m: &MortalityModel) -> Result<Vec<f64>> {
    let terms = term_life_terms(c)?;
    Ok(reserves(&terms, m))
}

fn reserves(terms: &TermLifeTerms, m: &MortalityModel) -> Vec<f64> {
    let p = premium(terms, m);
    let mut v = Vec::with_capacity(terms.duration as usize + 1);
    v.push(0.0);
    let mut reserve = 0.0;
    for t in 0..terms.duration {
        let age = terms.issue_age + t as f64;
        let q = m.death_prob(age);
        reserve = ((reserve + p) * (1.0 + terms.rate) - q * terms.sum_insured) / (1.0 - q);
        v.push(reserve);
    }
    v
}

/// `Y_t = _{t + lapsed}V` for `t <= duration - lapsed`, zero afterwards. The value at
/// maturity is set to exactly zero, which the equivalence premium implies.
pub fn tl_policy_values(c: &Contract, a: &ValuationAssumptions) -> Result<PolicyValuePath> {
    let terms = term_life_terms(c)?;
    let v = reserves(&terms, &a.mortality);
    let mut y = vec![0.0; TL_PATH_LEN];
    let remaining = (terms.duration - terms.lapsed) as usize;
    for (t, yt) in y.iter_mut().enumerate().take(remaining) {
        *yt = v[t + terms.lapsed as usize];
    }
    Ok(PolicyValuePath(y))
}

/// Expected fund volume `_tV = [_{t-1}V + k S (1+g)^t] (1+i)(1-rr)p` at attained age
/// `age + t - 1`, from `_0V` = current fund until retirement at 67.
pub fn dc_policy_values(c: &Contract, a: &ValuationAssumptions) -> Result<PolicyValuePath> {
    if c.line != ProductLine::DcPlan {
        return Err(Error::InvalidContract("expected a DC plan".into()));
    }
    let age = whole(c.x[0], "age")?;
    if age > RETIREMENT_AGE || (RETIREMENT_AGE - age) as usize >= DC_PATH_LEN {
        return Err(Error::InvalidContract(format!("age {age} outside 25..=67")));
    }
    let [_, fund, salary, scale, contribution] = c.x;
    let horizon = (RETIREMENT_AGE - age) as usize;
    let growth = 1.0 + a.dc_fund_rate;
    let mut y = vec![0.0; DC_PATH_LEN];
    y[0] = fund;
    let mut v = fund;
    let mut salary_t = salary;
    for (t, yt) in y.iter_mut().enumerate().take(horizon + 1).skip(1) {
        let attained = age + t as u32 - 1;
        salary_t *= 1.0 + scale;
        let p = a.mortality.survival_prob(attained as f64, 1.0);
        v = (v + contribution * salary_t) * growth * (1.0 - a.retirement.rate(attained)) * p;
        *yt = v;
    }
    Ok(PolicyValuePath(y))
}

pub fn policy_values(c: &Contract, a: &ValuationAssumptions) -> Result<PolicyValuePath> {
    match c.line {
        ProductLine::TermLife => tl_policy_values(c, a),
        ProductLine::DcPlan => dc_policy_values(c, a),
    }
}

fn contract_key(c: &Contract) -> [u64; N_FEATURES] {
    c.x.map(f64::to_bits)
}

/// Per-entry paths (unit count), valuing each distinct contract once.
pub fn value_contracts(p: &Portfolio, a: &ValuationAssumptions) -> Result<Vec<PolicyValuePath>> {
    let mut index: HashMap<[u64; N_FEATURES], usize> = HashMap::new();
    let mut unique = Vec::new();
    let slots: Vec<usize> = p
        .contracts()
        .map(|c| {
            *index.entry(contract_key(c)).or_insert_with(|| {
                unique.push(*c);
                unique.len() - 1
            })
        })
        .collect();
    let values: Vec<PolicyValuePath> = unique.par_iter().map(|c| policy_values(c, a)).collect::<Result<_>>()?;
    Ok(slots.into_iter().map(|s| values[s].clone()).collect())
}

/// `R(P) = sum_i s_i R(x_i)`, reduced pairwise in entry order.
pub fn value_portfolio(p: &Portfolio, a: &ValuationAssumptions) -> Result<PolicyValuePath> {
    if p.is_empty() {
        return Err(Error::Size("cannot value an empty portfolio".into()));
    }
    let paths = value_contracts(p, a)?;
    let weighted: Vec<Vec<f64>> = paths
        .into_iter()
        .zip(&p.entries)
        .map(|(path, e)| path.scaled(e.count as f64).0)
        .collect();
    Ok(PolicyValuePath(pairwise_sum_paths(&weighted)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBounds {
    pub low: PolicyValuePath,
    pub high: PolicyValuePath,
    pub mid: PolicyValuePath,
    /// Set when rounding had to be clamped to keep the contract valid.
    pub clamped: bool,
}

const INTEGER_SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    if (v - v.round()).abs() < INTEGER_SNAP {
        v.round()
    } else {
        v
    }
}

/// Exact valuation brackets for a fractional model point.
///
/// Term life: low floors the duration and ceils the lapsed duration, high does the
/// reverse; current age, sum insured and rate stay fractional. DC: low ceils the
/// current age, high floors it. `mid` is the componentwise average.
pub fn bounds_for_model_point(mp: &Contract, a: &ValuationAssumptions) -> Result<ValueBounds> {
    let specs = mp.line.features();
    let mut clamped = false;
    let mut clamp = |v: f64, lo: f64, hi: f64| {
        if v < lo {
            clamped = true;
            lo
        } else if v > hi {
            clamped = true;
            hi
        } else {
            v
        }
    };
    let (low_c, high_c) = match mp.line {
        ProductLine::TermLife => {
            let d = snap(mp.x[2]);
            let l = snap(mp.x[3]);
            let mut round = |dur: f64, lapsed: f64| {
                let dur = clamp(dur, specs[2].lower, specs[2].upper);
                let lapsed = clamp(lapsed, specs[3].lower, dur - 1.0);
                let mut x = mp.x;
                x[2] = dur;
                x[3] = lapsed;
                Contract { line: mp.line, x }
            };
            (round(d.floor(), l.ceil()), round(d.ceil(), l.floor()))
        }
        ProductLine::DcPlan => {
            let age = snap(mp.x[0]);
            let mut round = |age: f64| {
                let mut x = mp.x;
                x[0] = clamp(age, specs[0].lower, specs[0].upper);
                Contract { line: mp.line, x }
            };
            (round(age.ceil()), round(age.floor()))
        }
    };
    let low = policy_values(&low_c, a)?;
    let high = policy_values(&high_c, a)?;
    let mid = PolicyValuePath(low.0.iter().zip(&high.0).map(|(l, h)| 0.5 * (l + h)).collect());
    Ok(ValueBounds {
        low,
        high,
        mid,
        clamped,
    })
}
