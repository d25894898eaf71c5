//! Update counts and the schedules that turn them into inverse temperatures.
//!
//! Two counters are provided:
//!
//! * [`ExactCounter`] tracks how many times each state key was recorded. It is
//!   used by the tabular agents.
//! * [`FactoredKtModel`] is a sequential density model over factored discrete
//!   observations: one Krichevsky–Trofimov estimator per factor, multiplied
//!   together. Its pseudo-count `rho (1 - rho') / (rho' - rho)` plays the role
//!   of a visit count in settings where exact counts are not meaningful.
//!
//! Both serialize to a flat line-oriented text format, described on
//! [`ExactCounter::to_text`] and [`FactoredKtModel::to_text`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::env::{Observation, StateKey};
use crate::error::{Error, Result};
use crate::ops::BETA_FLOOR;

/// Something that can report how often a state has been updated and record
/// one more update.
pub trait VisitCounter {
    fn count(&self, obs: &Observation) -> Result<f64>;
    fn record(&mut self, obs: &Observation) -> Result<()>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactCounter {
    counts: HashMap<StateKey, u64>,
}

impl ExactCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: StateKey) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn record_key(&mut self, key: StateKey) {
        *self.counts.entry(key).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Sorted `(key, count)` pairs.
    pub fn entries(&self) -> Vec<(StateKey, u64)> {
        let sorted: BTreeMap<_, _> = self.counts.iter().map(|(k, v)| (*k, *v)).collect();
        sorted.into_iter().collect()
    }

    /// Serializes as
    ///
    /// ```text
    /// exact-counter v1
    /// <state key> <count>
    /// ...
    /// ```
    ///
    /// with one line per recorded key in ascending key order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("exact-counter v1\n");
        for (key, count) in self.entries() {
            writeln!(out, "{} {}", key.0, count).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        expect_header(lines.next(), "exact-counter v1")?;
        let mut counts = HashMap::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [key, count] = fields[..] else {
                return Err(Error::Parse(format!(
                    "line {}: expected `<key> <count>`",
                    n + 2
                )));
            };
            let key = parse_num::<u64>(key, n + 2)?;
            let count = parse_num::<u64>(count, n + 2)?;
            if counts.insert(StateKey(key), count).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key {key}", n + 2)));
            }
        }
        Ok(ExactCounter { counts })
    }
}

impl VisitCounter for ExactCounter {
    fn count(&self, obs: &Observation) -> Result<f64> {
        Ok(self.get(obs.key()) as f64)
    }

    fn record(&mut self, obs: &Observation) -> Result<()> {
        self.record_key(obs.key());
        Ok(())
    }
}

/// Krichevsky–Trofimov estimator for one categorical factor.
#[derive(Debug, Clone, PartialEq)]
pub struct KtFactor {
    counts: Vec<u64>,
    total: u64,
}

impl KtFactor {
    pub fn new(alphabet: usize) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::invalid(format!(
                "KT factor alphabet must be >= 2, got {alphabet}"
            )));
        }
        Ok(KtFactor {
            counts: vec![0; alphabet],
            total: 0,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn half_alphabet(&self) -> f64 {
        self.counts.len() as f64 / 2.0
    }

    /// `(c_x + 1/2) / (n + K/2)`
    pub fn prob(&self, symbol: usize) -> f64 {
        (self.counts[symbol] as f64 + 0.5) / (self.total as f64 + self.half_alphabet())
    }

    /// Probability of `symbol` after one more observation of it.
    pub fn recoding_prob(&self, symbol: usize) -> f64 {
        (self.counts[symbol] as f64 + 1.5) / (self.total as f64 + 1.0 + self.half_alphabet())
    }

    fn update(&mut self, symbol: usize) {
        self.counts[symbol] += 1;
        self.total += 1;
    }
}

/// Product of independent KT estimators, one per observation factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredKtModel {
    factors: Vec<KtFactor>,
}

impl FactoredKtModel {
    pub fn new(alphabets: &[usize]) -> Result<Self> {
        if alphabets.is_empty() {
            return Err(Error::invalid("density model needs at least one factor"));
        }
        let factors = alphabets
            .iter()
            .map(|&k| KtFactor::new(k))
            .collect::<Result<_>>()?;
        Ok(FactoredKtModel { factors })
    }

    pub fn factors(&self) -> &[KtFactor] {
        &self.factors
    }

    fn check(&self, symbols: &[usize]) -> Result<()> {
        if symbols.len() != self.factors.len() {
            return Err(Error::InvalidObservation(format!(
                "expected {} factors, got {}",
                self.factors.len(),
                symbols.len()
            )));
        }
        for (i, (&x, f)) in symbols.iter().zip(&self.factors).enumerate() {
            if x >= f.alphabet() {
                return Err(Error::InvalidObservation(format!(
                    "factor {i}: symbol {x} outside alphabet of size {}",
                    f.alphabet()
                )));
            }
        }
        Ok(())
    }

    /// `rho(s)`: joint probability under the current model.
    pub fn model_prob(&self, symbols: &[usize]) -> Result<f64> {
        self.check(symbols)?;
        Ok(symbols
            .iter()
            .zip(&self.factors)
            .map(|(&x, f)| f.prob(x))
            .product())
    }

    /// `rho'(s)`: joint probability after a hypothetical update on `s`.
    /// Does not modify the model.
    pub fn recoding_prob(&self, symbols: &[usize]) -> Result<f64> {
        self.check(symbols)?;
        Ok(symbols
            .iter()
            .zip(&self.factors)
            .map(|(&x, f)| f.recoding_prob(x))
            .product())
    }

    pub fn update(&mut self, symbols: &[usize]) -> Result<()> {
        self.check(symbols)?;
        for (&x, f) in symbols.iter().zip(&mut self.factors) {
            f.update(x);
        }
        Ok(())
    }

    /// Pseudo-count of `s`, equal to `pseudo_count(model_prob(s),
    /// recoding_prob(s))` but evaluated without subtracting nearly equal
    /// probabilities.
    ///
    /// With `a_f = c_f + 1/2`, `b_f = n_f + K_f/2`, the ratio `rho'/rho` is
    /// `prod_f (1 + d_f)` with `d_f = (b_f - a_f) / (a_f (b_f + 1))`, and
    /// `1 - rho' = -expm1(sum_f ln(1 - (b_f - a_f)/(b_f + 1)))`. Then
    /// `n = (1 - rho') / (rho'/rho - 1)`.
    pub fn pseudo_count(&self, symbols: &[usize]) -> Result<f64> {
        self.check(symbols)?;
        let mut log_ratio = 0.0;
        let mut log_recoding = 0.0;
        for (&x, f) in symbols.iter().zip(&self.factors) {
            let a = f.counts[x] as f64 + 0.5;
            let b = f.total as f64 + f.half_alphabet();
            let gap = b - a; // exact: both are half-integers
            log_ratio += (gap / (a * (b + 1.0))).ln_1p();
            log_recoding += (-gap / (b + 1.0)).ln_1p();
        }
        let ratio_minus_one = log_ratio.exp_m1();
        let one_minus_recoding = -log_recoding.exp_m1();
        if !(ratio_minus_one > 0.0) {
            let rho = self.model_prob(symbols)?;
            let rho_prime = self.recoding_prob(symbols)?;
            return Err(Error::NonLearningModel { rho, rho_prime });
        }
        Ok(one_minus_recoding / ratio_minus_one)
    }

    /// Serializes as
    ///
    /// ```text
    /// kt-model v1
    /// factor <index> <alphabet size> <count_0> <count_1> ... <count_{K-1}>
    /// ...
    /// ```
    ///
    /// one line per factor in index order. Totals are implied by the counts.
    pub fn to_text(&self) -> String {
        let mut out = String::from("kt-model v1\n");
        for (i, f) in self.factors.iter().enumerate() {
            write!(out, "factor {} {}", i, f.alphabet()).unwrap();
            for c in &f.counts {
                write!(out, " {c}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        expect_header(lines.next(), "kt-model v1")?;
        let mut factors = Vec::new();
        for (n, line) in lines.enumerate() {
            let line_no = n + 2;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 || fields[0] != "factor" {
                return Err(Error::Parse(format!(
                    "line {line_no}: expected `factor <index> <alphabet> <counts...>`"
                )));
            }
            let index = parse_num::<usize>(fields[1], line_no)?;
            if index != factors.len() {
                return Err(Error::Parse(format!(
                    "line {line_no}: factor index {index} out of order"
                )));
            }
            let alphabet = parse_num::<usize>(fields[2], line_no)?;
            let counts = fields[3..]
                .iter()
                .map(|c| parse_num::<u64>(c, line_no))
                .collect::<Result<Vec<_>>>()?;
            if counts.len() != alphabet {
                return Err(Error::Parse(format!(
                    "line {line_no}: {} counts for alphabet of size {alphabet}",
                    counts.len()
                )));
            }
            let mut factor = KtFactor::new(alphabet)?;
            factor.total = counts.iter().sum();
            factor.counts = counts;
            factors.push(factor);
        }
        if factors.is_empty() {
            return Err(Error::Parse("model has no factors".into()));
        }
        Ok(FactoredKtModel { factors })
    }
}

impl VisitCounter for FactoredKtModel {
    fn count(&self, obs: &Observation) -> Result<f64> {
        self.pseudo_count(obs.factors())
    }

    fn record(&mut self, obs: &Observation) -> Result<()> {
        self.update(obs.factors())
    }
}

/// `rho (1 - rho') / (rho' - rho)`.
///
/// Requires `0 < rho < rho' < 1`; `rho' <= rho` means the density model did
/// not learn from the update and is reported as [`Error::NonLearningModel`].
pub fn pseudo_count(rho: f64, rho_prime: f64) -> Result<f64> {
    let in_unit = |p: f64| p > 0.0 && p < 1.0;
    if !in_unit(rho) || !in_unit(rho_prime) {
        return Err(Error::invalid(format!(
            "probabilities must lie in (0, 1): rho = {rho}, rho' = {rho_prime}"
        )));
    }
    if rho_prime <= rho {
        return Err(Error::NonLearningModel { rho, rho_prime });
    }
    Ok(rho * (1.0 - rho_prime) / (rho_prime - rho))
}

/// Maps counts or iterations to an inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureSchedule {
    /// Fixed `beta`.
    Constant { beta: f64 },
    /// `kappa * iteration`, ignoring counts.
    Linear { kappa: f64 },
    /// `kappa * count(s)`, ignoring the iteration.
    CountBased { kappa: f64 },
}

impl TemperatureSchedule {
    pub fn constant(beta: f64) -> Result<Self> {
        positive("beta", beta)?;
        Ok(TemperatureSchedule::Constant { beta })
    }

    pub fn linear(kappa: f64) -> Result<Self> {
        positive("kappa", kappa)?;
        Ok(TemperatureSchedule::Linear { kappa })
    }

    pub fn count_based(kappa: f64) -> Result<Self> {
        positive("kappa", kappa)?;
        Ok(TemperatureSchedule::CountBased { kappa })
    }

    /// Inverse temperature for a state with `count` updates at global
    /// `iteration`, never below [`BETA_FLOOR`].
    pub fn beta_for(&self, count: f64, iteration: u64) -> f64 {
        let beta = match *self {
            TemperatureSchedule::Constant { beta } => beta,
            TemperatureSchedule::Linear { kappa } => kappa * iteration as f64,
            TemperatureSchedule::CountBased { kappa } => kappa * count.max(0.0),
        };
        beta.max(BETA_FLOOR)
    }

    pub fn is_count_based(&self) -> bool {
        matches!(self, TemperatureSchedule::CountBased { .. })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn expect_header(line: Option<&str>, header: &str) -> Result<()> {
    match line {
        Some(l) if l.trim() == header => Ok(()),
        other => Err(Error::Parse(format!(
            "expected header `{header}`, got {other:?}"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: `{s}` is not a valid number")))
}
