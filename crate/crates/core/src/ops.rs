//! Soft operators shared by every agent: mellowmax, softmax policies,
//! policy entropy and soft backup targets.
//!
//! All exponentials are evaluated after subtracting the maximum action value,
//! so the operators stay finite for any inverse temperature up to `1e9` and
//! for action values in the thousands.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Lower clamp applied to every inverse temperature fed into [`mellowmax`].
///
/// Count-based schedules give `beta = 0` for states never updated. As
/// `beta -> 0` the mean-form mellowmax tends to the arithmetic mean of the
/// action values, which this clamp approximates.
pub const BETA_FLOOR: f64 = 1e-8;

/// Tolerance used when validating that a probability vector sums to one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Action values `Q(s, ·)` for a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValues(Vec<f64>);

impl ActionValues {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_values(&values)?;
        Ok(ActionValues(values))
    }

    pub fn action_count(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ActionValues {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ActionValues {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ActionValues::new(values)
    }
}

/// A normalized distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution(Vec<f64>);

impl PolicyDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("policy over zero actions"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("policy probability outside [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!("policy sums to {total}, not 1")));
        }
        Ok(PolicyDistribution(probs))
    }

    pub fn uniform(action_count: usize) -> Result<Self> {
        if action_count == 0 {
            return Err(Error::invalid("policy over zero actions"));
        }
        Ok(PolicyDistribution(vec![
            1.0 / action_count as f64;
            action_count
        ]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn action_count(&self) -> usize {
        self.0.len()
    }

    pub fn entropy(&self) -> f64 {
        policy_entropy(self)
    }

    /// `KL(self || uniform) = log|A| - H(self)`.
    ///
    /// Evaluated as `sum p log(p |A|)` so that small divergences keep their
    /// precision, and exactly zero when every entry is equal.
    pub fn kl_from_uniform(&self) -> f64 {
        let first = self.0[0];
        if self.0.iter().all(|&p| p == first) {
            return 0.0;
        }
        let n = self.0.len() as f64;
        let kl: f64 = self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * (p * n).ln())
            .sum();
        kl.max(0.0)
    }
}

impl Deref for PolicyDistribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Which normalization the log-sum-exp uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OperatorMode {
    /// `(1/beta) log((1/|A|) sum exp(beta q))`. The form used by the SQL
    /// update rule; bounded by `[max - log|A|/beta, max]`.
    #[default]
    MellowmaxMean,
    /// `(1/beta) log sum exp(beta q)`, the log-partition function.
    LogPartition,
}

fn check_values(q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return Err(Error::invalid("empty action values"));
    }
    if let Some(bad) = q.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite action value {bad}")));
    }
    Ok(())
}

fn max_of(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Soft maximum of `q` at inverse temperature `beta`.
///
/// `beta` below [`BETA_FLOOR`] (but positive) is raised to the floor.
pub fn mellowmax(q: &[f64], beta: f64, mode: OperatorMode) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "inverse temperature must be positive and finite, got {beta}"
        )));
    }
    check_values(q)?;
    Ok(mellowmax_unchecked(q, beta.max(BETA_FLOOR), mode))
}

pub(crate) fn mellowmax_unchecked(q: &[f64], beta: f64, mode: OperatorMode) -> f64 {
    let m = max_of(q);
    let sum: f64 = q.iter().map(|&v| (beta * (v - m)).exp()).sum();
    // sum >= 1 because the max term contributes exp(0).
    let log_sum = match mode {
        OperatorMode::LogPartition => sum.ln(),
        OperatorMode::MellowmaxMean => (sum / q.len() as f64).ln(),
    };
    m + log_sum / beta
}

/// `pi(a) ∝ exp(beta q(a))`. `beta = 0` gives the uniform policy.
pub fn softmax_policy(q: &[f64], beta: f64) -> Result<PolicyDistribution> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "inverse temperature must be non-negative and finite, got {beta}"
        )));
    }
    check_values(q)?;
    Ok(PolicyDistribution(softmax_unchecked(q, beta)))
}

pub(crate) fn softmax_unchecked(q: &[f64], beta: f64) -> Vec<f64> {
    let m = max_of(q);
    let mut w: Vec<f64> = q.iter().map(|&v| (beta * (v - m)).exp()).collect();
    let total: f64 = w.iter().sum();
    for p in &mut w {
        *p /= total;
    }
    w
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn policy_entropy(pi: &PolicyDistribution) -> f64 {
    let h: f64 =
        pi.0.iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
    h.max(0.0)
}

/// `r + gamma * mellowmax(q_next, beta, mode)`.
///
/// Terminal transitions are the caller's business: pass `gamma = 0` to cut
/// the bootstrap.
pub fn soft_backup_target(
    reward: f64,
    gamma: f64,
    q_next: &[f64],
    beta: f64,
    mode: OperatorMode,
) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "discount must be in [0, 1), got {gamma}"
        )));
    }
    let soft_value = mellowmax(q_next, beta, mode)?;
    Ok(reward + gamma * soft_value)
}

/// n-step truncated soft return
/// `sum_{k<n} gamma^k r_k + (1/beta) sum_{k=1}^{n-1} gamma^k H_k`,
/// where `entropies[k-1]` is the policy entropy at step `t + k`.
pub fn nstep_soft_return(rewards: &[f64], entropies: &[f64], gamma: f64, beta: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::invalid("n-step return needs at least one reward"));
    }
    if entropies.len() + 1 != rewards.len() {
        return Err(Error::invalid(format!(
            "expected {} entropies for {} rewards, got {}",
            rewards.len() - 1,
            rewards.len(),
            entropies.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    let mut discount = 1.0;
    let mut reward_sum = 0.0;
    let mut entropy_sum = 0.0;
    for (k, r) in rewards.iter().enumerate() {
        reward_sum += discount * r;
        if k > 0 {
            entropy_sum += discount * entropies[k - 1];
        }
        discount *= gamma;
    }
    Ok(reward_sum + entropy_sum / beta)
}
