//! Categorical return distributions with soft (entropy-regularized) targets.
//!
//! The target for `(r, s')` mixes the per-action next-state distributions
//! with weights `pi(a') ∝ exp(beta * E[Z(s', a')])`, shifts every atom to
//! `r + gamma * (z - KL(pi || uniform) / beta)`, and projects the result back
//! onto the fixed atom grid. As `beta -> inf` this is the usual greedy
//! categorical target.

use crate::error::{Error, Result};
use crate::ops::{self, PolicyDistribution, NORMALIZATION_TOL};

pub const DEFAULT_ATOMS: usize = 51;
pub const DEFAULT_V_MIN: f64 = -10.0;
pub const DEFAULT_V_MAX: f64 = 10.0;

/// Evenly spaced atoms over `[v_min, v_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    v_min: f64,
    v_max: f64,
    atoms: Vec<f64>,
}

impl Support {
    pub fn new(n_atoms: usize, v_min: f64, v_max: f64) -> Result<Self> {
        if n_atoms < 2 {
            return Err(Error::invalid(format!(
                "support needs at least 2 atoms, got {n_atoms}"
            )));
        }
        if !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::invalid(format!(
                "bad support range [{v_min}, {v_max}]"
            )));
        }
        let dz = (v_max - v_min) / (n_atoms - 1) as f64;
        let mut atoms: Vec<f64> = (0..n_atoms).map(|i| v_min + i as f64 * dz).collect();
        atoms[n_atoms - 1] = v_max;
        Ok(Support {
            v_min,
            v_max,
            atoms,
        })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.atoms.len() - 1) as f64
    }
}

impl Default for Support {
    fn default() -> Self {
        Support::new(DEFAULT_ATOMS, DEFAULT_V_MIN, DEFAULT_V_MAX).expect("default support is valid")
    }
}

/// Per-action categorical distributions over one shared support.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalReturnDistribution {
    support: Support,
    probs: Vec<Vec<f64>>,
}

impl CategoricalReturnDistribution {
    pub fn new(support: Support, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution over zero actions"));
        }
        for (a, p) in probs.iter().enumerate() {
            check_masses(p, support.len()).map_err(|e| match e {
                Error::InvalidParameter(m) => Error::invalid(format!("action {a}: {m}")),
                other => other,
            })?;
        }
        Ok(CategoricalReturnDistribution { support, probs })
    }

    /// Builds from per-action `(support, probs)` pairs, which must all use
    /// the same grid.
    pub fn from_actions(actions: Vec<(Support, Vec<f64>)>) -> Result<Self> {
        let mut iter = actions.into_iter();
        let (support, first) = iter
            .next()
            .ok_or_else(|| Error::invalid("distribution over zero actions"))?;
        let mut probs = vec![first];
        for (i, (s, p)) in iter.enumerate() {
            if s != support {
                return Err(Error::invalid(format!(
                    "action {} uses a different atom grid",
                    i + 1
                )));
            }
            probs.push(p);
        }
        Self::new(support, probs)
    }

    /// Each action's distribution is a unit mass at `values[a]`, projected
    /// onto the support (so its mean is `values[a]` when inside the range).
    pub fn point_masses(support: Support, values: &[f64]) -> Result<Self> {
        let probs = values
            .iter()
            .map(|&v| project_to_support(&[v], &[1.0], &support))
            .collect::<Result<Vec<_>>>()?;
        Self::new(support, probs)
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn probs(&self, action: usize) -> &[f64] {
        &self.probs[action]
    }

    pub fn action_count(&self) -> usize {
        self.probs.len()
    }

    /// `z^T p(a)` for each action.
    pub fn means(&self) -> Vec<f64> {
        self.probs
            .iter()
            .map(|p| dist_mean(self.support.atoms(), p))
            .collect()
    }
}

fn check_masses(masses: &[f64], expected_len: usize) -> Result<()> {
    if masses.len() != expected_len {
        return Err(Error::invalid(format!(
            "{} masses for {} atoms",
            masses.len(),
            expected_len
        )));
    }
    if masses.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::invalid("masses must be finite and non-negative"));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::invalid(format!("masses sum to {total}, not 1")));
    }
    Ok(())
}

pub fn dist_mean(atoms: &[f64], probs: &[f64]) -> f64 {
    atoms.iter().zip(probs).map(|(z, p)| z * p).sum()
}

/// Softmax over per-action means.
pub fn soft_policy_from_dist(
    dist: &CategoricalReturnDistribution,
    beta: f64,
) -> Result<PolicyDistribution> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    ops::softmax_policy(&dist.means(), beta)
}

/// Projects weighted sample values onto `support`: each value is clamped to
/// the support range and its mass split linearly between the two nearest
/// atoms.
pub fn project_to_support(values: &[f64], masses: &[f64], support: &Support) -> Result<Vec<f64>> {
    check_masses(masses, values.len())?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN value in projection"));
    }
    let n = support.len();
    let dz = support.delta();
    let mut out = vec![0.0; n];
    for (&v, &m) in values.iter().zip(masses) {
        let v = v.clamp(support.v_min(), support.v_max());
        let mut b = (v - support.v_min()) / dz;
        let nearest = b.round();
        // Values that land on an atom up to rounding put all their mass there.
        if (b - nearest).abs() < 1e-9 {
            b = nearest;
        }
        let lower = (b.floor() as usize).min(n - 1);
        let upper = (b.ceil() as usize).min(n - 1);
        if lower == upper {
            out[lower] += m;
        } else {
            let frac = b - lower as f64;
            out[lower] += m * (1.0 - frac);
            out[upper] += m * frac;
        }
    }
    Ok(out)
}

/// Soft categorical target for one transition; see the module docs.
pub fn distributional_soft_target(
    reward: f64,
    gamma: f64,
    dist: &CategoricalReturnDistribution,
    beta: f64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "discount must be in [0, 1], got {gamma}"
        )));
    }
    if !reward.is_finite() {
        return Err(Error::invalid("non-finite reward"));
    }
    let pi = soft_policy_from_dist(dist, beta)?;
    let shift = pi.kl_from_uniform() / beta;
    let atoms = dist.support().atoms();

    let mut mixture = vec![0.0; atoms.len()];
    for (a, &w) in pi.iter().enumerate() {
        for (m, p) in mixture.iter_mut().zip(dist.probs(a)) {
            *m += w * p;
        }
    }
    let total: f64 = mixture.iter().sum();
    for m in &mut mixture {
        *m /= total;
    }

    let values: Vec<f64> = atoms.iter().map(|z| reward + gamma * (z - shift)).collect();
    project_to_support(&values, &mixture, dist.support())
}
