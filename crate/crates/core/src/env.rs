//! Environments: the noisy chain walk and a small open grid.
//!
//! Observations carry a canonical [`StateKey`] (for tables and exact
//! counters) alongside their discrete factors (for the factored density
//! model).
//!
//! * Chain walk: one factor, the position `s` in `0..n_states`; key `s`.
//! * Grid: two factors `(x, y)`; key `y * width + x`.

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    key: StateKey,
    factors: Vec<usize>,
}

impl Observation {
    pub fn new(key: StateKey, factors: Vec<usize>) -> Self {
        Observation { key, factors }
    }

    pub fn key(&self) -> StateKey {
        self.key
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_state: Observation,
    pub reward: f64,
    /// The episode is over, for whatever reason.
    pub done: bool,
    /// The episode ended in a terminal state. `done && !terminal` is a
    /// time-limit truncation, after which the next state still has value.
    pub terminal: bool,
}

pub trait Environment {
    fn action_count(&self) -> usize;

    /// Alphabet size of each observation factor.
    fn factor_sizes(&self) -> Vec<usize>;

    fn reset(&mut self) -> Observation;

    fn step(&mut self, action: usize) -> Result<EnvStep>;
}

/// Parameters of the noisy chain walk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub n_states: usize,
    pub horizon: usize,
    /// Mean reward for action 1 in the last state.
    pub goal_reward: f64,
    /// Mean reward for every other state-action pair.
    pub step_reward: f64,
    /// Standard deviation of the additive Gaussian reward noise.
    pub noise_std: f64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        ChainSpec {
            n_states: 5,
            horizon: 5,
            goal_reward: 1.0,
            step_reward: -0.1,
            noise_std: 1.0,
        }
    }
}

impl ChainSpec {
    pub fn noiseless() -> Self {
        ChainSpec {
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::invalid("chain needs at least two states"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("chain horizon must be positive"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid("noise std must be non-negative and finite"));
        }
        if !self.goal_reward.is_finite() || !self.step_reward.is_finite() {
            return Err(Error::invalid("chain rewards must be finite"));
        }
        Ok(())
    }

    pub fn last_state(&self) -> usize {
        self.n_states - 1
    }

    /// Action 1 moves right, action 0 moves left; both clamp at the ends.
    pub fn transition(&self, state: usize, action: usize) -> usize {
        if action == 1 {
            (state + 1).min(self.last_state())
        } else {
            state.saturating_sub(1)
        }
    }

    pub fn mean_reward(&self, state: usize, action: usize) -> f64 {
        if state == self.last_state() && action == 1 {
            self.goal_reward
        } else {
            self.step_reward
        }
    }
}

pub struct ChainWalkEnv {
    spec: ChainSpec,
    state: usize,
    steps: usize,
    rng: ChaCha8Rng,
}

impl ChainWalkEnv {
    pub fn new(spec: ChainSpec, seed: u64) -> Result<Self> {
        Self::with_rng(spec, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(spec: ChainSpec, rng: ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(ChainWalkEnv {
            spec,
            state: 0,
            steps: 0,
            rng,
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn observe(&self) -> Observation {
        Observation::new(StateKey(self.state as u64), vec![self.state])
    }
}

impl Environment for ChainWalkEnv {
    fn action_count(&self) -> usize {
        2
    }

    fn factor_sizes(&self) -> Vec<usize> {
        vec![self.spec.n_states]
    }

    fn reset(&mut self) -> Observation {
        self.state = 0;
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if self.steps >= self.spec.horizon {
            return Err(Error::EpisodeFinished);
        }
        if action >= 2 {
            return Err(Error::invalid(format!(
                "chain action {action} out of range"
            )));
        }
        let noise: f64 = StandardNormal.sample(&mut self.rng);
        let reward = self.spec.mean_reward(self.state, action) + self.spec.noise_std * noise;
        self.state = self.spec.transition(self.state, action);
        self.steps += 1;
        Ok(EnvStep {
            next_state: self.observe(),
            reward,
            done: self.steps == self.spec.horizon,
            terminal: false,
        })
    }
}

/// Best expected undiscounted return from the start state, by enumerating all
/// `2^horizon` open-loop action sequences in exact rational arithmetic.
///
/// Transitions are deterministic, so open-loop enumeration is exact. Rewards
/// are converted from their shortest decimal representation, so `-0.1` is
/// treated as exactly `-1/10`.
pub fn optimal_return_oracle(spec: &ChainSpec) -> Result<Ratio<i128>> {
    spec.validate()?;
    if spec.horizon > 24 {
        return Err(Error::invalid(
            "oracle enumeration limited to horizon <= 24",
        ));
    }
    let goal = decimal_ratio(spec.goal_reward)?;
    let step = decimal_ratio(spec.step_reward)?;
    let mut best: Option<Ratio<i128>> = None;
    for plan in 0u32..(1 << spec.horizon) {
        let mut state = 0;
        let mut total = Ratio::from_integer(0);
        for t in 0..spec.horizon {
            let action = ((plan >> t) & 1) as usize;
            total += if state == spec.last_state() && action == 1 {
                goal
            } else {
                step
            };
            state = spec.transition(state, action);
        }
        best = Some(match best {
            Some(b) if b >= total => b,
            _ => total,
        });
    }
    Ok(best.expect("horizon >= 1 gives at least two plans"))
}

/// Exact rational value of the shortest decimal that round-trips to `x`.
pub fn decimal_ratio(x: f64) -> Result<Ratio<i128>> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("{x} has no decimal representation")));
    }
    // `Display` for f64 prints the shortest round-trip decimal without exponent.
    let text = format!("{x}");
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.len() + frac_part.len() > 36 {
        return Err(Error::invalid(format!("{x} needs too many decimal digits")));
    }
    let numer: i128 = format!("{int_part}{frac_part}")
        .parse()
        .map_err(|_| Error::invalid(format!("cannot read {x} as a decimal")))?;
    let denom = 10i128.pow(frac_part.len() as u32);
    let r = Ratio::new(numer, denom);
    Ok(if negative { -r } else { r })
}

/// Open room with a goal in the far corner.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
}

impl GridSpec {
    pub const STEP_REWARD: f64 = -0.01;
    pub const GOAL_REWARD: f64 = 1.0;

    pub fn goal(&self) -> (usize, usize) {
        (self.width - 1, self.height - 1)
    }
}

/// Actions: 0 up (`y + 1`), 1 right (`x + 1`), 2 down (`y - 1`), 3 left
/// (`x - 1`). Moves into a wall leave the position unchanged. Reaching the
/// goal pays `+1` and terminates; every other step pays `-0.01`.
pub struct GridEnv {
    spec: GridSpec,
    pos: (usize, usize),
    steps: usize,
    finished: bool,
}

/// Builds a grid environment; both sides must be at least 2.
pub fn grid_env(width: usize, height: usize, horizon: usize) -> Result<GridEnv> {
    GridEnv::new(GridSpec {
        width,
        height,
        horizon,
    })
}

impl GridEnv {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if spec.width < 2 || spec.height < 2 {
            return Err(Error::invalid(format!(
                "grid must be at least 2x2, got {}x{}",
                spec.width, spec.height
            )));
        }
        if spec.horizon == 0 {
            return Err(Error::invalid("grid horizon must be positive"));
        }
        Ok(GridEnv {
            spec,
            pos: (0, 0),
            steps: 0,
            finished: false,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    fn observe(&self) -> Observation {
        let (x, y) = self.pos;
        Observation::new(StateKey((y * self.spec.width + x) as u64), vec![x, y])
    }
}

impl Environment for GridEnv {
    fn action_count(&self) -> usize {
        4
    }

    fn factor_sizes(&self) -> Vec<usize> {
        vec![self.spec.width, self.spec.height]
    }

    fn reset(&mut self) -> Observation {
        self.pos = (0, 0);
        self.steps = 0;
        self.finished = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        let (x, y) = self.pos;
        self.pos = match action {
            0 => (x, (y + 1).min(self.spec.height - 1)),
            1 => ((x + 1).min(self.spec.width - 1), y),
            2 => (x, y.saturating_sub(1)),
            3 => (x.saturating_sub(1), y),
            _ => return Err(Error::invalid(format!("grid action {action} out of range"))),
        };
        self.steps += 1;
        let terminal = self.pos == self.spec.goal();
        let reward = if terminal {
            GridSpec::GOAL_REWARD
        } else {
            GridSpec::STEP_REWARD
        };
        let done = terminal || self.steps >= self.spec.horizon;
        self.finished = done;
        Ok(EnvStep {
            next_state: self.observe(),
            reward,
            done,
            terminal,
        })
    }
}
