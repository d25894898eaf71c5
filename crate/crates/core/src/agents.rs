//! Learning agents: tabular Q-learning, fixed-temperature soft Q-learning,
//! count-based soft Q-learning (CBSQL), and a replay agent that follows the
//! target-network / density-model training loop with pseudo-count
//! temperatures.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::counts::{ExactCounter, FactoredKtModel, TemperatureSchedule, VisitCounter};
use crate::env::{Environment, Observation, StateKey};
use crate::error::{Error, Result};
use crate::ops::{self, OperatorMode};

/// `Q(s, a)` for discrete states and actions. Unseen pairs read as zero.
///
/// The replay agent uses the same structure as a linear model over one-hot
/// state features: one weight per `(state key, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    action_count: usize,
    q: HashMap<StateKey, Vec<f64>>,
    zeros: Vec<f64>,
}

impl ValueTable {
    pub fn new(action_count: usize) -> Self {
        assert!(action_count > 0, "value table needs at least one action");
        ValueTable {
            action_count,
            q: HashMap::new(),
            zeros: vec![0.0; action_count],
        }
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn values(&self, key: StateKey) -> &[f64] {
        self.q.get(&key).map_or(&self.zeros, Vec::as_slice)
    }

    pub fn get(&self, key: StateKey, action: usize) -> f64 {
        self.values(key)[action]
    }

    pub fn set(&mut self, key: StateKey, action: usize, value: f64) {
        debug_assert!(value.is_finite(), "non-finite value for {key:?}/{action}");
        let n = self.action_count;
        self.q.entry(key).or_insert_with(|| vec![0.0; n])[action] = value;
    }

    pub fn greedy_action(&self, key: StateKey) -> usize {
        greedy_action(self.values(key))
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Largest absolute difference over every pair stored in either table.
    pub fn max_norm_distance(&self, other: &ValueTable) -> f64 {
        self.q
            .keys()
            .chain(other.q.keys())
            .flat_map(|&k| {
                self.values(k)
                    .iter()
                    .zip(other.values(k))
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Serializes as
    ///
    /// ```text
    /// value-table v1 <action count>
    /// <state key> <q_0> <q_1> ...
    /// ```
    ///
    /// rows in ascending key order, values in shortest round-trip decimal.
    pub fn to_text(&self) -> String {
        let mut out = format!("value-table v1 {}\n", self.action_count);
        let sorted: BTreeMap<_, _> = self.q.iter().collect();
        for (key, row) in sorted {
            write!(out, "{}", key.0).unwrap();
            for v in row {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let action_count = header
            .strip_prefix("value-table v1 ")
            .and_then(|n| n.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Parse(format!("bad value-table header `{header}`")))?;
        let mut table = ValueTable::new(action_count);
        for (n, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let bad = || Error::Parse(format!("line {}: malformed row", n + 2));
            let key: u64 = fields.next().and_then(|k| k.parse().ok()).ok_or_else(bad)?;
            let row = fields
                .map(|v| v.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(bad)?;
            if row.len() != action_count {
                return Err(bad());
            }
            table.q.insert(StateKey(key), row);
        }
        Ok(table)
    }
}

/// One experience tuple. `done` cuts the bootstrap term of the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: usize,
    pub r: f64,
    pub s_next: Observation,
    pub done: bool,
}

/// Bounded FIFO of transitions with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&mut self, batch_size: usize) -> Result<Vec<Transition>> {
        if self.entries.len() < batch_size || self.entries.is_empty() {
            return Err(Error::NotReady {
                have: self.entries.len(),
                need: batch_size.max(1),
            });
        }
        Ok((0..batch_size)
            .map(|_| self.entries[self.rng.random_range(0..self.entries.len())].clone())
            .collect())
    }
}

/// Which state's count is incremented after a backup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountedState {
    /// `s'`, the state whose values the backup consumed.
    Next,
    /// `s`, the state whose value was updated.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionSelection {
    #[default]
    EpsilonGreedy,
    /// Sample from `softmax(beta(s) * Q(s, ·))`.
    Softmax,
}

/// Linear anneal of the exploration rate from `epsilon` to `final_epsilon`
/// over `steps` environment steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonAnneal {
    pub final_epsilon: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_anneal: Option<EpsilonAnneal>,
    pub learning_rate: f64,
    pub schedule: TemperatureSchedule,
    pub mode: OperatorMode,
    pub counted_state: CountedState,
    /// Treat time-limit truncation as terminal when building targets.
    pub mask_truncation: bool,
    pub action_selection: ActionSelection,
    pub target_update_freq: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
}

impl AgentConfig {
    /// Tabular defaults: `gamma = 0.99`, `epsilon = 0.01`, learning rate 1.
    pub fn tabular(schedule: TemperatureSchedule) -> Self {
        AgentConfig {
            gamma: 0.99,
            epsilon: 0.01,
            epsilon_anneal: None,
            learning_rate: 1.0,
            schedule,
            mode: OperatorMode::MellowmaxMean,
            counted_state: CountedState::Next,
            mask_truncation: false,
            action_selection: ActionSelection::EpsilonGreedy,
            target_update_freq: 1,
            batch_size: 1,
            replay_capacity: 1,
        }
    }

    /// Replay-agent defaults; the density model is updated with `s`.
    pub fn replay(schedule: TemperatureSchedule) -> Self {
        AgentConfig {
            counted_state: CountedState::Current,
            target_update_freq: 50,
            batch_size: 8,
            replay_capacity: 10_000,
            learning_rate: 0.5,
            ..Self::tabular(schedule)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        if let Some(a) = self.epsilon_anneal {
            if !(0.0..=1.0).contains(&a.final_epsilon) || a.steps == 0 {
                return Err(Error::invalid(
                    "epsilon anneal needs final in [0, 1] and steps > 0",
                ));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.target_update_freq == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(Error::invalid(
                "target update frequency, batch size and replay capacity must be positive",
            ));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        match self.epsilon_anneal {
            None => self.epsilon,
            Some(a) => {
                let frac = (step as f64 / a.steps as f64).min(1.0);
                self.epsilon + frac * (a.final_epsilon - self.epsilon)
            }
        }
    }
}

/// Lowest-indexed maximizer.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Greedy with probability `1 - epsilon`, uniform otherwise.
pub fn act_epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        greedy_action(q)
    }
}

fn sample_softmax<R: Rng + ?Sized>(q: &[f64], beta: f64, rng: &mut R) -> usize {
    let probs = ops::softmax_unchecked(q, beta);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn check_transition(table: &ValueTable, t: &Transition) -> Result<()> {
    if t.a >= table.action_count() {
        return Err(Error::invalid(format!(
            "action {} outside {} actions",
            t.a,
            table.action_count()
        )));
    }
    if !t.r.is_finite() {
        return Err(Error::invalid("non-finite reward"));
    }
    Ok(())
}

fn move_toward(table: &mut ValueTable, t: &Transition, target: f64, lr: f64) {
    let key = t.s.key();
    let old = table.get(key, t.a);
    // lr == 1 assigns the target exactly.
    let new = if lr == 1.0 {
        target
    } else {
        old + lr * (target - old)
    };
    table.set(key, t.a, new);
}

/// `Q(s,a) += lr * (r + gamma * max Q(s',·) * [not done] - Q(s,a))`
pub fn q_learning_update(table: &mut ValueTable, t: &Transition, cfg: &AgentConfig) -> Result<()> {
    check_transition(table, t)?;
    let bootstrap = if t.done {
        0.0
    } else {
        let next = table.values(t.s_next.key());
        next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    move_toward(table, t, t.r + cfg.gamma * bootstrap, cfg.learning_rate);
    Ok(())
}

/// Soft Q-learning update toward `r + gamma * mellowmax_beta(Q(s',·))`,
/// with the bootstrap dropped on `done`.
pub fn sql_update(
    table: &mut ValueTable,
    t: &Transition,
    beta: f64,
    cfg: &AgentConfig,
) -> Result<()> {
    check_transition(table, t)?;
    let gamma = if t.done { 0.0 } else { cfg.gamma };
    let target = ops::soft_backup_target(t.r, gamma, table.values(t.s_next.key()), beta, cfg.mode)?;
    move_toward(table, t, target, cfg.learning_rate);
    Ok(())
}

/// One CBSQL update: `beta = kappa * count(s')`, a soft update with that
/// `beta`, then one count recorded for the state chosen by
/// `cfg.counted_state`. Returns the `beta` used.
pub fn cbsql_tabular_step<C: VisitCounter + ?Sized>(
    table: &mut ValueTable,
    counter: &mut C,
    t: &Transition,
    cfg: &AgentConfig,
) -> Result<f64> {
    if !cfg.schedule.is_count_based() {
        return Err(Error::InvalidConfiguration(format!(
            "CBSQL needs a count-based schedule, got {:?}",
            cfg.schedule
        )));
    }
    let beta = cfg.schedule.beta_for(counter.count(&t.s_next)?, 0);
    sql_update(table, t, beta, cfg)?;
    match cfg.counted_state {
        CountedState::Next => counter.record(&t.s_next)?,
        CountedState::Current => counter.record(&t.s)?,
    }
    Ok(beta)
}

/// Anything that can be driven through episodes by [`run_episode`].
pub trait Agent {
    fn label(&self) -> &str;

    fn action_count(&self) -> usize;

    fn act(&mut self, obs: &Observation) -> usize;

    fn observe(&mut self, t: &Transition) -> Result<()>;

    /// Whether truncated episode ends cut the bootstrap.
    fn masks_truncation(&self) -> bool {
        false
    }

    fn begin_episode(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularKind {
    QLearning,
    /// Soft Q-learning with `beta` from the schedule (constant or linear).
    Sql,
    Cbsql,
}

pub struct TabularAgent {
    label: String,
    kind: TabularKind,
    cfg: AgentConfig,
    table: ValueTable,
    counter: ExactCounter,
    rng: ChaCha8Rng,
    updates: u64,
    steps: u64,
}

impl TabularAgent {
    pub fn new(
        label: impl Into<String>,
        kind: TabularKind,
        cfg: AgentConfig,
        action_count: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if kind == TabularKind::Cbsql && !cfg.schedule.is_count_based() {
            return Err(Error::InvalidConfiguration(
                "CBSQL needs a count-based schedule".into(),
            ));
        }
        if action_count == 0 {
            return Err(Error::invalid("agent needs at least one action"));
        }
        Ok(TabularAgent {
            label: label.into(),
            kind,
            cfg,
            table: ValueTable::new(action_count),
            counter: ExactCounter::new(),
            rng,
            updates: 0,
            steps: 0,
        })
    }

    pub fn table(&self) -> &ValueTable {
        &self.table
    }

    pub fn counter(&self) -> &ExactCounter {
        &self.counter
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// Inverse temperature currently assigned to `key`.
    pub fn beta_at(&self, key: StateKey) -> f64 {
        self.cfg
            .schedule
            .beta_for(self.counter.get(key) as f64, self.updates)
    }

    /// Snapshot of the value table followed by the exact counts.
    pub fn snapshot_text(&self) -> String {
        format!("{}{}", self.table.to_text(), self.counter.to_text())
    }
}

impl Agent for TabularAgent {
    fn label(&self) -> &str {
        &self.label
    }

    fn action_count(&self) -> usize {
        self.table.action_count()
    }

    fn act(&mut self, obs: &Observation) -> usize {
        let step = self.steps;
        self.steps += 1;
        let q = self.table.values(obs.key());
        match self.cfg.action_selection {
            ActionSelection::EpsilonGreedy => {
                act_epsilon_greedy(q, self.cfg.epsilon_at(step), &mut self.rng)
            }
            ActionSelection::Softmax => {
                let beta = self.beta_at(obs.key());
                let q = q.to_vec();
                sample_softmax(&q, beta, &mut self.rng)
            }
        }
    }

    fn observe(&mut self, t: &Transition) -> Result<()> {
        match self.kind {
            TabularKind::QLearning => q_learning_update(&mut self.table, t, &self.cfg)?,
            TabularKind::Sql => {
                let beta = self.cfg.schedule.beta_for(0.0, self.updates);
                sql_update(&mut self.table, t, beta, &self.cfg)?;
            }
            TabularKind::Cbsql => {
                cbsql_tabular_step(&mut self.table, &mut self.counter, t, &self.cfg)?;
            }
        }
        self.updates += 1;
        Ok(())
    }

    fn masks_truncation(&self) -> bool {
        self.cfg.mask_truncation
    }
}

/// Replay agent: epsilon-greedy rollouts into a buffer, minibatch updates
/// against a periodically copied target table, and `beta = kappa * n(s')`
/// from a factored KT density model.
pub struct ReplayAgent {
    label: String,
    cfg: AgentConfig,
    online: ValueTable,
    target: ValueTable,
    model: FactoredKtModel,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    env_steps: u64,
    train_steps: u64,
    min_beta: f64,
}

impl ReplayAgent {
    pub fn new(
        label: impl Into<String>,
        cfg: AgentConfig,
        action_count: usize,
        factor_sizes: &[usize],
        rng: ChaCha8Rng,
        sample_rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if action_count == 0 {
            return Err(Error::invalid("agent needs at least one action"));
        }
        let online = ValueTable::new(action_count);
        Ok(ReplayAgent {
            label: label.into(),
            target: online.clone(),
            online,
            model: FactoredKtModel::new(factor_sizes)?,
            buffer: ReplayBuffer::new(cfg.replay_capacity, sample_rng)?,
            cfg,
            rng,
            env_steps: 0,
            train_steps: 0,
            min_beta: f64::INFINITY,
        })
    }

    pub fn online(&self) -> &ValueTable {
        &self.online
    }

    pub fn target(&self) -> &ValueTable {
        &self.target
    }

    pub fn model(&self) -> &FactoredKtModel {
        &self.model
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Smallest inverse temperature used in any target so far.
    pub fn min_beta(&self) -> f64 {
        self.min_beta
    }

    /// Samples a batch from the buffer and trains on it. Returns
    /// [`Error::NotReady`] while the buffer holds fewer than one batch.
    pub fn try_train(&mut self) -> Result<f64> {
        let batch = self.buffer.sample(self.cfg.batch_size)?;
        self.train_step(&batch)
    }

    /// One gradient step on `(1/2B) sum (y - Q(s,a))^2`. Returns the mean
    /// squared error before the step.
    ///
    /// Targets use the target table and the density model as they were
    /// before this batch; the density model is then updated once per
    /// element, and the target table is refreshed every
    /// `target_update_freq` steps.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let mut errors = Vec::with_capacity(batch.len());
        for t in batch {
            check_transition(&self.online, t)?;
            let target = if t.done {
                t.r
            } else {
                let count = self.model.pseudo_count(t.s_next.factors())?;
                let beta = self.cfg.schedule.beta_for(count, self.train_steps);
                self.min_beta = self.min_beta.min(beta);
                let next = self.target.values(t.s_next.key());
                t.r + self.cfg.gamma * ops::mellowmax(next, beta, self.cfg.mode)?
            };
            errors.push(target - self.online.get(t.s.key(), t.a));
        }

        // Gradients accumulate against the pre-step parameters.
        let scale = self.cfg.learning_rate / batch.len() as f64;
        let mut grads: HashMap<(StateKey, usize), f64> = HashMap::new();
        for (t, err) in batch.iter().zip(&errors) {
            *grads.entry((t.s.key(), t.a)).or_insert(0.0) += err;
        }
        let mut grads: Vec<_> = grads.into_iter().collect();
        grads.sort_by_key(|&(k, _)| k);
        for ((key, a), g) in grads {
            let old = self.online.get(key, a);
            self.online.set(key, a, old + scale * g);
        }

        for t in batch {
            match self.cfg.counted_state {
                CountedState::Current => self.model.update(t.s.factors())?,
                CountedState::Next => self.model.update(t.s_next.factors())?,
            }
        }

        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.cfg.target_update_freq) {
            self.target = self.online.clone();
        }
        Ok(errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64)
    }
}

impl Agent for ReplayAgent {
    fn label(&self) -> &str {
        &self.label
    }

    fn action_count(&self) -> usize {
        self.online.action_count()
    }

    fn act(&mut self, obs: &Observation) -> usize {
        let eps = self.cfg.epsilon_at(self.env_steps);
        self.env_steps += 1;
        let q = self.online.values(obs.key());
        match self.cfg.action_selection {
            ActionSelection::EpsilonGreedy => act_epsilon_greedy(q, eps, &mut self.rng),
            ActionSelection::Softmax => {
                let count = self.model.pseudo_count(obs.factors()).unwrap_or(0.0);
                let beta = self.cfg.schedule.beta_for(count, self.train_steps);
                let q = q.to_vec();
                sample_softmax(&q, beta, &mut self.rng)
            }
        }
    }

    fn observe(&mut self, t: &Transition) -> Result<()> {
        self.buffer.push(t.clone());
        match self.try_train() {
            Ok(_) | Err(Error::NotReady { .. }) => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn masks_truncation(&self) -> bool {
        self.cfg.mask_truncation
    }
}

/// Plays a fixed action script, one entry per step of the episode; the last
/// entry repeats once the script runs out. Learns nothing.
pub struct ScriptedAgent {
    label: String,
    actions: Vec<usize>,
    action_count: usize,
    t: usize,
}

impl ScriptedAgent {
    pub fn new(label: impl Into<String>, actions: Vec<usize>, action_count: usize) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("scripted agent needs at least one action"));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= action_count) {
            return Err(Error::invalid(format!(
                "scripted action {a} outside {action_count} actions"
            )));
        }
        Ok(ScriptedAgent {
            label: label.into(),
            actions,
            action_count,
            t: 0,
        })
    }
}

impl Agent for ScriptedAgent {
    fn label(&self) -> &str {
        &self.label
    }

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn act(&mut self, _obs: &Observation) -> usize {
        let a = self.actions[self.t.min(self.actions.len() - 1)];
        self.t += 1;
        a
    }

    fn observe(&mut self, _t: &Transition) -> Result<()> {
        Ok(())
    }

    fn begin_episode(&mut self) {
        self.t = 0;
    }
}

/// Runs one episode, feeding every transition to the agent. Returns the
/// undiscounted sum of raw rewards.
pub fn run_episode(agent: &mut dyn Agent, env: &mut dyn Environment) -> Result<f64> {
    if agent.action_count() != env.action_count() {
        return Err(Error::InvalidConfiguration(format!(
            "agent has {} actions, environment has {}",
            agent.action_count(),
            env.action_count()
        )));
    }
    agent.begin_episode();
    let mut s = env.reset();
    let mut total = 0.0;
    loop {
        let a = agent.act(&s);
        let step = env.step(a)?;
        total += step.reward;
        let t = Transition {
            s,
            a,
            r: step.reward,
            s_next: step.next_state,
            done: step.terminal || (step.done && agent.masks_truncation()),
        };
        agent.observe(&t)?;
        if step.done {
            return Ok(total);
        }
        s = t.s_next;
    }
}

/// Return of one episode following `argmax Q` with no exploration and no
/// learning.
pub fn greedy_return(table: &ValueTable, env: &mut dyn Environment) -> Result<f64> {
    let mut s = env.reset();
    let mut total = 0.0;
    loop {
        let step = env.step(table.greedy_action(s.key()))?;
        total += step.reward;
        if step.done {
            return Ok(total);
        }
        s = step.next_state;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn obs(k: u64) -> Observation {
        Observation::new(StateKey(k), vec![k as usize])
    }

    fn tr(s: u64, a: usize, r: f64, s_next: u64, done: bool) -> Transition {
        Transition {
            s: obs(s),
            a,
            r,
            s_next: obs(s_next),
            done,
        }
    }

    fn q_cfg() -> AgentConfig {
        AgentConfig::tabular(TemperatureSchedule::constant(1.0).unwrap())
    }

    #[test]
    fn epsilon_greedy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(act_epsilon_greedy(&[0.0, 5.0], 0.0, &mut rng), 1);
        assert_eq!(act_epsilon_greedy(&[3.0, 3.0], 0.0, &mut rng), 0);
        let ones = (0..10_000)
            .filter(|_| act_epsilon_greedy(&[0.0, 5.0], 1.0, &mut rng) == 1)
            .count();
        assert!((ones as f64 / 10_000.0 - 0.5).abs() < 0.02, "{ones}");
    }

    #[test]
    fn q_learning_examples() {
        let cfg = q_cfg();
        let mut table = ValueTable::new(2);
        q_learning_update(&mut table, &tr(0, 1, 2.0, 1, true), &cfg).unwrap();
        assert_eq!(table.get(StateKey(0), 1), 2.0);

        let mut table = ValueTable::new(2);
        table.set(StateKey(1), 0, 1.0);
        q_learning_update(&mut table, &tr(0, 0, 0.0, 1, false), &cfg).unwrap();
        assert!((table.get(StateKey(0), 0) - 0.99).abs() < 1e-12);

        let frozen = AgentConfig {
            learning_rate: 0.0,
            ..cfg
        };
        let mut table = ValueTable::new(2);
        table.set(StateKey(0), 0, 0.5);
        q_learning_update(&mut table, &tr(0, 0, 0.0, 1, true), &frozen).unwrap();
        assert_eq!(table.get(StateKey(0), 0), 0.5);
    }

    #[test]
    fn sql_examples() {
        let cfg = q_cfg();
        let mut table = ValueTable::new(2);
        sql_update(&mut table, &tr(0, 1, -0.1, 1, true), 1.0, &cfg).unwrap();
        assert_eq!(table.get(StateKey(0), 1), -0.1);

        let mut table = ValueTable::new(2);
        table.set(StateKey(1), 0, 1.0);
        sql_update(&mut table, &tr(0, 0, 0.0, 1, false), 1.0, &cfg).unwrap();
        assert!((table.get(StateKey(0), 0) - 0.613913).abs() < 1e-5);
    }

    #[test]
    fn cbsql_counts_and_beta() {
        let cfg = AgentConfig::tabular(TemperatureSchedule::count_based(0.01).unwrap());
        let mut table = ValueTable::new(2);
        table.set(StateKey(1), 0, 2.0);
        let mut counter = ExactCounter::new();
        let beta =
            cbsql_tabular_step(&mut table, &mut counter, &tr(0, 1, 0.0, 1, false), &cfg).unwrap();
        assert_eq!(beta, ops::BETA_FLOOR);
        assert!((table.get(StateKey(0), 1) - 0.99).abs() < 1e-6);
        assert_eq!(counter.get(StateKey(1)), 1);
        assert_eq!(counter.get(StateKey(0)), 0);

        for i in 1..350 {
            cbsql_tabular_step(&mut table, &mut counter, &tr(0, 1, 0.0, 1, false), &cfg).unwrap();
            assert_eq!(counter.get(StateKey(1)), i + 1);
        }
        let beta =
            cbsql_tabular_step(&mut table, &mut counter, &tr(0, 1, 0.0, 1, false), &cfg).unwrap();
        assert!((beta - 3.5).abs() < 1e-12);

        let wrong = q_cfg();
        let err = cbsql_tabular_step(&mut table, &mut counter, &tr(0, 1, 0.0, 1, false), &wrong);
        assert!(matches!(err, Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn current_state_counting() {
        let cfg = AgentConfig {
            counted_state: CountedState::Current,
            ..AgentConfig::tabular(TemperatureSchedule::count_based(0.01).unwrap())
        };
        let mut table = ValueTable::new(2);
        let mut counter = ExactCounter::new();
        cbsql_tabular_step(&mut table, &mut counter, &tr(2, 1, 0.0, 3, false), &cfg).unwrap();
        assert_eq!((counter.get(StateKey(2)), counter.get(StateKey(3))), (1, 0));
    }

    #[test]
    fn replay_buffer_fifo() {
        let mut buf = ReplayBuffer::new(3, ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(buf.sample(1), Err(Error::NotReady { .. })));
        for k in 0..5 {
            buf.push(tr(k, 0, k as f64, k, false));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.iter().map(|t| t.r).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert!(matches!(buf.sample(4), Err(Error::NotReady { .. })));
        assert!(buf.sample(3).unwrap().iter().all(|t| t.r >= 2.0));
        assert!(ReplayBuffer::new(0, ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn replay_rejects_empty_batch() {
        let cfg = AgentConfig::replay(TemperatureSchedule::count_based(0.01).unwrap());
        let mut agent = ReplayAgent::new(
            "r",
            cfg,
            2,
            &[5],
            ChaCha8Rng::seed_from_u64(0),
            ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(matches!(
            agent.train_step(&[]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(agent.try_train(), Err(Error::NotReady { .. })));
    }

    #[test]
    fn target_copy_is_exact() {
        let cfg = AgentConfig {
            target_update_freq: 3,
            ..AgentConfig::replay(TemperatureSchedule::count_based(0.01).unwrap())
        };
        let mut agent = ReplayAgent::new(
            "r",
            cfg,
            2,
            &[5],
            ChaCha8Rng::seed_from_u64(0),
            ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let batch = vec![tr(0, 1, 0.3, 1, false), tr(1, 1, -0.2, 2, false)];
        agent.train_step(&batch).unwrap();
        agent.train_step(&batch).unwrap();
        assert_ne!(agent.online(), agent.target());
        agent.train_step(&batch).unwrap();
        assert_eq!(agent.online().to_text(), agent.target().to_text());
        assert_eq!(agent.online(), agent.target());
    }

    #[test]
    fn scripted_agent_plays_script() {
        let mut a = ScriptedAgent::new("s", vec![1, 0], 2).unwrap();
        let o = obs(0);
        assert_eq!([a.act(&o), a.act(&o), a.act(&o)], [1, 0, 0]);
        a.begin_episode();
        assert_eq!(a.act(&o), 1);
        assert!(ScriptedAgent::new("s", vec![2], 2).is_err());
        assert!(ScriptedAgent::new("s", vec![], 2).is_err());
    }

    #[test]
    fn value_table_text() {
        let mut t = ValueTable::new(2);
        t.set(StateKey(3), 1, -0.1);
        t.set(StateKey(0), 0, 1.0 / 3.0);
        let text = t.to_text();
        assert_eq!(
            text,
            "value-table v1 2\n0 0.3333333333333333 0.0\n3 0.0 -0.1\n"
        );
        assert_eq!(ValueTable::from_text(&text).unwrap(), t);
        assert!(ValueTable::from_text("value-table v1 2\n0 1.0\n").is_err());
        assert!(ValueTable::from_text("value-table v1 0\n").is_err());
    }

    #[test]
    fn config_validation() {
        let ok = q_cfg();
        assert!(ok.validate().is_ok());
        assert!(AgentConfig {
            gamma: 1.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            epsilon: 1.5,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            learning_rate: 0.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        let annealed = AgentConfig {
            epsilon: 1.0,
            epsilon_anneal: Some(EpsilonAnneal {
                final_epsilon: 0.1,
                steps: 100,
            }),
            ..ok
        };
        assert_eq!(annealed.epsilon_at(0), 1.0);
        assert!((annealed.epsilon_at(50) - 0.55).abs() < 1e-12);
        assert!((annealed.epsilon_at(1000) - 0.1).abs() < 1e-12);
    }
}
