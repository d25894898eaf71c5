//! Maximum-entropy reinforcement learning with count-based temperature
//! schedules.
//!
//! * [`ops`]: mellowmax, softmax policies, entropy and soft backup targets.
//! * [`counts`]: exact counters, a factored Krichevsky–Trofimov density model
//!   with pseudo-counts, and inverse-temperature schedules.
//! * [`env`]: the noisy chain walk and an open grid.
//! * [`agents`]: tabular Q-learning, soft Q-learning, count-based soft
//!   Q-learning and a replay agent with target copies.
//! * [`distributional`]: categorical return distributions with soft targets.
//! * [`harness`]: seeded multi-run experiments, aggregation and CSV output.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod counts;
pub mod distributional;
pub mod env;
pub mod error;
pub mod harness;
pub mod ops;

pub use agents::{
    act_epsilon_greedy, cbsql_tabular_step, greedy_action, greedy_return, q_learning_update,
    run_episode, sql_update, ActionSelection, Agent, AgentConfig, CountedState, EpsilonAnneal,
    ReplayAgent, ReplayBuffer, ScriptedAgent, TabularAgent, TabularKind, Transition, ValueTable,
};
pub use counts::{
    pseudo_count, ExactCounter, FactoredKtModel, KtFactor, TemperatureSchedule, VisitCounter,
};
pub use distributional::{
    dist_mean, distributional_soft_target, project_to_support, soft_policy_from_dist,
    CategoricalReturnDistribution, Support,
};
pub use env::{
    grid_env, optimal_return_oracle, ChainSpec, ChainWalkEnv, EnvStep, Environment, GridEnv,
    GridSpec, Observation, StateKey,
};
pub use error::{Error, Result};
pub use harness::{
    aggregate, aggregate_by_agent, reproduce_chainwalk, run_experiment, Aggregate, ChainwalkReport,
    ExperimentConfig, ReproduceOptions, RunRecord,
};
pub use ops::{
    mellowmax, nstep_soft_return, policy_entropy, soft_backup_target, softmax_policy, ActionValues,
    OperatorMode, PolicyDistribution, BETA_FLOOR,
};
