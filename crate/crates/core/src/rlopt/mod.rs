//! Learning agents for partition selection: tabular Q-learning, an ensemble
//! Multi-Q variant, tabular actor-critic, DQN and PPO, all trained on
//! [`env::Env`] and recorded as [`trace::ConvergenceTrace`]s.

pub mod actor_critic;
pub mod dqn;
pub mod env;
pub mod net;
pub mod ppo;
pub mod replay;
pub mod tabular;
pub mod trace;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trico::TriCoError;

pub use env::{Env, EnvConfig, EnvState, Transition};
pub use net::{grad_check, GradCheck, LossSpec, TinyNet};
pub use replay::ReplayBuffer;
pub use trace::{ConvergenceTrace, TraceRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss or gradient")]
    NonFinite,
    #[error(transparent)]
    Scenario(#[from] TriCoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    QLearning,
    MultiQ,
    ActorCritic,
    Dqn,
    Ppo,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::QLearning,
        AgentKind::MultiQ,
        AgentKind::ActorCritic,
        AgentKind::Dqn,
        AgentKind::Ppo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::QLearning => "q_learning",
            AgentKind::MultiQ => "multi_q",
            AgentKind::ActorCritic => "actor_critic",
            AgentKind::Dqn => "dqn",
            AgentKind::Ppo => "ppo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

/// Training hyperparameters shared by all agents; each agent reads the
/// fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    /// Step size for Q tables and the tabular critic.
    pub lr: f64,
    /// Step size for the tabular actor's logits.
    pub actor_lr: f64,
    /// Step size for network parameters (DQN, PPO).
    pub net_lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub eps_decay_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: usize,
    /// Critic replay updates per step for actor-critic; 0 disables replay.
    pub ac_replay_batch: usize,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub ppo_rollout: usize,
    pub ppo_normalize_advantage: bool,
    pub entropy_coef: f64,
    pub multi_q_k: usize,
    /// Half-width of the uniform noise used to initialize Multi-Q tables.
    pub q_init_noise: f64,
    pub hidden: Vec<usize>,
    pub window: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 0.1,
            actor_lr: 0.2,
            net_lr: 0.01,
            gamma: 0.9,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            replay_capacity: 1000,
            batch_size: 32,
            target_sync: 100,
            ac_replay_batch: 4,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            ppo_rollout: 32,
            ppo_normalize_advantage: true,
            entropy_coef: 0.0,
            multi_q_k: 4,
            q_init_noise: 0.0,
            hidden: vec![32],
            window: 100,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(pos(self.lr) && pos(self.actor_lr) && pos(self.net_lr)) {
            return bad("learning rates must be finite and > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eps_start)
            || !(0.0..=1.0).contains(&self.eps_end)
            || !(0.0..=1.0).contains(&self.eps_decay_fraction)
        {
            return bad("epsilon settings must lie in [0, 1]");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return bad("replay_capacity, batch_size and target_sync must be >= 1");
        }
        if !pos(self.ppo_clip) || self.ppo_epochs == 0 || self.ppo_rollout == 0 {
            return bad("ppo_clip must be > 0, ppo_epochs and ppo_rollout >= 1");
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be >= 0");
        }
        if self.multi_q_k < 2 {
            return bad("multi_q_k must be >= 2");
        }
        if !(self.q_init_noise.is_finite() && self.q_init_noise >= 0.0) {
            return bad("q_init_noise must be >= 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        Ok(())
    }

    /// Linear decay from `eps_start` to `eps_end` over the first
    /// `eps_decay_fraction` of `total` steps, then constant.
    pub fn epsilon(&self, step: usize, total: usize) -> f64 {
        let decay = (self.eps_decay_fraction * total as f64).floor();
        if step as f64 >= decay {
            return self.eps_end;
        }
        self.eps_start + (self.eps_end - self.eps_start) * (step as f64 / decay)
    }
}

/// Deterministic state -> action table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub actions: Vec<usize>,
}

impl Policy {
    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub trace: ConvergenceTrace,
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn epsilon_greedy<R: Rng + ?Sized>(values: &[f64], eps: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < eps {
        rng.random_range(0..values.len())
    } else {
        argmax(values)
    }
}

/// Runs `agent` for `steps` environment steps from `seed`.
pub fn train(agent: AgentKind, env: &Env, steps: usize, hyper: &Hyper, seed: u64) -> Result<TrainOutcome, RlError> {
    match agent {
        AgentKind::QLearning => tabular::train_q_learning(env, steps, hyper, seed),
        AgentKind::MultiQ => tabular::train_multi_q(env, steps, hyper, seed),
        AgentKind::ActorCritic => actor_critic::train_actor_critic(env, steps, hyper, seed),
        AgentKind::Dqn => dqn::train_dqn(env, steps, hyper, seed),
        AgentKind::Ppo => ppo::train_ppo(env, steps, hyper, seed),
    }
}
