//! Partition selection as an episodic decision problem. The state is each
//! device's channel bin and battery bin plus the step counter; the action is
//! the joint cut assignment; the reward is the negated effect.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::{ChannelSpec, ChannelState};
use crate::nnprofile::PartitionPoint;
use crate::trico::{PartitionDecision, Scenario, TriCoError};

use super::RlError;

/// Upper bound on the joint action count (5 cuts for 3 devices).
pub const MAX_ACTIONS: usize = 125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Steps per episode; 1 makes every episode a contextual bandit.
    pub horizon: usize,
    /// Grid used to discretize stochastic channels; fixed channels use 1 bin.
    pub bandwidth_bins: usize,
    pub snr_bins: usize,
    /// Battery is context only; it drains by the chosen cut's energy.
    pub battery_bins: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 1,
            bandwidth_bins: 3,
            snr_bins: 3,
            battery_bins: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub step: usize,
    pub channels: Vec<ChannelState>,
    pub channel_bins: Vec<usize>,
    pub battery_j: Vec<Option<f64>>,
    pub battery_bins: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    /// `-effect`, or -1 when a link in the decision has zero rate.
    pub reward: f64,
    pub effect: f64,
    pub next_state: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Env {
    scenario: Scenario,
    cfg: EnvConfig,
    /// Per device: (bandwidth bins, snr bins).
    grids: Vec<(usize, usize)>,
    num_actions: usize,
    num_states: usize,
}

/// Separate, reproducible generators for environment and agent.
pub fn seeded_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    env.set_stream(1);
    let mut agent = ChaCha8Rng::seed_from_u64(seed);
    agent.set_stream(2);
    (env, agent)
}

fn bin_of(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    if n <= 1 || hi <= lo {
        return 0;
    }
    (((x - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
}

impl Env {
    pub fn new(scenario: Scenario, cfg: EnvConfig) -> Result<Self, RlError> {
        if cfg.horizon == 0 || cfg.bandwidth_bins == 0 || cfg.snr_bins == 0 || cfg.battery_bins == 0 {
            return Err(RlError::InvalidConfig("horizon and bin counts must be >= 1".into()));
        }
        let n = scenario.num_candidates();
        let d = scenario.devices().len();
        let num_actions = u32::try_from(d)
            .ok()
            .and_then(|d| n.checked_pow(d))
            .filter(|&a| a <= MAX_ACTIONS)
            .ok_or_else(|| {
                RlError::InvalidConfig(format!(
                    "{n} candidates over {d} devices exceeds {MAX_ACTIONS} joint actions"
                ))
            })?;
        let grids: Vec<(usize, usize)> = scenario
            .channels()
            .iter()
            .map(|c| match c {
                ChannelSpec::Fixed(_) => (1, 1),
                ChannelSpec::Random(dist) => {
                    let (b0, b1) = dist.bandwidth_range();
                    let (s0, s1) = dist.snr_range_db();
                    (
                        if b1 > b0 { cfg.bandwidth_bins } else { 1 },
                        if s1 > s0 { cfg.snr_bins } else { 1 },
                    )
                }
            })
            .collect();
        let per_device: usize = grids.iter().map(|(b, s)| b * s * cfg.battery_bins).product();
        let num_states = cfg
            .horizon
            .checked_mul(per_device)
            .ok_or_else(|| RlError::InvalidConfig("state space too large".into()))?;
        Ok(Self {
            scenario,
            cfg,
            grids,
            num_actions,
            num_states,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_devices(&self) -> usize {
        self.grids.len()
    }

    /// Mixed radix, first device most significant, so action ids follow the
    /// lexicographic order of decisions.
    pub fn decode_action(&self, action: usize) -> PartitionDecision {
        assert!(action < self.num_actions, "action out of range");
        let n = self.scenario.num_candidates();
        let mut cuts = vec![PartitionPoint(0); self.num_devices()];
        let mut a = action;
        for c in cuts.iter_mut().rev() {
            *c = PartitionPoint(a % n);
            a /= n;
        }
        PartitionDecision(cuts)
    }

    pub fn encode_decision(&self, decision: &PartitionDecision) -> usize {
        let n = self.scenario.num_candidates();
        decision.0.iter().fold(0, |acc, c| acc * n + c.candidate_index())
    }

    pub fn channel_bin(&self, dev: usize, ch: &ChannelState) -> usize {
        let (nb, ns) = self.grids[dev];
        match &self.scenario.channels()[dev] {
            ChannelSpec::Fixed(_) => 0,
            ChannelSpec::Random(dist) => {
                let (b0, b1) = dist.bandwidth_range();
                let (s0, s1) = dist.snr_range_db();
                let db = 10.0 * ch.snr_linear().log10();
                bin_of(ch.bandwidth_hz(), b0, b1, nb) * ns + bin_of(db, s0, s1, ns)
            }
        }
    }

    fn battery_bin(&self, dev: usize, remaining: Option<f64>) -> usize {
        let n = self.cfg.battery_bins;
        match (remaining, self.scenario.devices()[dev].battery_j()) {
            (Some(r), Some(cap)) if cap > 0.0 => bin_of((r / cap).clamp(0.0, 1.0), 0.0, 1.0, n),
            _ => n - 1,
        }
    }

    fn make_state(&self, step: usize, channels: Vec<ChannelState>, battery_j: Vec<Option<f64>>) -> EnvState {
        let channel_bins = channels.iter().enumerate().map(|(d, c)| self.channel_bin(d, c)).collect();
        let battery_bins = battery_j.iter().enumerate().map(|(d, b)| self.battery_bin(d, *b)).collect();
        EnvState {
            step,
            channels,
            channel_bins,
            battery_j,
            battery_bins,
        }
    }

    pub fn state_id(&self, s: &EnvState) -> usize {
        let nbat = self.cfg.battery_bins;
        let mut id = s.step;
        for (d, &(nb, ns)) in self.grids.iter().enumerate() {
            id = id * (nb * ns) + s.channel_bins[d];
            id = id * nbat + s.battery_bins[d];
        }
        id
    }

    /// One-hot encoding of the decoded state: step, then per device channel
    /// bin and battery bin.
    pub fn features(&self, state_id: usize) -> Vec<f64> {
        let nbat = self.cfg.battery_bins;
        let mut parts = Vec::with_capacity(2 * self.grids.len());
        let mut id = state_id;
        for &(nb, ns) in self.grids.iter().rev() {
            parts.push((id % nbat, nbat));
            id /= nbat;
            parts.push((id % (nb * ns), nb * ns));
            id /= nb * ns;
        }
        parts.push((id, self.cfg.horizon));
        parts.reverse();
        let mut f = Vec::with_capacity(self.feature_dim());
        for (v, n) in parts {
            f.extend((0..n).map(|i| if i == v { 1.0 } else { 0.0 }));
        }
        f
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.horizon + self.grids.iter().map(|(b, s)| b * s + self.cfg.battery_bins).sum::<usize>()
    }

    fn full_battery(&self) -> Vec<Option<f64>> {
        self.scenario.devices().iter().map(|d| d.battery_j()).collect()
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let channels = self.scenario.channels().iter().map(|c| c.sample(rng)).collect();
        self.make_state(0, channels, self.full_battery())
    }

    /// Start-of-episode state at every link's mean channel.
    pub fn mean_state(&self) -> EnvState {
        self.make_state(0, self.scenario.expected_channels(), self.full_battery())
    }

    /// Effect of `action` under concrete channels; `None` if a link is dead.
    pub fn effect_of(&self, action: usize, channels: &[ChannelState]) -> Result<Option<f64>, RlError> {
        match self.scenario.evaluate(&self.decode_action(action), channels) {
            Ok(e) => Ok(Some(e)),
            Err(TriCoError::Infeasible(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        s: &EnvState,
        action: usize,
        rng: &mut R,
    ) -> Result<(Transition, EnvState), RlError> {
        let decision = self.decode_action(action);
        let (effect, battery) = match self.scenario.tables(&s.channels) {
            Ok(tables) => {
                let effect = crate::trico::decision_effect(&tables, &decision);
                let battery = s
                    .battery_j
                    .iter()
                    .zip(&tables)
                    .zip(&decision.0)
                    .map(|((b, t), c)| {
                        let raw = &t[c.candidate_index()].raw;
                        b.map(|b| (b - raw.comm_energy_j - raw.comp_energy_j).max(0.0))
                    })
                    .collect();
                (effect, battery)
            }
            Err(TriCoError::Infeasible(_)) => (1.0, s.battery_j.clone()),
            Err(e) => return Err(e.into()),
        };
        let done = s.step + 1 >= self.cfg.horizon;
        let next = if done {
            self.reset(rng)
        } else {
            let channels = self.scenario.channels().iter().map(|c| c.sample(rng)).collect();
            self.make_state(s.step + 1, channels, battery)
        };
        let t = Transition {
            state: self.state_id(s),
            action,
            reward: -effect,
            effect,
            next_state: self.state_id(&next),
            done,
        };
        Ok((t, next))
    }

    /// Effect of the policy's choice at the mean-channel state, evaluated
    /// with expected channels; 1 if that choice is infeasible.
    pub fn greedy_effect(&self, policy: &super::Policy) -> Result<f64, RlError> {
        let action = policy.action(self.state_id(&self.mean_state()));
        Ok(self
            .effect_of(action, &self.scenario.expected_channels())?
            .unwrap_or(1.0))
    }

    pub fn greedy_decision(&self, policy: &super::Policy) -> PartitionDecision {
        self.decode_action(policy.action(self.state_id(&self.mean_state())))
    }
}
