use super::net::{entropy, softmax};
use super::{argmax, env::seeded_rngs, sample_categorical, ConvergenceTrace, Env, Hyper, Policy, ReplayBuffer, RlError, TrainOutcome, Transition};

/// Tabular softmax actor with a TD(0) state-value critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    /// `logits[state][action]`
    pub logits: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl ActorCritic {
    pub fn new(env: &Env) -> Self {
        Self {
            logits: vec![vec![0.0; env.num_actions()]; env.num_states()],
            values: vec![0.0; env.num_states()],
        }
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        softmax(&self.logits[state])
    }

    pub fn td_error(&self, t: &Transition, gamma: f64) -> f64 {
        let boot = if t.done { 0.0 } else { self.values[t.next_state] };
        t.reward + gamma * boot - self.values[t.state]
    }

    pub fn critic_update(&mut self, t: &Transition, lr: f64, gamma: f64) {
        let delta = self.td_error(t, gamma);
        self.values[t.state] += lr * delta;
    }

    /// Policy-gradient step with the TD error as advantage, plus an optional
    /// entropy bonus.
    pub fn actor_update(&mut self, t: &Transition, advantage: f64, lr: f64, entropy_coef: f64) {
        let p = self.probs(t.state);
        let h = entropy(&p);
        for (a, (z, pa)) in self.logits[t.state].iter_mut().zip(&p).enumerate() {
            let onehot = if a == t.action { 1.0 } else { 0.0 };
            let ent_grad = if *pa > 0.0 { -pa * (pa.ln() + h) } else { 0.0 };
            *z += lr * (advantage * (onehot - pa) + entropy_coef * ent_grad);
        }
    }

    pub fn policy(&self) -> Policy {
        Policy {
            actions: self.logits.iter().map(|l| argmax(l)).collect(),
        }
    }
}

/// On each step: sample from the softmax policy, compute the TD error
/// against the pre-update critic, update actor then critic, and replay
/// `ac_replay_batch` stored transitions through the critic.
pub fn train_actor_critic(env: &Env, steps: usize, hyper: &Hyper, seed: u64) -> Result<TrainOutcome, RlError> {
    hyper.validate()?;
    let (mut env_rng, mut rng) = seeded_rngs(seed);
    let mut agent = ActorCritic::new(env);
    let mut replay = ReplayBuffer::new(hyper.replay_capacity);
    let mut trace = ConvergenceTrace::new(hyper.window);
    let mut s = env.reset(&mut env_rng);
    for _ in 0..steps {
        let sid = env.state_id(&s);
        let a = sample_categorical(&agent.probs(sid), &mut rng);
        let (t, next) = env.step(&s, a, &mut env_rng)?;
        let delta = agent.td_error(&t, hyper.gamma);
        agent.actor_update(&t, delta, hyper.actor_lr, hyper.entropy_coef);
        agent.critic_update(&t, hyper.lr, hyper.gamma);
        if hyper.ac_replay_batch > 0 {
            replay.push(t);
            for old in replay.sample(&mut rng, hyper.ac_replay_batch) {
                agent.critic_update(&old, hyper.lr, hyper.gamma);
            }
        }
        trace.push(t.effect);
        s = next;
    }
    Ok(TrainOutcome {
        policy: agent.policy(),
        trace,
    })
}
