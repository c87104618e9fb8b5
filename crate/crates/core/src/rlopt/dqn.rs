use rand::Rng;

use super::net::{Gradients, TinyNet};
use super::{argmax, env::seeded_rngs, epsilon_greedy, ConvergenceTrace, Env, EnvState, Hyper, Policy, ReplayBuffer, RlError, TrainOutcome, Transition};

/// Q-network with replay and a periodically synchronized target network.
#[derive(Debug, Clone)]
pub struct Dqn {
    pub online: TinyNet,
    pub target: TinyNet,
    pub replay: ReplayBuffer<Transition>,
    steps: usize,
}

fn layer_sizes(env: &Env, hyper: &Hyper) -> Vec<usize> {
    let mut sizes = vec![env.feature_dim()];
    sizes.extend(&hyper.hidden);
    sizes.push(env.num_actions());
    sizes
}

impl Dqn {
    pub fn new<R: Rng + ?Sized>(env: &Env, hyper: &Hyper, rng: &mut R) -> Result<Self, RlError> {
        let online = TinyNet::new(&layer_sizes(env, hyper), rng)?;
        Ok(Self {
            target: online.clone(),
            online,
            replay: ReplayBuffer::new(hyper.replay_capacity),
            steps: 0,
        })
    }

    pub fn q_values(&self, env: &Env, state: usize) -> Vec<f64> {
        self.online.forward(&env.features(state))
    }

    /// Mean squared-TD-error gradient over `batch`, targets from the target net.
    pub fn batch_gradient(&self, env: &Env, batch: &[Transition], gamma: f64) -> Gradients {
        let mut g = Gradients::zeros_like(&self.online);
        let scale = 1.0 / batch.len() as f64;
        for t in batch {
            let boot = if t.done {
                0.0
            } else {
                self.target
                    .forward(&env.features(t.next_state))
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let y = t.reward + gamma * boot;
            let cache = self.online.forward_cache(&env.features(t.state));
            let mut grad_out = vec![0.0; env.num_actions()];
            grad_out[t.action] = cache.output()[t.action] - y;
            g.add_scaled(&self.online.backward(&cache, &grad_out), scale);
        }
        g
    }

    /// Acts, stores the transition, takes one SGD step on a replay sample and
    /// syncs the target every `target_sync` steps.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        env: &Env,
        s: &EnvState,
        eps: f64,
        hyper: &Hyper,
        env_rng: &mut R,
        rng: &mut R,
    ) -> Result<(Transition, EnvState), RlError> {
        let sid = env.state_id(s);
        let a = epsilon_greedy(&self.q_values(env, sid), eps, rng);
        let (t, next) = env.step(s, a, env_rng)?;
        self.replay.push(t);
        let batch = self.replay.sample(rng, hyper.batch_size);
        let g = self.batch_gradient(env, &batch, hyper.gamma);
        self.online.apply(&g, hyper.net_lr);
        if !self.online.is_finite() {
            return Err(RlError::NonFinite);
        }
        self.steps += 1;
        if self.steps.is_multiple_of(hyper.target_sync) {
            self.target = self.online.clone();
        }
        Ok((t, next))
    }

    pub fn policy(&self, env: &Env) -> Policy {
        Policy {
            actions: (0..env.num_states()).map(|s| argmax(&self.q_values(env, s))).collect(),
        }
    }
}

pub fn train_dqn(env: &Env, steps: usize, hyper: &Hyper, seed: u64) -> Result<TrainOutcome, RlError> {
    hyper.validate()?;
    let (mut env_rng, mut rng) = seeded_rngs(seed);
    let mut agent = Dqn::new(env, hyper, &mut rng)?;
    let mut trace = ConvergenceTrace::new(hyper.window);
    let mut s = env.reset(&mut env_rng);
    for step in 0..steps {
        let (t, next) = agent.step(env, &s, hyper.epsilon(step, steps), hyper, &mut env_rng, &mut rng)?;
        trace.push(t.effect);
        s = next;
    }
    Ok(TrainOutcome {
        policy: agent.policy(env),
        trace,
    })
}
