use rand::Rng;

use super::net::{entropy, softmax, Gradients, TinyNet};
use super::{argmax, env::seeded_rngs, sample_categorical, ConvergenceTrace, Env, Hyper, Policy, RlError, TrainOutcome};

/// One rollout sample with the behaviour policy's probability of its action.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub action: usize,
    pub old_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Debug, Clone)]
pub struct Ppo {
    pub policy_net: TinyNet,
    pub value_net: TinyNet,
}

/// `pi(a|s) / pi_old(a|s)` for every sample under `net`.
pub fn surrogate_ratios(net: &TinyNet, batch: &[Sample]) -> Vec<f64> {
    batch
        .iter()
        .map(|s| softmax(&net.forward(&s.features))[s.action] / s.old_prob)
        .collect()
}

/// Gradient of the negated clipped surrogate (minus the entropy bonus),
/// averaged over the batch. Samples whose ratio is clipped contribute zero.
pub fn policy_gradient(net: &TinyNet, batch: &[Sample], clip: f64, entropy_coef: f64) -> Gradients {
    let mut g = Gradients::zeros_like(net);
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let cache = net.forward_cache(&s.features);
        let p = softmax(cache.output());
        let ratio = p[s.action] / s.old_prob;
        let clipped = (s.advantage > 0.0 && ratio > 1.0 + clip) || (s.advantage < 0.0 && ratio < 1.0 - clip);
        let h = entropy(&p);
        let grad_out: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(k, pk)| {
                let onehot = if k == s.action { 1.0 } else { 0.0 };
                let surrogate = if clipped { 0.0 } else { -ratio * s.advantage * (onehot - pk) };
                let ent = if *pk > 0.0 { pk * (pk.ln() + h) } else { 0.0 };
                surrogate + entropy_coef * ent
            })
            .collect();
        g.add_scaled(&net.backward(&cache, &grad_out), scale);
    }
    g
}

fn value_gradient(net: &TinyNet, batch: &[Sample]) -> Gradients {
    let mut g = Gradients::zeros_like(net);
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let cache = net.forward_cache(&s.features);
        let grad_out = [cache.output()[0] - s.value_target];
        g.add_scaled(&net.backward(&cache, &grad_out), scale);
    }
    g
}

impl Ppo {
    pub fn new<R: Rng + ?Sized>(env: &Env, hyper: &Hyper, rng: &mut R) -> Result<Self, RlError> {
        let mut sizes = vec![env.feature_dim()];
        sizes.extend(&hyper.hidden);
        let mut p = sizes.clone();
        p.push(env.num_actions());
        sizes.push(1);
        let mut policy_net = TinyNet::new(&p, rng)?;
        policy_net.zero_output_layer();
        Ok(Self {
            policy_net,
            value_net: TinyNet::new(&sizes, rng)?,
        })
    }

    pub fn probs(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.policy_net.forward(features))
    }

    /// `ppo_epochs` full-batch passes over one rollout.
    pub fn update(&mut self, batch: &[Sample], hyper: &Hyper) -> Result<(), RlError> {
        for _ in 0..hyper.ppo_epochs {
            let gp = policy_gradient(&self.policy_net, batch, hyper.ppo_clip, hyper.entropy_coef);
            let gv = value_gradient(&self.value_net, batch);
            self.policy_net.apply(&gp, hyper.net_lr);
            self.value_net.apply(&gv, hyper.net_lr);
        }
        if self.policy_net.is_finite() && self.value_net.is_finite() {
            Ok(())
        } else {
            Err(RlError::NonFinite)
        }
    }

    pub fn policy(&self, env: &Env) -> Policy {
        Policy {
            actions: (0..env.num_states())
                .map(|s| argmax(&self.policy_net.forward(&env.features(s))))
                .collect(),
        }
    }
}

/// Collects `ppo_rollout` steps with the current policy, computes one-step
/// advantages from the value baseline, then updates. A trailing partial
/// rollout is used too.
pub fn train_ppo(env: &Env, steps: usize, hyper: &Hyper, seed: u64) -> Result<TrainOutcome, RlError> {
    hyper.validate()?;
    let (mut env_rng, mut rng) = seeded_rngs(seed);
    let mut agent = Ppo::new(env, hyper, &mut rng)?;
    let mut trace = ConvergenceTrace::new(hyper.window);
    let mut s = env.reset(&mut env_rng);
    let mut done_steps = 0;
    while done_steps < steps {
        let n = hyper.ppo_rollout.min(steps - done_steps);
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let features = env.features(env.state_id(&s));
            let p = agent.probs(&features);
            let a = sample_categorical(&p, &mut rng);
            let (t, next) = env.step(&s, a, &mut env_rng)?;
            let v = agent.value_net.forward(&features)[0];
            let boot = if t.done {
                0.0
            } else {
                agent.value_net.forward(&env.features(t.next_state))[0]
            };
            let value_target = t.reward + hyper.gamma * boot;
            batch.push(Sample {
                features,
                action: a,
                old_prob: p[a],
                advantage: value_target - v,
                value_target,
            });
            trace.push(t.effect);
            s = next;
        }
        if hyper.ppo_normalize_advantage && batch.len() > 1 {
            let m = batch.iter().map(|b| b.advantage).sum::<f64>() / batch.len() as f64;
            let var = batch.iter().map(|b| (b.advantage - m).powi(2)).sum::<f64>() / batch.len() as f64;
            let sd = var.sqrt().max(1e-8);
            batch.iter_mut().for_each(|b| b.advantage = (b.advantage - m) / sd);
        }
        agent.update(&batch, hyper)?;
        done_steps += n;
    }
    Ok(TrainOutcome {
        policy: agent.policy(env),
        trace,
    })
}
