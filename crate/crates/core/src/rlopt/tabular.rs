use rand::Rng;

use super::{argmax, env::seeded_rngs, epsilon_greedy, ConvergenceTrace, Env, Hyper, Policy, RlError, TrainOutcome, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct QLearning {
    /// `q[state][action]`, zero-initialized.
    pub q: Vec<Vec<f64>>,
}

impl QLearning {
    pub fn new(env: &Env) -> Self {
        Self {
            q: vec![vec![0.0; env.num_actions()]; env.num_states()],
        }
    }

    /// `Q(s,a) += lr * (r + gamma * max_a' Q(s',a') - Q(s,a))`, no bootstrap
    /// past the end of an episode.
    pub fn update(&mut self, t: &Transition, lr: f64, gamma: f64) {
        let boot = if t.done {
            0.0
        } else {
            self.q[t.next_state].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let q = &mut self.q[t.state][t.action];
        *q += lr * (t.reward + gamma * boot - *q);
    }

    pub fn policy(&self) -> Policy {
        Policy {
            actions: self.q.iter().map(|row| argmax(row)).collect(),
        }
    }
}

pub fn train_q_learning(env: &Env, steps: usize, hyper: &Hyper, seed: u64) -> Result<TrainOutcome, RlError> {
    hyper.validate()?;
    let (mut env_rng, mut rng) = seeded_rngs(seed);
    let mut agent = QLearning::new(env);
    let mut trace = ConvergenceTrace::new(hyper.window);
    let mut s = env.reset(&mut env_rng);
    for step in 0..steps {
        let sid = env.state_id(&s);
        let a = epsilon_greedy(&agent.q[sid], hyper.epsilon(step, steps), &mut rng);
        let (t, next) = env.step(&s, a, &mut env_rng)?;
        agent.update(&t, hyper.lr, hyper.gamma);
        trace.push(t.effect);
        s = next;
    }
    Ok(TrainOutcome {
        policy: agent.policy(),
        trace,
    })
}

/// Ensemble of Q tables. Each update touches one table, bootstrapping from
/// the mean of the others; actions follow the ensemble mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiQ {
    /// `tables[k][state][action]`
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl MultiQ {
    pub fn new<R: Rng + ?Sized>(env: &Env, k: usize, init_noise: f64, rng: &mut R) -> Self {
        assert!(k >= 2, "ensemble needs at least two tables");
        let tables = (0..k)
            .map(|_| {
                (0..env.num_states())
                    .map(|_| {
                        (0..env.num_actions())
                            .map(|_| {
                                if init_noise > 0.0 {
                                    rng.random_range(-init_noise..=init_noise)
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { tables }
    }

    pub fn mean_q(&self, state: usize) -> Vec<f64> {
        let k = self.tables.len() as f64;
        let mut m = vec![0.0; self.tables[0][state].len()];
        for t in &self.tables {
            m.iter_mut().zip(&t[state]).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|x| *x /= k);
        m
    }

    pub fn update(&mut self, t: &Transition, table: usize, lr: f64, gamma: f64) {
        let boot = if t.done {
            0.0
        } else {
            let others = (self.tables.len() - 1) as f64;
            let n = self.tables[0][t.next_state].len();
            (0..n)
                .map(|a| {
                    self.tables
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != table)
                        .map(|(_, q)| q[t.next_state][a])
                        .sum::<f64>()
                        / others
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let q = &mut self.tables[table][t.state][t.action];
        *q += lr * (t.reward + gamma * boot - *q);
    }

    pub fn policy(&self) -> Policy {
        Policy {
            actions: (0..self.tables[0].len()).map(|s| argmax(&self.mean_q(s))).collect(),
        }
    }
}

pub fn train_multi_q(env: &Env, steps: usize, hyper: &Hyper, seed: u64) -> Result<TrainOutcome, RlError> {
    hyper.validate()?;
    let (mut env_rng, mut rng) = seeded_rngs(seed);
    let mut agent = MultiQ::new(env, hyper.multi_q_k, hyper.q_init_noise, &mut rng);
    let mut trace = ConvergenceTrace::new(hyper.window);
    let mut s = env.reset(&mut env_rng);
    for step in 0..steps {
        let sid = env.state_id(&s);
        let a = epsilon_greedy(&agent.mean_q(sid), hyper.epsilon(step, steps), &mut rng);
        let (t, next) = env.step(&s, a, &mut env_rng)?;
        let k = rng.random_range(0..hyper.multi_q_k);
        agent.update(&t, k, hyper.lr, hyper.gamma);
        trace.push(t.effect);
        s = next;
    }
    Ok(TrainOutcome {
        policy: agent.policy(),
        trace,
    })
}
