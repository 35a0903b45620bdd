//! The reinforcement-learning environment over OP states and the fitted
//! double Q-learning loop.
//!
//! States are subproblems of freshly generated instances, actions are
//! feasible node selections, rewards are the collected prizes, and episodes
//! run undiscounted (they are finite, at most `n` steps). Several episodes
//! advance in lockstep so action-value queries batch through the network;
//! transitions land in a FIFO replay memory; each training step takes one
//! Adam step on the mean squared double-Q error and periodically syncs the
//! target network and evaluates the greedy policy on a fixed validation
//! set. Everything is deterministic given the config seed, independent of
//! thread count.

use crate::generate::{generate_euclidean_instance, GenerateError};
use crate::heuristics::{splitmix64, QFunction, StatePolicy};
use crate::instance::{Instance, PrizeKind};
use crate::neural::{
    td_loss_and_grads, NeuralError, QNetwork, QNetworkConfig, QNetworkParams, TdItem,
};
use crate::path::PathState;
use crate::search::{greedy_rollout, SearchError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("action {0} is not feasible in the current state")]
    InfeasibleAction(usize),
    #[error("non-finite loss {loss} at training step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("could not generate a usable training instance after {0} attempts")]
    InstanceGeneration(u64),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// One replayable step: `<s_t, v_t, r_{t+1}, s_{t+1}, done>` plus the
/// instance the episode ran on.
#[derive(Debug, Clone)]
pub struct Transition {
    pub instance: Arc<Instance>,
    pub state: PathState,
    pub action: usize,
    pub reward: f64,
    pub next_state: PathState,
    pub done: bool,
}

/// Fixed-capacity FIFO ring buffer with uniform without-replacement
/// sampling inside each batch.
pub struct ReplayMemory {
    buf: Vec<Transition>,
    capacity: usize,
    write: usize,
    rng: ChaCha8Rng,
}

impl ReplayMemory {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity >= 1);
        ReplayMemory {
            buf: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            write: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Appends a transition, evicting the oldest one once full.
    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Draws `min(k, len)` distinct transitions uniformly at random.
    pub fn sample(&mut self, k: usize) -> Vec<Transition> {
        let take = k.min(self.buf.len());
        let mut idx: Vec<usize> = (0..self.buf.len()).collect();
        for i in 0..take {
            let j = i + self.rng.gen_range(0..idx.len() - i);
            idx.swap(i, j);
        }
        idx[..take].iter().map(|&i| self.buf[i].clone()).collect()
    }
}

/// Applies `action` to `state`: reward is the node's prize, the episode is
/// done when the successor has no feasible extension left.
pub fn env_step(
    state: &PathState,
    action: usize,
    inst: &Instance,
) -> Result<(f64, PathState, bool), TrainError> {
    if !state.feasible_extensions(inst).contains(&action) {
        return Err(TrainError::InfeasibleAction(action));
    }
    let next = state.extend(action, inst).expect("feasible action extends");
    let reward = inst.prize(action);
    let done = next.feasible_extensions(inst).is_empty();
    Ok((reward, next, done))
}

/// Epsilon-greedy action selection: with probability `1 - epsilon` the
/// feasible argmax of the online q-values (ties to the lowest node index),
/// otherwise a uniformly random feasible node. Deterministic given the
/// stream state of `rng`.
pub fn epsilon_greedy(
    net: &QNetwork,
    inst: &Instance,
    state: &PathState,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let feasible = state.feasible_extensions(inst);
    assert!(
        !feasible.is_empty(),
        "epsilon_greedy requires a non-terminal state"
    );
    if rng.gen::<f64>() < epsilon {
        feasible[rng.gen_range(0..feasible.len())]
    } else {
        let q = net.q_values(state, inst, &feasible);
        let mut best = 0;
        for i in 1..feasible.len() {
            if q[i] > q[best] {
                best = i;
            }
        }
        feasible[best]
    }
}

/// Double-Q targets with discount 1: for non-terminal transitions
/// `y = r + q_target(s', argmax_v q_online(s', v))`, for terminal ones
/// `y = r`. Action selection by the online function, evaluation by the
/// target function.
pub fn double_q_target(
    batch: &[Transition],
    online: &impl QFunction,
    target: &impl QFunction,
) -> Vec<f64> {
    let mut targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let open: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    if open.is_empty() {
        return targets;
    }
    let feasibles: Vec<Vec<usize>> = open
        .iter()
        .map(|&i| batch[i].next_state.feasible_extensions(&batch[i].instance))
        .collect();
    let items: Vec<(&Instance, &PathState, &[usize])> = open
        .iter()
        .zip(&feasibles)
        .map(|(&i, f)| (&*batch[i].instance, &batch[i].next_state, f.as_slice()))
        .collect();
    let online_q = online.q_values_batch(&items);
    let target_q = target.q_values_batch(&items);
    for (((&i, feas), oq), tq) in open.iter().zip(&feasibles).zip(&online_q).zip(&target_q) {
        debug_assert!(!feas.is_empty(), "non-terminal state has feasible actions");
        let mut best = 0;
        for j in 1..feas.len() {
            if oq[j] > oq[best] {
                best = j;
            }
        }
        targets[i] += tq[best];
    }
    targets
}

fn default_n() -> usize {
    20
}
fn default_kind() -> PrizeKind {
    PrizeKind::Uniform
}
fn default_t_max() -> f64 {
    2.0
}
fn default_max_steps() -> usize {
    20_000
}
fn default_batch_size() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_replay_capacity() -> usize {
    10_000
}
fn default_target_sync() -> usize {
    100
}
fn default_epsilon_start() -> f64 {
    1.0
}
fn default_epsilon_end() -> f64 {
    0.05
}
fn default_parallel_episodes() -> usize {
    16
}
fn default_validation_size() -> usize {
    200
}
fn default_eval_every() -> usize {
    500
}

/// Everything the training loop needs; serializable so runs are driven by
/// config files. Defaults follow the standard setup: Adam at 1e-3, replay
/// capacity 10k, target sync every 100 steps, 16 parallel episodes, epsilon
/// annealed linearly from 1.0 to 0.05 over the first half of training, 200
/// validation instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Instance size of the training distribution.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_kind")]
    pub kind: PrizeKind,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Number of gradient steps.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_replay_capacity")]
    pub replay_capacity: usize,
    /// Target network sync period, in gradient steps.
    #[serde(default = "default_target_sync")]
    pub target_sync: usize,
    #[serde(default = "default_epsilon_start")]
    pub epsilon_start: f64,
    #[serde(default = "default_epsilon_end")]
    pub epsilon_end: f64,
    /// Steps over which epsilon anneals linearly; `None` means half of
    /// `max_steps`.
    #[serde(default)]
    pub epsilon_decay_steps: Option<usize>,
    /// Episodes advanced in lockstep per training step.
    #[serde(default = "default_parallel_episodes")]
    pub parallel_episodes: usize,
    #[serde(default = "default_validation_size")]
    pub validation_size: usize,
    /// Greedy-policy validation period, in gradient steps.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub net: QNetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if !(self.t_max > 0.0) {
            return bad(format!("t_max = {} must be positive", self.t_max));
        }
        if self.batch_size == 0 || self.parallel_episodes == 0 || self.target_sync == 0 {
            return bad("batch_size, parallel_episodes and target_sync must be positive".into());
        }
        if self.batch_size > self.replay_capacity {
            return bad(format!(
                "batch_size {} exceeds replay_capacity {}",
                self.batch_size, self.replay_capacity
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        for (name, eps) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return bad(format!("{name} = {eps} must lie in [0, 1]"));
            }
        }
        if self.validation_size == 0 {
            return bad("validation_size must be at least 1".into());
        }
        self.net.validate()?;
        Ok(())
    }

    fn decay_steps(&self) -> usize {
        match self.epsilon_decay_steps {
            Some(s) if s > 0 => s,
            _ => (self.max_steps / 2).max(1),
        }
    }

    fn epsilon_at(&self, step: usize) -> f64 {
        let frac = (step as f64 / self.decay_steps() as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub loss: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_mean_prize: Option<f64>,
}

/// Result of a training run.
pub struct TrainOutcome {
    /// The checkpoint with the best validation mean prize.
    pub network: QNetwork,
    /// Parameters as of the final step.
    pub final_network: QNetwork,
    pub log: Vec<TrainLogRecord>,
    pub best_val_mean: f64,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: QNetworkParams,
    v: QNetworkParams,
}

impl Adam {
    fn new(cfg: &QNetworkConfig, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: QNetworkParams::zeros(cfg),
            v: QNetworkParams::zeros(cfg),
        }
    }

    fn step(&mut self, params: &mut QNetworkParams, grads: &QNetworkParams) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        let lr = self.lr;
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / b1c;
                    let v_hat = *v / b2c;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

struct EnvSlot {
    inst: Arc<Instance>,
    state: PathState,
}

fn sub_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64((stream << 48) ^ index))
}

const STREAM_VALIDATION: u64 = 1;
const STREAM_INSTANCES: u64 = 2;
const STREAM_ENV_RNG: u64 = 3;
const STREAM_REPLAY: u64 = 4;

/// Incremental training driver. [`Trainer::run`] consumes it; tests can
/// drive [`Trainer::step`] directly to observe intermediate state.
pub struct Trainer {
    cfg: TrainConfig,
    online: QNetwork,
    target: QNetwork,
    replay: ReplayMemory,
    envs: Vec<EnvSlot>,
    env_rngs: Vec<ChaCha8Rng>,
    instance_counter: u64,
    validation: Vec<Instance>,
    adam: Adam,
    step: usize,
    warmed_up: bool,
    log: Vec<TrainLogRecord>,
    best: Option<(f64, QNetworkParams)>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let online = QNetwork::new(cfg.net.clone())?;
        let target = online.clone();
        let replay = ReplayMemory::new(cfg.replay_capacity, sub_seed(cfg.seed, STREAM_REPLAY, 0));
        let validation = (0..cfg.validation_size)
            .map(|i| {
                generate_euclidean_instance(
                    cfg.n,
                    cfg.kind,
                    cfg.t_max,
                    sub_seed(cfg.seed, STREAM_VALIDATION, i as u64),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let env_rngs = (0..cfg.parallel_episodes)
            .map(|e| ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, STREAM_ENV_RNG, e as u64)))
            .collect();
        let adam = Adam::new(&cfg.net, cfg.learning_rate);
        let mut trainer = Trainer {
            cfg,
            online,
            target,
            replay,
            envs: Vec::new(),
            env_rngs,
            instance_counter: 0,
            validation,
            adam,
            step: 0,
            warmed_up: false,
            log: Vec::new(),
            best: None,
        };
        for _ in 0..trainer.cfg.parallel_episodes {
            let slot = trainer.fresh_env()?;
            trainer.envs.push(slot);
        }
        Ok(trainer)
    }

    /// Generates a fresh instance whose initial state has at least one
    /// feasible action (tiny budgets can occasionally produce dead starts).
    fn fresh_env(&mut self) -> Result<EnvSlot, TrainError> {
        for _ in 0..1000 {
            let seed = sub_seed(self.cfg.seed, STREAM_INSTANCES, self.instance_counter);
            self.instance_counter += 1;
            let inst = Arc::new(generate_euclidean_instance(
                self.cfg.n,
                self.cfg.kind,
                self.cfg.t_max,
                seed,
            )?);
            let state = PathState::initial(&inst);
            if !state.feasible_extensions(&inst).is_empty() {
                return Ok(EnvSlot { inst, state });
            }
        }
        Err(TrainError::InstanceGeneration(self.instance_counter))
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn log(&self) -> &[TrainLogRecord] {
        &self.log
    }

    pub fn validation_instances(&self) -> &[Instance] {
        &self.validation
    }

    /// Advances every environment by one epsilon-greedy action, pushing the
    /// transitions in environment order.
    fn advance_envs(&mut self, epsilon: f64) -> Result<(), TrainError> {
        let b = self.envs.len();
        let mut actions: Vec<Option<usize>> = vec![None; b];
        let mut greedy: Vec<usize> = Vec::new();
        for e in 0..b {
            let feasible = self.envs[e].state.feasible_extensions(&self.envs[e].inst);
            debug_assert!(!feasible.is_empty());
            let rng = &mut self.env_rngs[e];
            if rng.gen::<f64>() < epsilon {
                actions[e] = Some(feasible[rng.gen_range(0..feasible.len())]);
            } else {
                greedy.push(e);
            }
        }
        if !greedy.is_empty() {
            let items: Vec<(&Instance, &PathState)> = greedy
                .iter()
                .map(|&e| (&*self.envs[e].inst, &self.envs[e].state))
                .collect();
            let qvs = self.online.q_batch(&items);
            for (&e, qv) in greedy.iter().zip(&qvs) {
                actions[e] = Some(qv.feasible_argmax().expect("non-terminal state"));
            }
        }
        for e in 0..b {
            let action = actions[e].expect("action chosen for every environment");
            let (reward, next, done) = env_step(&self.envs[e].state, action, &self.envs[e].inst)?;
            self.replay.push(Transition {
                instance: Arc::clone(&self.envs[e].inst),
                state: self.envs[e].state.clone(),
                action,
                reward,
                next_state: next.clone(),
                done,
            });
            if done {
                self.envs[e] = self.fresh_env()?;
            } else {
                self.envs[e].state = next;
            }
        }
        Ok(())
    }

    /// Greedy-policy mean prize of the online network on the validation set.
    pub fn evaluate_validation(&self) -> f64 {
        let (mean, _) = evaluate_network(&self.online, &self.validation);
        mean
    }

    /// One training step: advance the environments, then one Adam update on
    /// a replayed batch, then the bookkeeping (target sync, validation,
    /// logging).
    pub fn step(&mut self) -> Result<(), TrainError> {
        if !self.warmed_up {
            while self.replay.len() < self.cfg.batch_size {
                self.advance_envs(self.cfg.epsilon_start)?;
            }
            self.warmed_up = true;
        }
        let epsilon = self.cfg.epsilon_at(self.step);
        self.advance_envs(epsilon)?;

        let batch = self.replay.sample(self.cfg.batch_size);
        let targets = double_q_target(&batch, &self.online, &self.target);
        let items: Vec<TdItem<'_>> = batch
            .iter()
            .zip(&targets)
            .map(|(t, &y)| TdItem {
                instance: &t.instance,
                state: &t.state,
                action: t.action,
                target: y,
            })
            .collect();
        let (loss, grads) = td_loss_and_grads(&self.online, &items)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                loss,
            });
        }
        self.adam.step(self.online.params_mut(), &grads);
        self.step += 1;

        if self.step % self.cfg.target_sync == 0 {
            self.target = self.online.clone();
        }

        let val = if (self.cfg.eval_every > 0 && self.step % self.cfg.eval_every == 0)
            || self.step == self.cfg.max_steps
        {
            let mean = self.evaluate_validation();
            if self.best.as_ref().is_none_or(|(b, _)| mean > *b) {
                self.best = Some((mean, self.online.params().clone()));
            }
            Some(mean)
        } else {
            None
        };
        self.log.push(TrainLogRecord {
            step: self.step,
            loss,
            epsilon,
            val_mean_prize: val,
        });
        Ok(())
    }

    /// Runs to `max_steps` and returns the best-on-validation checkpoint.
    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        while self.step < self.cfg.max_steps {
            self.step()?;
        }
        let final_network = self.online.clone();
        let (best_val_mean, best_params) = match self.best.take() {
            Some((v, p)) => (v, p),
            // Zero-step runs never evaluate; the checkpoint is the
            // initialization itself.
            None => (f64::NAN, self.online.params().clone()),
        };
        let network = QNetwork::from_parts(self.cfg.net.clone(), best_params)?;
        Ok(TrainOutcome {
            network,
            final_network,
            log: self.log,
            best_val_mean,
        })
    }
}

/// Trains per config and returns the best-on-validation checkpoint plus the
/// full log. Deterministic given the config.
pub fn train(cfg: TrainConfig) -> Result<TrainOutcome, TrainError> {
    Trainer::new(cfg)?.run()
}

/// Greedy rollout of `policy` on every instance; returns the mean prize and
/// the per-instance prizes. Instances are solved in parallel, results are
/// ordered.
pub fn evaluate(
    policy: &dyn StatePolicy,
    instances: &[Instance],
) -> Result<(f64, Vec<f64>), SearchError> {
    let prizes: Result<Vec<f64>, SearchError> = instances
        .par_iter()
        .map(|inst| greedy_rollout(inst, policy).map(|r| r.prize()))
        .collect();
    let prizes = prizes?;
    let mean = if prizes.is_empty() {
        0.0
    } else {
        prizes.iter().sum::<f64>() / prizes.len() as f64
    };
    Ok((mean, prizes))
}

/// Batched greedy evaluation of a network: all instances advance in
/// lockstep so every step is one batched q evaluation. Matches
/// [`evaluate`] with a greedy q-policy, just faster.
pub fn evaluate_network(net: &QNetwork, instances: &[Instance]) -> (f64, Vec<f64>) {
    let mut states: Vec<PathState> = instances.iter().map(PathState::initial).collect();
    let mut open: Vec<usize> = (0..instances.len())
        .filter(|&i| !states[i].feasible_extensions(&instances[i]).is_empty())
        .collect();
    while !open.is_empty() {
        let items: Vec<(&Instance, &PathState)> =
            open.iter().map(|&i| (&instances[i], &states[i])).collect();
        let qvs = net.q_batch(&items);
        let mut still_open = Vec::with_capacity(open.len());
        for (&i, qv) in open.iter().zip(&qvs) {
            let action = qv.feasible_argmax().expect("state was open");
            let next = states[i]
                .extend(action, &instances[i])
                .expect("feasible action");
            let open_next = !next.feasible_extensions(&instances[i]).is_empty();
            states[i] = next;
            if open_next {
                still_open.push(i);
            }
        }
        open = still_open;
    }
    let prizes: Vec<f64> = states.iter().map(|s| s.prize_so_far()).collect();
    let mean = if prizes.is_empty() {
        0.0
    } else {
        prizes.iter().sum::<f64>() / prizes.len() as f64
    };
    (mean, prizes)
}
