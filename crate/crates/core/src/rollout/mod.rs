//! Populations of learners playing episodes and feeding their own update
//! streams.

mod snapshot;
mod train;

pub use snapshot::{decode_run_checkpoint, encode_run_checkpoint, RUN_MAGIC, RUN_VERSION};
pub use train::{run_deterministic, run_threaded, NullSink, RunSink, StopFlag};

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Action, Condition, EnvConfig, EnvError, RuleSet, TimedEvent, WorldState};
use crate::learner::{
    forward_step, observation_input, sample_action, HyperParams, Learner, LearnerError, LstmState, NetParams, NetShape,
    StepScratch, Trajectory,
};
use crate::metrics::{compute_episode_metrics, EpisodeCounts, EpisodeLog, EpisodeMetrics, MetricsError};
use crate::percept::{render_into, Observation, Palette, ViewMode, OBS_LEN};

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("episode {episode}: {source}")]
    Env { episode: u64, source: EnvError },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("trajectory queue of learner {learner} is full")]
    QueueFull { learner: usize },
    #[error("run checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything that determines one population's training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub condition: Condition,
    pub hyper: HyperParams,
    pub shape: NetShape,
    pub view: ViewMode,
    pub population_size: usize,
    pub population_id: u32,
    /// Episodes played concurrently (one round in deterministic mode).
    pub envs: usize,
    pub total_episodes: u64,
    pub seed: u64,
    /// Per-learner trajectory queue bound.
    pub queue_capacity: usize,
}

impl RunConfig {
    pub fn new(env: EnvConfig, condition: Condition) -> Self {
        Self {
            env,
            condition,
            hyper: HyperParams::default(),
            shape: NetShape::default(),
            view: ViewMode::Egocentric,
            population_size: 12,
            population_id: 0,
            envs: 8,
            total_episodes: 1000,
            seed: 0,
            queue_capacity: 256,
        }
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        let bad = |m: String| Err(RolloutError::InvalidConfig(m));
        self.env.validate().map_err(|e| RolloutError::InvalidConfig(e.to_string()))?;
        self.hyper.validate()?;
        let k = self.env.players_per_episode;
        if k > self.population_size {
            return bad(format!("{k} players cannot be drawn without replacement from {} learners", self.population_size));
        }
        if self.env.episode_length as usize % self.hyper.unroll_length != 0 {
            return bad(format!(
                "episode length {} is not a multiple of the unroll length {}",
                self.env.episode_length, self.hyper.unroll_length
            ));
        }
        if self.envs == 0 {
            return bad("envs must be at least 1".into());
        }
        if self.shape.input_len() != OBS_LEN || self.shape.actions != Action::COUNT {
            return bad("network shape does not match the observation and action spaces".into());
        }
        let per_round = self.envs * self.trajectories_per_player();
        if self.queue_capacity < self.hyper.batch_size + per_round {
            return bad(format!(
                "queue capacity {} must hold a batch ({}) plus one round of trajectories ({per_round})",
                self.queue_capacity, self.hyper.batch_size
            ));
        }
        Ok(())
    }

    pub fn trajectories_per_player(&self) -> usize {
        self.env.episode_length as usize / self.hyper.unroll_length
    }
}

/// Independent 64-bit seed for `(run seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn derived_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, stream, index))
}

/// Uniformly random `k`-subset of `0..population`, in random slot order.
pub fn sample_players<R: rand::Rng + ?Sized>(population: usize, k: usize, rng: &mut R) -> Result<Vec<usize>, RolloutError> {
    if k > population {
        return Err(RolloutError::InvalidConfig(format!("cannot draw {k} of {population} learners")));
    }
    Ok(rand::seq::index::sample(rng, population, k).into_vec())
}

/// Which learner sits in each player slot of an episode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchAssignment {
    pub episode: u64,
    pub learners: Vec<usize>,
}

pub fn assignment_for(cfg: &RunConfig, episode: u64) -> MatchAssignment {
    let mut rng = derived_rng(cfg.seed, "match", episode);
    let learners = sample_players(cfg.population_size, cfg.env.players_per_episode, &mut rng).expect("validated config");
    MatchAssignment { episode, learners }
}

/// One population: a fixed set of learners trained under one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub id: u32,
    pub condition: Condition,
    pub learners: Vec<Learner>,
}

impl Population {
    pub fn init(cfg: &RunConfig) -> Self {
        let learners = (0..cfg.population_size)
            .map(|i| Learner::new(cfg.shape, &cfg.hyper, &mut derived_rng(cfg.seed, "init", i as u64)))
            .collect();
        Self { id: cfg.population_id, condition: cfg.condition, learners }
    }

    pub fn snapshots(&self) -> Vec<Arc<NetParams<f32>>> {
        self.learners.iter().map(|l| Arc::new(l.params.clone())).collect()
    }
}

/// Per-learner bounded FIFO of trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryQueue {
    capacity: usize,
    queues: Vec<VecDeque<Trajectory>>,
}

impl TrajectoryQueue {
    pub fn new(learners: usize, capacity: usize) -> Self {
        Self { capacity, queues: vec![VecDeque::new(); learners] }
    }

    pub fn push(&mut self, learner: usize, traj: Trajectory) -> Result<(), RolloutError> {
        let q = &mut self.queues[learner];
        if q.len() >= self.capacity {
            return Err(RolloutError::QueueFull { learner });
        }
        q.push_back(traj);
        Ok(())
    }

    /// Removes the oldest `n` trajectories of a learner, if that many wait.
    pub fn pop_batch(&mut self, learner: usize, n: usize) -> Option<Vec<Trajectory>> {
        let q = &mut self.queues[learner];
        (q.len() >= n).then(|| q.drain(..n).collect())
    }

    pub fn len(&self, learner: usize) -> usize {
        self.queues[learner].len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(|q| q.is_empty())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn learners(&self) -> usize {
        self.queues.len()
    }

    pub fn pending(&self, learner: usize) -> impl Iterator<Item = &Trajectory> {
        self.queues[learner].iter()
    }
}

/// Resumable state of a run, captured between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub population: Population,
    pub queue: TrajectoryQueue,
    pub next_episode: u64,
}

impl RunState {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            population: Population::init(cfg),
            queue: TrajectoryQueue::new(cfg.population_size, cfg.queue_capacity),
            next_episode: 0,
        }
    }

    pub fn is_complete(&self, cfg: &RunConfig) -> bool {
        self.next_episode >= cfg.total_episodes
    }
}

/// Result of one simulated episode.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub assignment: MatchAssignment,
    /// `(learner id, trajectory)` in the order the chunks closed.
    pub trajectories: Vec<(usize, Trajectory)>,
    pub events: Vec<TimedEvent>,
    pub metrics: EpisodeMetrics,
}

/// Plays one episode with the given parameter snapshots (one per learner of
/// the population) and cuts each player's experience into trajectories.
pub fn run_episode(
    cfg: &RunConfig,
    rules: &Arc<RuleSet>,
    palette: &Palette,
    assignment: &MatchAssignment,
    snapshots: &[Arc<NetParams<f32>>],
) -> Result<EpisodeResult, RolloutError> {
    run_episode_observed(cfg, rules, palette, assignment, snapshots, None)
}

/// [`run_episode`] that also shows `observer` the world after reset and
/// after every step.
pub fn run_episode_observed(
    cfg: &RunConfig,
    rules: &Arc<RuleSet>,
    palette: &Palette,
    assignment: &MatchAssignment,
    snapshots: &[Arc<NetParams<f32>>],
    mut observer: Option<&mut dyn FnMut(&WorldState)>,
) -> Result<EpisodeResult, RolloutError> {
    let episode = assignment.episode;
    let env_err = |source| RolloutError::Env { episode, source };
    let env = Arc::new(cfg.env.clone());
    let env_seed = u64::from_le_bytes(derive_seed(cfg.seed, "env", episode)[..8].try_into().unwrap());
    let mut state = WorldState::reset(env, rules.clone(), env_seed).map_err(env_err)?;
    let mut act_rng = derived_rng(cfg.seed, "act", episode);
    let k = assignment.learners.len();
    let unroll = cfg.hyper.unroll_length;
    let len = cfg.env.episode_length as usize;
    let lstm = cfg.shape.lstm;

    let mut recurrent: Vec<LstmState<f32>> = (0..k).map(|_| LstmState::zeros(lstm)).collect();
    let mut scratch = StepScratch::new(&cfg.shape);
    let mut input = vec![0f32; OBS_LEN];
    let mut obs = Observation::default();
    let mut chunks: Vec<Option<Trajectory>> = vec![None; k];
    let mut finished = Vec::with_capacity(k * (len / unroll));
    let mut actions = vec![Action::NoOp; k];
    let mut events = Vec::new();
    let mut rewards = Vec::with_capacity(len);
    if let Some(f) = observer.as_mut() {
        f(&state);
    }

    for s in 0..len {
        for p in 0..k {
            render_into(&state, p, palette, cfg.view, &mut obs);
            if s % unroll == 0 {
                chunks[p] = Some(Trajectory {
                    observations: Vec::with_capacity(unroll),
                    actions: Vec::with_capacity(unroll),
                    behavior_logp: Vec::with_capacity(unroll),
                    rewards: Vec::with_capacity(unroll),
                    dones: Vec::with_capacity(unroll),
                    bootstrap: None,
                    initial_state: recurrent[p].clone(),
                });
            }
            observation_input(&obs, &mut input);
            let out = forward_step(&snapshots[assignment.learners[p]], &input, &mut recurrent[p], &mut scratch);
            if out.logits.iter().any(|l| !l.is_finite()) {
                return Err(LearnerError::NonFiniteParams { update: 0 }.into());
            }
            let (a, logp) = sample_action(&out.logits, &mut act_rng);
            actions[p] = Action::from_index(a).expect("action index");
            let chunk = chunks[p].as_mut().expect("open chunk");
            chunk.observations.push(obs.clone());
            chunk.actions.push(a as u8);
            chunk.behavior_logp.push(logp);
        }
        let outcome = state.step(&actions).map_err(env_err)?;
        if let Some(f) = observer.as_mut() {
            f(&state);
        }
        let t = state.timestep();
        events.extend(outcome.events.into_iter().map(|event| TimedEvent { t, event }));
        let last = s + 1 == len;
        for p in 0..k {
            let chunk = chunks[p].as_mut().expect("open chunk");
            chunk.rewards.push(outcome.rewards[p]);
            chunk.dones.push(last);
        }
        rewards.push(outcome.rewards);
        if (s + 1) % unroll == 0 {
            for p in 0..k {
                let mut chunk = chunks[p].take().expect("open chunk");
                if !last {
                    chunk.bootstrap = Some(crate::percept::render_observation(&state, p, palette, cfg.view));
                }
                finished.push((assignment.learners[p], chunk));
            }
        }
    }

    let log = EpisodeLog { episode_length: cfg.env.episode_length, num_players: k, events, rewards };
    let counts: EpisodeCounts = compute_episode_metrics(&log, cfg.env.poisonous_berry)?;
    let metrics = EpisodeMetrics {
        episode,
        population: cfg.population_id,
        condition: cfg.condition,
        learners: assignment.learners.iter().map(|&l| l as u32).collect(),
        counts,
    };
    Ok(EpisodeResult { assignment: assignment.clone(), trajectories: finished, events: log.events, metrics })
}

#[cfg(test)]
mod tests;
