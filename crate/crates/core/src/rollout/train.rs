use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, SendTimeoutError};

use super::{assignment_for, run_episode, run_episode_observed, EpisodeResult, RolloutError, RunConfig, RunState};
use crate::env::{RuleSet, WorldState};
use crate::learner::{Learner, NetParams, Trajectory, UpdateStats};
use crate::percept::Palette;

/// Receives the outputs of a run as they are produced.
pub trait RunSink {
    /// Called once per episode, in episode order.
    fn episode(&mut self, result: &EpisodeResult) -> Result<(), RolloutError>;

    fn update(&mut self, _learner: usize, _update: u64, _stats: &UpdateStats) -> Result<(), RolloutError> {
        Ok(())
    }

    /// Batch about to be consumed by a learner (deterministic mode only).
    fn consumed(&mut self, _learner: usize, _batch: &[Trajectory]) {}

    /// Whether to receive world frames of `episode` (deterministic mode only).
    fn wants_frames(&self, _episode: u64) -> bool {
        false
    }

    /// World state after reset and after each step of a requested episode.
    fn frame(&mut self, _episode: u64, _state: &WorldState) {}

    /// Called at every resumable boundary of a deterministic run. Returning
    /// `false` stops the run there.
    fn round_end(&mut self, _state: &RunState) -> Result<bool, RolloutError> {
        Ok(true)
    }
}

/// Discards everything.
pub struct NullSink;

impl RunSink for NullSink {
    fn episode(&mut self, _result: &EpisodeResult) -> Result<(), RolloutError> {
        Ok(())
    }
}

/// Shared flag asking a threaded run to wind down.
#[derive(Clone, Debug, Default)]
pub struct StopFlag(Arc<AtomicBool>);

impl StopFlag {
    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_set(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

fn setup(cfg: &RunConfig) -> Result<(Arc<RuleSet>, Palette), RolloutError> {
    cfg.validate()?;
    let rules = Arc::new(RuleSet::new(cfg.condition, &cfg.env));
    let palette = Palette::new(cfg.env.num_berry_types).map_err(|e| RolloutError::InvalidConfig(e.to_string()))?;
    Ok((rules, palette))
}

/// Single-threaded round-robin schedule. Each round plays `envs` episodes
/// against parameter snapshots taken at the start of the round, then every
/// learner (in id order) consumes full batches from its queue. The output
/// is a pure function of the configuration.
pub fn run_deterministic(cfg: &RunConfig, state: &mut RunState, sink: &mut dyn RunSink) -> Result<(), RolloutError> {
    let (rules, palette) = setup(cfg)?;
    while !state.is_complete(cfg) {
        let end = (state.next_episode + cfg.envs as u64).min(cfg.total_episodes);
        let snapshots = state.population.snapshots();
        for episode in state.next_episode..end {
            let assignment = assignment_for(cfg, episode);
            let result = if sink.wants_frames(episode) {
                let mut observer = |w: &WorldState| sink.frame(episode, w);
                run_episode_observed(cfg, &rules, &palette, &assignment, &snapshots, Some(&mut observer))?
            } else {
                run_episode(cfg, &rules, &palette, &assignment, &snapshots)?
            };
            for (learner, traj) in &result.trajectories {
                state.queue.push(*learner, traj.clone())?;
            }
            sink.episode(&result)?;
        }
        state.next_episode = end;
        for (i, learner) in state.population.learners.iter_mut().enumerate() {
            while let Some(batch) = state.queue.pop_batch(i, cfg.hyper.batch_size) {
                sink.consumed(i, &batch);
                let stats = learner.update(&batch, &cfg.hyper, None)?;
                sink.update(i, learner.updates, &stats)?;
            }
        }
        if !sink.round_end(state)? {
            break;
        }
    }
    Ok(())
}

enum Msg {
    Episode(Box<EpisodeResult>),
    Update(usize, u64, UpdateStats),
    Failed(RolloutError),
}

/// Concurrent schedule: `envs` worker threads play episodes against the
/// latest published parameters and feed per-learner bounded queues; one
/// updater thread per learner consumes its own queue. Episodes reach the
/// sink in order. Results depend on thread timing.
pub fn run_threaded(
    cfg: &RunConfig,
    state: &mut RunState,
    sink: &mut dyn RunSink,
    stop: Option<&StopFlag>,
) -> Result<(), RolloutError> {
    let (rules, palette) = setup(cfg)?;
    let pop = cfg.population_size;
    let published: Vec<RwLock<Arc<NetParams<f32>>>> =
        state.population.learners.iter().map(|l| RwLock::new(Arc::new(l.params.clone()))).collect();
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..pop).map(|_| bounded::<Trajectory>(cfg.queue_capacity)).unzip();
    for i in 0..pop {
        while let Some(mut batch) = state.queue.pop_batch(i, 1) {
            senders[i].send(batch.pop().expect("one item")).expect("receiver alive");
        }
    }
    let (msg_tx, msg_rx) = unbounded::<Msg>();
    let counter = AtomicU64::new(state.next_episode);
    let abort = AtomicBool::new(false);
    let halted = || abort.load(Ordering::SeqCst) || stop.is_some_and(|s| s.is_set());
    let learners: Vec<Learner> = std::mem::take(&mut state.population.learners);
    let mut first_error = None;
    let mut done = BTreeMap::new();
    let mut next_to_emit = state.next_episode;

    let returned = std::thread::scope(|scope| {
        for _ in 0..cfg.envs {
            let senders = senders.clone();
            let msg_tx = msg_tx.clone();
            let (rules, palette, published, counter, halted) = (&rules, &palette, &published, &counter, &halted);
            scope.spawn(move || loop {
                if halted() {
                    break;
                }
                let episode = counter.fetch_add(1, Ordering::SeqCst);
                if episode >= cfg.total_episodes {
                    break;
                }
                let snapshots: Vec<_> = published.iter().map(|p| p.read().expect("snapshot lock").clone()).collect();
                let result = match run_episode(cfg, rules, palette, &assignment_for(cfg, episode), &snapshots) {
                    Ok(r) => r,
                    Err(e) => {
                        let _ = msg_tx.send(Msg::Failed(e));
                        break;
                    }
                };
                for (learner, traj) in &result.trajectories {
                    let mut item = traj.clone();
                    loop {
                        match senders[*learner].send_timeout(item, Duration::from_secs(10)) {
                            Ok(()) => break,
                            Err(SendTimeoutError::Timeout(back)) => {
                                eprintln!("queue of learner {learner} full for 10s (episode {episode}); still waiting");
                                item = back;
                            }
                            Err(SendTimeoutError::Disconnected(_)) => break,
                        }
                    }
                }
                let _ = msg_tx.send(Msg::Episode(Box::new(result)));
            });
        }
        drop(senders);
        let updaters: Vec<_> = learners
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(i, (mut learner, rx))| {
                let msg_tx = msg_tx.clone();
                let slot = &published[i];
                scope.spawn(move || {
                    let mut batch = Vec::with_capacity(cfg.hyper.batch_size);
                    let mut failed = false;
                    for traj in rx.iter() {
                        if failed {
                            batch.push(traj);
                            continue;
                        }
                        batch.push(traj);
                        if batch.len() == cfg.hyper.batch_size {
                            match learner.update(&batch, &cfg.hyper, None) {
                                Ok(stats) => {
                                    *slot.write().expect("snapshot lock") = Arc::new(learner.params.clone());
                                    let _ = msg_tx.send(Msg::Update(i, learner.updates, stats));
                                    batch.clear();
                                }
                                Err(e) => {
                                    let _ = msg_tx.send(Msg::Failed(e.into()));
                                    failed = true;
                                }
                            }
                        }
                    }
                    (learner, batch)
                })
            })
            .collect();
        drop(msg_tx);
        for msg in msg_rx.iter() {
            let outcome = match msg {
                Msg::Episode(r) => {
                    done.insert(r.metrics.episode, r);
                    let mut res = Ok(());
                    while let Some(r) = done.remove(&next_to_emit) {
                        res = res.and_then(|_| sink.episode(&r));
                        next_to_emit += 1;
                    }
                    res
                }
                Msg::Update(i, n, stats) => sink.update(i, n, &stats),
                Msg::Failed(e) => Err(e),
            };
            if let Err(e) = outcome {
                abort.store(true, Ordering::SeqCst);
                first_error.get_or_insert(e);
            }
        }
        updaters.into_iter().map(|h| h.join().expect("updater thread")).collect::<Vec<_>>()
    });

    for (i, (learner, leftover)) in returned.into_iter().enumerate() {
        state.population.learners.push(learner);
        for traj in leftover {
            if let Err(e) = state.queue.push(i, traj) {
                first_error.get_or_insert(e);
            }
        }
    }
    state.next_episode = next_to_emit;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
