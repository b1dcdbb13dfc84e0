use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Condition, EnvConfig, EnvError, RuleSet, WorldState};
use crate::percept::{render_into, Observation, Palette, ViewMode};

/// Throughput of one benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub agent_steps: u64,
    pub seconds: f64,
    pub agent_steps_per_sec: f64,
}

fn report(name: &str, agent_steps: u64, start: Instant) -> BenchReport {
    let seconds = start.elapsed().as_secs_f64();
    BenchReport { name: name.into(), agent_steps, seconds, agent_steps_per_sec: agent_steps as f64 / seconds }
}

/// Steps the environment with uniformly random actions, single-threaded,
/// resetting at episode ends, until at least `agent_steps` player-steps
/// have been simulated. With `render`, every player's observation is also
/// drawn each step.
pub fn bench_env(
    cfg: &EnvConfig,
    condition: Condition,
    agent_steps: u64,
    seed: u64,
    render: bool,
) -> Result<BenchReport, EnvError> {
    let env = Arc::new(cfg.clone());
    let rules = Arc::new(RuleSet::new(condition, cfg));
    let palette = Palette::new(cfg.num_berry_types).map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.players_per_episode;
    let mut actions = vec![Action::NoOp; k];
    let mut obs = Observation::default();
    let mut episode = 0u64;
    let mut state = WorldState::reset(env.clone(), rules.clone(), seed)?;
    let mut done = 0u64;
    let start = Instant::now();
    while done < agent_steps {
        if state.is_finished() {
            episode += 1;
            state = WorldState::reset(env.clone(), rules.clone(), seed.wrapping_add(episode))?;
        }
        if render {
            for p in 0..k {
                render_into(&state, p, &palette, ViewMode::Egocentric, &mut obs);
            }
        }
        for a in actions.iter_mut() {
            *a = Action::ALL[rng.gen_range(0..Action::COUNT)];
        }
        std::hint::black_box(state.step(&actions)?);
        done += k as u64;
    }
    std::hint::black_box(&obs);
    Ok(report(if render { "env_step_render" } else { "env_step" }, done, start))
}
