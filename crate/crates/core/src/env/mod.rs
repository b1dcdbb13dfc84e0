//! The taboo-foraging gridworld: a seeded, simultaneous-move Markov game.
//!
//! One [`WorldState`] holds everything needed to continue an episode,
//! including its own random generator, so instances can be cloned, compared
//! and stepped on independent threads. A step resolves in a fixed order:
//!
//! 1. beams, against pre-move positions;
//! 2. moves and rotations, with collisions settled in a random priority order;
//! 3. berry eating, which happens on cell entry;
//! 4. poison activations due at the new timestep;
//! 5. berry respawns;
//! 6. the timestep increments.
//!
//! All events of a step are stamped with the new timestep.

mod config;
mod config_file;
mod events;

pub use config::{BerryType, Condition, EnvConfig, RuleSet, Verdict};
pub use config_file::{parse_key_values, ConfigFile};
pub use events::{EnvEvent, EventRecord, TimedEvent};

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("configuration infeasible: {needed} entities do not fit in {cells} cells")]
    Infeasible { needed: usize, cells: usize },
    #[error("episode already finished at timestep {0}")]
    EpisodeFinished(u32),
    #[error("expected {expected} actions, got {got}")]
    WrongActionCount { expected: usize, got: usize },
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed event record: {0}")]
    BadEvent(String),
}

/// Per-player action set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    RotateLeft,
    RotateRight,
    FireBeam,
    NoOp,
}

impl Action {
    pub const COUNT: usize = 8;
    pub const ALL: [Action; Action::COUNT] = [
        Action::MoveUp,
        Action::MoveDown,
        Action::MoveLeft,
        Action::MoveRight,
        Action::RotateLeft,
        Action::RotateRight,
        Action::FireBeam,
        Action::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Absolute displacement `(dx, dy)` for move actions; `y` grows downward.
    fn displacement(self) -> Option<(i32, i32)> {
        match self {
            Action::MoveUp => Some((0, -1)),
            Action::MoveDown => Some((0, 1)),
            Action::MoveLeft => Some((-1, 0)),
            Action::MoveRight => Some((1, 0)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Orientation::North, Orientation::East, Orientation::South, Orientation::West];

    pub fn rotate_left(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }

    pub fn rotate_right(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    /// Unit vector `(dx, dy)` of the facing direction.
    pub fn forward(self) -> (i32, i32) {
        match self {
            Orientation::North => (0, -1),
            Orientation::East => (1, 0),
            Orientation::South => (0, 1),
            Orientation::West => (-1, 0),
        }
    }

    /// Unit vector pointing to the agent's right-hand side.
    pub fn right(self) -> (i32, i32) {
        self.rotate_right().forward()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: u16,
    pub y: u16,
}

impl Pos {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x: x as u16, y: y as u16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Pos,
    pub orientation: Orientation,
    pub marked: bool,
    pub poisoned: bool,
    /// Activation timesteps of poison doses not yet in effect.
    pub pending_poison: Vec<u32>,
    pub episode_return: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BerrySite {
    pub position: Pos,
    pub berry: BerryType,
    pub present: bool,
}

const EMPTY: u32 = u32::MAX;

/// Result of one simultaneous step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<i32>,
    pub events: Vec<EnvEvent>,
}

/// Complete simulation state of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    config: Arc<EnvConfig>,
    rules: Arc<RuleSet>,
    timestep: u32,
    agents: Vec<AgentState>,
    berries: Vec<BerrySite>,
    cell_berry: Vec<u32>,
    cell_agent: Vec<u32>,
    rng: ChaCha8Rng,
}

impl WorldState {
    /// Starts a new episode: berry sites and agents on distinct random cells,
    /// berry types assigned round-robin and shuffled.
    pub fn reset(config: Arc<EnvConfig>, rules: Arc<RuleSet>, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        rules.validate(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = config.num_cells();
        let mut order: Vec<usize> = (0..cells).collect();
        order.shuffle(&mut rng);

        let mut types: Vec<BerryType> =
            (0..config.berry_sites).map(|i| (i % config.num_berry_types) as BerryType).collect();
        types.shuffle(&mut rng);

        let w = config.grid_width;
        let mut cell_berry = vec![EMPTY; cells];
        let berries: Vec<BerrySite> = order[..config.berry_sites]
            .iter()
            .zip(&types)
            .enumerate()
            .map(|(site, (&cell, &berry))| {
                cell_berry[cell] = site as u32;
                BerrySite { position: Pos::new(cell % w, cell / w), berry, present: true }
            })
            .collect();

        let mut cell_agent = vec![EMPTY; cells];
        let spawn = &order[config.berry_sites..config.berry_sites + config.players_per_episode];
        let agents = spawn
            .iter()
            .enumerate()
            .map(|(slot, &cell)| {
                cell_agent[cell] = slot as u32;
                AgentState {
                    position: Pos::new(cell % w, cell / w),
                    orientation: Orientation::ALL[rng.gen_range(0..4)],
                    marked: false,
                    poisoned: false,
                    pending_poison: Vec::new(),
                    episode_return: 0,
                }
            })
            .collect();

        Ok(Self { config, rules, timestep: 0, agents, berries, cell_berry, cell_agent, rng })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn timestep(&self) -> u32 {
        self.timestep
    }

    pub fn is_finished(&self) -> bool {
        self.timestep >= self.config.episode_length
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn berries(&self) -> &[BerrySite] {
        &self.berries
    }

    pub fn num_players(&self) -> usize {
        self.agents.len()
    }

    fn cell_index(&self, p: Pos) -> usize {
        p.y as usize * self.config.grid_width + p.x as usize
    }

    /// Offsets `p` by `(dx, dy)`, or `None` when the result leaves the grid.
    pub fn offset(&self, p: Pos, dx: i32, dy: i32) -> Option<Pos> {
        let x = p.x as i32 + dx;
        let y = p.y as i32 + dy;
        if x < 0 || y < 0 || x >= self.config.grid_width as i32 || y >= self.config.grid_height as i32 {
            None
        } else {
            Some(Pos { x: x as u16, y: y as u16 })
        }
    }

    /// Player standing at `p`, if any.
    pub fn agent_at(&self, p: Pos) -> Option<usize> {
        match self.cell_agent[self.cell_index(p)] {
            EMPTY => None,
            slot => Some(slot as usize),
        }
    }

    /// Berry type present at `p`, if any.
    pub fn berry_at(&self, p: Pos) -> Option<BerryType> {
        match self.cell_berry[self.cell_index(p)] {
            EMPTY => None,
            site => {
                let site = &self.berries[site as usize];
                site.present.then_some(site.berry)
            }
        }
    }

    pub fn present_berries(&self) -> usize {
        self.berries.iter().filter(|b| b.present).count()
    }

    /// First agent on the shooter's facing ray within `beam_range` cells.
    pub fn resolve_beam(&self, shooter: usize) -> Option<usize> {
        let agent = &self.agents[shooter];
        let (dx, dy) = agent.orientation.forward();
        let mut p = agent.position;
        for _ in 0..self.config.beam_range {
            p = self.offset(p, dx, dy)?;
            if let Some(target) = self.agent_at(p) {
                return Some(target);
            }
        }
        None
    }

    /// Records a poisonous meal eaten at `now`; the dose takes effect at
    /// `now + poison_delay`. Already-poisoned agents are unaffected.
    pub fn schedule_poison(&mut self, eater: usize, now: u32) {
        let delay = self.config.poison_delay;
        let agent = &mut self.agents[eater];
        if !agent.poisoned {
            agent.pending_poison.push(now + delay);
        }
    }

    /// Activates every dose due at `now`.
    fn apply_poison(&mut self, now: u32, events: &mut Vec<EnvEvent>) {
        for (slot, agent) in self.agents.iter_mut().enumerate() {
            if agent.pending_poison.contains(&now) {
                agent.pending_poison.clear();
                if !agent.poisoned {
                    agent.poisoned = true;
                    events.push(EnvEvent::PoisonActivated { player: slot });
                }
            }
        }
    }

    /// Each consumed site not covered by an agent regrows with `respawn_prob`.
    pub fn respawn_berries(&mut self) {
        let p = self.config.respawn_prob;
        for site in 0..self.berries.len() {
            let b = self.berries[site];
            if b.present || self.cell_agent[self.cell_index(b.position)] != EMPTY {
                continue;
            }
            if self.rng.gen::<f64>() < p {
                self.berries[site].present = true;
            }
        }
    }

    /// Advances the episode by one simultaneous step.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome, EnvError> {
        if self.is_finished() {
            return Err(EnvError::EpisodeFinished(self.timestep));
        }
        let n = self.agents.len();
        if actions.len() != n {
            return Err(EnvError::WrongActionCount { expected: n, got: actions.len() });
        }
        let cfg = Arc::clone(&self.config);
        let now = self.timestep + 1;
        let mut rewards = vec![0i32; n];
        let mut events = Vec::new();

        let mut priority: Vec<usize> = (0..n).collect();
        priority.shuffle(&mut self.rng);

        // Beams see pre-move positions. A mark cleared by one punisher is
        // gone for later punishers in the same step.
        for &shooter in &priority {
            if actions[shooter] != Action::FireBeam {
                continue;
            }
            match self.resolve_beam(shooter) {
                Some(target) => {
                    let was_marked = self.agents[target].marked;
                    rewards[shooter] -= cfg.beam_cost;
                    rewards[target] -= cfg.punished_penalty;
                    events.push(EnvEvent::PunishHit { punisher: shooter, target, target_was_marked: was_marked });
                    if was_marked {
                        rewards[shooter] += cfg.punisher_bounty;
                        self.agents[target].marked = false;
                        events.push(EnvEvent::MarkRemoved { player: target });
                    }
                }
                None => {
                    if cfg.charge_beam_on_miss {
                        rewards[shooter] -= cfg.beam_cost;
                    }
                    events.push(EnvEvent::BeamMissed { punisher: shooter });
                }
            }
        }

        let mut moved = vec![false; n];
        for &slot in &priority {
            let action = actions[slot];
            match action {
                Action::RotateLeft => self.agents[slot].orientation = self.agents[slot].orientation.rotate_left(),
                Action::RotateRight => self.agents[slot].orientation = self.agents[slot].orientation.rotate_right(),
                _ => {
                    let Some((dx, dy)) = action.displacement() else { continue };
                    let from = self.agents[slot].position;
                    let Some(to) = self.offset(from, dx, dy) else { continue };
                    let to_cell = self.cell_index(to);
                    if self.cell_agent[to_cell] != EMPTY {
                        continue;
                    }
                    let from_cell = self.cell_index(from);
                    self.cell_agent[from_cell] = EMPTY;
                    self.cell_agent[to_cell] = slot as u32;
                    self.agents[slot].position = to;
                    moved[slot] = true;
                }
            }
        }

        for &slot in &priority {
            if !moved[slot] {
                continue;
            }
            let cell = self.cell_index(self.agents[slot].position);
            let site = self.cell_berry[cell];
            if site == EMPTY || !self.berries[site as usize].present {
                continue;
            }
            self.berries[site as usize].present = false;
            let berry = self.berries[site as usize].berry;
            let wrongful = self.rules.is_wrongful(berry);
            let reward = if self.agents[slot].poisoned { cfg.poisoned_berry_reward } else { cfg.berry_reward };
            rewards[slot] += reward;
            events.push(EnvEvent::BerryEaten { player: slot, berry, wrongful, reward });
            if wrongful && !self.agents[slot].marked {
                self.agents[slot].marked = true;
                events.push(EnvEvent::MarkApplied { player: slot });
            }
            if berry == cfg.poisonous_berry {
                self.schedule_poison(slot, now);
            }
        }

        self.apply_poison(now, &mut events);
        self.respawn_berries();
        self.timestep = now;
        for (agent, r) in self.agents.iter_mut().zip(&rewards) {
            agent.episode_return += *r as i64;
        }
        Ok(StepOutcome { rewards, events })
    }

    /// Rebuilds a state from explicit parts. Intended for scripted scenarios
    /// and tests; positions must be in bounds and distinct.
    pub fn from_parts(
        config: Arc<EnvConfig>,
        rules: Arc<RuleSet>,
        timestep: u32,
        agents: Vec<AgentState>,
        berries: Vec<BerrySite>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        rules.validate(&config)?;
        let cells = config.num_cells();
        let w = config.grid_width;
        let in_bounds = |p: Pos| (p.x as usize) < w && (p.y as usize) < config.grid_height;
        let mut cell_berry = vec![EMPTY; cells];
        for (i, b) in berries.iter().enumerate() {
            if !in_bounds(b.position) || b.berry as usize >= config.num_berry_types {
                return Err(EnvError::InvalidConfig(format!("berry site {i} invalid")));
            }
            let c = b.position.y as usize * w + b.position.x as usize;
            if cell_berry[c] != EMPTY {
                return Err(EnvError::InvalidConfig(format!("two berry sites share cell {c}")));
            }
            cell_berry[c] = i as u32;
        }
        let mut cell_agent = vec![EMPTY; cells];
        for (i, a) in agents.iter().enumerate() {
            if !in_bounds(a.position) {
                return Err(EnvError::InvalidConfig(format!("agent {i} out of bounds")));
            }
            let c = a.position.y as usize * w + a.position.x as usize;
            if cell_agent[c] != EMPTY {
                return Err(EnvError::InvalidConfig(format!("two agents share cell {c}")));
            }
            if cell_berry[c] != EMPTY && berries[cell_berry[c] as usize].present {
                return Err(EnvError::InvalidConfig(format!("agent {i} stands on a present berry")));
            }
            cell_agent[c] = i as u32;
        }
        Ok(Self {
            config,
            rules,
            timestep,
            agents,
            berries,
            cell_berry,
            cell_agent,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn set_orientation(&mut self, slot: usize, orientation: Orientation) {
        self.agents[slot].orientation = orientation;
    }

    pub fn set_marked(&mut self, slot: usize, marked: bool) {
        self.agents[slot].marked = marked;
    }
}

/// Creates a fresh agent at `position`, unmarked and healthy.
pub fn fresh_agent(position: Pos, orientation: Orientation) -> AgentState {
    AgentState {
        position,
        orientation,
        marked: false,
        poisoned: false,
        pending_poison: Vec::new(),
        episode_return: 0,
    }
}

#[cfg(test)]
mod tests;
