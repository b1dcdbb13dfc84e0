use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EnvError;

/// Identifier of a berry type, `0..num_berry_types`.
pub type BerryType = u16;

/// Full parameterization of one experimental condition's world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    pub num_berry_types: usize,
    pub poison_delay: u32,
    pub players_per_episode: usize,
    pub episode_length: u32,
    pub berry_reward: i32,
    pub poisoned_berry_reward: i32,
    pub beam_cost: i32,
    pub punished_penalty: i32,
    pub punisher_bounty: i32,
    pub respawn_prob: f64,
    pub berry_sites: usize,
    pub beam_range: usize,
    pub rng_seed: u64,
    /// The single berry type that poisons its eater.
    pub poisonous_berry: BerryType,
    /// The harmless type that becomes taboo under the silly-rule condition.
    pub silly_berry: BerryType,
    /// Charge `beam_cost` even when the beam hits nobody.
    pub charge_beam_on_miss: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_width: 33,
            grid_height: 12,
            num_berry_types: 24,
            poison_delay: 100,
            players_per_episode: 8,
            episode_length: 1000,
            berry_reward: 4,
            poisoned_berry_reward: 1,
            beam_cost: 20,
            punished_penalty: 35,
            punisher_bounty: 35,
            respawn_prob: 0.05,
            berry_sites: 48,
            beam_range: 5,
            rng_seed: 0,
            poisonous_berry: 0,
            silly_berry: 1,
            charge_beam_on_miss: false,
        }
    }
}

impl EnvConfig {
    /// Scaled-down world that keeps every mechanic: 11x8 grid, 8 berry
    /// types, 4 players, 200-step episodes, poison after 30 steps.
    pub fn desk() -> Self {
        Self {
            grid_width: 11,
            grid_height: 8,
            num_berry_types: 8,
            players_per_episode: 4,
            episode_length: 200,
            poison_delay: 30,
            berry_sites: 24,
            ..Self::default()
        }
    }

    pub fn num_cells(&self) -> usize {
        self.grid_width * self.grid_height
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let invalid = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.grid_width == 0 || self.grid_height == 0 {
            return invalid("grid dimensions must be positive".into());
        }
        if self.grid_width > u16::MAX as usize || self.grid_height > u16::MAX as usize {
            return invalid("grid dimensions exceed 65535".into());
        }
        if self.players_per_episode == 0 {
            return invalid("players_per_episode must be at least 1".into());
        }
        let needed = self.berry_sites + self.players_per_episode;
        if needed > self.num_cells() {
            return Err(EnvError::Infeasible {
                needed,
                cells: self.num_cells(),
            });
        }
        if !(self.respawn_prob > 0.0 && self.respawn_prob <= 1.0) {
            return invalid(format!("respawn_prob must be in (0, 1], got {}", self.respawn_prob));
        }
        if self.poison_delay < 1 {
            return invalid("poison_delay must be at least 1".into());
        }
        if self.num_berry_types < 2 || self.num_berry_types > BerryType::MAX as usize {
            return invalid(format!("num_berry_types must be in [2, 65535], got {}", self.num_berry_types));
        }
        if self.poisonous_berry as usize >= self.num_berry_types {
            return invalid(format!("poisonous_berry {} out of range", self.poisonous_berry));
        }
        if self.silly_berry as usize >= self.num_berry_types {
            return invalid(format!("silly_berry {} out of range", self.silly_berry));
        }
        if self.silly_berry == self.poisonous_berry {
            return invalid("silly_berry must differ from poisonous_berry".into());
        }
        if self.episode_length == 0 {
            return invalid("episode_length must be positive".into());
        }
        if self.beam_range == 0 {
            return invalid("beam_range must be positive".into());
        }
        Ok(())
    }
}

/// The three rule sets compared between subjects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `R{}`: no taboos.
    None,
    /// `R{poisonous}`: the poisonous berry is taboo.
    Important,
    /// `R{poisonous, nonpoisonous}`: poisonous plus one harmless berry are taboo.
    #[serde(rename = "silly", alias = "important_plus_silly")]
    ImportantPlusSilly,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::None, Condition::Important, Condition::ImportantPlusSilly];

    /// Short name used on the command line and in file names.
    pub fn short_name(self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::Important => "important",
            Condition::ImportantPlusSilly => "silly",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Condition {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Condition::None),
            "important" => Ok(Condition::Important),
            "silly" | "important_plus_silly" => Ok(Condition::ImportantPlusSilly),
            other => Err(EnvError::InvalidConfig(format!("unknown condition {other:?}"))),
        }
    }
}

/// Outcome of classifying a berry-eating event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Permitted,
    Wrongful,
}

/// The classification scheme that decides which berry types are taboo.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub wrongful: BTreeSet<BerryType>,
    pub condition: Condition,
}

impl RuleSet {
    pub fn new(condition: Condition, config: &EnvConfig) -> Self {
        let wrongful = match condition {
            Condition::None => BTreeSet::new(),
            Condition::Important => BTreeSet::from([config.poisonous_berry]),
            Condition::ImportantPlusSilly => BTreeSet::from([config.poisonous_berry, config.silly_berry]),
        };
        Self { wrongful, condition }
    }

    pub fn classify(&self, berry: BerryType) -> Verdict {
        if self.wrongful.contains(&berry) {
            Verdict::Wrongful
        } else {
            Verdict::Permitted
        }
    }

    pub fn is_wrongful(&self, berry: BerryType) -> bool {
        self.classify(berry) == Verdict::Wrongful
    }

    /// Checks that the wrongful set matches what the condition tag demands.
    pub fn validate(&self, config: &EnvConfig) -> Result<(), EnvError> {
        if *self != RuleSet::new(self.condition, config) {
            return Err(EnvError::InvalidConfig(format!(
                "wrongful set {:?} does not match condition {}",
                self.wrongful, self.condition
            )));
        }
        Ok(())
    }
}
