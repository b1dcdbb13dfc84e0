use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::env::{Condition, ConfigFile, EnvConfig, EnvError};
use crate::rollout::RunConfig;

/// Named starting point for every configurable value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Scaled-down world for runs that finish in minutes.
    #[default]
    Desk,
    /// The full-size world and population.
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn run_config(self) -> RunConfig {
        match self {
            Preset::Desk => {
                let mut cfg = RunConfig::new(EnvConfig::desk(), Condition::Important);
                cfg.population_size = 6;
                cfg.envs = 8;
                cfg.total_episodes = 12_000;
                cfg.shape.mlp = [32, 32];
                cfg.shape.lstm = 64;
                cfg.hyper.unroll_length = 50;
                cfg.hyper.rmsprop.learning_rate = 0.001;
                cfg.hyper.entropy_weight = 0.01;
                cfg
            }
            Preset::Paper => {
                let mut cfg = RunConfig::new(EnvConfig::default(), Condition::Important);
                cfg.population_size = 12;
                cfg.envs = 64;
                cfg.total_episodes = 200_000;
                cfg.queue_capacity = 1024;
                cfg
            }
        }
    }

    /// Populations per condition and level.
    pub fn populations(self) -> usize {
        match self {
            Preset::Desk => 5,
            Preset::Paper => 15,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected desk or paper)")),
        }
    }
}

/// Environment setting varied across cells of a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    Players,
    BerryTypes,
    PoisonDelay,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [SweepAxis::None, SweepAxis::Players, SweepAxis::BerryTypes, SweepAxis::PoisonDelay];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Players => "players",
            SweepAxis::BerryTypes => "berry_types",
            SweepAxis::PoisonDelay => "poison_delay",
        }
    }

    /// Factor levels of the full-size sweeps.
    pub fn default_levels(self) -> Vec<u32> {
        match self {
            SweepAxis::None => vec![],
            SweepAxis::Players => vec![6, 7, 8, 9, 10],
            SweepAxis::BerryTypes => vec![16, 20, 24, 28],
            SweepAxis::PoisonDelay => vec![50, 75, 100, 125, 150],
        }
    }

    pub fn apply(self, env: &mut EnvConfig, level: u32) {
        match self {
            SweepAxis::None => {}
            SweepAxis::Players => env.players_per_episode = level as usize,
            SweepAxis::BerryTypes => env.num_berry_types = level as usize,
            SweepAxis::PoisonDelay => env.poison_delay = level,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown sweep axis {s:?}"))
    }
}

/// How each cell schedules acting and learning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Single-threaded rounds; output is a pure function of the config.
    #[default]
    Deterministic,
    /// Concurrent actors and learners; faster, not reproducible.
    Threaded,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Mode::Deterministic),
            "threaded" => Ok(Mode::Threaded),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Deterministic => "deterministic",
            Mode::Threaded => "threaded",
        })
    }
}

/// Settings of a run that do not change what it computes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub mode: Mode,
    /// Rounds between checkpoints in deterministic mode; 0 writes one only
    /// when the run stops.
    pub checkpoint_every: u64,
    /// Write the event log of every n-th episode; 0 disables.
    pub event_sample_every: u64,
    /// Dump a PPM frame per step of this episode (deterministic mode).
    pub frames_episode: Option<u64>,
    /// Learning-curve bins used by the analysis.
    pub bins: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { mode: Mode::Deterministic, checkpoint_every: 10, event_sample_every: 0, frames_episode: None, bins: 10 }
    }
}

/// Conditions x sweep levels x populations, all sharing one base config.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    /// Condition, seed and population id are set per cell.
    pub base: RunConfig,
    pub conditions: Vec<Condition>,
    pub sweep: SweepAxis,
    pub levels: Vec<u32>,
    /// One seed per population index.
    pub seeds: Vec<u64>,
    pub options: RunOptions,
}

/// One training run of an experiment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub condition: Condition,
    pub level: Option<u32>,
    pub population: u32,
    pub seed: u64,
}

impl Cell {
    /// Run directory relative to the experiment root.
    pub fn dir_name(&self, sweep: SweepAxis) -> String {
        match self.level {
            Some(l) => format!("runs/{}-{}{}/pop{:02}", self.condition, sweep, l, self.population),
            None => format!("runs/{}/pop{:02}", self.condition, self.population),
        }
    }
}

fn config_err(e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, ExperimentError>
where
    T::Err: fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| config_err(format!("{key}: {e}"))))
        .collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Keys shared by run and experiment files, other than the per-cell ones.
fn apply_common_keys(file: &mut ConfigFile, cfg: &mut RunConfig) -> Result<(), EnvError> {
    file.apply_env(&mut cfg.env)?;
    macro_rules! take {
        ($($key:literal => $field:expr),* $(,)?) => {
            $( if let Some(v) = file.take($key)? { $field = v; } )*
        };
    }
    take!(
        "population_size" => cfg.population_size,
        "envs" => cfg.envs,
        "total_episodes" => cfg.total_episodes,
        "queue_capacity" => cfg.queue_capacity,
        "view" => cfg.view,
        "discount" => cfg.hyper.discount,
        "entropy_weight" => cfg.hyper.entropy_weight,
        "value_weight" => cfg.hyper.value_weight,
        "rho_bar" => cfg.hyper.rho_bar,
        "c_bar" => cfg.hyper.c_bar,
        "reward_scale" => cfg.hyper.reward_scale,
        "batch_size" => cfg.hyper.batch_size,
        "unroll_length" => cfg.hyper.unroll_length,
        "learning_rate" => cfg.hyper.rmsprop.learning_rate,
        "rmsprop_decay" => cfg.hyper.rmsprop.decay,
        "rmsprop_epsilon" => cfg.hyper.rmsprop.epsilon,
        "rmsprop_momentum" => cfg.hyper.rmsprop.momentum,
        "conv_channels" => cfg.shape.conv_channels,
        "mlp_hidden_1" => cfg.shape.mlp[0],
        "mlp_hidden_2" => cfg.shape.mlp[1],
        "lstm_units" => cfg.shape.lstm,
    );
    Ok(())
}

fn write_common_keys(s: &mut String, cfg: &RunConfig) {
    s.push_str(&cfg.env.to_config_text());
    let h = &cfg.hyper;
    let lines: [(&str, String); 21] = [
        ("population_size", cfg.population_size.to_string()),
        ("envs", cfg.envs.to_string()),
        ("total_episodes", cfg.total_episodes.to_string()),
        ("queue_capacity", cfg.queue_capacity.to_string()),
        ("view", cfg.view.to_string()),
        ("discount", h.discount.to_string()),
        ("entropy_weight", h.entropy_weight.to_string()),
        ("value_weight", h.value_weight.to_string()),
        ("rho_bar", h.rho_bar.to_string()),
        ("c_bar", h.c_bar.to_string()),
        ("reward_scale", h.reward_scale.to_string()),
        ("batch_size", h.batch_size.to_string()),
        ("unroll_length", h.unroll_length.to_string()),
        ("learning_rate", h.rmsprop.learning_rate.to_string()),
        ("rmsprop_decay", h.rmsprop.decay.to_string()),
        ("rmsprop_epsilon", h.rmsprop.epsilon.to_string()),
        ("rmsprop_momentum", h.rmsprop.momentum.to_string()),
        ("conv_channels", cfg.shape.conv_channels.to_string()),
        ("mlp_hidden_1", cfg.shape.mlp[0].to_string()),
        ("mlp_hidden_2", cfg.shape.mlp[1].to_string()),
        ("lstm_units", cfg.shape.lstm.to_string()),
    ];
    for (k, v) in lines {
        writeln!(s, "{k} = {v}").unwrap();
    }
}

/// Canonical text of one run's configuration. Its SHA-256 is the run's
/// config hash.
pub fn run_config_text(cfg: &RunConfig) -> String {
    let mut s = String::new();
    write_common_keys(&mut s, cfg);
    writeln!(s, "condition = {}", cfg.condition).unwrap();
    writeln!(s, "seed = {}", cfg.seed).unwrap();
    writeln!(s, "population_id = {}", cfg.population_id).unwrap();
    s
}

pub fn config_hash(cfg: &RunConfig) -> [u8; 32] {
    Sha256::digest(run_config_text(cfg).as_bytes()).into()
}

fn options_text(s: &mut String, o: &RunOptions) {
    writeln!(s, "mode = {}", o.mode).unwrap();
    writeln!(s, "checkpoint_every = {}", o.checkpoint_every).unwrap();
    writeln!(s, "event_sample_every = {}", o.event_sample_every).unwrap();
    if let Some(e) = o.frames_episode {
        writeln!(s, "frames_episode = {e}").unwrap();
    }
    writeln!(s, "bins = {}", o.bins).unwrap();
}

fn take_options(file: &mut ConfigFile, o: &mut RunOptions) -> Result<(), EnvError> {
    if let Some(v) = file.take("mode")? {
        o.mode = v;
    }
    if let Some(v) = file.take("checkpoint_every")? {
        o.checkpoint_every = v;
    }
    if let Some(v) = file.take("event_sample_every")? {
        o.event_sample_every = v;
    }
    if let Some(v) = file.take("frames_episode")? {
        o.frames_episode = Some(v);
    }
    if let Some(v) = file.take("bins")? {
        o.bins = v;
    }
    Ok(())
}

/// Contents of a run directory's `run.cfg`: the hashed configuration
/// followed by the options.
pub fn run_file_text(cfg: &RunConfig, options: &RunOptions) -> String {
    let mut s = run_config_text(cfg);
    options_text(&mut s, options);
    s
}

pub fn parse_run_file(text: &str) -> Result<(RunConfig, RunOptions), ExperimentError> {
    let mut file = ConfigFile::parse(text).map_err(config_err)?;
    let mut cfg = RunConfig::new(EnvConfig::default(), Condition::None);
    apply_common_keys(&mut file, &mut cfg).map_err(config_err)?;
    let need = |k: &str| config_err(format!("run file lacks {k:?}"));
    cfg.condition = file.take("condition").map_err(config_err)?.ok_or_else(|| need("condition"))?;
    cfg.seed = file.take("seed").map_err(config_err)?.ok_or_else(|| need("seed"))?;
    cfg.population_id = file.take("population_id").map_err(config_err)?.ok_or_else(|| need("population_id"))?;
    let mut options = RunOptions::default();
    take_options(&mut file, &mut options).map_err(config_err)?;
    file.finish().map_err(config_err)?;
    cfg.validate().map_err(config_err)?;
    Ok((cfg, options))
}

impl ExperimentSpec {
    /// Defaults of a preset: every condition, no sweep, seeds `0..n`.
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            preset,
            base: preset.run_config(),
            conditions: Condition::ALL.to_vec(),
            sweep: SweepAxis::None,
            levels: vec![],
            seeds: (0..preset.populations() as u64).collect(),
            options: RunOptions::default(),
        }
    }

    /// Parses experiment text on top of a preset. `preset` overrides the
    /// file's own `preset` key. Keys: everything a run file accepts except
    /// `population_id`, plus `preset`, `conditions` (or `condition`),
    /// `sweep`, `levels`, `populations`, and `seed` (first of consecutive
    /// seeds) or `seeds` (explicit list).
    pub fn from_text(text: &str, preset: Option<Preset>) -> Result<Self, ExperimentError> {
        let mut file = ConfigFile::parse(text).map_err(config_err)?;
        let from_file: Option<Preset> = file.take("preset").map_err(config_err)?;
        let mut spec = Self::from_preset(preset.or(from_file).unwrap_or_default());
        apply_common_keys(&mut file, &mut spec.base).map_err(config_err)?;
        take_options(&mut file, &mut spec.options).map_err(config_err)?;
        let conditions = file.take_raw("conditions").or_else(|| file.take_raw("condition"));
        if let Some(raw) = conditions {
            spec.conditions = list("conditions", &raw)?;
        }
        if let Some(axis) = file.take::<SweepAxis>("sweep").map_err(config_err)? {
            spec.sweep = axis;
            spec.levels = axis.default_levels();
        }
        if let Some(raw) = file.take_raw("levels") {
            spec.levels = list("levels", &raw)?;
        }
        let populations: Option<usize> = file.take("populations").map_err(config_err)?;
        let base_seed: Option<u64> = file.take("seed").map_err(config_err)?;
        match (file.take_raw("seeds"), base_seed) {
            (Some(_), Some(_)) => return Err(config_err("give either seed or seeds, not both")),
            (Some(raw), None) => spec.seeds = list("seeds", &raw)?,
            (None, seed) => spec.set_seeds(seed.unwrap_or(0), populations.unwrap_or(spec.seeds.len())),
        }
        if let Some(n) = populations {
            if n != spec.seeds.len() {
                return Err(config_err(format!("populations = {n} but {} seeds given", spec.seeds.len())));
            }
        }
        file.finish().map_err(config_err)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Consecutive seeds `first..first + populations`.
    pub fn set_seeds(&mut self, first: u64, populations: usize) {
        self.seeds = (0..populations as u64).map(|i| first.wrapping_add(i)).collect();
    }

    /// Canonical text; parsing it gives back the same spec.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "preset = {}", self.preset).unwrap();
        write_common_keys(&mut s, &self.base);
        options_text(&mut s, &self.options);
        writeln!(s, "conditions = {}", join(&self.conditions)).unwrap();
        writeln!(s, "sweep = {}", self.sweep).unwrap();
        if self.sweep != SweepAxis::None {
            writeln!(s, "levels = {}", join(&self.levels)).unwrap();
        }
        writeln!(s, "seeds = {}", join(&self.seeds)).unwrap();
        s
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let levels: Vec<Option<u32>> =
            if self.sweep == SweepAxis::None { vec![None] } else { self.levels.iter().map(|&l| Some(l)).collect() };
        let mut out = Vec::new();
        for &condition in &self.conditions {
            for &level in &levels {
                for (p, &seed) in self.seeds.iter().enumerate() {
                    out.push(Cell { condition, level, population: p as u32, seed });
                }
            }
        }
        out
    }

    pub fn run_config(&self, cell: &Cell) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.condition = cell.condition;
        cfg.seed = cell.seed;
        cfg.population_id = cell.population;
        if let Some(l) = cell.level {
            self.sweep.apply(&mut cfg.env, l);
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.conditions.is_empty() {
            return Err(config_err("no conditions"));
        }
        let mut conds = self.conditions.clone();
        conds.sort();
        conds.dedup();
        if conds.len() != self.conditions.len() {
            return Err(config_err("conditions repeat"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("at least one population is needed"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(config_err("population seeds must be pairwise distinct"));
        }
        match self.sweep {
            SweepAxis::None if !self.levels.is_empty() => return Err(config_err("levels given without a sweep axis")),
            SweepAxis::None => {}
            axis => {
                let mut levels = self.levels.clone();
                levels.sort();
                levels.dedup();
                if levels.len() < 2 || levels.len() != self.levels.len() {
                    return Err(config_err(format!("{axis} sweep needs at least two distinct levels")));
                }
            }
        }
        if self.options.bins == 0 {
            return Err(config_err("bins must be at least 1"));
        }
        for cell in self.cells() {
            self.run_config(&cell).validate().map_err(|e| match cell.level {
                Some(l) => config_err(format!("{} = {l}: {e}", self.sweep)),
                None => config_err(e),
            })?;
        }
        Ok(())
    }
}
