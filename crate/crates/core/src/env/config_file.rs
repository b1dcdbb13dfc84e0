//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the field
//! names of [`EnvConfig`] plus `condition`; the experiment layer adds its own
//! keys on top of the same file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::{Condition, EnvConfig, EnvError};

/// Splits config text into `(line, key, value)` triples.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, EnvError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(EnvError::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(EnvError::Parse { line: i + 1, msg: "empty key".into() });
        }
        out.push((i + 1, key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parsed key-value entries; values are taken out as they are interpreted so
/// leftovers can be reported as unknown keys.
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut entries = BTreeMap::new();
        for (line, key, value) in parse_key_values(text)? {
            if entries.insert(key.clone(), (line, value)).is_some() {
                return Err(EnvError::Parse { line, msg: format!("duplicate key {key:?}") });
            }
        }
        Ok(Self { entries })
    }

    /// Removes `key` and parses its value.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, EnvError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| EnvError::Parse { line, msg: format!("{key}: {e}") }),
        }
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> Result<(), EnvError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(EnvError::Parse { line, msg: format!("unknown key {key:?}") }),
        }
    }

    /// Overwrites the fields of `cfg` named in this file.
    pub fn apply_env(&mut self, cfg: &mut EnvConfig) -> Result<(), EnvError> {
        macro_rules! fields {
            ($($name:ident),*) => {
                $( if let Some(v) = self.take(stringify!($name))? { cfg.$name = v; } )*
            };
        }
        fields!(
            grid_width,
            grid_height,
            num_berry_types,
            poison_delay,
            players_per_episode,
            episode_length,
            berry_reward,
            poisoned_berry_reward,
            beam_cost,
            punished_penalty,
            punisher_bounty,
            respawn_prob,
            berry_sites,
            beam_range,
            rng_seed,
            poisonous_berry,
            silly_berry,
            charge_beam_on_miss
        );
        Ok(())
    }

    pub fn take_condition(&mut self) -> Result<Option<Condition>, EnvError> {
        self.take("condition")
    }
}

impl EnvConfig {
    /// Parses a complete environment config; unspecified keys keep defaults.
    pub fn from_config_text(text: &str) -> Result<(EnvConfig, Option<Condition>), EnvError> {
        let mut file = ConfigFile::parse(text)?;
        let mut cfg = EnvConfig::default();
        file.apply_env(&mut cfg)?;
        let condition = file.take_condition()?;
        file.finish()?;
        cfg.validate()?;
        Ok((cfg, condition))
    }

    /// Renders every field as `key = value` lines, in declaration order.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        macro_rules! fields {
            ($($name:ident),*) => {
                $( writeln!(s, "{} = {}", stringify!($name), self.$name).unwrap(); )*
            };
        }
        fields!(
            grid_width,
            grid_height,
            num_berry_types,
            poison_delay,
            players_per_episode,
            episode_length,
            berry_reward,
            poisoned_berry_reward,
            beam_cost,
            punished_penalty,
            punisher_bounty,
            respawn_prob,
            berry_sites,
            beam_range,
            rng_seed,
            poisonous_berry,
            silly_berry,
            charge_beam_on_miss
        );
        s
    }
}
