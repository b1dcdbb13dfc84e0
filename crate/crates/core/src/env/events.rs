use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BerryType, EnvError};

/// Something that happened during a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvEvent {
    /// `reward` is the points the eater received for this berry.
    BerryEaten { player: usize, berry: BerryType, wrongful: bool, reward: i32 },
    PoisonActivated { player: usize },
    MarkApplied { player: usize },
    MarkRemoved { player: usize },
    PunishHit { punisher: usize, target: usize, target_was_marked: bool },
    BeamMissed { punisher: usize },
}

/// An event stamped with the timestep it produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedEvent {
    pub t: u32,
    pub event: EnvEvent,
}

/// One line of the event log: `{t, type, player, payload}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub player: usize,
    pub payload: Value,
}

impl EnvEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvEvent::BerryEaten { .. } => "BerryEaten",
            EnvEvent::PoisonActivated { .. } => "PoisonActivated",
            EnvEvent::MarkApplied { .. } => "MarkApplied",
            EnvEvent::MarkRemoved { .. } => "MarkRemoved",
            EnvEvent::PunishHit { .. } => "PunishHit",
            EnvEvent::BeamMissed { .. } => "BeamMissed",
        }
    }

    /// The acting (or affected) player.
    pub fn player(&self) -> usize {
        match *self {
            EnvEvent::BerryEaten { player, .. }
            | EnvEvent::PoisonActivated { player }
            | EnvEvent::MarkApplied { player }
            | EnvEvent::MarkRemoved { player } => player,
            EnvEvent::PunishHit { punisher, .. } | EnvEvent::BeamMissed { punisher } => punisher,
        }
    }
}

impl TimedEvent {
    pub fn to_record(&self) -> EventRecord {
        let payload = match self.event {
            EnvEvent::BerryEaten { berry, wrongful, reward, .. } => {
                json!({ "berry_type": berry, "wrongful": wrongful, "reward": reward })
            }
            EnvEvent::PunishHit { target, target_was_marked, .. } => {
                json!({ "target": target, "target_was_marked": target_was_marked })
            }
            _ => json!({}),
        };
        EventRecord { t: self.t, kind: self.event.kind().to_string(), player: self.event.player(), payload }
    }

    pub fn from_record(rec: &EventRecord) -> Result<Self, EnvError> {
        let field = |name: &str| {
            rec.payload
                .get(name)
                .ok_or_else(|| EnvError::BadEvent(format!("{} at t={} lacks {name}", rec.kind, rec.t)))
        };
        let as_u64 = |v: &Value| v.as_u64().ok_or_else(|| EnvError::BadEvent(format!("non-integer field in {}", rec.kind)));
        let as_bool = |v: &Value| v.as_bool().ok_or_else(|| EnvError::BadEvent(format!("non-boolean field in {}", rec.kind)));
        let player = rec.player;
        let event = match rec.kind.as_str() {
            "BerryEaten" => EnvEvent::BerryEaten {
                player,
                berry: as_u64(field("berry_type")?)? as BerryType,
                wrongful: as_bool(field("wrongful")?)?,
                reward: field("reward")?
                    .as_i64()
                    .ok_or_else(|| EnvError::BadEvent("non-integer reward".into()))? as i32,
            },
            "PoisonActivated" => EnvEvent::PoisonActivated { player },
            "MarkApplied" => EnvEvent::MarkApplied { player },
            "MarkRemoved" => EnvEvent::MarkRemoved { player },
            "PunishHit" => EnvEvent::PunishHit {
                punisher: player,
                target: as_u64(field("target")?)? as usize,
                target_was_marked: as_bool(field("target_was_marked")?)?,
            },
            "BeamMissed" => EnvEvent::BeamMissed { punisher: player },
            other => return Err(EnvError::BadEvent(format!("unknown event type {other:?}"))),
        };
        Ok(TimedEvent { t: rec.t, event })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("event records always serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self, EnvError> {
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| EnvError::BadEvent(e.to_string()))?;
        Self::from_record(&rec)
    }
}
