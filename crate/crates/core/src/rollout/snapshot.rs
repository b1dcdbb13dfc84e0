//! Run checkpoint: every learner plus the trajectories still waiting in
//! the queues. Little-endian throughout.
//!
//! ```text
//! magic "TABOORUN" | version u32 | config hash [32] | next episode u64
//! population id u32 | condition u8 | queue capacity u64 | learner count u32
//! per learner:  byte length u64, learner checkpoint (see learner module)
//! per learner:  pending count u32, then each trajectory:
//!     steps u32 | has bootstrap u8 | observations [steps x 675] u8
//!     actions [steps] u8 | behaviour log-probs [steps] f32 | rewards [steps] i32
//!     dones [steps] u8 | bootstrap [675] u8 if present
//!     units u32 | h [units] f32 | c [units] f32
//! SHA-256 of every preceding byte
//! ```

use sha2::{Digest, Sha256};

use super::{Population, RolloutError, RunState, TrajectoryQueue};
use crate::env::Condition;
use crate::learner::{decode_checkpoint, encode_checkpoint, Checkpoint, LstmState, Trajectory};
use crate::percept::{Observation, OBS_LEN};

pub const RUN_MAGIC: &[u8; 8] = b"TABOORUN";
pub const RUN_VERSION: u32 = 1;

fn put_f32s(buf: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_trajectory(buf: &mut Vec<u8>, t: &Trajectory) {
    buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
    buf.push(t.bootstrap.is_some() as u8);
    for o in &t.observations {
        buf.extend_from_slice(&o.pixels);
    }
    buf.extend_from_slice(&t.actions);
    put_f32s(buf, &t.behavior_logp);
    for r in &t.rewards {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    buf.extend(t.dones.iter().map(|&d| d as u8));
    if let Some(b) = &t.bootstrap {
        buf.extend_from_slice(&b.pixels);
    }
    buf.extend_from_slice(&(t.initial_state.h.len() as u32).to_le_bytes());
    put_f32s(buf, &t.initial_state.h);
    put_f32s(buf, &t.initial_state.c);
}

pub fn encode_run_checkpoint(state: &RunState, config_hash: [u8; 32]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(RUN_MAGIC);
    buf.extend_from_slice(&RUN_VERSION.to_le_bytes());
    buf.extend_from_slice(&config_hash);
    buf.extend_from_slice(&state.next_episode.to_le_bytes());
    buf.extend_from_slice(&state.population.id.to_le_bytes());
    buf.push(Condition::ALL.iter().position(|&c| c == state.population.condition).expect("condition") as u8);
    buf.extend_from_slice(&(state.queue.capacity() as u64).to_le_bytes());
    buf.extend_from_slice(&(state.population.learners.len() as u32).to_le_bytes());
    for learner in &state.population.learners {
        let bytes = encode_checkpoint(&Checkpoint { config_hash, learner: learner.clone() });
        buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        buf.extend_from_slice(&bytes);
    }
    for i in 0..state.queue.learners() {
        buf.extend_from_slice(&(state.queue.len(i) as u32).to_le_bytes());
        for t in state.queue.pending(i) {
            encode_trajectory(&mut buf, t);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RolloutError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            _ => Err(RolloutError::Checkpoint("truncated".into())),
        }
    }

    fn u8(&mut self) -> Result<u8, RolloutError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, RolloutError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RolloutError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, RolloutError> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn obs(&mut self) -> Result<Observation, RolloutError> {
        Ok(Observation { pixels: self.take(OBS_LEN)?.try_into().unwrap() })
    }

    fn trajectory(&mut self) -> Result<Trajectory, RolloutError> {
        let n = self.u32()? as usize;
        let has_boot = self.u8()? != 0;
        let observations = (0..n).map(|_| self.obs()).collect::<Result<Vec<_>, _>>()?;
        let actions = self.take(n)?.to_vec();
        let behavior_logp = self.f32s(n)?;
        let rewards = self.take(n * 4)?.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect();
        let dones = self.take(n)?.iter().map(|&d| d != 0).collect();
        let bootstrap = if has_boot { Some(self.obs()?) } else { None };
        let units = self.u32()? as usize;
        let h = self.f32s(units)?;
        let c = self.f32s(units)?;
        Ok(Trajectory { observations, actions, behavior_logp, rewards, dones, bootstrap, initial_state: LstmState { h, c } })
    }
}

/// Decodes and verifies a run checkpoint; returns the state and the config
/// hash it was written under.
pub fn decode_run_checkpoint(bytes: &[u8]) -> Result<(RunState, [u8; 32]), RolloutError> {
    let err = |m: String| RolloutError::Checkpoint(m);
    if bytes.len() < 8 + 32 || &bytes[..8] != RUN_MAGIC {
        return Err(err("not a run checkpoint (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let actual = Sha256::digest(body);
    if actual.as_slice() != digest {
        return Err(err(format!("checksum mismatch: stored {}, computed {}", hex(digest), hex(&actual))));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != RUN_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let next_episode = r.u64()?;
    let id = r.u32()?;
    let condition = *Condition::ALL.get(r.u8()? as usize).ok_or_else(|| err("bad condition".into()))?;
    let capacity = r.u64()? as usize;
    let n = r.u32()? as usize;
    let mut learners = Vec::with_capacity(n);
    for i in 0..n {
        let len = r.u64()? as usize;
        let ck = decode_checkpoint(r.take(len)?).map_err(|e| err(format!("learner {i}: {e}")))?;
        if ck.config_hash != config_hash {
            return Err(err(format!("learner {i} was written under a different configuration")));
        }
        learners.push(ck.learner);
    }
    let mut queue = TrajectoryQueue::new(n, capacity);
    for i in 0..n {
        let count = r.u32()?;
        for _ in 0..count {
            queue.push(i, r.trajectory()?)?;
        }
    }
    if r.pos != body.len() {
        return Err(err("trailing bytes".into()));
    }
    Ok((RunState { population: Population { id, condition, learners }, queue, next_episode }, config_hash))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
