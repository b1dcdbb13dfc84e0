//! Learner checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! offset  size      field
//! 0       8         magic "TABOOCKP"
//! 8       4         version (u32) = 1
//! 12      32        config hash
//! 44      8         update counter (u64)
//! 52      7 x 4     shape: pixels, in_channels, conv_channels, mlp0, mlp1, lstm, actions (u32)
//! 80      4 x 8     rmsprop: learning_rate, decay, epsilon, momentum (f64)
//! 112     8         parameter count n (u64)
//! 120     4n        parameters (f32)
//! ..      4n        rmsprop mean square (f32)
//! ..      4n        rmsprop momentum (f32)
//! ..      32        SHA-256 of every preceding byte
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::params::{NetParams, NetShape};
use super::rmsprop::{RmsProp, RmsPropConfig};
use super::{Learner, LearnerError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TABOOCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub learner: Learner,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vs: &[f32]) {
    buf.reserve(vs.len() * 4);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialized bytes of a checkpoint, digest included.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let l = &ck.learner;
    let s = l.params.shape();
    let mut buf = Vec::with_capacity(160 + 12 * l.params.values.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    buf.extend_from_slice(&ck.config_hash);
    buf.extend_from_slice(&l.updates.to_le_bytes());
    for d in [s.pixels, s.in_channels, s.conv_channels, s.mlp[0], s.mlp[1], s.lstm, s.actions] {
        put_u32(&mut buf, d as u32);
    }
    let c = l.optimizer.config;
    for v in [c.learning_rate, c.decay, c.epsilon, c.momentum] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(l.params.values.len() as u64).to_le_bytes());
    put_f32s(&mut buf, &l.params.values);
    put_f32s(&mut buf, &l.optimizer.mean_square);
    put_f32s(&mut buf, &l.optimizer.momentum);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LearnerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LearnerError::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, LearnerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LearnerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, LearnerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, LearnerError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| LearnerError::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, LearnerError> {
    let err = |m: &str| LearnerError::Checkpoint(m.into());
    if bytes.len() < 8 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(err("bad magic"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(err("checksum mismatch"));
    }
    let mut cur = Cursor { bytes: body, pos: 8 };
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LearnerError::Checkpoint(format!("unsupported version {version}")));
    }
    let config_hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let updates = cur.u64()?;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let shape = NetShape {
        pixels: dims[0],
        in_channels: dims[1],
        conv_channels: dims[2],
        mlp: [dims[3], dims[4]],
        lstm: dims[5],
        actions: dims[6],
    };
    let config = RmsPropConfig { learning_rate: cur.f64()?, decay: cur.f64()?, epsilon: cur.f64()?, momentum: cur.f64()? };
    let n = cur.u64()? as usize;
    if n != shape.layout().len() {
        return Err(err("parameter count does not match shape"));
    }
    let values = cur.f32s(n)?;
    let mean_square = cur.f32s(n)?;
    let momentum = cur.f32s(n)?;
    if cur.pos != body.len() {
        return Err(err("trailing bytes"));
    }
    let params = NetParams::from_values(shape, values).ok_or_else(|| err("parameter count does not match shape"))?;
    let learner = Learner { params, optimizer: RmsProp { config, mean_square, momentum }, updates };
    Ok(Checkpoint { config_hash, learner })
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<(), LearnerError> {
    w.write_all(&encode_checkpoint(ck))?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, LearnerError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
