use super::net::{BatchInputs, LstmState};
use super::{LearnerError, Real};
use crate::percept::Observation;

/// An unrolled slice of one player's experience.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub actions: Vec<u8>,
    /// Log-probability of each taken action under the acting policy.
    pub behavior_logp: Vec<f32>,
    pub rewards: Vec<i32>,
    /// `dones[t]` is set when the episode ended after step `t`.
    pub dones: Vec<bool>,
    /// Observation following the last step, when the episode continues.
    pub bootstrap: Option<Observation>,
    /// Recurrent state the acting network had before the first step.
    pub initial_state: LstmState<f32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, unroll_length: usize, lstm_units: usize, num_actions: usize) -> Result<(), LearnerError> {
        let n = self.len();
        let bad = |msg: String| Err(LearnerError::BadTrajectory(msg));
        if n != unroll_length {
            return bad(format!("length {n}, expected {unroll_length}"));
        }
        if self.observations.len() != n || self.behavior_logp.len() != n || self.rewards.len() != n || self.dones.len() != n
        {
            return bad("field lengths disagree".into());
        }
        if self.actions.iter().any(|&a| a as usize >= num_actions) {
            return bad("action index out of range".into());
        }
        if self.behavior_logp.iter().any(|&l| !(l <= 0.0) || !l.is_finite()) {
            return bad("behavior log-probabilities must be finite and <= 0".into());
        }
        if self.dones[n - 1] == self.bootstrap.is_some() {
            return bad("bootstrap observation must be present exactly when the episode continues".into());
        }
        if self.initial_state.h.len() != lstm_units || self.initial_state.c.len() != lstm_units {
            return bad("initial recurrent state has the wrong width".into());
        }
        Ok(())
    }
}

/// Stacks a batch time-major, with one extra row per sequence holding the
/// bootstrap observation (zeros when the episode ended).
pub fn batch_inputs<T: Real>(batch: &[Trajectory], lstm_units: usize) -> BatchInputs<T> {
    let nb = batch.len();
    let unroll = batch[0].len();
    let steps = unroll + 1;
    let obs_len = crate::percept::OBS_LEN;
    let scale = T::from_f64(1.0 / 255.0);
    let mut x = vec![T::ZERO; steps * nb * obs_len];
    let mut resets = vec![false; steps * nb];
    let mut h0 = Vec::with_capacity(nb * lstm_units);
    let mut c0 = Vec::with_capacity(nb * lstm_units);
    for (b, traj) in batch.iter().enumerate() {
        assert_eq!(traj.len(), unroll, "ragged batch");
        for t in 0..steps {
            let row = t * nb + b;
            let obs = if t < unroll { Some(&traj.observations[t]) } else { traj.bootstrap.as_ref() };
            if let Some(obs) = obs {
                for (dst, &px) in x[row * obs_len..(row + 1) * obs_len].iter_mut().zip(obs.pixels.iter()) {
                    *dst = T::from_f64(px as f64) * scale;
                }
            }
            resets[row] = t > 0 && traj.dones[t - 1];
        }
        h0.extend(traj.initial_state.h.iter().map(|&v| T::from_f64(v as f64)));
        c0.extend(traj.initial_state.c.iter().map(|&v| T::from_f64(v as f64)));
    }
    BatchInputs { steps, batch: nb, x, resets, h0, c0 }
}
