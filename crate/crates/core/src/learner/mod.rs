//! Recurrent actor-critic, V-trace targets and the RMSProp update.

mod checkpoint;
mod loss;
mod net;
mod params;
mod real;
mod rmsprop;
mod trajectory;
mod vtrace;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    compute_loss, entropy, log_softmax, loss_with_targets, softmax, targets_from_cache, AuxiliaryLoss, LossBreakdown,
    LossOutput, LossTargets,
};
pub use net::{backward_batch, forward_batch, forward_step, relu_pattern, BatchInputs, ForwardCache, LstmState, StepOutput, StepScratch};
pub use params::{Group, Layout, NetParams, NetShape};
pub use real::{dot, Real};
pub use rmsprop::{RmsProp, RmsPropConfig};
pub use trajectory::{batch_inputs, Trajectory};
pub use vtrace::{discounted_return, vtrace_targets, VTraceInput, VTraceOutput};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::percept::Observation;

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("malformed trajectory: {0}")]
    BadTrajectory(String),
    #[error("non-finite loss in batch {batch_id}")]
    NonFiniteLoss { batch_id: u64 },
    #[error("non-finite gradient in batch {batch_id}")]
    NonFiniteGradient { batch_id: u64 },
    #[error("parameters became non-finite after update {update}")]
    NonFiniteParams { update: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub discount: f64,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub rmsprop: RmsPropConfig,
    pub batch_size: usize,
    pub unroll_length: usize,
    /// Multiplier on environment rewards before they enter the targets.
    pub reward_scale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            discount: 0.99,
            entropy_weight: 0.003,
            value_weight: 0.5,
            rho_bar: 1.0,
            c_bar: 1.0,
            rmsprop: RmsPropConfig::default(),
            batch_size: 16,
            unroll_length: 100,
            reward_scale: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidHyper(m.into()));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        let weights = [self.entropy_weight, self.value_weight, self.rho_bar, self.c_bar, self.reward_scale];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights and clip thresholds must be finite and >= 0");
        }
        let r = &self.rmsprop;
        if !(r.learning_rate >= 0.0 && r.epsilon > 0.0 && (0.0..1.0).contains(&r.decay) && (0.0..1.0).contains(&r.momentum)) {
            return bad("rmsprop settings out of range");
        }
        if self.batch_size == 0 || self.unroll_length == 0 {
            return bad("batch size and unroll length must be positive");
        }
        Ok(())
    }
}

/// Network input for one observation: pixel intensities in `[0, 1]`.
pub fn observation_input<T: Real>(obs: &Observation, out: &mut [T]) {
    let scale = T::from_f64(1.0 / 255.0);
    for (dst, &px) in out.iter_mut().zip(obs.pixels.iter()) {
        *dst = T::from_f64(px as f64) * scale;
    }
}

/// Samples an action index from `softmax(logits)`; returns it with its
/// log-probability.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f32], rng: &mut R) -> (usize, f32) {
    let wide: Vec<f64> = logits.iter().map(|&l| l as f64).collect();
    let logp = log_softmax(&wide);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = logp.len() - 1;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            pick = i;
            break;
        }
    }
    (pick, logp[pick] as f32)
}

/// One learner: parameters, optimizer state and an update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub params: NetParams<f32>,
    pub optimizer: RmsProp,
    pub updates: u64,
}

/// Summary of one applied update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    pub parts: LossBreakdown,
    pub grad_norm: f64,
}

impl Learner {
    pub fn new<R: Rng>(shape: NetShape, hyper: &HyperParams, rng: &mut R) -> Self {
        let params = NetParams::init(shape, rng);
        let optimizer = RmsProp::new(hyper.rmsprop, params.values.len());
        Self { params, optimizer, updates: 0 }
    }

    /// One gradient step on `batch`.
    pub fn update(
        &mut self,
        batch: &[Trajectory],
        hyper: &HyperParams,
        aux: Option<&dyn AuxiliaryLoss<f32>>,
    ) -> Result<UpdateStats, LearnerError> {
        let (out, _) = compute_loss(&self.params, batch, hyper, aux, self.updates)?;
        let grad_norm = out.grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        self.optimizer.step(&mut self.params.values, &out.grad);
        self.updates += 1;
        if !self.params.all_finite() {
            return Err(LearnerError::NonFiniteParams { update: self.updates });
        }
        Ok(UpdateStats { loss: out.loss, parts: out.parts, grad_norm })
    }
}
