use super::net::{backward_batch, forward_batch, BatchInputs, ForwardCache};
use super::params::NetParams;
use super::trajectory::{batch_inputs, Trajectory};
use super::vtrace::{vtrace_targets, VTraceInput};
use super::{HyperParams, LearnerError, Real};

/// Extra objective on the recurrent outputs (e.g. a representation loss).
/// Receives `rows x units` hidden states of the trained rows and writes the
/// gradient of its loss into `dhidden`.
pub trait AuxiliaryLoss<T>: Sync {
    fn loss_and_grad(&self, hidden: &[T], rows: usize, units: usize, dhidden: &mut [T]) -> f64;
}

/// Fixed regression and policy-gradient targets, time-major over the
/// unroll (`row = t * batch + b`).
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    pub vs: Vec<f64>,
    pub pg_advantages: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub policy: f64,
    pub value: f64,
    /// `entropy_weight * sum(pi log pi)`.
    pub entropy: f64,
    pub auxiliary: f64,
    pub mean_entropy: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.policy + self.value + self.entropy + self.auxiliary
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub parts: LossBreakdown,
    pub grad: Vec<T>,
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Shannon entropy in nats of `softmax(logits)`.
pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits).iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { -l.exp() * l }).sum()
}

struct Prepared<T> {
    inputs: BatchInputs<T>,
    actions: Vec<usize>,
    unroll: usize,
}

fn prepare<T: Real>(params: &NetParams<T>, batch: &[Trajectory], hyper: &HyperParams) -> Result<Prepared<T>, LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::BadTrajectory("empty batch".into()));
    }
    let s = params.shape();
    let unroll = batch[0].len();
    for traj in batch {
        traj.validate(unroll, s.lstm, s.actions)?;
    }
    if hyper.unroll_length != 0 && unroll != hyper.unroll_length {
        return Err(LearnerError::BadTrajectory(format!("unroll {unroll}, expected {}", hyper.unroll_length)));
    }
    let nb = batch.len();
    let mut actions = vec![0; unroll * nb];
    for (b, traj) in batch.iter().enumerate() {
        for t in 0..unroll {
            actions[t * nb + b] = traj.actions[t] as usize;
        }
    }
    Ok(Prepared { inputs: batch_inputs(batch, s.lstm), actions, unroll })
}

/// V-trace targets from a forward pass of the current (target) policy.
pub fn targets_from_cache<T: Real>(
    cache: &ForwardCache<T>,
    batch: &[Trajectory],
    actions: &[usize],
    num_actions: usize,
    hyper: &HyperParams,
) -> LossTargets {
    let nb = batch.len();
    let unroll = cache.steps - 1;
    let mut vs = vec![0.0; unroll * nb];
    let mut pg = vec![0.0; unroll * nb];
    for (b, traj) in batch.iter().enumerate() {
        let mut log_rhos = Vec::with_capacity(unroll);
        let mut values = Vec::with_capacity(unroll);
        let mut discounts = Vec::with_capacity(unroll);
        let mut rewards = Vec::with_capacity(unroll);
        for t in 0..unroll {
            let row = t * nb + b;
            let logits: Vec<f64> = cache.logits[row * num_actions..(row + 1) * num_actions].iter().map(|v| v.to_f64()).collect();
            let lp = log_softmax(&logits)[actions[row]];
            log_rhos.push(lp - traj.behavior_logp[t] as f64);
            values.push(cache.values[row].to_f64());
            discounts.push(if traj.dones[t] { 0.0 } else { hyper.discount });
            rewards.push(traj.rewards[t] as f64 * hyper.reward_scale);
        }
        let bootstrap_value = cache.values[unroll * nb + b].to_f64();
        let out = vtrace_targets(
            VTraceInput { log_rhos: &log_rhos, discounts: &discounts, rewards: &rewards, values: &values, bootstrap_value },
            hyper.rho_bar,
            hyper.c_bar,
        );
        for t in 0..unroll {
            vs[t * nb + b] = out.vs[t];
            pg[t * nb + b] = out.pg_advantages[t];
        }
    }
    LossTargets { vs, pg_advantages: pg }
}

/// Loss value and its gradients with respect to logits and values.
fn head_losses<T: Real>(
    cache: &ForwardCache<T>,
    actions: &[usize],
    targets: &LossTargets,
    num_actions: usize,
    hyper: &HyperParams,
) -> (LossBreakdown, Vec<T>, Vec<T>) {
    let rows = actions.len();
    let mut parts = LossBreakdown::default();
    let mut dlogits = vec![T::ZERO; rows * num_actions];
    let mut dvalues = vec![T::ZERO; rows];
    let mut entropy_sum = 0.0;
    for row in 0..rows {
        let logits: Vec<f64> = cache.logits[row * num_actions..(row + 1) * num_actions].iter().map(|v| v.to_f64()).collect();
        let logp = log_softmax(&logits);
        let pi: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let neg_entropy: f64 = pi.iter().zip(&logp).map(|(p, l)| p * l).sum();
        let adv = targets.pg_advantages[row];
        let a = actions[row];
        parts.policy -= adv * logp[a];
        parts.entropy += hyper.entropy_weight * neg_entropy;
        entropy_sum -= neg_entropy;
        let v = cache.values[row].to_f64();
        let err = v - targets.vs[row];
        parts.value += hyper.value_weight * 0.5 * err * err;
        dvalues[row] = T::from_f64(hyper.value_weight * err);
        let d = &mut dlogits[row * num_actions..(row + 1) * num_actions];
        for j in 0..num_actions {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let pg = -adv * (onehot - pi[j]);
            let ent = hyper.entropy_weight * pi[j] * (logp[j] - neg_entropy);
            d[j] = T::from_f64(pg + ent);
        }
    }
    parts.mean_entropy = entropy_sum / rows as f64;
    (parts, dlogits, dvalues)
}

/// Loss under fixed targets; forward only. The function whose gradient
/// [`compute_loss`] returns, for finite-difference checks.
pub fn loss_with_targets<T: Real>(
    params: &NetParams<T>,
    batch: &[Trajectory],
    targets: &LossTargets,
    hyper: &HyperParams,
    aux: Option<&dyn AuxiliaryLoss<T>>,
) -> Result<(f64, ForwardCache<T>), LearnerError> {
    let prep = prepare(params, batch, hyper)?;
    let cache = forward_batch(params, &prep.inputs);
    let (mut parts, _, _) = head_losses(&cache, &prep.actions, targets, params.shape().actions, hyper);
    if let Some(aux) = aux {
        let rows = prep.unroll * batch.len();
        let h = params.shape().lstm;
        let mut scratch = vec![T::ZERO; rows * h];
        parts.auxiliary = aux.loss_and_grad(&cache.hidden[..rows * h], rows, h, &mut scratch);
    }
    Ok((parts.total(), cache))
}

/// Computes V-trace targets under the current parameters, then the loss
/// and its gradient with those targets held fixed.
pub fn compute_loss<T: Real>(
    params: &NetParams<T>,
    batch: &[Trajectory],
    hyper: &HyperParams,
    aux: Option<&dyn AuxiliaryLoss<T>>,
    batch_id: u64,
) -> Result<(LossOutput<T>, LossTargets), LearnerError> {
    let prep = prepare(params, batch, hyper)?;
    let s = params.shape();
    let cache = forward_batch(params, &prep.inputs);
    let targets = targets_from_cache(&cache, batch, &prep.actions, s.actions, hyper);
    let (mut parts, dlogits, dvalues) = head_losses(&cache, &prep.actions, &targets, s.actions, hyper);
    let rows = prep.unroll * batch.len();
    let dhidden = aux.map(|aux| {
        let mut d = vec![T::ZERO; rows * s.lstm];
        parts.auxiliary = aux.loss_and_grad(&cache.hidden[..rows * s.lstm], rows, s.lstm, &mut d);
        d
    });
    let loss = parts.total();
    if !loss.is_finite() {
        return Err(LearnerError::NonFiniteLoss { batch_id });
    }
    let grad = backward_batch(params, &prep.inputs, &cache, rows, &dlogits, &dvalues, dhidden.as_deref());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(LearnerError::NonFiniteGradient { batch_id });
    }
    Ok((LossOutput { loss, parts, grad }, targets))
}
