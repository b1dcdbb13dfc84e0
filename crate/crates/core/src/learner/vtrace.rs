//! Off-policy value targets with clipped importance weights.
//!
//! With `rho_t = pi(a_t|x_t) / mu(a_t|x_t)`, truncated weights
//! `rho'_t = min(rho_bar, rho_t)` and `c_t = min(c_bar, rho_t)`:
//!
//! ```text
//! delta_t = rho'_t (r_t + gamma_t V(x_{t+1}) - V(x_t))
//! v_t     = V(x_t) + delta_t + gamma_t c_t (v_{t+1} - V(x_{t+1}))
//! A_t     = rho'_t (r_t + gamma_t v_{t+1} - V(x_t))
//! ```
//!
//! where `v_T = V(x_T)` is the bootstrap value and `gamma_t` is zero after
//! an episode end.

/// One sequence's inputs; all slices have the unroll length.
#[derive(Clone, Copy, Debug)]
pub struct VTraceInput<'a> {
    /// `log pi(a_t) - log mu(a_t)`.
    pub log_rhos: &'a [f64],
    pub discounts: &'a [f64],
    pub rewards: &'a [f64],
    pub values: &'a [f64],
    pub bootstrap_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VTraceOutput {
    /// Value targets `v_t`.
    pub vs: Vec<f64>,
    /// Policy-gradient advantages `A_t`.
    pub pg_advantages: Vec<f64>,
}

pub fn vtrace_targets(inp: VTraceInput<'_>, rho_bar: f64, c_bar: f64) -> VTraceOutput {
    let n = inp.values.len();
    assert!(inp.log_rhos.len() == n && inp.discounts.len() == n && inp.rewards.len() == n);
    let rhos: Vec<f64> = inp.log_rhos.iter().map(|l| l.exp()).collect();
    let next_value = |t: usize| if t + 1 < n { inp.values[t + 1] } else { inp.bootstrap_value };

    let mut vs = vec![0.0; n];
    let mut acc = 0.0; // v_{t+1} - V(x_{t+1})
    for t in (0..n).rev() {
        let clipped_rho = rhos[t].min(rho_bar);
        let c = rhos[t].min(c_bar);
        let delta = clipped_rho * (inp.rewards[t] + inp.discounts[t] * next_value(t) - inp.values[t]);
        acc = delta + inp.discounts[t] * c * acc;
        vs[t] = inp.values[t] + acc;
    }
    let pg_advantages = (0..n)
        .map(|t| {
            let v_next = if t + 1 < n { vs[t + 1] } else { inp.bootstrap_value };
            rhos[t].min(rho_bar) * (inp.rewards[t] + inp.discounts[t] * v_next - inp.values[t])
        })
        .collect();
    VTraceOutput { vs, pg_advantages }
}

/// `sum_t gamma^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct forward-sum form of the recursion:
    /// `v_s = V_s + sum_{t>=s} (prod_{s<=i<t} gamma_i c_i) delta_t`.
    fn oracle(inp: VTraceInput<'_>, rho_bar: f64, c_bar: f64) -> Vec<f64> {
        let n = inp.values.len();
        let v = |t: usize| if t < n { inp.values[t] } else { inp.bootstrap_value };
        (0..n)
            .map(|s| {
                let mut total = inp.values[s];
                let mut weight = 1.0;
                for t in s..n {
                    let rho = inp.log_rhos[t].exp();
                    let delta = rho.min(rho_bar) * (inp.rewards[t] + inp.discounts[t] * v(t + 1) - v(t));
                    total += weight * delta;
                    weight *= inp.discounts[t] * rho.min(c_bar);
                }
                total
            })
            .collect()
    }

    #[test]
    fn hand_set_ratios_match_direct_evaluation() {
        let log_rhos = [0.5f64.ln(), 2.0f64.ln(), 0.0];
        let discounts = [0.99; 3];
        let rewards = [1.0, -2.0, 4.0];
        let values = [0.5, 1.5, -0.25];
        let inp = VTraceInput { log_rhos: &log_rhos, discounts: &discounts, rewards: &rewards, values: &values, bootstrap_value: 2.0 };
        let out = vtrace_targets(inp, 1.0, 1.0);
        // frozen from the forward-sum oracle, hand-checked:
        // d2 = 4 + 0.99*2 - (-0.25) = 6.23, v2 = 5.98
        // d1 = 1 * (-2 + 0.99*(-0.25) - 1.5) = -3.7475, v1 = 1.5 - 3.7475 + 0.99*1*6.23 = 3.92020
        // d0 = 0.5 * (1 + 0.99*1.5 - 0.5) = 0.9925, v0 = 0.5 + 0.9925 + 0.99*0.5*(-3.7475 + 0.99*6.23) = 2.690499
        let expected = oracle(inp, 1.0, 1.0);
        assert!((expected[2] - 5.98).abs() < 1e-12);
        assert!((expected[1] - 3.9202).abs() < 1e-12);
        assert!((expected[0] - 2.690499).abs() < 1e-12);
        for (a, b) in out.vs.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        // A_0 = 0.5 * (1 + 0.99 * v1 - 0.5)
        assert!((out.pg_advantages[0] - 0.5 * (0.5 + 0.99 * 3.9202)).abs() < 1e-12);
    }

    #[test]
    fn on_policy_targets_are_n_step_returns() {
        let rewards = [1.0, 0.0, -3.0, 2.0];
        let values = [0.3, -0.7, 1.1, 0.2];
        let discounts = [0.99; 4];
        let out = vtrace_targets(
            VTraceInput { log_rhos: &[0.0; 4], discounts: &discounts, rewards: &rewards, values: &values, bootstrap_value: 5.0 },
            1.0,
            1.0,
        );
        for s in 0..4 {
            let tail: Vec<f64> = rewards[s..].to_vec();
            let n = tail.len() as i32;
            let expected = discounted_return(&tail, 0.99) + 0.99f64.powi(n) * 5.0;
            assert!((out.vs[s] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_end_cuts_bootstrap() {
        let out = vtrace_targets(
            VTraceInput { log_rhos: &[0.0; 2], discounts: &[0.99, 0.0], rewards: &[1.0, 2.0], values: &[0.0, 0.0], bootstrap_value: 100.0 },
            1.0,
            1.0,
        );
        assert!((out.vs[1] - 2.0).abs() < 1e-12);
        assert!((out.vs[0] - (1.0 + 0.99 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let z = [0.0; 5];
        let out = vtrace_targets(
            VTraceInput { log_rhos: &[0.3, -0.2, 0.0, 1.0, -1.0], discounts: &[0.99; 5], rewards: &z, values: &z, bootstrap_value: 0.0 },
            1.0,
            1.0,
        );
        assert!(out.vs.iter().chain(&out.pg_advantages).all(|&v| v == 0.0));
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[4.0, 0.0, 0.0], 0.99), 4.0);
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5), 1.75);
        assert_eq!(discounted_return(&[0.0; 7], 0.9), 0.0);
    }
}
