use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { learning_rate: 0.0004, decay: 0.99, epsilon: 1e-5, momentum: 0.0 }
    }
}

/// Plain (uncentred) RMSProp with the mean square starting at zero:
///
/// ```text
/// ms  <- decay * ms + (1 - decay) * g^2
/// mom <- momentum * mom + lr * g / sqrt(ms + eps)
/// w   <- w - mom
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    pub mean_square: Vec<f32>,
    pub momentum: Vec<f32>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, len: usize) -> Self {
        Self { config, mean_square: vec![0.0; len], momentum: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.mean_square.len());
        let RmsPropConfig { learning_rate, decay, epsilon, momentum } = self.config;
        let (lr, decay, eps, mom) = (learning_rate as f32, decay as f32, epsilon as f32, momentum as f32);
        for i in 0..params.len() {
            let g = grad[i];
            let ms = decay * self.mean_square[i] + (1.0 - decay) * g * g;
            self.mean_square[i] = ms;
            let step = lr * g / (ms + eps).sqrt();
            if mom > 0.0 {
                self.momentum[i] = mom * self.momentum[i] + step;
                params[i] -= self.momentum[i];
            } else {
                params[i] -= step;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_from_unit_gradient() {
        let mut opt = RmsProp::new(RmsPropConfig::default(), 2);
        let mut w = [0.0f32, 1.0];
        opt.step(&mut w, &[1.0, 0.0]);
        let expect = 0.0004 / (0.01f64 + 1e-5).sqrt();
        assert!((w[0] as f64 + expect).abs() < 1e-7, "{}", w[0]);
        assert!((expect - 0.003998).abs() < 1e-6);
        assert_eq!(w[1], 1.0);
        assert!((opt.mean_square[0] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn momentum_accumulates() {
        let cfg = RmsPropConfig { momentum: 0.5, ..Default::default() };
        let mut opt = RmsProp::new(cfg, 1);
        let mut w = [0.0f32];
        opt.step(&mut w, &[1.0]);
        let first = -w[0];
        opt.step(&mut w, &[1.0]);
        let ms2 = 0.99 * 0.01 + 0.01;
        let second = 0.5 * first as f64 + 0.0004 / (ms2 + 1e-5f64).sqrt();
        assert!(((-w[0]) as f64 - first as f64 - second).abs() < 1e-6);
    }
}
