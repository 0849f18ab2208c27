//! Tanh-squashed diagonal Gaussian with reparameterised sampling.
//!
//! With noise `xi ~ N(0, I)`, the pre-squash value is `u = mean + std * xi`
//! and the action `a = tanh(u)`. The log-density of `a` is the Gaussian
//! log-density of `u` minus `sum_i ln(1 - a_i^2 + TANH_EPS)`.

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const TANH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean and (raw) log-std outputs of a policy head for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    /// Network output before clamping.
    pub raw_log_std: Vec<f64>,
}

impl GaussianHead {
    /// Splits a network output `[mean | log_std]`.
    pub fn from_output(output: &[f64]) -> Self {
        let d = output.len() / 2;
        GaussianHead {
            mean: output[..d].to_vec(),
            raw_log_std: output[d..2 * d].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_std(&self, i: usize) -> f64 {
        self.raw_log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    /// Deterministic action `tanh(mean)`.
    pub fn mode(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.tanh()).collect()
    }

    pub fn sample(&self, noise: &[f64]) -> SquashedSample {
        squashed_gaussian_sample(self, noise)
    }

    /// Log-density of an action in the open box `(-1, 1)^d`.
    pub fn log_prob_of(&self, action: &[f64]) -> f64 {
        action
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let ls = self.log_std(i);
                let xi = (a.atanh() - self.mean[i]) / ls.exp();
                -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - a * a + TANH_EPS).ln()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    noise: Vec<f64>,
    std: Vec<f64>,
    clamped: Vec<bool>,
}

/// Gradients with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub mean: Vec<f64>,
    pub raw_log_std: Vec<f64>,
}

impl HeadGradient {
    /// `[mean | log_std]`, matching [`GaussianHead::from_output`].
    pub fn concat(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.raw_log_std).copied().collect()
    }
}

pub fn squashed_gaussian_sample(head: &GaussianHead, noise: &[f64]) -> SquashedSample {
    assert_eq!(noise.len(), head.dim(), "noise length must equal action dim");
    let d = head.dim();
    let mut action = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    let mut clamped = Vec::with_capacity(d);
    let mut log_prob = 0.0;
    for i in 0..d {
        let raw = head.raw_log_std[i];
        let ls = head.log_std(i);
        let s = ls.exp();
        let a = (head.mean[i] + s * noise[i]).tanh();
        log_prob += -0.5 * noise[i] * noise[i] - ls - HALF_LN_2PI - (1.0 - a * a + TANH_EPS).ln();
        action.push(a);
        std.push(s);
        clamped.push(!(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw));
    }
    SquashedSample {
        action,
        log_prob,
        noise: noise.to_vec(),
        std,
        clamped,
    }
}

impl SquashedSample {
    /// Chain rule from `dL/d(action)` and `dL/d(log_prob)` back to the head
    /// outputs, holding the noise fixed.
    pub fn backward(&self, d_action: &[f64], d_log_prob: f64) -> HeadGradient {
        let d = self.action.len();
        let mut mean = vec![0.0; d];
        let mut raw_log_std = vec![0.0; d];
        for i in 0..d {
            let a = self.action[i];
            let one_minus = 1.0 - a * a;
            // d log_prob / d u through the tanh correction term.
            let dlp_du = 2.0 * a * one_minus / (one_minus + TANH_EPS);
            let dl_du = d_action[i] * one_minus + d_log_prob * dlp_du;
            let du_dls = self.std[i] * self.noise[i];
            mean[i] = dl_du;
            raw_log_std[i] = if self.clamped[i] {
                0.0
            } else {
                dl_du * du_dls - d_log_prob
            };
        }
        HeadGradient { mean, raw_log_std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(mean: &[f64], log_std: &[f64]) -> GaussianHead {
        GaussianHead {
            mean: mean.to_vec(),
            raw_log_std: log_std.to_vec(),
        }
    }

    #[test]
    fn standard_head_at_zero_noise() {
        let h = head(&[0.0; 3], &[0.0; 3]);
        let s = h.sample(&[0.0; 3]);
        assert_eq!(s.action, vec![0.0; 3]);
        let want = 3.0 * (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln();
        // The tanh correction contributes -3 ln(1 + 1e-6).
        assert!((s.log_prob - want).abs() < 1e-5);
        assert!((s.log_prob - (want - 3.0 * (1.0 + TANH_EPS).ln())).abs() < 1e-12);
    }

    #[test]
    fn vanishing_std_is_deterministic() {
        let h = head(&[0.3, -1.2], &[-20.0, -30.0]);
        let s = h.sample(&[2.5, -1.0]);
        for (a, m) in s.action.iter().zip(h.mode()) {
            assert!((a - m).abs() < 1e-8);
        }
    }

    #[test]
    fn log_std_is_clamped() {
        let h = head(&[0.0, 0.0], &[5.0, -50.0]);
        assert_eq!(h.log_std(0), LOG_STD_MAX);
        assert_eq!(h.log_std(1), LOG_STD_MIN);
    }

    #[test]
    fn density_integrates_to_one() {
        for (mean, ls) in [(0.0, 0.0), (0.7, -0.5), (-1.5, 0.4), (0.2, -2.0)] {
            let h = head(&[mean], &[ls]);
            let sd: f64 = f64::exp(ls);
            // Integrate over u = atanh(a); da = (1 - a^2) du.
            let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
            let n = 20_000;
            let step = (hi - lo) / n as f64;
            let mut total = 0.0;
            for k in 0..=n {
                let u: f64 = lo + k as f64 * step;
                let a = u.tanh();
                if a.abs() >= 1.0 {
                    continue;
                }
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                total += w * h.log_prob_of(&[a]).exp() * (1.0 - a * a) * step;
            }
            assert!((total - 1.0).abs() < 0.01, "mean {mean} log_std {ls}: {total}");
        }
    }

    #[test]
    fn log_prob_of_matches_sample() {
        let h = head(&[0.4, -0.3], &[-0.2, 0.1]);
        let s = h.sample(&[0.5, -0.8]);
        assert!((h.log_prob_of(&s.action) - s.log_prob).abs() < 1e-9);
    }
}
