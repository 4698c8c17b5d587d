//! Variance-preserving noise schedule.
//!
//! `beta(t)` is linear on `[0, 1]` and the signal level is its closed-form
//! integral `alpha_bar(t) = exp(-(beta_max - beta_min) t^2 / 2 - beta_min t)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_time, Error, Result};

/// Smallest signal level Tweedie denoising accepts.
pub const MIN_ALPHA_BAR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub steps: usize,
}

impl Default for VpSchedule {
    fn default() -> Self {
        VpSchedule {
            beta_min: 0.1,
            beta_max: 20.0,
            steps: 200,
        }
    }
}

impl VpSchedule {
    pub fn new(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "schedule needs 0 < beta_min < beta_max, got {beta_min}, {beta_max}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidConfig("schedule steps must be >= 1".into()));
        }
        Ok(VpSchedule {
            beta_min,
            beta_max,
            steps,
        })
    }

    /// Builds a continuous schedule from per-step rates: `beta = steps * beta_step`.
    pub fn from_discrete(beta_min_step: f64, beta_max_step: f64, steps: usize) -> Result<Self> {
        let scale = steps as f64;
        Self::new(beta_min_step * scale, beta_max_step * scale, steps)
    }

    pub fn beta_at(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.beta(t))
    }

    pub fn alpha_bar_at(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.alpha_bar(t))
    }

    pub(crate) fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t
    }

    pub(crate) fn alpha_bar(&self, t: f64) -> f64 {
        (-(self.beta_max - self.beta_min) * t * t / 2.0 - self.beta_min * t).exp()
    }

    /// Standard deviation of the perturbation kernel, `sqrt(1 - alpha_bar)`.
    pub fn sigma(&self, t: f64) -> f64 {
        // -expm1 keeps precision when alpha_bar is close to 1.
        let log_ab = -(self.beta_max - self.beta_min) * t * t / 2.0 - self.beta_min * t;
        (-log_ab.exp_m1()).max(0.0).sqrt()
    }

    /// Samples the forward kernel and returns `(x_t, grad log p_t(x_t | x_0))`.
    pub fn perturb(&self, x0: &[f64], t: f64, noise: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_time(t)?;
        perturb_with_alpha_bar(self.alpha_bar(t), x0, noise)
    }

    /// Posterior-mean estimate of the clean sample from `x_t` and a score.
    pub fn tweedie_denoise(&self, xt: &[f64], t: f64, score: &[f64]) -> Result<Vec<f64>> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::TimeOutOfRange(t));
        }
        tweedie_with_alpha_bar(self.alpha_bar(t), xt, score)
    }

    /// Uniform grid `t_k = k / T` for `k = T..=0`.
    pub fn time_grid(steps: usize) -> impl Iterator<Item = (usize, f64)> {
        (0..=steps).rev().map(move |k| (k, k as f64 / steps as f64))
    }
}

pub fn perturb_with_alpha_bar(
    alpha_bar: f64,
    x0: &[f64],
    noise: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(x0.len(), noise.len())?;
    let var = 1.0 - alpha_bar;
    if var <= 0.0 {
        return Err(Error::DegenerateTime);
    }
    let (a, s) = (alpha_bar.sqrt(), var.sqrt());
    let xt = x0.iter().zip(noise).map(|(&x, &e)| a * x + s * e).collect();
    let target = noise.iter().map(|&e| -e / s).collect();
    Ok((xt, target))
}

pub fn tweedie_with_alpha_bar(alpha_bar: f64, xt: &[f64], score: &[f64]) -> Result<Vec<f64>> {
    check_len(xt.len(), score.len())?;
    if alpha_bar < MIN_ALPHA_BAR {
        return Err(Error::VanishingSignal(alpha_bar));
    }
    let (a, var) = (alpha_bar.sqrt(), (1.0 - alpha_bar).max(0.0));
    Ok(xt
        .iter()
        .zip(score)
        .map(|(&x, &g)| (x + var * g) / a)
        .collect())
}
