//! Epsilon-prediction DDPM with a linear beta schedule.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl Schedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::usage("diffusion needs at least one step"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::usage(format!(
                "beta schedule [{beta_start}, {beta_end}] must satisfy 0 < start <= end < 1"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) ε`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Tensor {
        let ab = self.alpha_bars[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = x0
            .data()
            .iter()
            .zip(eps.data())
            .map(|(x, e)| a * x + b * e)
            .collect();
        Tensor::from_parts(x0.shape().to_vec(), data)
    }

    /// Timesteps visited by a sampler with `steps` evaluations, ascending.
    /// `steps == len()` visits every timestep; `steps == 1` visits only the last.
    pub fn respaced(&self, steps: usize) -> Result<Vec<usize>> {
        let t = self.len();
        if steps == 0 || steps > t {
            return Err(Error::usage(format!("sampling steps {steps} outside 1..={t}")));
        }
        Ok((0..steps).map(|i| (i + 1) * t / steps - 1).collect())
    }
}

/// One ancestral step between respaced timesteps, given the predicted noise.
/// Returns the posterior mean and its standard deviation.
pub fn posterior_step(
    x_t: &[f64],
    eps: &[f64],
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
) -> (Vec<f64>, f64) {
    let beta = 1.0 - alpha_bar_t / alpha_bar_prev;
    let alpha = 1.0 - beta;
    let c = beta / (1.0 - alpha_bar_t).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let mean = x_t
        .iter()
        .zip(eps)
        .map(|(x, e)| inv * (x - c * e))
        .collect();
    let var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t);
    (mean, var.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_marginal_matches_iteration() {
        // Iterating x_t = sqrt(a_t) x_{t-1} + sqrt(b_t) e_t tracks the signal
        // coefficient m_t and noise variance v_t; they must equal the closed form.
        let s = Schedule::linear(100, 1e-4, 0.02).unwrap();
        let (mut m, mut v) = (1.0f64, 0.0f64);
        for t in 0..s.len() {
            m *= s.alphas[t].sqrt();
            v = s.alphas[t] * v + s.betas[t];
            assert!((m - s.alpha_bars[t].sqrt()).abs() < 1e-10);
            assert!((v - (1.0 - s.alpha_bars[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn respacing() {
        let s = Schedule::linear(100, 1e-4, 0.02).unwrap();
        assert_eq!(s.respaced(1).unwrap(), vec![99]);
        assert_eq!(s.respaced(100).unwrap(), (0..100).collect::<Vec<_>>());
        assert_eq!(s.respaced(4).unwrap(), vec![24, 49, 74, 99]);
        assert!(s.respaced(101).is_err());
        assert!(s.respaced(0).is_err());
    }

    #[test]
    fn final_step_recovers_x0_prediction() {
        // With alpha_bar_prev = 1 the posterior mean is the x0 estimate and the
        // variance vanishes.
        let ab = 0.3;
        let (mean, std) = posterior_step(&[0.7], &[0.2], ab, 1.0);
        let x0 = (0.7 - (1.0f64 - ab).sqrt() * 0.2) / ab.sqrt();
        assert!((mean[0] - x0).abs() < 1e-12);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn bad_schedules_rejected() {
        assert!(Schedule::linear(0, 1e-4, 0.02).is_err());
        assert!(Schedule::linear(10, 0.5, 0.1).is_err());
    }
}
