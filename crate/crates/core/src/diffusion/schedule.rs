use crate::error::{Error, Result};
use crate::neural::Tensor4;

/// Per-step constants of the forward process, indexed `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
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

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.betas.len() {
            return Err(Error::invalid(format!("step {t} outside [1, {}]", self.betas.len())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// β linearly spaced from `beta_start` to `beta_end` inclusive.
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!("schedule needs T >= 2, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let span = beta_end - beta_start;
    let betas = (0..steps)
        .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// `sqrt(ᾱ)·x0 + sqrt(1-ᾱ)·ε`.
pub fn forward_mix(x0: f64, eps: f64, alpha_bar: f64) -> f64 {
    alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * eps
}

/// `(x_t - β/sqrt(1-ᾱ)·ε̂) / sqrt(α) + σ·z`.
pub fn reverse_mix(x_t: f64, eps_hat: f64, z: f64, alpha: f64, beta: f64, alpha_bar: f64, sigma: f64) -> f64 {
    let coef = if beta == 0.0 { 0.0 } else { beta / (1.0 - alpha_bar).sqrt() };
    (x_t - coef * eps_hat) / alpha.sqrt() + sigma * z
}

/// Closed-form forward process; `t[i]` is the step for batch item `i`.
pub fn q_sample(x0: &Tensor4, t: &[usize], eps: &Tensor4, sched: &NoiseSchedule) -> Result<Tensor4> {
    eps.expect_dims(x0.dims(), "q_sample noise")?;
    if t.len() != x0.batch() {
        return Err(Error::ShapeMismatch(format!("{} steps for batch {}", t.len(), x0.batch())));
    }
    let item = x0.len() / x0.batch().max(1);
    let mut out = x0.clone();
    for (b, &step) in t.iter().enumerate() {
        sched.check(step)?;
        let ab = sched.alpha_bar(step);
        let range = b * item..(b + 1) * item;
        for ((o, &x), &e) in out.data_mut()[range.clone()]
            .iter_mut()
            .zip(&x0.data()[range.clone()])
            .zip(&eps.data()[range])
        {
            *o = forward_mix(x, e, ab);
        }
    }
    Ok(out)
}

/// One ancestral step `x_t -> x_{t-1}` with σ_t² = β_t. `z` is ignored at `t == 1`.
pub fn p_sample_step(
    x_t: &Tensor4,
    t: usize,
    eps_hat: &Tensor4,
    sched: &NoiseSchedule,
    z: Option<&Tensor4>,
) -> Result<Tensor4> {
    sched.check(t)?;
    eps_hat.expect_dims(x_t.dims(), "p_sample eps_hat")?;
    if let Some(z) = z {
        z.expect_dims(x_t.dims(), "p_sample z")?;
    }
    let (alpha, beta, ab) = (sched.alpha(t), sched.beta(t), sched.alpha_bar(t));
    let sigma = beta.sqrt();
    let noise = if t == 1 { None } else { z };
    let mut out = x_t.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let zi = noise.map_or(0.0, |z| z.data()[i]);
        *o = reverse_mix(x_t.data()[i], eps_hat.data()[i], zi, alpha, beta, ab, sigma);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_schedule() {
        let s = linear_schedule(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_ends_near_zero() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        assert!(s.alpha_bar(1000) < 0.01);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1) < 1.0 && s.alpha_bar(1000) > 0.0);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn invalid_schedules() {
        assert!(linear_schedule(1, 0.1, 0.2).is_err());
        assert!(linear_schedule(10, 0.0, 0.2).is_err());
        assert!(linear_schedule(10, 0.3, 0.2).is_err());
        assert!(linear_schedule(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::from_betas(vec![]).is_err());
    }

    #[test]
    fn forward_mix_limits_and_value() {
        assert_eq!(forward_mix(0.7, -1.3, 1.0), 0.7);
        assert_eq!(forward_mix(0.7, -1.3, 0.0), -1.3);
        assert!((forward_mix(2.0, 1.0, 0.25) - (1.0 + 0.75f64.sqrt())).abs() < 1e-15);
        assert!((forward_mix(2.0, 1.0, 0.25) - 1.8660).abs() < 1e-4);
    }

    #[test]
    fn reverse_mix_values() {
        // β = 0 with ε̂ = z = 0 is a no-op.
        assert_eq!(reverse_mix(0.3, 0.0, 0.0, 1.0, 0.0, 0.5, 0.0), 0.3);
        let v = reverse_mix(1.0, 0.2, 0.0, 0.96, 0.04, 0.5, 0.2);
        let expected = (1.0 - 0.04 / 0.5f64.sqrt() * 0.2) / 0.96f64.sqrt();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 1.00898).abs() < 1e-3);
    }

    #[test]
    fn single_step_round_trip() {
        let sched = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        let x0 = Tensor4::from_fn([2, 1, 3, 3], |b, _, y, x| (b as f64 - 0.5) * (y as f64 - x as f64) * 0.3);
        let eps = Tensor4::from_fn([2, 1, 3, 3], |b, _, y, x| ((b + 2 * y + 3 * x) as f64).sin());
        let x1 = q_sample(&x0, &[1, 1], &eps, &sched).unwrap();
        let z = eps.map(|v| v * 100.0);
        let back = p_sample_step(&x1, 1, &eps, &sched, Some(&z)).unwrap();
        for (a, b) in back.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn step_bounds() {
        let sched = linear_schedule(5, 0.1, 0.2).unwrap();
        let x = Tensor4::zeros([1, 1, 2, 2]);
        assert!(q_sample(&x, &[0], &x, &sched).is_err());
        assert!(q_sample(&x, &[6], &x, &sched).is_err());
        assert!(p_sample_step(&x, 6, &x, &sched, None).is_err());
    }
}
