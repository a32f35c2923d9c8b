use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DenoiserModel, Tensor4};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so parameters whose true
/// gradient is essentially zero are judged on absolute agreement.
pub const RELATIVE_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub sample_count: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            sample_count: 200,
            step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter name, offset, analytic, numeric)` for the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `mean((model(x_t, t) - target)^2)`.
pub fn mse_loss(model: &DenoiserModel, x_t: &Tensor4, t: &[usize], target: &Tensor4) -> Result<f64> {
    let out = model.forward(x_t, t)?;
    target.expect_dims(out.dims(), "mse target")?;
    // Neumaier summation: finite differences subtract two nearly equal
    // losses, so round-off in the total goes straight into the gradient.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (a, b) in out.data().iter().zip(target.data()) {
        let term = (a - b) * (a - b);
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    Ok((sum + comp) / out.len() as f64)
}

/// Compares backprop against central differences of the MSE loss on a random
/// subset of scalar parameters and returns the largest relative error
/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn gradient_check(
    model: &DenoiserModel,
    x_t: &Tensor4,
    t: &[usize],
    target: &Tensor4,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    if cfg.sample_count == 0 {
        return Err(Error::invalid("gradient check needs at least one sampled parameter"));
    }
    let out = model.forward(x_t, t)?;
    target.expect_dims(out.dims(), "mse target")?;
    let scale = 2.0 / out.len() as f64;
    let loss_grad = out.zip_map(target, |a, b| scale * (a - b))?;
    let analytic = model.backward(x_t, t, &loss_grad)?;

    let total = model.params.scalar_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = sample(&mut rng, total, cfg.sample_count.min(total));

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for flat in picks.iter() {
        let (ti, off) = probe.params.locate(flat).expect("index in range");
        let original = probe.params.scalar(ti, off);
        *probe.params.scalar_mut(ti, off) = original + cfg.step;
        let plus = mse_loss(&probe, x_t, t, target)?;
        *probe.params.scalar_mut(ti, off) = original - cfg.step;
        let minus = mse_loss(&probe, x_t, t, target)?;
        *probe.params.scalar_mut(ti, off) = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic.scalar(ti, off);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        report.checked += 1;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            let name = model.params.iter().nth(ti).expect("tensor").name.clone();
            report.worst = Some((name, off, a, numeric));
        }
    }
    Ok(report)
}
