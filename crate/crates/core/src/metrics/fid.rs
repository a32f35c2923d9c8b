use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{embed_set, Embedder, FeatureMatrix};
use crate::diffusion::{sample, CheckpointRecord, NoiseSchedule, SampleOptions};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::neural::checkpoint;

/// Gaussian fit of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FidMoments {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

/// Sample mean and unbiased (n − 1) covariance, symmetrized.
pub fn fit_moments(features: &FeatureMatrix) -> Result<FidMoments> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 feature rows, got {n}")));
    }
    let d = features.dim();
    let x = DMatrix::from_fn(n, d, |i, j| features.rows[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mu[j]);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let sigma = (&cov + cov.transpose()) * 0.5;
    Ok(FidMoments { mu, sigma, n })
}

const SYMMETRY_TOL: f64 = 1e-8;

/// Principal square root via symmetric eigendecomposition, with negative
/// eigenvalues clamped to zero.
pub fn sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!("{}x{} is not square", a.nrows(), a.ncols())));
    }
    let asym = (a - a.transpose()).abs().max();
    if asym > SYMMETRY_TOL * (1.0 + a.abs().max()) {
        return Err(Error::invalid(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(a.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2·(Σ1^½ Σ2 Σ1^½)^½)`.
pub fn frechet_distance(m1: &FidMoments, m2: &FidMoments) -> Result<f64> {
    if m1.mu.len() != m2.mu.len() || m1.sigma.shape() != m2.sigma.shape() {
        return Err(Error::ShapeMismatch(format!(
            "moment dimensions {} and {} differ",
            m1.mu.len(),
            m2.mu.len()
        )));
    }
    let s1 = sqrt_psd(&m1.sigma)?;
    let inner = &s1 * &m2.sigma * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sqrt_psd(&inner)?.trace();
    let d = (&m1.mu - &m2.mu).norm_squared() + m1.sigma.trace() + m2.sigma.trace() - 2.0 * cross;
    if d < 0.0 && d > -1e-6 {
        return Ok(0.0);
    }
    if !d.is_finite() || d < 0.0 {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {d}")));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidPoint {
    pub checkpoint_index: u32,
    pub step: u64,
    pub fid: f64,
}

/// Every `n`-th checkpoint (indices n, 2n, …).
pub fn every_nth(records: &[CheckpointRecord], n: u32) -> Vec<CheckpointRecord> {
    records
        .iter()
        .filter(|r| n > 0 && r.checkpoint_index % n == 0)
        .cloned()
        .collect()
}

/// Samples `n_synth` images from each checkpoint and measures FID against the
/// real set. Each checkpoint samples with the same seed.
pub fn fid_curve(
    checkpoints: &[CheckpointRecord],
    real_images: &[GrayImage],
    n_synth: usize,
    embedder: &Embedder,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<FidPoint>> {
    if n_synth < 2 {
        return Err(Error::invalid("fid_curve needs n_synth >= 2"));
    }
    let first = real_images.first().ok_or_else(|| Error::invalid("no real images"))?;
    let real = fit_moments(&embed_set(real_images, embedder)?)?;
    checkpoints
        .iter()
        .map(|rec| {
            let (model, _) = checkpoint::load(&rec.path)?;
            let opts = SampleOptions {
                checkpoint: Some(rec.checkpoint_index),
                ..SampleOptions::new(first.width(), first.height(), seed)
            };
            let synth = sample(&model, sched, n_synth, &opts)?;
            let moments = fit_moments(&embed_set(&synth, embedder)?)?;
            Ok(FidPoint {
                checkpoint_index: rec.checkpoint_index,
                step: rec.step,
                fid: frechet_distance(&real, &moments)?,
            })
        })
        .collect()
}

pub fn fid_curve_csv(points: &[FidPoint]) -> String {
    let mut out = String::from("checkpoint_index,step,fid\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.checkpoint_index, p.step, p.fid));
    }
    out
}

pub fn write_fid_curve(path: impl AsRef<Path>, points: &[FidPoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, fid_curve_csv(points)).map_err(|e| Error::io(path, e))
}
