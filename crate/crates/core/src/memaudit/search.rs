use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarPair {
    pub rank: usize,
    pub real_id: String,
    pub synth_id: String,
    pub cosine: f64,
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok(cosine_with_norms(a, b, na, nb))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// (cosine, real index, synth index)
type Candidate = (f64, usize, usize);

fn norms(m: &FeatureMatrix, what: &str) -> Result<Vec<f64>> {
    m.rows
        .iter()
        .zip(&m.ids)
        .map(|(r, id)| match norm(r) {
            n if n > 0.0 && n.is_finite() => Ok(n),
            _ => Err(Error::invalid(format!("{what} feature row {id} is zero or non-finite"))),
        })
        .collect()
}

/// The `k` most similar (real, synthetic) pairs over the full cross product,
/// ordered by cosine descending, then real id, then synthetic id.
pub fn top_k_pairs(real: &FeatureMatrix, synth: &FeatureMatrix, k: usize) -> Result<Vec<SimilarPair>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if real.is_empty() || synth.is_empty() {
        return Err(Error::invalid("both feature sets must be nonempty"));
    }
    if real.dim() != synth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "real features have {} dims, synthetic {}",
            real.dim(),
            synth.dim()
        )));
    }
    let (rn, sn) = (norms(real, "real")?, norms(synth, "synthetic")?);
    let k = k.min(real.len() * synth.len());
    let order = |a: &Candidate, b: &Candidate| {
        b.0.total_cmp(&a.0)
            .then_with(|| real.ids[a.1].cmp(&real.ids[b.1]))
            .then_with(|| synth.ids[a.2].cmp(&synth.ids[b.2]))
    };
    let keep = |mut c: Vec<Candidate>| -> Vec<Candidate> {
        if c.len() > k {
            c.select_nth_unstable_by(k - 1, order);
            c.truncate(k);
        }
        c
    };

    // Per-synthetic-row shortlists; the global top k lies in their union.
    let shortlists: Vec<Vec<Candidate>> = (0..synth.len())
        .into_par_iter()
        .map(|s| {
            let row: Vec<Candidate> = (0..real.len())
                .map(|r| (cosine_with_norms(&real.rows[r], &synth.rows[s], rn[r], sn[s]), r, s))
                .collect();
            keep(row)
        })
        .collect();
    let mut all = keep(shortlists.into_iter().flatten().collect());
    all.sort_by(order);
    Ok(all
        .into_iter()
        .enumerate()
        .map(|(i, (cosine, r, s))| SimilarPair {
            rank: i + 1,
            real_id: real.ids[r].clone(),
            synth_id: synth.ids[s].clone(),
            cosine,
        })
        .collect())
}
