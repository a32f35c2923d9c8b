use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Category counts per item; every row sums to the same rater count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgreementTable {
    counts: Vec<Vec<usize>>,
    raters: usize,
}

impl AgreementTable {
    pub fn new(counts: Vec<Vec<usize>>) -> Result<Self> {
        let first = counts.first().ok_or_else(|| Error::invalid("agreement table needs at least one item"))?;
        let (c, n) = (first.len(), first.iter().sum::<usize>());
        if c < 2 {
            return Err(Error::invalid("agreement table needs at least two categories"));
        }
        if let Some(i) = counts.iter().position(|r| r.len() != c || r.iter().sum::<usize>() != n) {
            return Err(Error::invalid(format!("item {i} does not have {n} ratings over {c} categories")));
        }
        Ok(Self { counts, raters: n })
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }
}

pub fn fleiss_kappa(table: &AgreementTable) -> Result<f64> {
    let n = table.raters as f64;
    if table.raters < 2 {
        return Err(Error::invalid("Fleiss' kappa needs at least two raters per item"));
    }
    let items = table.items() as f64;
    let c = table.counts[0].len();
    let p_bar = table
        .counts
        .iter()
        .map(|row| (row.iter().map(|&x| (x * x) as f64).sum::<f64>() - n) / (n * (n - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..c)
        .map(|j| {
            let pj = table.counts.iter().map(|r| r[j]).sum::<usize>() as f64 / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Undefined("Fleiss' kappa: every rating falls in one category".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Sum of the ranks of the positive differences.
    pub statistic: f64,
    pub n_effective: usize,
    pub p_two_sided: f64,
    pub method: TestMethod,
    pub zero_only_flag: bool,
}

/// Largest tie-free sample handled by exact enumeration.
pub const EXACT_MAX_N: usize = 25;

/// Relative tolerance under which two |d| values count as tied, so that
/// means of identical ratings computed in different orders still tie.
const TIE_RTOL: f64 = 1e-12;

/// Mid-ranks of `values` (ascending) and the sizes of tie groups.
fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        let base = values[order[i]];
        while j < order.len() && values[order[j]] - base <= TIE_RTOL * base.abs().max(values[order[j]].abs()) {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of sign assignments of ranks `1..=n` with positive-rank sum `w`,
/// for every `w` in `0..=n(n+1)/2`.
pub fn signed_rank_counts(n: usize) -> Vec<u64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for r in 1..=n {
        for w in (r..=max).rev() {
            counts[w] += counts[w - r];
        }
    }
    counts
}

/// Paired two-sided Wilcoxon signed-rank test of `x - y`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("samples of length {} and {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::invalid("Wilcoxon test needs at least one pair"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|&v| v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite difference"));
    }
    let n = d.len();
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            n_effective: 0,
            p_two_sided: 1.0,
            method: TestMethod::Exact,
            zero_only_flag: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = mid_ranks(&abs);
    let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();

    if n <= EXACT_MAX_N && ties.is_empty() {
        let counts = signed_rank_counts(n);
        let total = (1u64 << n) as f64;
        let wi = w.round() as usize;
        let lower = counts[..=wi].iter().sum::<u64>() as f64 / total;
        let upper = counts[wi..].iter().sum::<u64>() as f64 / total;
        return Ok(TestResult {
            statistic: w,
            n_effective: n,
            p_two_sided: (2.0 * lower.min(upper)).min(1.0),
            method: TestMethod::Exact,
            zero_only_flag: false,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let p = if var <= 0.0 {
        1.0
    } else {
        let sd = var.sqrt();
        let norm = Normal::standard();
        let lower = norm.cdf((w - mean + 0.5) / sd);
        let upper = 1.0 - norm.cdf((w - mean - 0.5) / sd);
        (2.0 * lower.min(upper)).min(1.0)
    };
    Ok(TestResult {
        statistic: w,
        n_effective: n,
        p_two_sided: p,
        method: TestMethod::NormalApprox,
        zero_only_flag: false,
    })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = pvals.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::invalid(format!("p-value {p} outside (0, 1]")));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &i) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * pvals[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}
