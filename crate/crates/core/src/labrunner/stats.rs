//! Nonparametric tests for paired multi-seed comparisons.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{LabError, Result};

/// Largest sample size for which the signed-rank null is enumerated exactly.
pub const WILCOXON_EXACT_MAX: usize = 25;
pub const WILCOXON_MIN_N: usize = 5;
/// Display floor for p-values that underflow.
pub const P_DISPLAY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    ChiSquare,
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Subjects (Friedman) or non-zero differences (Wilcoxon).
    pub n: usize,
    pub method: PMethod,
}

/// Midranks (1-based) of `values`; tied values share their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

/// Friedman test over `scores[subject][condition]`.
pub fn friedman_test(scores: &[Vec<f64>]) -> Result<TestResult> {
    let k = scores.first().map(Vec::len).unwrap_or(0);
    if k < 2 {
        return Err(LabError::config("conditions", "friedman test needs at least 2 conditions"));
    }
    if scores.iter().any(|r| r.len() != k) {
        return Err(LabError::Shape("friedman rows differ in length".into()));
    }
    let n = scores.len();
    if n < 2 {
        return Err(LabError::Degenerate(format!("friedman test needs at least 2 subjects, got {n}")));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LabError::NumericInput("non-finite score".into()));
    }
    let mut rank_sums = vec![0.0; k];
    for row in scores {
        for (s, r) in rank_sums.iter_mut().zip(midranks(row)) {
            *s += r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let centre = (kf + 1.0) / 2.0;
    let spread: f64 = rank_sums.iter().map(|s| (s / nf - centre).powi(2)).sum();
    let statistic = 12.0 * nf / (kf * (kf + 1.0)) * spread;
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| LabError::Invariant(e.to_string()))?;
    let p_value = if statistic <= 0.0 { 1.0 } else { chi.sf(statistic) };
    Ok(TestResult {
        statistic,
        p_value,
        n,
        method: PMethod::ChiSquare,
    })
}

/// Two-sided Wilcoxon signed-rank test on paired samples. The statistic is
/// `min(W+, W−)`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(LabError::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(LabError::NumericInput("non-finite sample".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(LabError::Degenerate("all paired differences are zero".into()));
    }
    if n < WILCOXON_MIN_N {
        return Err(LabError::Degenerate(format!(
            "{n} non-zero differences; at least {WILCOXON_MIN_N} required"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);
    if n <= WILCOXON_EXACT_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let target = (2.0 * w_plus).round() as usize;
        return Ok(TestResult {
            statistic,
            p_value: exact_two_sided(&doubled, target),
            n,
            method: PMethod::Exact,
        });
    }
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return Err(LabError::Degenerate("zero variance under the null".into()));
    }
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).map_err(|e| LabError::Invariant(e.to_string()))?;
    Ok(TestResult {
        statistic,
        p_value: (2.0 * normal.sf(z.abs())).min(1.0),
        n,
        method: PMethod::Normal,
    })
}

/// Null distribution of the signed-rank sum over integer (doubled) ranks.
fn exact_two_sided(doubled: &[usize], target: usize) -> f64 {
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(doubled.len() as i32);
    let lower: f64 = counts[..=target].iter().sum();
    let upper: f64 = counts[target..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    Holm,
    FixedDivide,
}

/// Multiple-comparison decisions; `true` means the hypothesis is rejected.
pub fn holm_bonferroni(pvals: &[f64], alpha: f64, mode: Correction) -> Vec<bool> {
    let m = pvals.len();
    let mut decisions = vec![false; m];
    match mode {
        Correction::FixedDivide => {
            for (d, p) in decisions.iter_mut().zip(pvals) {
                *d = *p <= alpha / m as f64;
            }
        }
        Correction::Holm => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
            for (rank, &i) in order.iter().enumerate() {
                if pvals[i] > alpha / (m - rank) as f64 {
                    break;
                }
                decisions[i] = true;
            }
        }
    }
    decisions
}

/// p-value formatted for reports, never printed as exactly zero.
pub fn display_p(p: f64) -> String {
    if p < P_DISPLAY_FLOOR {
        format!("<{P_DISPLAY_FLOOR:e}")
    } else if p < 1e-4 {
        format!("{p:.3e}")
    } else {
        format!("{p:.4}")
    }
}
