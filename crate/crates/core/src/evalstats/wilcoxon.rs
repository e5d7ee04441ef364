use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest effective sample size handled by the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResult {
    /// `min(W⁺, W⁻)`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub stars: String,
    pub method: PValueMethod,
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.0005 {
        "***"
    } else if p < 0.005 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Nonzero differences and their midranks by absolute value.
pub fn signed_midranks(x: &[f64], y: &[f64]) -> Result<Vec<(f64, f64)>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(format!(
            "paired samples need equal lengths ≥ 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mut d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|&v| v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::DegenerateInput(
            "every paired difference is zero".into(),
        ));
    }
    d.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut out = Vec::with_capacity(d.len());
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &v in &d[i..=j] {
            out.push((v, rank));
        }
        i = j + 1;
    }
    Ok(out)
}

fn positive_sum(ranked: &[(f64, f64)]) -> f64 {
    ranked.iter().filter(|(d, _)| *d > 0.0).map(|(_, r)| r).sum()
}

/// Exact two-sided p-value from the null distribution of `W⁺` over all sign
/// assignments, counted on doubled (integer) midranks.
pub fn exact_p_value(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let threshold = (2.0 * statistic).round() as usize;
    let tail: u64 = counts[..=threshold.min(total)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * tail as f64 / all).min(1.0)
}

/// Normal approximation with continuity and tie corrections.
pub fn normal_p_value(ranks: &[f64], statistic: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < ranks.len() {
        let mut j = i;
        while j + 1 < ranks.len() && ranks[j + 1] == ranks[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

fn finish(statistic: f64, p_value: f64, n: usize, method: PValueMethod) -> StatsResult {
    StatsResult {
        statistic,
        p_value,
        n_effective: n,
        stars: significance_stars(p_value).to_string(),
        method,
    }
}

fn statistic_of(ranked: &[(f64, f64)]) -> (f64, Vec<f64>) {
    let ranks: Vec<f64> = ranked.iter().map(|(_, r)| *r).collect();
    let total: f64 = ranks.iter().sum();
    let w_plus = positive_sum(ranked);
    (w_plus.min(total - w_plus), ranks)
}

/// Two-sided paired signed-rank test; zero differences are discarded.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<StatsResult> {
    let ranked = signed_midranks(x, y)?;
    let (w, ranks) = statistic_of(&ranked);
    Ok(if ranks.len() <= EXACT_MAX_N {
        finish(w, exact_p_value(&ranks, w), ranks.len(), PValueMethod::Exact)
    } else {
        finish(w, normal_p_value(&ranks, w), ranks.len(), PValueMethod::NormalApprox)
    })
}

/// As [`wilcoxon_signed_rank`] but always using the normal approximation.
pub fn wilcoxon_signed_rank_normal(x: &[f64], y: &[f64]) -> Result<StatsResult> {
    let ranked = signed_midranks(x, y)?;
    let (w, ranks) = statistic_of(&ranked);
    Ok(finish(w, normal_p_value(&ranks, w), ranks.len(), PValueMethod::NormalApprox))
}
