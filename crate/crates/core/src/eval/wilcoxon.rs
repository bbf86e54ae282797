use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest effective sample size handled by the exact null distribution
/// under [`WilcoxonMethod::Auto`].
pub const EXACT_MAX_N: usize = 25;

/// p-values below this are reported as underflow.
pub const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub method: WilcoxonMethod,
    /// Every difference was zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

impl WilcoxonResult {
    pub fn p_display(&self) -> String {
        format_p(self.p_value)
    }
}

pub fn format_p(p: f64) -> String {
    if p < P_FLOOR {
        format!("< {P_FLOOR:e}")
    } else {
        format!("{p}")
    }
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test of `a - b`, exact for small samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(a, b, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(a: &[f64], b: &[f64], method: WilcoxonMethod) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Usage("signed-rank test needs at least one pair".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Input("non-finite paired difference".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let method = match method {
        WilcoxonMethod::Auto if n <= EXACT_MAX_N => WilcoxonMethod::Exact,
        WilcoxonMethod::Auto => WilcoxonMethod::Normal,
        m => m,
    };
    let p_value = match method {
        WilcoxonMethod::Exact => exact_p(&ranks, w_plus)?,
        _ => normal_p(&abs, w_plus),
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        p_value,
        n_effective: n,
        method,
        degenerate: false,
    })
}

/// Null distribution of W+ by dynamic programming over doubled ranks
/// (average ranks are half-integers, so doubling makes them integral).
fn exact_p(ranks: &[f64], w_plus: f64) -> Result<f64> {
    let n = ranks.len();
    if n > 60 {
        return Err(Error::Usage(format!("exact signed-rank distribution is limited to 60 pairs, got {n}")));
    }
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments whose doubled W+ equals s
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (w_plus * 2.0).round() as usize;
    let below: u64 = counts[..=w].iter().sum();
    let above: u64 = counts[w..].iter().sum();
    let all = 2f64.powi(n as i32);
    Ok((2.0 * below.min(above) as f64 / all).min(1.0))
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
fn normal_p(abs: &[f64], w_plus: f64) -> f64 {
    let n = abs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
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
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_are_degenerate() {
        let r = wilcoxon_signed_rank(&[0.5, 0.7], &[0.5, 0.7]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn six_positive_distinct() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.0; 6];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.p_value, 2.0 / 64.0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.w_plus, 21.0);
        assert_eq!(r.method, WilcoxonMethod::Exact);
    }

    #[test]
    fn zero_differences_dropped() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.n_effective, 2);
        // W+ = 3 of a possible 3 with two pairs: p = 2 * 1/4.
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn large_n_uses_normal() {
        let a: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64 + if i % 3 == 0 { 0.5 } else { -1.0 }).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
    }

    #[test]
    fn underflow_display() {
        assert_eq!(format_p(0.0), "< 1e-12");
        assert_eq!(format_p(0.5), "0.5");
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(matches!(wilcoxon_signed_rank(&[1.0], &[]), Err(Error::Dimension(_))));
        assert!(matches!(wilcoxon_signed_rank(&[], &[]), Err(Error::Usage(_))));
    }
}
