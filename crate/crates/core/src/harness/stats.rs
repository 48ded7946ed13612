//! Summary statistics and the paired one-sided signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Ranks of `values` (1-based) with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedRankTest {
    /// Number of non-zero differences.
    pub n: usize,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest sample for which the exact null distribution is used.
const EXACT_LIMIT: usize = 25;

/// Wilcoxon signed-rank test of H1: `x` tends to exceed `y` (paired).
/// Zero differences are dropped. Without ties and for small samples the
/// exact null distribution is used; otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn wilcoxon_greater(x: &[f64], y: &[f64]) -> SignedRankTest {
    assert_eq!(x.len(), y.len(), "paired samples must have equal length");
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|v| *v != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return SignedRankTest {
            n,
            w_plus: 0.0,
            p_value: 1.0,
            exact: true,
        };
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, _)| r)
        .sum();
    let has_ties = ranks.iter().any(|r| r.fract() != 0.0) || {
        let mut s = abs.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).any(|w| w[0] == w[1])
    };
    if !has_ties && n <= EXACT_LIMIT {
        let counts = signed_rank_null_counts(n);
        let total: f64 = 2f64.powi(n as i32);
        let w = w_plus.round() as usize;
        let upper: f64 = counts[w.min(counts.len())..].iter().sum();
        return SignedRankTest {
            n,
            w_plus,
            p_value: upper / total,
            exact: true,
        };
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs;
    sorted.sort_by(f64::total_cmp);
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
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (w_plus - mu - 0.5) / var.sqrt();
        let normal = Normal::standard();
        1.0 - normal.cdf(z)
    };
    SignedRankTest {
        n,
        w_plus,
        p_value,
        exact: false,
    }
}

/// Number of sign assignments of ranks 1..=n with each rank sum.
fn signed_rank_null_counts(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut c = vec![0.0; max + 1];
    c[0] = 1.0;
    for r in 1..=n {
        for s in (r..=max).rev() {
            c[s] += c[s - r];
        }
    }
    c
}
