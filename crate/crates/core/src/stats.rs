//! Summary statistics and the Wilcoxon rank-sum test.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSum {
    /// Rank sum of the first sample.
    pub w: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p_two_sided: f64,
    /// One-sided p-value for the first sample tending smaller.
    pub p_less: f64,
}

/// Wilcoxon rank-sum test with mid-ranks for ties and the normal
/// approximation with tie-corrected variance and continuity correction.
pub fn rank_sum(a: &[f64], b: &[f64]) -> Option<RankSum> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let mut all: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    if all.iter().any(|(x, _)| x.is_nan()) {
        return None;
    }
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut w = 0.0;
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let k = (j - i + 1) as f64;
        ties += k * k * k - k;
        w += all[i..=j].iter().filter(|(_, first)| *first).count() as f64 * rank;
        i = j + 1;
    }
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let mu = n1f * (nf + 1.0) / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)).max(1.0));
    let std = Normal::standard();
    if !(var > 0.0) {
        return Some(RankSum { w, z: 0.0, p_two_sided: 1.0, p_less: 0.5 });
    }
    let sd = var.sqrt();
    let d = w - mu;
    let z = if d.abs() <= 0.5 { 0.0 } else { (d - 0.5 * d.signum()) / sd };
    let p_less = std.cdf((d + 0.5) / sd);
    Some(RankSum { w, z, p_two_sided: (2.0 * std.cdf(-z.abs())).min(1.0), p_less: p_less.min(1.0) })
}
