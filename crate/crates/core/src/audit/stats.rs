//! Rank correlation and divergence statistics used by the audit experiments.

use crate::error::{Error, Result};
use crate::tensor::fsum::fsum;

/// Kendall rank correlation with its normal-approximation significance.
#[derive(Clone, Copy, Debug)]
pub struct TauResult {
    /// Tie-corrected tau-b in [-1, 1].
    pub tau: f64,
    /// Normal-approximation z statistic.
    pub z: f64,
    /// Two-sided p-value from the normal approximation (approximate by
    /// construction; the erf evaluation itself is a series approximation).
    pub p_approx: f64,
}

/// Tau-b over all pairs, with the tie-corrected variance for the z statistic.
/// Errors when either side is constant (the correlation is undefined there).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<TauResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "rank inputs of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two positions".into()));
    }
    if a.iter().all(|&x| x == a[0]) {
        return Err(Error::ConstantRanks { side: "first" });
    }
    if b.iter().all(|&x| x == b[0]) {
        return Err(Error::ConstantRanks { side: "second" });
    }

    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut ties_a = 0u64;
    let mut ties_b = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = a[i] - a[j];
            let dy = b[i] - b[j];
            if dx == 0.0 {
                ties_a += 1;
            }
            if dy == 0.0 {
                ties_b += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let s = concordant as f64 - discordant as f64;
    let denom = ((n0 - ties_a as f64) * (n0 - ties_b as f64)).sqrt();
    let tau = (s / denom).clamp(-1.0, 1.0);

    // Tie-corrected variance of S over tie-group sizes.
    let groups = |xs: &[f64]| -> (f64, f64, f64) {
        let mut sorted = xs.to_vec();
        sorted.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
        let (mut vt, mut v1, mut v2) = (0.0, 0.0, 0.0);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            vt += t * (t - 1.0) * (2.0 * t + 5.0);
            v1 += t * (t - 1.0);
            v2 += t * (t - 1.0) * (t - 2.0);
            i = j + 1;
        }
        (vt, v1, v2)
    };
    let nf = n as f64;
    let (vt, v1a, v2a) = groups(a);
    let (vu, v1b, v2b) = groups(b);
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let mut var_s = (v0 - vt - vu) / 18.0 + (v1a * v1b) / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var_s += (v2a * v2b) / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let z = s / var_s.sqrt();
    let p_approx = erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(TauResult { tau, z, p_approx })
}

/// Jensen-Shannon divergence in natural-log units, in [0, ln 2].
/// `0 * log 0` is taken as 0.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "distributions of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let half_kl = |x: &[f64], y: &[f64]| -> f64 {
        fsum(x.iter().zip(y).map(|(&xi, &yi)| {
            if xi == 0.0 {
                0.0
            } else {
                let m = (xi + yi) / 2.0;
                xi * (xi / m).ln()
            }
        })) / 2.0
    };
    Ok(half_kl(p, q) + half_kl(q, p))
}

/// Median by sorting; the even case averages the two middle values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Complementary error function via the Abramowitz-Stegun 7.1.26 polynomial
/// (absolute error below 1.5e-7, plenty for an approximate p-value).
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}
