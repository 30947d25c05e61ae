//! Error analysis for correlated Monte Carlo series: batch means, integrated
//! autocorrelation times, blocked jackknife, plus Gauss–Legendre nodes.

use serde::{Deserialize, Serialize};

/// Smallest number of batches behind a reported error bar.
pub const MIN_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(mean: f64, se: f64) -> Self {
        Self { mean, se }
    }

    /// `|a − b| / sqrt(se_a² + se_b²)`; infinite when both errors vanish and
    /// the means differ.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let diff = (self.mean - other.mean).abs();
        let s = (self.se * self.se + other.se * other.se).sqrt();
        if s == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / s
        }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Means of `n_batches` contiguous batches; a remainder at the front is
/// dropped so every batch has the same length.
pub fn batch_means(x: &[f64], n_batches: usize) -> Vec<f64> {
    let b = x.len() / n_batches;
    if b == 0 {
        return Vec::new();
    }
    let start = x.len() - b * n_batches;
    x[start..].chunks(b).map(mean).collect()
}

/// Batch-means standard error with `n_batches ≥ 20` batches.
pub fn batch_means_se(x: &[f64], n_batches: usize) -> f64 {
    let bm = batch_means(x, n_batches.max(MIN_BATCHES));
    if bm.len() < 2 {
        return f64::NAN;
    }
    let m = mean(&bm);
    let var = bm.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (bm.len() - 1) as f64;
    (var / bm.len() as f64).sqrt()
}

/// Integrated autocorrelation time with Sokal's automatic window (`c = 5`).
pub fn integrated_autocorr_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(x);
    let c0 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for t in 1..n / 2 {
        let ct = (0..n - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / n as f64;
        tau += 2.0 * ct / c0;
        if (t as f64) >= 5.0 * tau {
            break;
        }
    }
    tau.max(1e-12)
}

/// `n / τ_int`, capped at the sample count.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let tau = integrated_autocorr_time(x).max(1.0);
    x.len() as f64 / tau
}

/// Per-series batch means of several chains, pooled for jackknife
/// resampling. `blocks[b][s]` is the mean of series `s` in block `b`.
#[derive(Debug, Clone)]
pub struct Blocks {
    pub blocks: Vec<Vec<f64>>,
}

impl Blocks {
    /// `chains[c][s]` is the sample vector of series `s` in chain `c`; every
    /// chain is cut into `per_chain` equal blocks.
    pub fn from_chains(chains: &[Vec<&[f64]>], per_chain: usize) -> Self {
        let mut blocks = Vec::new();
        for chain in chains {
            let cols: Vec<Vec<f64>> = chain.iter().map(|s| batch_means(s, per_chain)).collect();
            let nb = cols.iter().map(|c| c.len()).min().unwrap_or(0);
            for b in 0..nb {
                blocks.push(cols.iter().map(|c| c[b]).collect());
            }
        }
        Self { blocks }
    }

    fn means_excluding(&self, skip: Option<usize>) -> Vec<f64> {
        let ns = self.blocks.first().map_or(0, |b| b.len());
        let mut acc = vec![0.0; ns];
        let mut count = 0.0;
        for (b, row) in self.blocks.iter().enumerate() {
            if Some(b) == skip {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
            count += 1.0;
        }
        acc.iter().map(|a| a / count).collect()
    }

    /// Delete-one-block jackknife of a smooth function of the series means.
    pub fn jackknife<F: Fn(&[f64]) -> f64>(&self, f: F) -> Estimate {
        let full = f(&self.means_excluding(None));
        let n = self.blocks.len();
        if n < 2 {
            return Estimate::new(full, f64::NAN);
        }
        let reps: Vec<f64> = (0..n).map(|b| f(&self.means_excluding(Some(b)))).collect();
        let rm = mean(&reps);
        let var = reps.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() * (n - 1) as f64 / n as f64;
        Estimate::new(full, var.sqrt())
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let n = order;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n <= 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 2..8 {
            let nodes = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let integral: f64 = nodes.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((integral - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn iid_series_has_unit_tau() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..20000).map(|_| rng.random::<f64>()).collect();
        let tau = integrated_autocorr_time(&x);
        assert!((tau - 1.0).abs() < 0.15, "{tau}");
        let se = batch_means_se(&x, 40);
        let expect = (1.0f64 / 12.0 / 20000.0).sqrt();
        assert!((se / expect - 1.0).abs() < 0.4);
        assert!(effective_sample_size(&x) <= 20000.0);
    }

    #[test]
    fn jackknife_of_mean_matches_batch_se() {
        let x: Vec<f64> = (0..4000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let blocks = Blocks::from_chains(&[vec![&x]], 40);
        let j = blocks.jackknife(|m| m[0]);
        let b = batch_means_se(&x, 40);
        assert!((j.se - b).abs() < 1e-12);
    }
}
