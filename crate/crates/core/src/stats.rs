//! Empirical CDFs, Kolmogorov-Smirnov distances, Wilson intervals.

use serde::Serialize;

/// Sorted sample with its KS distance to a reference CDF.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcdfSummary {
    pub sorted: Vec<f64>,
    pub n: usize,
    /// Evaluation points with the empirical and reference CDF values there.
    pub grid: Vec<(f64, f64, f64)>,
    pub ks: f64,
}

impl EcdfSummary {
    /// Summarize `samples` against `cdf`, tabulating `grid_points` evenly
    /// spaced quantiles of the sample.
    pub fn new(samples: &[f64], cdf: impl Fn(f64) -> f64, grid_points: usize) -> Self {
        let sorted = sorted_copy(samples);
        let n = sorted.len();
        let ks = ks_sorted(&sorted, &cdf);
        let grid = (1..=grid_points.min(n))
            .map(|i| {
                let idx = (i * n / grid_points.min(n)).max(1) - 1;
                let x = sorted[idx];
                (x, ecdf(&sorted, x), cdf(x))
            })
            .collect();
        Self { sorted, n, grid, ks }
    }

    /// `x,empirical_cdf,analytic_cdf,ks` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,empirical_cdf,analytic_cdf,ks\n");
        for &(x, e, a) in &self.grid {
            out.push_str(&format!("{x:e},{e:e},{a:e},{:e}\n", self.ks));
        }
        out
    }
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Fraction of the (sorted) sample at or below `x`.
pub fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&s| s <= x) as f64 / sorted.len() as f64
}

fn ks_sorted(sorted: &[f64], cdf: &impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        // Step over ties so the jump is taken once.
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let f = cdf(sorted[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    d
}

/// Two-sided `sup |F_n - F|`. Panics on an empty sample.
pub fn ks_analytic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty(), "KS distance of an empty sample");
    ks_sorted(&sorted_copy(samples), &cdf)
}

/// Two-sample `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS distance of an empty sample");
    let (a, b) = (sorted_copy(a), sorted_copy(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sided KS critical value `c(alpha) / sqrt(n_eff)`, at 99%.
pub fn ks_critical_99(n_eff: f64) -> f64 {
    1.628 / n_eff.sqrt()
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// True when each interval lies strictly below its predecessor.
pub fn trend_decreasing(cis: &[(f64, f64)]) -> bool {
    cis.windows(2).all(|w| w[1].1 < w[0].0)
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1.0) / n).sqrt())
}

/// Order-fixed pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Empirical `q`-quantile (nearest rank).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let s = sorted_copy(xs);
    let idx = ((q.clamp(0.0, 1.0) * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    s[idx]
}
