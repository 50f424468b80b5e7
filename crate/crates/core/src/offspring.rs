//! Progeny laws of supercritical Galton-Watson processes without death.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const SUM_TOL: f64 = 1e-12;
const POISSON_TAIL: f64 = 1e-14;

/// How a distribution was specified; kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Explicit,
    Deterministic { b: u32 },
    TwoPoint { p1: f64 },
    PoissonPositive { lambda: f64 },
}

/// A finite-support offspring law with `P[Z = 0] = 0` and mean above one.
///
/// Probabilities are validated once at construction; evaluation and sampling
/// never re-check them.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    /// `pmf[k] = P[Z = k]`, with `pmf[0] = 0`.
    pmf: Vec<f64>,
    /// `cdf[k] = P[Z <= k]`.
    cdf: Vec<f64>,
    family: Family,
}

/// Constants derived from the generating function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfConstants {
    /// Mean offspring `phi'(1)`.
    pub mu: f64,
    /// Second factorial moment `phi''(1) = E[Z(Z-1)]`.
    pub phi2: f64,
    /// Critical percolation parameter `1/mu`.
    pub p_c: f64,
    /// Right derivative of the survival function at `p_c`.
    pub k: f64,
    /// `log mu / log(1/p1)`, taken as 0 when `p1 = 0`.
    pub q_ratio: f64,
}

impl OffspringDistribution {
    /// Build from explicit `(k, p_k)` pairs. Repeated `k` are summed.
    pub fn from_pmf(pairs: &[(u32, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidDistribution("empty pmf".into()));
        }
        let max_k = pairs.iter().map(|&(k, _)| k).max().unwrap_or(0) as usize;
        let mut pmf = vec![0.0; max_k + 1];
        for &(k, p) in pairs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!("P[Z={k}] = {p} is not a probability")));
            }
            if k == 0 && p > 0.0 {
                return Err(Error::InvalidDistribution("P[Z=0] must be 0 (no death)".into()));
            }
            pmf[k as usize] += p;
        }
        Self::from_dense(pmf, Family::Explicit)
    }

    /// `Z = b` almost surely; the tree is `b`-regular.
    pub fn deterministic(b: u32) -> Result<Self> {
        if b < 2 {
            return Err(Error::InvalidDistribution(format!("deterministic b = {b} is not supercritical")));
        }
        let mut pmf = vec![0.0; b as usize + 1];
        pmf[b as usize] = 1.0;
        Self::from_dense(pmf, Family::Deterministic { b })
    }

    /// `Z` in `{1, 2}` with `P[Z = 1] = p1`.
    pub fn two_point(p1: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p1) {
            return Err(Error::InvalidDistribution(format!("two-point p1 = {p1} must lie in [0, 1)")));
        }
        Self::from_dense(vec![0.0, p1, 1.0 - p1], Family::TwoPoint { p1 })
    }

    /// Poisson(`lambda`) conditioned to be positive, truncated at the first
    /// `k` whose tail mass drops below 1e-14 and renormalized.
    pub fn poisson_positive(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidDistribution(format!("poisson lambda = {lambda} must be positive")));
        }
        let norm = -(-lambda).exp_m1();
        let mut pmf = vec![0.0];
        let mut term = (-lambda).exp() / norm; // k = 0 term of the conditioned law, before dropping it
        let mut acc = 0.0;
        let mut k = 0u32;
        loop {
            k += 1;
            term *= lambda / k as f64;
            pmf.push(term);
            acc += term;
            if 1.0 - acc < POISSON_TAIL || k > 10_000 {
                break;
            }
        }
        let total: f64 = pmf.iter().sum();
        for p in pmf.iter_mut() {
            *p /= total;
        }
        Self::from_dense(pmf, Family::PoissonPositive { lambda })
    }

    fn from_dense(mut pmf: Vec<f64>, family: Family) -> Result<Self> {
        while pmf.len() > 2 && *pmf.last().unwrap() == 0.0 {
            pmf.pop();
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}, not 1")));
        }
        if pmf[0] != 0.0 {
            return Err(Error::InvalidDistribution("P[Z=0] must be 0 (no death)".into()));
        }
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        if mean <= 1.0 {
            return Err(Error::InvalidDistribution(format!("mean {mean} is not supercritical")));
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        // Sampling must land inside the support even if rounding leaves acc < 1.
        if let Some(last) = cdf.last_mut() {
            *last = f64::INFINITY;
        }
        Ok(Self { pmf, cdf, family })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// `P[Z = k]`.
    pub fn prob(&self, k: u32) -> f64 {
        self.pmf.get(k as usize).copied().unwrap_or(0.0)
    }

    /// `(k, p_k)` for every `k` with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.pmf.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(k, &p)| (k as u32, p))
    }

    pub fn max_support(&self) -> u32 {
        (self.pmf.len() - 1) as u32
    }

    pub fn p1(&self) -> f64 {
        self.prob(1)
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let m2: f64 = self.pmf.iter().enumerate().map(|(k, p)| (k * k) as f64 * p).sum();
        m2 - m * m
    }

    /// True when all mass sits on one value.
    pub fn is_deterministic(&self) -> bool {
        self.support().count() == 1
    }

    fn check_unit(z: f64) -> Result<()> {
        if (0.0..=1.0).contains(&z) {
            Ok(())
        } else {
            Err(Error::Domain(format!("generating function argument {z} outside [0, 1]")))
        }
    }

    /// `phi(z) = sum p_k z^k`.
    pub fn phi(&self, z: f64) -> Result<f64> {
        Self::check_unit(z)?;
        Ok(self.phi_unchecked(z))
    }

    /// `phi'(z)`.
    pub fn phi_prime(&self, z: f64) -> Result<f64> {
        Self::check_unit(z)?;
        Ok(self.phi_prime_unchecked(z))
    }

    /// `phi''(z)`.
    pub fn phi_double_prime(&self, z: f64) -> Result<f64> {
        Self::check_unit(z)?;
        Ok(self.phi_double_prime_unchecked(z))
    }

    pub(crate) fn phi_unchecked(&self, z: f64) -> f64 {
        self.pmf.iter().rev().fold(0.0, |acc, &p| acc * z + p)
    }

    pub(crate) fn phi_prime_unchecked(&self, z: f64) -> f64 {
        let n = self.pmf.len();
        let mut acc = 0.0;
        for k in (1..n).rev() {
            acc = acc * z + k as f64 * self.pmf[k];
        }
        acc
    }

    pub(crate) fn phi_double_prime_unchecked(&self, z: f64) -> f64 {
        let n = self.pmf.len();
        let mut acc = 0.0;
        for k in (2..n).rev() {
            acc = acc * z + (k * (k - 1)) as f64 * self.pmf[k];
        }
        acc
    }

    /// `1 - phi(1 - x)` without cancellation for small `x`.
    pub(crate) fn one_minus_phi_one_minus(&self, x: f64) -> f64 {
        let l = (-x).ln_1p();
        self.support().map(|(k, p)| -p * (k as f64 * l).exp_m1()).sum()
    }

    /// `mu - phi'(1 - x)` without cancellation for small `x`.
    pub(crate) fn mu_minus_phi_prime_one_minus(&self, x: f64) -> f64 {
        let l = (-x).ln_1p();
        self.support().filter(|&(k, _)| k >= 2).map(|(k, p)| -(k as f64) * p * ((k - 1) as f64 * l).exp_m1()).sum()
    }

    /// Derived constants. Fails only for `Z = 1`, which construction already rules out.
    pub fn constants(&self) -> Result<GfConstants> {
        let mu = self.phi_prime_unchecked(1.0);
        let phi2 = self.phi_double_prime_unchecked(1.0);
        if phi2 <= 0.0 {
            return Err(Error::Degenerate("phi''(1) = 0: the tree is a ray".into()));
        }
        let p_c = 1.0 / mu;
        let k = 2.0 / (p_c * p_c * p_c * phi2);
        let p1 = self.p1();
        let q_ratio = if p1 == 0.0 { 0.0 } else { mu.ln() / (1.0 / p1).ln() };
        Ok(GfConstants { mu, phi2, p_c, k, q_ratio })
    }

    /// Offspring count for a uniform `u` in (0, 1), by inversion of the cdf.
    #[inline]
    pub fn sample_from_unit(&self, u: f64) -> u32 {
        // Supports are tiny; a linear scan beats a binary search here.
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.pmf.len() - 1) as u32
    }

    /// One draw; consumes exactly one 64-bit word of the stream.
    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> u32 {
        self.sample_from_unit(rng::uniform(rng))
    }
}

impl fmt::Display for OffspringDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            Family::Deterministic { b } => write!(f, "family = deterministic, b = {b}"),
            Family::TwoPoint { p1 } => write!(f, "family = two-point, p1 = {p1}"),
            Family::PoissonPositive { lambda } => write!(f, "family = poisson, lambda = {lambda}"),
            Family::Explicit => {
                let items: Vec<String> = self.support().map(|(k, p)| format!("[{k},{p}]")).collect();
                write!(f, "pmf = [{}]", items.join(","))
            }
        }
    }
}

/// Split `text` on top-level commas (commas inside brackets are kept).
pub(crate) fn split_top_level(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(text[start..].trim());
    out.into_iter().filter(|s| !s.is_empty()).collect()
}

impl FromStr for OffspringDistribution {
    type Err = Error;

    /// Parses `pmf = [[1,0.4],[2,0.6]]` or `family = deterministic, b = 2`
    /// (also `two-point` with `p1`, `poisson` with `lambda`).
    fn from_str(text: &str) -> Result<Self> {
        let mut family = None;
        let mut params = Vec::new();
        for item in split_top_level(text) {
            let (key, value) =
                item.split_once('=').ok_or_else(|| Error::Parse(format!("expected key = value, got `{item}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "pmf" => {
                    let pairs: Vec<(f64, f64)> = serde_json::from_str(value)
                        .map_err(|e| Error::Parse(format!("bad pmf list `{value}`: {e}")))?;
                    let mut out = Vec::with_capacity(pairs.len());
                    for (k, p) in pairs {
                        if k < 0.0 || k.fract() != 0.0 {
                            return Err(Error::Parse(format!("offspring count {k} is not a nonnegative integer")));
                        }
                        out.push((k as u32, p));
                    }
                    return Self::from_pmf(&out);
                }
                "family" => family = Some(value.to_ascii_lowercase()),
                _ => params.push((key.to_string(), value.to_string())),
            }
        }
        let family = family.ok_or_else(|| Error::Parse("missing `pmf` or `family`".into()))?;
        let param = |name: &str| -> Result<f64> {
            params
                .iter()
                .find(|(k, _)| k == name)
                .ok_or_else(|| Error::Parse(format!("family {family} needs `{name}`")))?
                .1
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad `{name}`: {e}")))
        };
        match family.as_str() {
            "deterministic" | "regular" => {
                let b = param("b")?;
                if b.fract() != 0.0 || b < 0.0 {
                    return Err(Error::Parse(format!("b = {b} must be an integer")));
                }
                Self::deterministic(b as u32)
            }
            "two-point" | "two_point" | "twopoint" => Self::two_point(param("p1")?),
            "poisson" | "poisson-positive" => Self::poisson_positive(param("lambda")?),
            other => Err(Error::Parse(format!("unknown family `{other}`"))),
        }
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_dist() -> impl Strategy<Value = OffspringDistribution> {
        prop::collection::vec(0.01f64..1.0, 2..6).prop_filter_map("supercritical", |w| {
            let total: f64 = w.iter().sum();
            let pairs: Vec<(u32, f64)> = w.iter().enumerate().map(|(i, x)| (i as u32 + 1, x / total)).collect();
            let fix: f64 = 1.0 - pairs.iter().map(|p| p.1).sum::<f64>();
            let mut pairs = pairs;
            pairs[0].1 += fix;
            OffspringDistribution::from_pmf(&pairs).ok()
        })
    }

    proptest! {
        #[test]
        fn phi_normalized_and_mean_termwise(d in arb_dist()) {
            prop_assert!((d.phi(1.0).unwrap() - 1.0).abs() < 1e-12);
            let termwise: f64 = d.support().map(|(k, p)| k as f64 * p).sum();
            prop_assert!((d.phi_prime(1.0).unwrap() - termwise).abs() < 1e-12);
        }

        #[test]
        fn derivative_matches_central_difference(d in arb_dist(), z in 0.05f64..0.95) {
            for h in [1e-3, 1e-4] {
                let fd = (d.phi(z + h).unwrap() - d.phi(z - h).unwrap()) / (2.0 * h);
                // Truncation error is phi'''(xi) h^2 / 6 <= (max_k^3) h^2.
                let bound = (d.max_support() as f64).powi(3) * h * h + 1e-10;
                prop_assert!((d.phi_prime(z).unwrap() - fd).abs() < bound);
            }
        }

        #[test]
        fn phi_monotone(d in arb_dist(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(d.phi(lo).unwrap() <= d.phi(hi).unwrap() + 1e-15);
        }
    }
}
