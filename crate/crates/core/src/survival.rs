//! The annealed survival function `g(p)` and its quenched relatives.
//!
//! `g(p)` is the probability that Bernoulli(`p`) site percolation from the
//! root of a Galton-Watson tree reaches infinity. It solves
//! `1 - phi(1 - p s) = s`, which we write as `G(s) = 0` with
//! `G(s) = [1 - phi(1 - p s)] - s`. `G` is concave with `G(0) = 0`,
//! `G'(0) = p mu - 1 > 0` above criticality and `G(1) = -phi(1 - p) <= 0`,
//! so the positive root is unique and sign-bisection is always safe.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::offspring::{GfConstants, OffspringDistribution};
use crate::tree::{NodeId, TreeArena};

/// Below this distance from `p_c` the root is indistinguishable from zero
/// and `g` is extrapolated linearly with slope `K`.
const LINEAR_ZONE: f64 = 1e-12;
const BISECT_REL_WIDTH: f64 = 1e-6;

/// Numeric `g`, `g'` and `g_n` for one offspring law.
#[derive(Debug, Clone)]
pub struct SurvivalSolver {
    dist: Arc<OffspringDistribution>,
    consts: GfConstants,
    tol: f64,
    max_iter: usize,
}

impl SurvivalSolver {
    pub fn new(dist: Arc<OffspringDistribution>) -> Result<Self> {
        let consts = dist.constants()?;
        Ok(Self { dist, consts, tol: 1e-12, max_iter: 200 })
    }

    pub fn with_tolerance(mut self, tol: f64, max_iter: usize) -> Result<Self> {
        if !(tol > 0.0) || max_iter == 0 {
            return Err(Error::Config(format!("solver needs tol > 0 and max_iter > 0, got {tol}, {max_iter}")));
        }
        self.tol = tol;
        self.max_iter = max_iter;
        Ok(self)
    }

    pub fn dist(&self) -> &Arc<OffspringDistribution> {
        &self.dist
    }

    pub fn constants(&self) -> &GfConstants {
        &self.consts
    }

    pub fn p_c(&self) -> f64 {
        self.consts.p_c
    }

    fn check_p(p: f64) -> Result<()> {
        if (0.0..=1.0).contains(&p) {
            Ok(())
        } else {
            Err(Error::Domain(format!("percolation parameter {p} outside [0, 1]")))
        }
    }

    #[inline]
    fn big_g(&self, p: f64, s: f64) -> f64 {
        self.dist.one_minus_phi_one_minus(p * s) - s
    }

    /// Residual `|phi(1 - p s) - (1 - s)|` of a candidate root.
    pub fn residual(&self, p: f64, s: f64) -> f64 {
        self.big_g(p, s).abs()
    }

    /// Annealed survival probability `g(p)`.
    pub fn g(&self, p: f64) -> Result<f64> {
        Self::check_p(p)?;
        let x = p - self.consts.p_c;
        if x <= 0.0 {
            return Ok(0.0);
        }
        if p == 1.0 {
            return Ok(1.0);
        }
        if x < LINEAR_ZONE {
            return Ok(self.consts.k * x);
        }

        // Bisection on the sign of G; G > 0 left of the root, < 0 right of it.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut iter = 0;
        while hi - lo > BISECT_REL_WIDTH * hi {
            if iter == self.max_iter {
                return Err(Error::NoConvergence { iterations: iter, residual: self.residual(p, hi) });
            }
            iter += 1;
            let mid = 0.5 * (lo + hi);
            if self.big_g(p, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        // Safeguarded Newton polish inside the bracket.
        let mut s = 0.5 * (lo + hi);
        while iter < self.max_iter {
            iter += 1;
            let gs = self.big_g(p, s);
            if gs == 0.0 {
                break;
            }
            if gs > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let dg = p * self.dist.phi_prime_unchecked(1.0 - p * s) - 1.0;
            let newton = s - gs / dg;
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            let step = (next - s).abs();
            s = next;
            if step <= 4.0 * f64::EPSILON * s || hi - lo <= 4.0 * f64::EPSILON * s {
                break;
            }
        }
        let residual = self.residual(p, s);
        if residual > self.tol {
            return Err(Error::NoConvergence { iterations: iter, residual });
        }
        Ok(s)
    }

    /// `g'(p) = g phi'(1 - p g) / (1 - p phi'(1 - p g))` for `p` in `(p_c, 1]`.
    pub fn g_prime(&self, p: f64) -> Result<f64> {
        Self::check_p(p)?;
        let x = p - self.consts.p_c;
        if x <= 0.0 {
            return Err(Error::Domain(format!("g' needs p > p_c = {}, got {p}", self.consts.p_c)));
        }
        if x < LINEAR_ZONE {
            return Ok(self.consts.k);
        }
        let g = self.g(p)?;
        let y = p * g;
        let num = g * self.dist.phi_prime_unchecked(1.0 - y);
        // 1 - p phi'(1 - y) = mu (p_c - p) + p (mu - phi'(1 - y)), cancellation-free near p_c.
        let den = -self.consts.mu * x + p * self.dist.mu_minus_phi_prime_one_minus(y);
        if !(den > 0.0) {
            return Err(Error::Numeric(format!("g' denominator {den} <= 0 at p = {p}")));
        }
        Ok(num / den)
    }

    /// `p` with `g(p) = y`: the quantile function of the pivot law.
    pub fn g_inverse(&self, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("g^-1 argument {y} outside [0, 1]")));
        }
        let p_c = self.consts.p_c;
        if y == 0.0 {
            return Ok(p_c);
        }
        if y == 1.0 {
            return Ok(1.0);
        }
        let (mut lo, mut hi) = (p_c, 1.0f64);
        for _ in 0..self.max_iter {
            let mid = 0.5 * (lo + hi);
            if self.g(mid)? < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `E[g(T, p) | T_n]` below `node`: the depth-`n` conditional survival.
    ///
    /// Uses `s(v) = 1 - prod_w (1 - p s(w))` over children with `s = g(p)` at
    /// relative depth `n`. Read-only: `T_n(node)` must already be realized.
    pub fn g_n(&self, arena: &TreeArena, node: NodeId, n: u32, p: f64) -> Result<f64> {
        Self::check_p(p)?;
        let leaf = self.g(p)?;
        if n == 0 {
            return Ok(leaf);
        }
        let mut levels: Vec<Vec<NodeId>> = vec![vec![node]];
        for d in 0..n {
            let cur = levels.last().unwrap();
            let mut next = Vec::with_capacity(cur.len() * 2);
            for &v in cur {
                let kids = arena
                    .children(v)
                    .ok_or_else(|| Error::Precondition(format!("subtree not realized at relative depth {d}")))?;
                next.extend(kids);
            }
            levels.push(next);
        }
        // Children of consecutive parents are consecutive in the next level.
        let mut below = vec![leaf; levels[n as usize].len()];
        for level in levels[..n as usize].iter().rev() {
            let mut vals = Vec::with_capacity(level.len());
            let mut offset = 0;
            for &v in level {
                let deg = arena.deg(v) as usize;
                let log_u: f64 = below[offset..offset + deg].iter().map(|&s| (-p * s).ln_1p()).sum();
                vals.push(-log_u.exp_m1());
                offset += deg;
            }
            below = vals;
        }
        Ok(below[0])
    }

    /// `E(v, eps)` proxy: `g_n(T(v), p_c + eps) / g(p_c + eps) - W_depth(v)`.
    pub fn e_functional(&self, arena: &mut TreeArena, node: NodeId, eps: f64, depth: u32) -> Result<f64> {
        let p = self.consts.p_c + eps;
        if !(eps > 0.0) || p > 1.0 {
            return Err(Error::Domain(format!("E functional needs eps in (0, 1 - p_c], got {eps}")));
        }
        let trace = arena.martingale(node, depth)?;
        let g = self.g(p)?;
        if g == 0.0 {
            return Err(Error::Domain(format!("g(p_c + {eps}) = 0")));
        }
        Ok(self.g_n(arena, node, depth, p)? / g - trace.last_w())
    }

    /// Depth at which the revealed-subtree martingale behind `g_n` has
    /// standard deviation below `threshold`, i.e. `sqrt(|T_n|) p^n < threshold`,
    /// with `|T_n|` estimated as `w_proxy * mu^n`. `None` when `mu p^2 >= 1`,
    /// where no depth suffices.
    pub fn stabilized_depth(&self, p: f64, w_proxy: f64, threshold: f64) -> Option<u32> {
        let rate = self.consts.mu * p * p;
        if !(rate < 1.0) || !(w_proxy > 0.0) || !(threshold > 0.0) {
            return None;
        }
        let n = ((threshold * threshold / w_proxy).ln() / rate.ln()).ceil();
        Some(n.max(0.0) as u32)
    }
}

/// `2 eps Wbar / ((1 - p_c - eps) p_c)` with `Wbar = max_{n <= depth} W_n(node)`.
pub fn resistance_upper_bound(arena: &mut TreeArena, node: NodeId, eps: f64, depth: u32) -> Result<f64> {
    let p_c = 1.0 / arena.dist().mean();
    if !(eps > 0.0 && eps < 1.0 - p_c) {
        return Err(Error::Domain(format!("eps {eps} outside (0, {})", 1.0 - p_c)));
    }
    let w_bar = arena.martingale(node, depth)?.w_bar();
    Ok(2.0 * eps * w_bar / ((1.0 - p_c - eps) * p_c))
}

/// One row of a survival table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRow {
    pub p: f64,
    pub g: f64,
    /// `None` at or below `p_c`, where `g'` from the right is not defined by the formula.
    pub g_prime: Option<f64>,
}

/// Evaluate `g` and `g'` on a grid.
pub fn survival_table(solver: &SurvivalSolver, grid: &[f64]) -> Result<Vec<SurvivalRow>> {
    grid.iter()
        .map(|&p| {
            let g = solver.g(p)?;
            let g_prime = if p > solver.p_c() { Some(solver.g_prime(p)?) } else { None };
            Ok(SurvivalRow { p, g, g_prime })
        })
        .collect()
}

/// Format with 12 significant digits.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.11e}").parse::<f64>().map(|v| format!("{v}")).unwrap_or_else(|_| x.to_string())
}

/// `p,g,g_prime` CSV; `g_prime` is empty where undefined.
pub fn survival_csv(rows: &[SurvivalRow]) -> String {
    let mut out = String::from("p,g,g_prime\n");
    for r in rows {
        let gp = r.g_prime.map(sig12).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", sig12(r.p), sig12(r.g), gp));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(d: OffspringDistribution) -> SurvivalSolver {
        SurvivalSolver::new(Arc::new(d)).unwrap()
    }

    #[test]
    fn binary_closed_form() {
        let s = solver(OffspringDistribution::deterministic(2).unwrap());
        let g = s.g(0.75).unwrap();
        assert!((g - 8.0 / 9.0).abs() < 1e-14);
        assert!((s.g_prime(0.75).unwrap() - 0.5 / 0.421875).abs() < 1e-12);
        assert_eq!(s.g(0.5).unwrap(), 0.0);
        assert_eq!(s.g(0.2).unwrap(), 0.0);
        assert_eq!(s.g(1.0).unwrap(), 1.0);
    }

    #[test]
    fn critical_slope_limits() {
        for (b, k) in [(2, 8.0), (3, 9.0)] {
            let s = solver(OffspringDistribution::deterministic(b).unwrap());
            let gp = s.g_prime(s.p_c() + 1e-5).unwrap();
            assert!((gp - k).abs() < 1e-3, "b={b}: {gp}");
        }
    }

    #[test]
    fn slope_approaches_k_monotonically() {
        for b in [2, 3] {
            let s = solver(OffspringDistribution::deterministic(b).unwrap());
            let k = s.constants().k;
            let gaps: Vec<f64> = (2..=6).map(|e| (s.g_prime(s.p_c() + 10f64.powi(-e)).unwrap() - k).abs()).collect();
            assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        }
    }

    #[test]
    fn linear_zone_extrapolates() {
        let s = solver(OffspringDistribution::deterministic(2).unwrap());
        let p = 0.5 + 1e-13;
        let g = s.g(p).unwrap();
        assert_eq!(g, 8.0 * (p - 0.5));
    }

    #[test]
    fn out_of_range_p_is_domain_error() {
        let s = solver(OffspringDistribution::deterministic(2).unwrap());
        assert!(matches!(s.g(1.5), Err(Error::Domain(_))));
        assert!(matches!(s.g_prime(0.4), Err(Error::Domain(_))));
    }

    #[test]
    fn monotone_on_grid_and_residuals_small() {
        let s = solver(OffspringDistribution::two_point(0.4).unwrap());
        let mut prev = 0.0;
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let g = s.g(p).unwrap();
            assert!(g >= prev);
            assert!(s.residual(p, g) <= 1e-12);
            prev = g;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let s = solver(OffspringDistribution::two_point(0.4).unwrap());
        let h = 1e-4;
        for p in [s.p_c() + 0.05, 0.7, 0.8] {
            let fd = (s.g(p + h).unwrap() - s.g(p - h).unwrap()) / (2.0 * h);
            let gp = s.g_prime(p).unwrap();
            assert!((fd - gp).abs() <= 10.0 * h * h * gp.max(1.0), "p={p}: {fd} vs {gp}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        let s = solver(OffspringDistribution::two_point(0.4).unwrap());
        for y in [1e-6, 0.1, 0.5, 0.9, 0.999] {
            let p = s.g_inverse(y).unwrap();
            assert!((s.g(p).unwrap() - y).abs() < 1e-10);
        }
    }

    #[test]
    fn g_n_hand_recursion() {
        let d = Arc::new(OffspringDistribution::deterministic(2).unwrap());
        let s = SurvivalSolver::new(d.clone()).unwrap();
        let mut t = TreeArena::new(d, 0);
        assert_eq!(s.g_n(&t, t.root(), 0, 0.75).unwrap(), s.g(0.75).unwrap());
        assert!(matches!(s.g_n(&t, t.root(), 1, 0.75), Err(Error::Precondition(_))));
        t.expand(t.root()).unwrap();
        let v = s.g_n(&t, t.root(), 1, 0.75).unwrap();
        assert!((v - 8.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn binary_e_functional_vanishes() {
        let d = Arc::new(OffspringDistribution::deterministic(2).unwrap());
        let s = SurvivalSolver::new(d.clone()).unwrap();
        let mut t = TreeArena::new(d, 0);
        let e = s.e_functional(&mut t, NodeId::ROOT, 0.05, 20).unwrap();
        assert!(e.abs() < 0.05);
        assert!(matches!(s.e_functional(&mut t, NodeId::ROOT, 0.0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn resistance_bound_plug_in() {
        let d = Arc::new(OffspringDistribution::deterministic(2).unwrap());
        let mut t = TreeArena::new(d, 0);
        let b = resistance_upper_bound(&mut t, NodeId::ROOT, 0.1, 8).unwrap();
        assert!((b - 1.0).abs() < 1e-12);
        assert!(matches!(resistance_upper_bound(&mut t, NodeId::ROOT, 0.6, 8), Err(Error::Domain(_))));
    }

    #[test]
    fn stabilized_depth_requires_subcritical_variance() {
        let s = solver(OffspringDistribution::deterministic(2).unwrap());
        assert_eq!(s.stabilized_depth(0.8, 1.0, 1e-6), None);
        let n = s.stabilized_depth(0.6, 1.0, 1e-6).unwrap();
        assert!((2.0 * 0.36f64).powi(n as i32).sqrt() < 1e-6);
    }

    #[test]
    fn csv_has_twelve_digits() {
        let s = solver(OffspringDistribution::deterministic(2).unwrap());
        let rows = survival_table(&s, &[0.5, 0.75]).unwrap();
        let csv = survival_csv(&rows);
        assert_eq!(csv.lines().next(), Some("p,g,g_prime"));
        assert!(csv.contains("0.75,0.888888888889,1.18518518519"), "{csv}");
        assert!(csv.contains("0.5,0,\n"));
    }
}
