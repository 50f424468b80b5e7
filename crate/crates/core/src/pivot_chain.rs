//! The analytic pivot kernels and their reference processes.
//!
//! With `h = beta - p_c` and `f(x) = phi'(1 - (p_c + x) g(p_c + x))`, the
//! backbone pivot chain moves from `a` by the law `nu_a`: an atom of mass
//! `C_a = f(a)(p_c + a)` at `a`, and density `f(a) g'(p_c + x) / g'(p_c + a)`
//! on `(0, a)`. The dual pivot moves from `b` (given current pivot `a`) by
//! `nu~_{a,b}`: an atom `f(b) / f(a)` at `b` and density `-f'(x) / f(a)` on
//! `(a, b)`. Everything is driven off monotone tables of `g` and `f`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, derive_stream, purpose, Stream};
use crate::stats;
use crate::survival::SurvivalSolver;

/// Smallest tabulated `x`. Chains at `n = 500` live near `1e-3`; the
/// lower decades keep rare deep excursions on the table.
pub const X_MIN: f64 = 1e-12;
const X_SPLIT: f64 = 0.02;
const LOG_POINTS: usize = 4000;
const LINEAR_POINTS: usize = 4000;

/// Cubic Hermite interpolant on a strictly increasing grid.
#[derive(Debug, Clone)]
pub struct Hermite {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Hermite {
    /// Knots with prescribed slopes.
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && y.len() == x.len() && d.len() == x.len());
        debug_assert!(x.windows(2).all(|w| w[0] < w[1]));
        Self { x, y, d }
    }

    /// Monotone interpolant with Fritsch-Carlson slopes (PCHIP).
    pub fn pchip(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        Self { x, y, d }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Evaluate, clamping to the end values outside the domain.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// Tabulated `g`, `g'` and `f` with their inverses.
#[derive(Debug, Clone)]
pub struct PivotKernel {
    solver: SurvivalSolver,
    p_c: f64,
    mu: f64,
    x_max: f64,
    /// ln g(p_c + x) against ln x, and the reverse.
    log_g: Hermite,
    log_g_inv: Hermite,
    /// f against ln x, and ln x against -f (increasing).
    f_tab: Hermite,
    f_inv: Hermite,
    /// ln g'(p_c + x) against ln x.
    log_gp: Hermite,
}

/// Log-spaced below `X_SPLIT`, evenly spaced above, ending exactly at `x_max`.
fn kernel_grid(x_max: f64) -> Vec<f64> {
    let split = X_SPLIT.min(0.5 * x_max);
    let (lo, hi) = (X_MIN.ln(), split.ln());
    let mut xs: Vec<f64> = (0..LOG_POINTS).map(|i| (lo + (hi - lo) * i as f64 / LOG_POINTS as f64).exp()).collect();
    xs.extend((0..=LINEAR_POINTS).map(|i| split + (x_max - split) * i as f64 / LINEAR_POINTS as f64));
    xs
}

impl PivotKernel {
    pub fn new(solver: SurvivalSolver) -> Result<Self> {
        let c = *solver.constants();
        let (p_c, mu) = (c.p_c, c.mu);
        let x_max = 1.0 - p_c;
        let dist = solver.dist().clone();
        let xs = kernel_grid(x_max);
        let n = xs.len();
        let (mut ln_x, mut ln_g, mut g_slope) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let (mut f, mut f_slope, mut ln_gp) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for &x in &xs {
            let p = (p_c + x).min(1.0);
            let g = solver.g(p)?;
            let gp = solver.g_prime(p)?;
            let z = 1.0 - p * g;
            let fx = dist.phi_prime_unchecked(z);
            // Both expressions for the atom must agree; they differ only if g or g' is wrong.
            let c1 = fx * p;
            let c2 = 1.0 - fx * g / gp;
            if (c1 - c2).abs() > 1e-6 {
                return Err(Error::Numeric(format!(
                    "atom mass disagreement at x = {x}: f(a)(p_c + a) = {c1}, 1 - f g / g' = {c2}"
                )));
            }
            ln_x.push(x.ln());
            ln_g.push(g.ln());
            g_slope.push(x * gp / g);
            f.push(fx);
            // d f / d ln x = -x phi''(z) (g + p g').
            f_slope.push(-x * dist.phi_double_prime_unchecked(z) * (g + p * gp));
            ln_gp.push(gp.ln());
        }
        // d ln g' / d ln x from differences of the exact g' at nearby points.
        let mut gp_slope = Vec::with_capacity(n);
        for &x in &xs {
            let (l, r) = (x * (1.0 - 1e-4), (x * (1.0 + 1e-4)).min(x_max));
            let gl = solver.g_prime((p_c + l).min(1.0))?.ln();
            let gr = solver.g_prime((p_c + r).min(1.0))?.ln();
            gp_slope.push((gr - gl) / (r.ln() - l.ln()));
        }
        let inv_slope: Vec<f64> = g_slope.iter().map(|s| 1.0 / s).collect();
        let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
        Ok(Self {
            log_g: Hermite::new(ln_x.clone(), ln_g.clone(), g_slope),
            log_g_inv: Hermite::new(ln_g, ln_x.clone(), inv_slope),
            f_tab: Hermite::new(ln_x.clone(), f, f_slope),
            f_inv: Hermite::pchip(dedup_increasing(&neg_f), ln_x.clone()),
            log_gp: Hermite::new(ln_x, ln_gp, gp_slope),
            solver,
            p_c,
            mu,
            x_max,
        })
    }

    pub fn solver(&self) -> &SurvivalSolver {
        &self.solver
    }

    pub fn p_c(&self) -> f64 {
        self.p_c
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Largest state, `1 - p_c` (pivot 1).
    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    fn check(&self, a: f64) -> Result<()> {
        if a >= X_MIN && a <= self.x_max {
            Ok(())
        } else {
            Err(Error::Domain(format!("kernel state {a} outside [{X_MIN}, {}]", self.x_max)))
        }
    }

    /// Tabulated `g(p_c + x)`; linear in `x` below the table.
    pub fn g(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x < X_MIN {
            self.log_g.eval(X_MIN.ln()).exp() * x / X_MIN
        } else {
            self.log_g.eval(x.ln()).exp()
        }
    }

    /// Tabulated `g'(p_c + x)`.
    pub fn g_prime(&self, x: f64) -> f64 {
        self.log_gp.eval(x.max(X_MIN).ln()).exp()
    }

    /// `x` with `g(p_c + x) = y`.
    pub fn g_inv(&self, y: f64) -> f64 {
        let y_min = self.g(X_MIN);
        if y <= 0.0 {
            0.0
        } else if y < y_min {
            X_MIN * y / y_min
        } else {
            self.log_g_inv.eval(y.ln()).exp().min(self.x_max)
        }
    }

    /// `f(x) = phi'(1 - (p_c + x) g(p_c + x))`.
    pub fn f(&self, x: f64) -> f64 {
        self.f_tab.eval(x.max(X_MIN).ln())
    }

    /// `f'(x)` by centred differences with the local grid step.
    pub fn f_prime(&self, x: f64) -> f64 {
        let split = X_SPLIT.min(0.5 * self.x_max);
        let h = if x < split {
            x * (split / X_MIN).ln() / LOG_POINTS as f64
        } else {
            (self.x_max - split) / LINEAR_POINTS as f64
        };
        let (l, r) = ((x - h).max(X_MIN), (x + h).min(self.x_max));
        (self.f(r) - self.f(l)) / (r - l)
    }

    /// `x` with `f(x) = v`.
    pub fn f_inv(&self, v: f64) -> f64 {
        self.f_inv.eval(-v).exp()
    }

    /// `C_a = f(a)(p_c + a)`.
    pub fn atom(&self, a: f64) -> f64 {
        (self.f(a) * (self.p_c + a)).clamp(0.0, 1.0)
    }

    /// The other expression for the atom, `1 - f(a) g(p_c + a) / g'(p_c + a)`.
    pub fn atom_alt(&self, a: f64) -> f64 {
        1.0 - self.f(a) * self.g(a) / self.g_prime(a)
    }

    /// Density of the continuous part of `nu_a` at `x < a`.
    pub fn density_h(&self, a: f64, x: f64) -> f64 {
        if x <= 0.0 || x >= a {
            0.0
        } else {
            self.f(a) * self.g_prime(x) / self.g_prime(a)
        }
    }

    /// `P[h' <= x | h = a]` for `x < a`; equals 1 at `x >= a`.
    pub fn cdf_h(&self, a: f64, x: f64) -> f64 {
        if x >= a {
            1.0
        } else {
            (1.0 - self.atom(a)) * self.g(x) / self.g(a)
        }
    }

    /// Map a uniform to a draw from `nu_a`: small `u` jump, large `u` stay.
    pub fn step_h_from_unit(&self, a: f64, u: f64) -> f64 {
        let jump = 1.0 - self.atom(a);
        if u < jump {
            self.g_inv(u / jump * self.g(a)).min(a)
        } else {
            a
        }
    }

    /// One draw from `nu_a`.
    pub fn kernel_step_h(&self, a: f64, rng: &mut Stream) -> Result<f64> {
        self.check(a)?;
        Ok(self.step_h_from_unit(a, rng::uniform(rng)))
    }

    /// One draw from `nu~_{a,b}`, the dual update.
    pub fn step_dual_from_unit(&self, a: f64, b: f64, u: f64) -> f64 {
        let (fa, fb) = (self.f(a), self.f(b));
        let jump = (fa - fb) / fa;
        if u < jump {
            self.f_inv(fa * (1.0 - u)).clamp(a, b)
        } else {
            b
        }
    }

    /// Independent draws from `nu_a` and `nu~_{a,b}`.
    pub fn kernel_step_joint(&self, a: f64, b: f64, rng: &mut Stream) -> Result<(f64, f64)> {
        self.check(a)?;
        self.check(b)?;
        if a >= b {
            return Err(Error::Domain(format!("joint step needs a < b, got a = {a}, b = {b}")));
        }
        let h = self.step_h_from_unit(a, rng::uniform(rng));
        let hs = self.step_dual_from_unit(a, b, rng::uniform(rng));
        Ok((h, hs))
    }

    /// A draw of `h_0` from the pivot law (`P[beta_0 <= p] = g(p)`).
    pub fn sample_initial(&self, rng: &mut Stream) -> f64 {
        self.g_inv(rng::uniform(rng))
    }

    /// Probability-integral transform of one observed transition `a -> x`,
    /// the inverse of [`step_h_from_unit`](Self::step_h_from_unit). Atoms get
    /// a uniform from the atom's slice of `(0, 1)`.
    pub fn transition_uniform(&self, a: f64, x: f64, rng: &mut Stream) -> f64 {
        let jump = 1.0 - self.atom(a);
        if x >= a {
            jump + (1.0 - jump) * rng::uniform(rng)
        } else {
            jump * self.g(x) / self.g(a)
        }
    }
}

fn dedup_increasing(v: &[f64]) -> Vec<f64> {
    // Flat stretches (f pinned at p_1 near pivot 1) would break strict monotonicity.
    let mut out = v.to_vec();
    for i in 1..out.len() {
        if out[i] <= out[i - 1] {
            out[i] = out[i - 1] + f64::EPSILON * out[i - 1].abs().max(1e-300);
        }
    }
    out
}

/// Where a chain path came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    TreeExtracted,
}

/// Starting state for [`run_chain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Value(f64),
    /// Draw `h_0` from the pivot law.
    SampleFromL,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainPath {
    pub h: Vec<f64>,
    pub h_star: Option<Vec<f64>>,
    pub seed: u64,
    pub replicate: u64,
    pub provenance: Provenance,
}

/// Run `n` steps of the pivot chain (or the joint pivot/dual chain, which
/// starts its dual coordinate at `1 - p_c`).
pub fn run_chain(
    kernel: &PivotKernel,
    h0: InitialState,
    n: usize,
    seed: u64,
    replicate: u64,
    joint: bool,
) -> Result<ChainPath> {
    let mut rng = derive_stream(seed, purpose::CHAIN, replicate);
    let first = match h0 {
        InitialState::Value(v) => {
            kernel.check(v)?;
            v
        }
        InitialState::SampleFromL => kernel.sample_initial(&mut rng).max(X_MIN),
    };
    let mut h = Vec::with_capacity(n + 1);
    h.push(first);
    let mut h_star = joint.then(|| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(kernel.x_max());
        v
    });
    for _ in 0..n {
        let a = *h.last().unwrap();
        // States below the table follow the same small-x asymptotics.
        let a_eval = a.max(X_MIN);
        match h_star.as_mut() {
            None => {
                let next = kernel.step_h_from_unit(a_eval, rng::uniform(&mut rng)).min(a);
                debug_assert!(next <= a);
                h.push(next);
            }
            Some(hs) => {
                let b = *hs.last().unwrap();
                let next = kernel.step_h_from_unit(a_eval, rng::uniform(&mut rng)).min(a);
                let next_star = kernel.step_dual_from_unit(a_eval, b, rng::uniform(&mut rng));
                debug_assert!(next <= a && next_star > a.min(b) * (1.0 - 1e-12) && next_star <= b);
                h.push(next);
                hs.push(next_star);
            }
        }
    }
    Ok(ChainPath { h, h_star, seed, replicate, provenance: Provenance::Analytic })
}

/// `M_k = min(U_0, ..., U_k)` for `k <= n`.
pub fn min_uniform(n: usize, seed: u64, replicate: u64) -> Vec<f64> {
    let mut rng = derive_stream(seed, purpose::MIN_UNIFORM, replicate);
    let mut m = f64::INFINITY;
    (0..=n)
        .map(|_| {
            m = m.min(rng::uniform(&mut rng));
            m
        })
        .collect()
}

/// Running minima of a sequence.
pub fn running_min(us: &[f64]) -> Vec<f64> {
    let mut m = f64::INFINITY;
    us.iter()
        .map(|&u| {
            m = m.min(u);
            m
        })
        .collect()
}

/// Couple a pivot path with a min-uniform process: each transition is mapped
/// to the uniform that would have produced it, `h_0` through the pivot law.
/// When the path follows the kernel, the uniforms are IID.
pub fn coupled_min_uniform(kernel: &PivotKernel, h: &[f64], rng: &mut Stream) -> Vec<f64> {
    let mut us = Vec::with_capacity(h.len());
    us.push(kernel.g(h[0]));
    for w in h.windows(2) {
        us.push(kernel.transition_uniform(w[0].max(X_MIN), w[1], rng));
    }
    running_min(&us)
}

/// First index from which `c1 M_n <= h_n <= c2 M_n` holds through the end.
/// The bounds get a relative slack of `1e-12` so that `h = c (h / c)` counts
/// as inside despite rounding.
pub fn corridor_entry(h: &[f64], m: &[f64], c1: f64, c2: f64) -> Option<usize> {
    const SLACK: f64 = 1e-12;
    let inside = |i: usize| c1 * m[i] * (1.0 - SLACK) <= h[i] && h[i] <= c2 * m[i] * (1.0 + SLACK);
    let mut first = None;
    for i in (0..h.len()).rev() {
        if inside(i) {
            first = Some(i);
        } else {
            break;
        }
    }
    first
}

/// The two-constant coupling of a pivot path with a min-uniform process.
///
/// Below a threshold `delta` the jump density `f_r(u)` of `nu_r` lies in
/// `(1/c2, 1/c1)`. From the first time `N` the path is below `delta`, each
/// new value is `V = c1 U` or `V = c2 U` for a fresh uniform `U`, the choice
/// weighted by `Q_r(x) = sum_j q^{j+1} (c2 f_r(q^j x) - 1)`, `q = c1/c2`, so
/// that `min V` has the law of the path. Here the path is given, and each `U`
/// is drawn from its conditional law given the observed step. Before `N` the
/// uniforms are probability-integral transforms of the steps. With the
/// resulting `M_n`, `c1 M_n <= h_n <= c2 M_n` holds from the first time both
/// the path and the uniforms have dropped below their values at `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoConstantCoupling {
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    /// First index with `h < delta`.
    pub n_delta: Option<usize>,
    pub uniforms: Vec<f64>,
    pub m: Vec<f64>,
}

impl TwoConstantCoupling {
    /// First index of the terminal stretch inside the corridor.
    pub fn entry(&self, h: &[f64]) -> Option<usize> {
        corridor_entry(h, &self.m, self.c1, self.c2)
    }
}

impl PivotKernel {
    /// Largest tabulated `r` such that `1/c2 < f_s(u) < 1/c1` for all
    /// `u < s <= r`, checked on a grid.
    pub fn corridor_threshold(&self, c1: f64, c2: f64) -> f64 {
        let (lo, hi) = (1.0 / c2, 1.0 / c1);
        let n = 400;
        let mut last = 0.0;
        for i in 0..=n {
            let r = (X_MIN.ln() + (self.x_max.ln() - X_MIN.ln()) * i as f64 / n as f64).exp();
            let ok = (0..=64).all(|j| {
                let u = r * (1.0 - (j as f64 / 64.0).powi(2)).max(1e-9);
                let d = self.density_h(r, u.min(r * (1.0 - 1e-12)));
                d > lo && d < hi
            });
            if !ok {
                break;
            }
            last = r;
        }
        last
    }

    fn q_weight(&self, r: f64, x: f64, c1: f64, c2: f64) -> f64 {
        let q = c1 / c2;
        let mut sum = 0.0;
        let (mut qj, mut xj) = (q, x);
        while qj > 1e-16 {
            sum += qj * (c2 * self.density_h(r, xj) - 1.0);
            qj *= q;
            xj *= q;
        }
        sum.clamp(0.0, 1.0)
    }

    /// Probability of staying at `r` in the coupled construction; it equals
    /// the atom `C_r` when the construction reproduces the kernel.
    pub fn coupled_stay_mass(&self, r: f64, c1: f64, c2: f64) -> f64 {
        // 1 - r/c1 from U >= r/c1, plus the branch-2 misses on [r/c2, r/c1).
        let (a, b) = (r / c2, r / c1);
        let n = 512;
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let u = a + h * i as f64;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (1.0 - self.q_weight(r, (c1 * u).min(r * (1.0 - 1e-12)), c1, c2));
        }
        (1.0 - b) + acc * h / 3.0
    }

    /// Couple an observed path with a min-uniform process; see
    /// [`TwoConstantCoupling`].
    pub fn two_constant_coupling(&self, h: &[f64], c1: f64, c2: f64, rng: &mut Stream) -> Result<TwoConstantCoupling> {
        if !(c1 > 0.0 && c1 < self.p_c && self.p_c < c2) {
            return Err(Error::Domain(format!("need 0 < c1 < p_c < c2, got {c1}, {c2}")));
        }
        if h.is_empty() {
            return Err(Error::Domain("empty path".into()));
        }
        let delta = self.corridor_threshold(c1, c2);
        let n_delta = h.iter().position(|&x| x < delta);
        let pre = n_delta.map_or(h.len(), |n| n + 1);
        let mut us = Vec::with_capacity(h.len());
        us.push(self.g(h[0]));
        for w in h[..pre].windows(2) {
            us.push(self.transition_uniform(w[0].max(X_MIN), w[1], rng));
        }
        let q = c1 / c2;
        for w in h[pre.min(h.len())..].iter().zip(&h[pre - 1..]).map(|(&x, &r)| (r, x)) {
            let (r, x) = (w.0.max(X_MIN), w.1);
            let u = if x < r {
                let w1 = self.q_weight(r, x, c1, c2) / c1;
                let w2 = (1.0 - self.q_weight(r, q * x, c1, c2)) / c2;
                if rng::uniform(rng) * (w1 + w2) < w1 {
                    x / c1
                } else {
                    x / c2
                }
            } else {
                // Stay: U >= r/c1 (weight 1), or U in [r/c2, r/c1) with branch 2.
                let (a, b) = (r / c2, r / c1);
                let top = 1.0 - b;
                loop {
                    let v = rng::uniform(rng) * (top + (b - a));
                    if v < top {
                        break b + v;
                    }
                    let u = a + (v - top);
                    if rng::uniform(rng) >= self.q_weight(r, (c1 * u).min(r * (1.0 - 1e-12)), c1, c2) {
                        break u;
                    }
                }
            };
            us.push(u);
        }
        let m = running_min(&us);
        Ok(TwoConstantCoupling { c1, c2, delta, n_delta, uniforms: us, m })
    }
}

/// Piecewise-constant path: `(jump time, new height)`, starting at `(0, start)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpePath {
    pub jumps: Vec<(f64, f64)>,
    pub t_max: f64,
}

impl LpePath {
    /// Height at time `t` (right-continuous).
    pub fn at(&self, t: f64) -> f64 {
        let i = self.jumps.partition_point(|&(s, _)| s <= t);
        self.jumps[i.max(1) - 1].1
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.jumps.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 >= w[0].0)
    }
}

/// Lower envelope started from `start`: from height `z` it jumps to `z U`
/// at exponential rate `z`. With `start = 1` this is `1 ^ L(t)`; a large
/// start approximates `L(t)` itself on any window where it has dropped below.
pub fn lpe_sample(t_max: f64, start: f64, rng: &mut Stream) -> Result<LpePath> {
    if !(t_max > 0.0) || !(start > 0.0) {
        return Err(Error::Domain(format!("LPE needs t_max > 0 and start > 0, got {t_max}, {start}")));
    }
    let mut jumps = vec![(0.0, start)];
    let (mut t, mut z) = (0.0, start);
    loop {
        t += rng::exponential(rng, z);
        if t > t_max {
            break;
        }
        z *= rng::uniform(rng);
        jumps.push((t, z));
    }
    Ok(LpePath { jumps, t_max })
}

/// One row of the dual-decay table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub n: usize,
    pub threshold: f64,
    pub exceed: u64,
    pub replicates: u64,
    pub prob: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// `P[h*_n > n^-t]` on a grid of `n`, by simulation of the joint chain.
pub fn dual_decay_experiment(
    kernel: &PivotKernel,
    t: f64,
    n_grid: &[usize],
    replicates: u64,
    seed: u64,
) -> Result<Vec<DecayRow>> {
    if !(t > 0.5 && t < 1.0) {
        return Err(Error::Domain(format!("decay exponent {t} outside (1/2, 1)")));
    }
    if replicates == 0 || n_grid.is_empty() {
        return Err(Error::Config("dual decay needs replicates > 0 and a nonempty grid".into()));
    }
    let n_max = *n_grid.iter().max().unwrap();
    let mut exceed = vec![0u64; n_grid.len()];
    for r in 0..replicates {
        let path = run_chain(kernel, InitialState::SampleFromL, n_max, seed, r, true)?;
        let hs = path.h_star.as_ref().unwrap();
        for (i, &n) in n_grid.iter().enumerate() {
            if hs[n] > (n as f64).powf(-t) {
                exceed[i] += 1;
            }
        }
    }
    Ok(n_grid
        .iter()
        .zip(exceed)
        .map(|(&n, e)| {
            let (ci_lo, ci_hi) = stats::wilson_ci(e, replicates, 1.96);
            DecayRow {
                n,
                threshold: (n as f64).powf(-t),
                exceed: e,
                replicates,
                prob: e as f64 / replicates as f64,
                ci_lo,
                ci_hi,
            }
        })
        .collect())
}

/// `n,threshold,exceed,replicates,prob,ci_lo,ci_hi` CSV.
pub fn decay_csv(rows: &[DecayRow]) -> String {
    let mut out = String::from("n,threshold,exceed,replicates,prob,ci_lo,ci_hi\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{},{},{:e},{:e},{:e}\n",
            r.n, r.threshold, r.exceed, r.replicates, r.prob, r.ci_lo, r.ci_hi
        ));
    }
    out
}
