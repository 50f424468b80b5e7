//! Limit-uniform versus invasion measure on a fixed tree.
//!
//! For a vertex `u` with children `w`, the limit-uniform split `p(w)` is the
//! share of the martingale limit carried by `w`, and the invasion split
//! `q(w)` is the conditional probability that the backbone continues through
//! `w` given that it passes `u`. Both are quenched: the tree is fixed and
//! only the weights are random. `X(u) = sum_w q log(q / p)` measures how far
//! apart they are.
//!
//! A stored tree is finite, so the quenched tree here is a frozen prefix
//! continued below a frontier by fresh Galton-Watson trees, one per weight
//! redraw. For closed searches the continuation is replaced outright by an
//! independent pivot drawn from the pivot law, which has the same effect.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::invasion::{backbone_pivots, backbone_with_extension, closed_search, CertificationPolicy, Escape};
use crate::offspring::OffspringDistribution;
use crate::pivot_chain::PivotKernel;
use crate::rng::{self, derive_stream, purpose};
use crate::stats;
use crate::tree::{NodeId, TreeArena};

use std::sync::Arc;

/// Below this certification rate an invasion split is not reported.
pub const MIN_CERTIFIED_RATE: f64 = 0.8;
/// Below this acceptance rate a conditional split is not reported.
pub const MIN_ACCEPTANCE_RATE: f64 = 0.01;
const WILSON_Z: f64 = 1.96;

/// Monte Carlo knobs for the quenched splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QOptions {
    pub replicates: u64,
    /// Invasion steps per replicate (doubled once by the extension check).
    pub steps: usize,
    pub policy: CertificationPolicy,
    /// Depth of the frozen prefix. Absolute for [`split_q_mc`], relative to
    /// `u` for [`qtilde`] and [`sandwich_check`].
    pub frontier: u32,
    pub seed: u64,
}

impl QOptions {
    pub fn new(replicates: u64, seed: u64) -> Self {
        Self { replicates, steps: 2000, policy: CertificationPolicy::default(), frontier: 12, seed }
    }

    fn check(&self) -> Result<()> {
        if self.replicates == 0 || self.steps == 0 || self.frontier == 0 {
            return Err(Error::Config("replicates, steps and frontier must be positive".into()));
        }
        Ok(())
    }
}

/// Frontier depth 12, lowered until the expected prefix has at most 4096
/// vertices in its last generation.
pub fn default_frontier(dist: &OffspringDistribution) -> u32 {
    let f = (4096f64.ln() / dist.mean().ln()).floor() as u32;
    f.clamp(1, 12)
}

/// Proxy depth 25, lowered until a generation has about `2^16` vertices.
pub fn default_proxy_depth(dist: &OffspringDistribution) -> u32 {
    let d = (65536f64.ln() / dist.mean().ln()).floor() as u32;
    d.clamp(1, 25)
}

/// `p(w) = W_D^{(w)}(u) / W_D(u)` for the children of `u`.
pub fn split_p(arena: &mut TreeArena, u: NodeId, proxy_depth: u32) -> Result<Vec<f64>> {
    if proxy_depth == 0 {
        return Err(Error::Config("proxy depth must be at least 1".into()));
    }
    let dec = arena.child_decomposition(u, proxy_depth)?;
    let d = proxy_depth as usize;
    let total: u64 = dec.counts.iter().map(|c| c[d]).sum();
    assert!(total > 0, "a tree without deaths has descendants at every depth");
    Ok(dec.counts.iter().map(|c| c[d] as f64 / total as f64).collect())
}

/// Per-child frequencies with Wilson-derived standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChildFrequencies {
    pub node: NodeId,
    pub children: Vec<NodeId>,
    pub counts: Vec<u64>,
    /// Number of replicates the frequencies are taken over.
    pub trials: u64,
    pub replicates: u64,
    /// Certified (invasion) or accepted (conditional) fraction of replicates.
    pub rate: f64,
    pub q_hat: Vec<f64>,
    /// Half-width of the 95% Wilson interval divided by 1.96.
    pub se: Vec<f64>,
}

impl ChildFrequencies {
    fn new(node: NodeId, children: Vec<NodeId>, counts: Vec<u64>, replicates: u64, rate: f64) -> Self {
        let trials: u64 = counts.iter().sum();
        let n = trials.max(1) as f64;
        let q_hat = counts.iter().map(|&c| c as f64 / n).collect();
        let se = counts
            .iter()
            .map(|&c| {
                let (lo, hi) = stats::wilson_ci(c, trials, WILSON_Z);
                (hi - lo) / (2.0 * WILSON_Z)
            })
            .collect();
        Self { node, children, counts, trials, replicates, rate, q_hat, se }
    }

    /// Estimate and standard error for one child.
    pub fn for_child(&self, v: NodeId) -> Option<(f64, f64)> {
        let i = self.children.iter().position(|&c| c == v)?;
        Some((self.q_hat[i], self.se[i]))
    }
}

/// Invasion split at `u`: redraw every weight, continue the prefix below
/// `opts.frontier` afresh, invade, and record which child of `u` the
/// certified backbone uses among runs whose backbone passes `u`.
pub fn split_q_mc(arena: &mut TreeArena, u: NodeId, opts: &QOptions) -> Result<ChildFrequencies> {
    opts.check()?;
    let du = arena.depth(u);
    if opts.frontier <= du {
        return Err(Error::Config(format!("frontier {} must lie below u at depth {du}", opts.frontier)));
    }
    arena.realize_to_depth(arena.root(), opts.frontier)?;
    let children: Vec<NodeId> = arena.children(u).expect("realized above the frontier").collect();
    let mut counts = vec![0u64; children.len()];
    let mut certified = 0u64;
    for r in 0..opts.replicates {
        let (mut copy, map) = arena.reweighted_prefix(opts.frontier, derive_stream(opts.seed, purpose::REDRAW, r))?;
        let (trace, _) = backbone_with_extension(&mut copy, opts.steps, opts.policy)?;
        if trace.certified_len < du as usize + 1 {
            continue;
        }
        certified += 1;
        if Some(trace.path[du as usize]) != map[u.index()] {
            continue;
        }
        let next = trace.path[du as usize + 1];
        let i = copy.slot(next).expect("backbone vertex below the root") as usize;
        counts[i] += 1;
    }
    let rate = certified as f64 / opts.replicates as f64;
    if rate < MIN_CERTIFIED_RATE {
        return Err(Error::Inconclusive {
            reason: format!("only {certified} of {} invasions certified through depth {}", opts.replicates, du + 1),
            rate,
        });
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Inconclusive { reason: "no certified backbone passed through u".into(), rate: 0.0 });
    }
    Ok(ChildFrequencies::new(u, children, counts, opts.replicates, rate))
}

/// Conditional split `q~(w, p)`: in the tree rooted at `u`, the law of the
/// first backbone step given `beta(u) <= p`. The first backbone step is the
/// child achieving the minimax, so each replicate is one closed search with
/// the subtree below the relative frontier summarized by a pivot-law draw.
pub fn qtilde(
    arena: &mut TreeArena,
    u: NodeId,
    p: f64,
    kernel: &PivotKernel,
    opts: &QOptions,
) -> Result<ChildFrequencies> {
    opts.check()?;
    let p_c = kernel.p_c();
    if !(p > p_c && p <= 1.0) {
        return Err(Error::Domain(format!("conditional split needs p in (p_c, 1], got {p}")));
    }
    arena.realize_to_depth(u, opts.frontier)?;
    let children: Vec<NodeId> = arena.children(u).expect("realized").collect();
    let mut counts = vec![0u64; children.len()];
    // beta(u) = p has probability zero; an infinite cap makes p = 1 vacuous.
    let cap = if p >= 1.0 { f64::INFINITY } else { p };
    let mut accepted = 0u64;
    for r in 0..opts.replicates {
        let (mut copy, _) = arena.reweighted_subtree(u, opts.frontier, derive_stream(opts.seed, purpose::REDRAW, r))?;
        let mut leaf_rng = derive_stream(opts.seed, purpose::SAMPLING, r);
        let mut leaf = |_: NodeId| p_c + kernel.g_inv(rng::uniform(&mut leaf_rng));
        if let Escape::Reached { witness, .. } = closed_search(&mut copy, NodeId::ROOT, opts.frontier, cap, &mut leaf)?
        {
            accepted += 1;
            let first = copy.ancestor_at_depth(witness, 1);
            counts[copy.slot(first).expect("below the root") as usize] += 1;
        }
    }
    let rate = accepted as f64 / opts.replicates as f64;
    if rate < MIN_ACCEPTANCE_RATE {
        return Err(Error::Inconclusive {
            reason: format!("only {accepted} of {} replicates had beta(u) <= {p}", opts.replicates),
            rate,
        });
    }
    Ok(ChildFrequencies::new(u, children, counts, opts.replicates, rate))
}

/// One child's row of the sandwich comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichRow {
    pub child: NodeId,
    pub qtilde: f64,
    pub se: f64,
    /// `g(T(w), p) / sum_k g(T(w_k), p)`.
    pub ratio: f64,
    /// `|q~ - ratio|`.
    pub lhs: f64,
    /// `g(T(u), p) / (1 - g(T(u), p)) * ratio`.
    pub rhs: f64,
    pub slack: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub node: NodeId,
    pub p: f64,
    pub g_u: f64,
    pub accepted: u64,
    pub replicates: u64,
    /// Allowance for the survival recursion on top of `3 se`.
    pub tolerance: f64,
    pub rows: Vec<SandwichRow>,
}

impl SandwichReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violated).count()
    }
}

/// Compare `q~(w, p)` with the survival ratio and its error bound. The
/// quenched survival probabilities come from the depth-limited recursion over
/// the frozen prefix with `g(p)` at the frontier, which is exact for a tree
/// continued by fresh Galton-Watson trees below it.
pub fn sandwich_check(
    arena: &mut TreeArena,
    u: NodeId,
    p: f64,
    kernel: &PivotKernel,
    opts: &QOptions,
) -> Result<SandwichReport> {
    if !(p > kernel.p_c() && p < 1.0) {
        return Err(Error::Domain(format!("sandwich check needs p in (p_c, 1), got {p}")));
    }
    let qt = qtilde(arena, u, p, kernel, opts)?;
    let solver = kernel.solver();
    let g_u = solver.g_n(arena, u, opts.frontier, p)?;
    let g_w: Vec<f64> =
        qt.children.iter().map(|&w| solver.g_n(arena, w, opts.frontier - 1, p)).collect::<Result<_>>()?;
    let total = stats::pairwise_sum(&g_w);
    let factor = g_u / (1.0 - g_u);
    let tolerance = 1e-9;
    let rows = qt
        .children
        .iter()
        .enumerate()
        .map(|(i, &child)| {
            let ratio = g_w[i] / total;
            let lhs = (qt.q_hat[i] - ratio).abs();
            let rhs = factor * ratio;
            SandwichRow {
                child,
                qtilde: qt.q_hat[i],
                se: qt.se[i],
                ratio,
                lhs,
                rhs,
                slack: rhs - lhs,
                violated: lhs > rhs + 3.0 * qt.se[i] + tolerance,
            }
        })
        .collect();
    Ok(SandwichReport { node: u, p, g_u, accepted: qt.trials, replicates: qt.replicates, tolerance, rows })
}

/// `K(p, q) = sum q log(q / p)` and its quadratic bound `sum p eps^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlValue {
    pub x: f64,
    pub bound: f64,
    /// Some `p = 0` carries `q > 0`; both fields are then infinite.
    pub infinite: bool,
}

/// KL divergence of `q` from `p` with `0 log 0 = 0`.
pub fn kl_x(p: &[f64], q: &[f64]) -> Result<KlValue> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Domain(format!("split lengths {} and {} differ or are empty", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("split entries must lie in [0, 1]".into()));
    }
    if p.iter().zip(q).any(|(&pi, &qi)| pi == 0.0 && qi > 0.0) {
        return Ok(KlValue { x: f64::INFINITY, bound: f64::INFINITY, infinite: true });
    }
    let terms: Vec<f64> = p.iter().zip(q).map(|(&pi, &qi)| if qi == 0.0 { 0.0 } else { qi * (qi / pi).ln() }).collect();
    let quad: Vec<f64> = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| {
            let eps = qi / pi - 1.0;
            pi * eps * eps
        })
        .collect();
    let x = stats::pairwise_sum(&terms);
    let bound = stats::pairwise_sum(&quad);
    if x > bound + 1e-12 * (1.0 + bound) {
        return Err(Error::Numeric(format!("KL {x} exceeds its quadratic bound {bound}")));
    }
    Ok(KlValue { x, bound, infinite: false })
}

/// Splits at one vertex with their divergence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitEstimate {
    pub node: NodeId,
    pub children: Vec<NodeId>,
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub q_se: Vec<f64>,
    /// `q / p - 1`.
    pub eps_hat: Vec<f64>,
    pub kl: KlValue,
    /// Replicates behind `q_hat`.
    pub replicates: u64,
    pub proxy_depth: u32,
}

impl SplitEstimate {
    pub fn new(p_hat: Vec<f64>, q: &ChildFrequencies, proxy_depth: u32) -> Result<Self> {
        let kl = kl_x(&p_hat, &q.q_hat)?;
        let eps_hat = p_hat.iter().zip(&q.q_hat).map(|(p, q)| q / p - 1.0).collect();
        Ok(Self {
            node: q.node,
            children: q.children.clone(),
            p_hat,
            q_hat: q.q_hat.clone(),
            q_se: q.se.clone(),
            eps_hat,
            kl,
            replicates: q.trials,
            proxy_depth,
        })
    }

    /// Mean and standard deviation of the plug-in `X` when `q = p`: then
    /// `2 n X` is asymptotically chi-squared with `k - 1` degrees of freedom.
    pub fn x_null_moments(&self) -> (f64, f64) {
        let k = self.children.len() as f64;
        let n = self.replicates.max(1) as f64;
        ((k - 1.0) / (2.0 * n), (2.0 * (k - 1.0)).sqrt() / (2.0 * n))
    }
}

/// Knobs for the summability diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcOptions {
    pub trees: u64,
    pub n_max: usize,
    /// Invasion steps for the backbone of each tree.
    pub steps: usize,
    pub depth_cap: u32,
    pub proxy_depth: u32,
    /// Conditional-split knobs; `frontier` is relative to each backbone vertex.
    pub q: QOptions,
}

/// One term of the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcRow {
    pub n: usize,
    /// Mean bias-corrected `X(gamma_n)`.
    pub ex_n: f64,
    pub se: f64,
    pub partial_sum: f64,
    pub trees: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcSeries {
    pub rows: Vec<AcRow>,
    pub warnings: Vec<String>,
}

impl AcSeries {
    /// `n,EX_n,se,partial_sum` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,EX_n,se,partial_sum\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.n, r.ex_n, r.se, r.partial_sum));
        }
        out
    }

    /// No significant growth over the last `k` terms: the mean increment of
    /// the partial sums there is at most two standard errors above zero.
    pub fn flattening(&self, k: usize) -> bool {
        let tail = &self.rows[self.rows.len().saturating_sub(k)..];
        if tail.len() < 2 {
            return true;
        }
        let mean_ex: f64 = tail.iter().map(|r| r.ex_n).sum::<f64>() / tail.len() as f64;
        let se = (tail.iter().map(|r| r.se * r.se).sum::<f64>()).sqrt() / tail.len() as f64;
        mean_ex <= 2.0 * se
    }
}

/// `E[X(gamma_n)]` for `n <= n_max` over random trees. At each backbone
/// vertex the invasion split is `q~(., beta*_n)` with the dual pivot of that
/// run, and the plug-in `X` is corrected by its null mean `(k - 1) / 2n`.
pub fn ac_diagnostic(dist: Arc<OffspringDistribution>, kernel: &PivotKernel, opts: &AcOptions) -> Result<AcSeries> {
    if opts.trees == 0 || opts.steps == 0 {
        return Err(Error::Config("trees and steps must be positive".into()));
    }
    let p_c = kernel.p_c();
    let mut per_n: Vec<Vec<f64>> = vec![Vec::new(); opts.n_max + 1];
    let mut warnings = Vec::new();
    for t in 0..opts.trees {
        let mut arena = TreeArena::replicate(dist.clone(), opts.q.seed, t);
        let (trace, _) = backbone_with_extension(&mut arena, opts.steps, opts.policy())?;
        let len = trace.certified_len.min(opts.n_max);
        if trace.certified_len < opts.n_max {
            warnings.push(format!("tree {t}: certified backbone length {} < {}", trace.certified_len, opts.n_max));
        }
        if len == 0 {
            continue;
        }
        let pivots = backbone_pivots(&trace, &mut arena, opts.depth_cap, 0.0)?;
        for (n, terms) in per_n.iter_mut().enumerate().take(len + 1) {
            let u = trace.gamma(n);
            if arena.deg(u) == 1 {
                terms.push(0.0);
                continue;
            }
            let b = pivots.beta_star[n];
            if b <= p_c {
                warnings.push(format!("tree {t}, n = {n}: truncated dual pivot {b} <= p_c"));
                continue;
            }
            let q_opts = QOptions { seed: opts.q.seed ^ (t << 20) ^ n as u64, ..opts.q };
            let q = match qtilde(&mut arena, u, b, kernel, &q_opts) {
                Ok(q) => q,
                Err(Error::Inconclusive { reason, .. }) => {
                    warnings.push(format!("tree {t}, n = {n}: {reason}"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let est = SplitEstimate::new(split_p(&mut arena, u, opts.proxy_depth)?, &q, opts.proxy_depth)?;
            if est.kl.infinite {
                warnings.push(format!("tree {t}, n = {n}: support mismatch"));
                continue;
            }
            terms.push(est.kl.x - est.x_null_moments().0);
        }
    }
    let mut rows = Vec::new();
    let mut partial = 0.0;
    for (n, terms) in per_n.iter().enumerate() {
        if terms.is_empty() {
            warnings.push(format!("series truncated at n = {n}: no usable trees"));
            break;
        }
        let (m, se) = stats::mean_se(terms);
        partial += m;
        rows.push(AcRow {
            n,
            ex_n: m,
            se: if se.is_nan() { 0.0 } else { se },
            partial_sum: partial,
            trees: terms.len() as u64,
        });
    }
    Ok(AcSeries { rows, warnings })
}

impl AcOptions {
    fn policy(&self) -> CertificationPolicy {
        self.q.policy
    }
}

/// The absolute-continuity condition for moments of order `p` (`inf`
/// allowed), `p_1 = P[Z = 1]` and mean `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub holds: bool,
    /// `-Q(p, q) / (1 + p^2)`, positive when the condition holds; for
    /// `p = inf` the limit `-(2 q^2 + 3 q - 1)`.
    pub margin: f64,
    /// `log mu / log(1 / p_1)`, zero when `p_1 = 0`.
    pub q: f64,
}

/// `2 p^2 q^2 + (3 p^2 + 5 p) q + (-p^2 + 11 p - 4) < 0`.
pub fn main_theorem_condition(p: f64, p1: f64, mu: f64) -> Result<ConditionVerdict> {
    if !(0.0..1.0).contains(&p1) {
        return Err(Error::Domain(format!("p1 must lie in [0, 1), got {p1}")));
    }
    if !(mu > 1.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("mean must be finite and exceed 1, got {mu}")));
    }
    if !(p > 0.0) {
        return Err(Error::Domain(format!("moment order must be positive, got {p}")));
    }
    let q = if p1 == 0.0 { 0.0 } else { mu.ln() / (1.0 / p1).ln() };
    let margin = if p.is_infinite() {
        -(2.0 * q * q + 3.0 * q - 1.0)
    } else {
        let quad = 2.0 * p * p * q * q + (3.0 * p * p + 5.0 * p) * q + (-p * p + 11.0 * p - 4.0);
        -quad / (1.0 + p * p)
    };
    Ok(ConditionVerdict { holds: margin > 0.0, margin, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::SurvivalSolver;

    fn arena(d: OffspringDistribution, seed: u64) -> TreeArena {
        TreeArena::new(Arc::new(d), seed)
    }

    fn kernel(d: OffspringDistribution) -> PivotKernel {
        PivotKernel::new(SurvivalSolver::new(Arc::new(d)).unwrap()).unwrap()
    }

    #[test]
    fn kl_hand_value() {
        let v = kl_x(&[0.5, 0.5], &[0.6, 0.4]).unwrap();
        let direct = 0.6 * 1.2f64.ln() + 0.4 * 0.8f64.ln();
        assert!((v.x - direct).abs() < 1e-15);
        assert!((v.x - 0.020135).abs() < 1e-6);
        assert!((v.bound - 0.04).abs() < 1e-15);
        assert!(!v.infinite);
    }

    #[test]
    fn kl_conventions() {
        assert_eq!(kl_x(&[0.3, 0.7], &[0.3, 0.7]).unwrap().x, 0.0);
        // q = 0 contributes nothing; p = 0 under q > 0 is a support mismatch.
        let v = kl_x(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v.x - 2f64.ln()).abs() < 1e-15);
        assert!(kl_x(&[1.0, 0.0], &[0.5, 0.5]).unwrap().infinite);
        assert!(matches!(kl_x(&[1.0], &[0.5, 0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn binary_uniform_split_is_half() {
        let mut t = arena(OffspringDistribution::deterministic(2).unwrap(), 1);
        for d in [1, 4, 9] {
            assert_eq!(split_p(&mut t, NodeId::ROOT, d).unwrap(), vec![0.5, 0.5]);
        }
        assert!(matches!(split_p(&mut t, NodeId::ROOT, 0), Err(Error::Config(_))));
    }

    #[test]
    fn random_split_sums_to_one() {
        let mut t = arena(OffspringDistribution::two_point(0.4).unwrap(), 5);
        let p = split_p(&mut t, NodeId::ROOT, 10).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn theorem_condition_endpoints() {
        let mu = 2.0f64;
        let p1 = mu.powf(-(3.0 + 17f64.sqrt()) / 2.0);
        assert!(main_theorem_condition(f64::INFINITY, p1, mu).unwrap().margin.abs() < 1e-9);
        assert!(main_theorem_condition(f64::INFINITY, p1 * 0.9, mu).unwrap().holds);
        assert!(!main_theorem_condition(f64::INFINITY, p1 * 1.1, mu).unwrap().holds);

        let p_star = (11.0 + 105f64.sqrt()) / 2.0;
        assert!(main_theorem_condition(p_star, 0.0, 3.0).unwrap().margin.abs() < 1e-9);
        let v = main_theorem_condition(12.0, 0.0, 1.7).unwrap();
        assert!(v.holds && (v.margin - 16.0 / 145.0).abs() < 1e-15);
        assert!(matches!(main_theorem_condition(4.0, 1.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn invasion_split_on_binary_tree() {
        let mut t = arena(OffspringDistribution::deterministic(2).unwrap(), 2);
        let opts = QOptions { steps: 300, frontier: 6, ..QOptions::new(400, 9) };
        let q = split_q_mc(&mut t, NodeId::ROOT, &opts).unwrap();
        assert_eq!(q.counts.iter().sum::<u64>(), q.trials);
        assert!((q.q_hat.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((q.q_hat[0] - 0.5).abs() < 3.0 * q.se[0], "{q:?}");
        let bad = QOptions { frontier: 0, ..opts };
        assert!(matches!(split_q_mc(&mut t, NodeId::ROOT, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn conditional_split_on_binary_tree() {
        let k = kernel(OffspringDistribution::deterministic(2).unwrap());
        let mut t = arena(OffspringDistribution::deterministic(2).unwrap(), 3);
        let opts = QOptions { frontier: 6, ..QOptions::new(2000, 4) };
        for p in [0.55, 0.7, 1.0] {
            let q = qtilde(&mut t, NodeId::ROOT, p, &k, &opts).unwrap();
            assert!((q.q_hat[0] - 0.5).abs() < 3.0 * q.se[0], "p={p}: {q:?}");
            // Acceptance estimates g(p).
            let g = k.solver().g(p).unwrap();
            let sd = (g * (1.0 - g) / 2000.0).sqrt();
            assert!((q.rate - g).abs() < 4.0 * sd + 1e-9, "p={p}: {} vs {g}", q.rate);
        }
        assert!(matches!(qtilde(&mut t, NodeId::ROOT, 0.5, &k, &opts), Err(Error::Domain(_))));
        let tight = qtilde(&mut t, NodeId::ROOT, 0.5 + 1e-4, &k, &QOptions { replicates: 50, ..opts });
        assert!(matches!(tight, Err(Error::Inconclusive { .. })));
    }

    #[test]
    fn sandwich_on_binary_tree_has_slack() {
        let k = kernel(OffspringDistribution::deterministic(2).unwrap());
        let mut t = arena(OffspringDistribution::deterministic(2).unwrap(), 3);
        let opts = QOptions { frontier: 6, ..QOptions::new(2000, 8) };
        let r = sandwich_check(&mut t, NodeId::ROOT, 0.7, &k, &opts).unwrap();
        assert_eq!(r.violations(), 0);
        for row in &r.rows {
            assert!((row.ratio - 0.5).abs() < 1e-15);
            assert!(row.slack > 0.0);
        }
        // The quenched recursion is exact on the regular tree.
        assert!((r.g_u - k.solver().g(0.7).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn split_estimate_null_moments() {
        let q = ChildFrequencies::new(NodeId::ROOT, vec![NodeId(1), NodeId(2)], vec![60, 40], 100, 1.0);
        let s = SplitEstimate::new(vec![0.5, 0.5], &q, 5).unwrap();
        assert!((s.kl.x - 0.020135).abs() < 1e-6);
        assert_eq!(s.eps_hat.len(), 2);
        let (m, sd) = s.x_null_moments();
        assert!((m - 0.005).abs() < 1e-15 && (sd - 2f64.sqrt() / 200.0).abs() < 1e-15);
    }
}
