//! Invasion percolation, the backbone and its pivots.
//!
//! Invasion is Prim's algorithm on vertex weights: at each step the cluster
//! absorbs the boundary vertex of least weight. The same priority search,
//! confined to a subtree and stopped at a target depth, computes truncated
//! pivots: the first vertex popped at relative depth `D` is reached by a path
//! whose largest weight is the minimax value `beta_D`, and that value equals
//! the running maximum of popped weights at that moment.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tree::{NodeId, TreeArena};

/// Boundary key: weights are positive, so their bit patterns order like the
/// values; ties (probability zero) fall back to node id.
type Key = Reverse<(u64, u32)>;

#[inline]
fn key(arena: &TreeArena, id: NodeId) -> Key {
    Reverse((arena.weight(id).to_bits(), id.0))
}

#[inline]
fn unkey(k: Key) -> (f64, NodeId) {
    let Reverse((bits, id)) = k;
    (f64::from_bits(bits), NodeId(id))
}

/// An invasion cluster grown from one vertex.
#[derive(Debug, Clone)]
pub struct InvasionRun {
    start: NodeId,
    invaded: Vec<NodeId>,
    boundary: BinaryHeap<Key>,
}

impl InvasionRun {
    /// A cluster holding only `start` (step 0).
    pub fn new(arena: &mut TreeArena, start: NodeId) -> Result<Self> {
        let mut boundary = BinaryHeap::new();
        for c in arena.expand(start)? {
            boundary.push(key(arena, c));
        }
        Ok(Self { start, invaded: vec![start], boundary })
    }

    /// Invade one more vertex and return it.
    pub fn step(&mut self, arena: &mut TreeArena) -> Result<NodeId> {
        let (_, v) = unkey(self.boundary.pop().expect("boundary of an infinite tree is never empty"));
        for c in arena.expand(v)? {
            self.boundary.push(key(arena, c));
        }
        self.invaded.push(v);
        Ok(v)
    }

    pub fn advance(&mut self, arena: &mut TreeArena, steps: usize) -> Result<()> {
        self.invaded.reserve(steps);
        for _ in 0..steps {
            self.step(arena)?;
        }
        Ok(())
    }

    pub fn start(&self) -> NodeId {
        self.start
    }

    /// Invaded vertices in order; index 0 is the start vertex.
    pub fn invaded(&self) -> &[NodeId] {
        &self.invaded
    }

    /// Steps taken (the start vertex is step 0 and not counted).
    pub fn steps(&self) -> usize {
        self.invaded.len() - 1
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    /// Current boundary, unordered.
    pub fn boundary(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.boundary.iter().map(|&k| {
            let (w, id) = unkey(k);
            (id, w)
        })
    }

    /// Smallest boundary weight, i.e. the weight the next step will invade.
    pub fn peek(&self) -> Option<(NodeId, f64)> {
        self.boundary.peek().map(|&k| {
            let (w, id) = unkey(k);
            (id, w)
        })
    }

    /// Largest weight invaded at steps `from..` (start vertex excluded).
    pub fn max_weight_since(&self, arena: &TreeArena, from: usize) -> f64 {
        self.invaded[from.max(1)..].iter().map(|&v| arena.weight(v)).fold(0.0, f64::max)
    }

    /// `step,nodeid,depth,u_weight` CSV.
    pub fn to_csv(&self, arena: &TreeArena) -> String {
        let mut out = String::from("step,nodeid,depth,u_weight\n");
        for (i, &v) in self.invaded.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{:e}", v.0, arena.depth(v), arena.weight(v));
        }
        out
    }
}

/// Run invasion from the root for `steps` steps.
pub fn invade(arena: &mut TreeArena, steps: usize) -> Result<InvasionRun> {
    if steps == 0 {
        return Err(Error::Config("invasion needs at least one step".into()));
    }
    let mut run = InvasionRun::new(arena, arena.root())?;
    run.advance(arena, steps)?;
    Ok(run)
}

/// Outcome of a bottleneck search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Escape {
    /// The target depth was reached; `beta` is the minimax path value and
    /// `witness` the first vertex reached at the target depth.
    Reached { beta: f64, witness: NodeId },
    /// Every route to the target depth uses a weight of at least the cap.
    Capped,
}

/// Minimax search from `start` (its own weight excluded) to absolute depth
/// `target`, never entering the subtree at `exclude`. Stops early with
/// [`Escape::Capped`] once the cheapest remaining weight reaches `cap`.
pub fn escape_search(
    arena: &mut TreeArena,
    start: NodeId,
    target: u32,
    cap: f64,
    exclude: Option<NodeId>,
) -> Result<Escape> {
    if arena.depth(start) >= target {
        return Ok(Escape::Reached { beta: 0.0, witness: start });
    }
    let mut heap: BinaryHeap<Key> = BinaryHeap::new();
    for c in arena.expand(start)? {
        if Some(c) != exclude {
            heap.push(key(arena, c));
        }
    }
    let mut running = 0.0f64;
    while let Some(k) = heap.pop() {
        let (w, v) = unkey(k);
        if w >= cap {
            return Ok(Escape::Capped);
        }
        running = running.max(w);
        if arena.depth(v) >= target {
            return Ok(Escape::Reached { beta: running, witness: v });
        }
        for c in arena.expand(v)? {
            heap.push(key(arena, c));
        }
    }
    // Only possible when `exclude` was the sole child of `start`.
    Ok(Escape::Capped)
}

/// Minimax search that closes the tree at absolute depth `target`: a vertex
/// `v` there counts with weight `max(U_v, leaf(v))`, where `leaf(v)` stands
/// in for the pivot of the unrevealed subtree below `v`. When `leaf` returns
/// independent draws from the pivot law the result is an exact sample of the
/// untruncated pivot. `leaf` must return the same value for repeated calls
/// with one vertex if several searches are to be consistent.
pub fn closed_search(
    arena: &mut TreeArena,
    start: NodeId,
    target: u32,
    cap: f64,
    leaf: &mut impl FnMut(NodeId) -> f64,
) -> Result<Escape> {
    if arena.depth(start) >= target {
        let beta = leaf(start);
        return Ok(if beta >= cap { Escape::Capped } else { Escape::Reached { beta, witness: start } });
    }
    let mut heap: BinaryHeap<Key> = BinaryHeap::new();
    let mut push = |arena: &TreeArena, heap: &mut BinaryHeap<Key>, c: NodeId| {
        let w = if arena.depth(c) >= target { arena.weight(c).max(leaf(c)) } else { arena.weight(c) };
        heap.push(Reverse((w.to_bits(), c.0)));
    };
    for c in arena.expand(start)? {
        push(arena, &mut heap, c);
    }
    let mut running = 0.0f64;
    while let Some(k) = heap.pop() {
        let (w, v) = unkey(k);
        if w >= cap {
            return Ok(Escape::Capped);
        }
        running = running.max(w);
        if arena.depth(v) >= target {
            return Ok(Escape::Reached { beta: running, witness: v });
        }
        for c in arena.expand(v)? {
            push(arena, &mut heap, c);
        }
    }
    unreachable!("every vertex has at least one child")
}

/// Truncated pivot of one vertex with a finite-horizon upper certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotBounds {
    /// `beta_D(v)`, nondecreasing in `D`.
    pub lower: f64,
    /// `lower + tol` when percolation at that level continues `D` more
    /// generations below the witness; `1.0` otherwise.
    pub upper: f64,
    pub witness: NodeId,
    pub probe_ok: bool,
}

/// `beta_D(node)` for `D = depth_cap`, plus the survival probe.
pub fn pivot_beta(arena: &mut TreeArena, node: NodeId, depth_cap: u32, tol: f64) -> Result<PivotBounds> {
    let target = arena.depth(node) + depth_cap;
    let Escape::Reached { beta, witness } = escape_search(arena, node, target, f64::INFINITY, None)? else {
        unreachable!("uncapped search always reaches the target");
    };
    let level = beta + tol;
    let probe = escape_search(arena, witness, arena.depth(witness) + depth_cap, level, None)?;
    let probe_ok = matches!(probe, Escape::Reached { .. }) && level < 1.0;
    Ok(PivotBounds { lower: beta, upper: if probe_ok { level } else { 1.0 }, witness, probe_ok })
}

/// Knobs for backbone identification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificationPolicy {
    /// The candidate backbone end is the deepest vertex containing every
    /// vertex invaded during this final fraction of the run.
    pub tail_fraction: f64,
    /// `gamma_n` is certified only while the cheapest boundary vertex outside
    /// `T(gamma_n)` weighs more than `p_c + margin`.
    pub margin: f64,
}

impl Default for CertificationPolicy {
    fn default() -> Self {
        Self { tail_fraction: 0.25, margin: 0.0 }
    }
}

/// The backbone prefix of one run, with pivots once computed.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneTrace {
    /// `gamma_0 = root, ..., gamma_L`.
    pub path: Vec<NodeId>,
    pub certified_len: usize,
    /// Depth of the tail common ancestor before certification trimming.
    pub candidate_len: usize,
    /// Cheapest boundary weight outside `T(gamma_n)`, `n = 0..=candidate_len`.
    pub m_out: Vec<f64>,
    pub steps: usize,
    pub p_c: f64,
    pub diagnostic: Option<String>,
    pub pivots: Option<PivotTrace>,
}

/// Pivots and dual pivots along a certified backbone, on the common absolute
/// horizon `L + depth_cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotTrace {
    pub horizon: u32,
    pub beta_lower: Vec<f64>,
    pub beta_upper: Vec<f64>,
    pub beta_star: Vec<f64>,
    /// `e_n`: cheapest escape from `gamma_n` avoiding `T(gamma_{n+1})`, or
    /// `None` when the search was capped at the running dual pivot.
    pub sibling_escape: Vec<Option<f64>>,
    /// `gamma_{n+1}` realizes the minimum over children of `gamma_n`.
    pub argmin_consistent: Vec<bool>,
    pub probe_ok: bool,
}

impl PivotTrace {
    pub fn h(&self, p_c: f64) -> Vec<f64> {
        self.beta_lower.iter().map(|b| b - p_c).collect()
    }

    pub fn h_star(&self, p_c: f64) -> Vec<f64> {
        self.beta_star.iter().map(|b| b - p_c).collect()
    }
}

impl BackboneTrace {
    pub fn gamma(&self, n: usize) -> NodeId {
        self.path[n]
    }

    /// `n,h_n,h_star_n,beta_lower,beta_upper` CSV; requires pivots.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,h_n,h_star_n,beta_lower,beta_upper\n");
        if let Some(pv) = &self.pivots {
            for n in 0..=self.certified_len {
                let _ = writeln!(
                    out,
                    "{n},{:e},{:e},{:e},{:e}",
                    pv.beta_lower[n] - self.p_c,
                    pv.beta_star[n] - self.p_c,
                    pv.beta_lower[n],
                    pv.beta_upper[n]
                );
            }
        }
        out
    }
}

/// Deepest vertex that is an ancestor (or self) of every vertex invaded in
/// the final `tail_fraction` of the run.
pub fn tail_ancestor(run: &InvasionRun, arena: &TreeArena, tail_fraction: f64) -> NodeId {
    let n = run.invaded.len();
    let from = ((1.0 - tail_fraction.clamp(0.0, 1.0)) * n as f64).floor() as usize;
    let from = from.clamp(1, n - 1);
    let mut lca = run.invaded[from];
    for &v in &run.invaded[from + 1..] {
        if !arena.is_ancestor_or_self(lca, v) {
            lca = arena.common_ancestor(lca, v);
        }
    }
    lca
}

/// For each `n <= path.len() - 1`, the minimum boundary weight outside `T(path[n])`.
fn outside_minima(run: &InvasionRun, arena: &TreeArena, path: &[NodeId]) -> Vec<f64> {
    let last = path.len() - 1;
    // diverge[k] = cheapest boundary vertex whose deepest path ancestor is gamma_k.
    let mut diverge = vec![f64::INFINITY; path.len()];
    for (b, w) in run.boundary() {
        let mut cur = arena.ancestor_at_depth(b, arena.depth(b).min(last as u32));
        while path[arena.depth(cur) as usize] != cur {
            cur = arena.parent(cur).expect("root is on the path");
        }
        let k = arena.depth(cur) as usize;
        if w < diverge[k] {
            diverge[k] = w;
        }
    }
    // Outside T(gamma_n) means diverging at some k < n.
    let mut m_out = vec![f64::INFINITY; path.len()];
    for n in 1..path.len() {
        m_out[n] = m_out[n - 1].min(diverge[n - 1]);
    }
    m_out
}

/// Identify and certify the backbone prefix of a run.
pub fn backbone(run: &InvasionRun, arena: &TreeArena, policy: CertificationPolicy) -> BackboneTrace {
    let p_c = 1.0 / arena.dist().mean();
    let end = tail_ancestor(run, arena, policy.tail_fraction);
    let path = arena.path_from_root(end);
    let candidate_len = path.len() - 1;
    let m_out = outside_minima(run, arena, &path);
    let threshold = p_c + policy.margin;
    let certified_len = (1..=candidate_len).take_while(|&n| m_out[n] > threshold).last().unwrap_or(0);
    let diagnostic = (certified_len == 0).then(|| {
        format!(
            "no backbone vertex certified after {} steps (tail ancestor at depth {candidate_len}); run longer",
            run.steps()
        )
    });
    BackboneTrace {
        path: path[..=certified_len].to_vec(),
        certified_len,
        candidate_len,
        m_out,
        steps: run.steps(),
        p_c,
        diagnostic,
        pivots: None,
    }
}

/// Invade for `steps`, certify, continue to `2 * steps` and certify again;
/// the returned trace is the common certified prefix of both.
pub fn backbone_with_extension(
    arena: &mut TreeArena,
    steps: usize,
    policy: CertificationPolicy,
) -> Result<(BackboneTrace, InvasionRun)> {
    let mut run = invade(arena, steps)?;
    let first = backbone(&run, arena, policy);
    run.advance(arena, steps)?;
    let mut second = backbone(&run, arena, policy);
    let common = first.path.iter().zip(&second.path).take_while(|(a, b)| a == b).count();
    let len = common.saturating_sub(1);
    second.path.truncate(len + 1);
    second.certified_len = len;
    if len == 0 && second.diagnostic.is_none() {
        second.diagnostic = Some("certified prefix changed when the run was extended".into());
    }
    Ok((second, run))
}

/// Pivots `beta_n`, dual pivots `beta*_n` and their bounds along a certified
/// backbone. All searches share the absolute horizon `L + depth_cap`, so the
/// truncated values satisfy the same recursions as the exact ones.
pub fn backbone_pivots(trace: &BackboneTrace, arena: &mut TreeArena, depth_cap: u32, tol: f64) -> Result<PivotTrace> {
    let end = pivot_beta(arena, trace.path[trace.certified_len], depth_cap, tol)?;
    pivots_from_end(trace, arena, depth_cap, end)
}

/// [`backbone_pivots`] with the last backbone vertex's pivot from a
/// [`closed_search`] at the common horizon, so that the tail of the pivot
/// path is not biased low by truncation. `leaf` should draw from the pivot
/// law; the upper bounds then coincide with the lower ones.
pub fn backbone_pivots_closed(
    trace: &BackboneTrace,
    arena: &mut TreeArena,
    depth_cap: u32,
    leaf: &mut impl FnMut(NodeId) -> f64,
) -> Result<PivotTrace> {
    let last = trace.path[trace.certified_len];
    let target = arena.depth(last) + depth_cap;
    let Escape::Reached { beta, witness } = closed_search(arena, last, target, f64::INFINITY, leaf)? else {
        unreachable!("uncapped search always reaches the target");
    };
    let end = PivotBounds { lower: beta, upper: beta, witness, probe_ok: true };
    pivots_from_end(trace, arena, depth_cap, end)
}

fn pivots_from_end(
    trace: &BackboneTrace,
    arena: &mut TreeArena,
    depth_cap: u32,
    end: PivotBounds,
) -> Result<PivotTrace> {
    let len = trace.certified_len;
    let path = &trace.path;
    let horizon = arena.depth(path[len]) + depth_cap;

    // Along the backbone beta_n = max(U_{gamma_{n+1}}, beta_{n+1}).
    let mut via = vec![0.0; len + 1];
    let mut upper = vec![0.0; len + 1];
    via[len] = end.lower;
    upper[len] = end.upper;
    for n in (0..len).rev() {
        let u = arena.weight(path[n + 1]);
        via[n] = via[n + 1].max(u);
        upper[n] = upper[n + 1].max(u);
    }

    let mut beta_star = vec![1.0; len + 1];
    let mut sibling_escape = vec![None; len + 1];
    let mut consistent = vec![true; len + 1];
    for n in 0..len {
        let e = match escape_search(arena, path[n], horizon, beta_star[n], Some(path[n + 1]))? {
            Escape::Reached { beta, .. } => Some(beta),
            Escape::Capped => None,
        };
        sibling_escape[n] = e;
        let e_val = e.unwrap_or(f64::INFINITY);
        // Capped means e_n >= beta*_n >= beta_n whenever earlier steps were consistent.
        consistent[n] = e_val >= via[n];
        beta_star[n + 1] = beta_star[n].min(e_val);
    }
    // The last vertex's competitors are not examined.
    let beta_lower = (0..=len)
        .map(|n| match sibling_escape[n] {
            Some(e) if n < len => via[n].min(e),
            _ => via[n],
        })
        .collect();
    Ok(PivotTrace {
        horizon,
        beta_lower,
        beta_upper: upper,
        beta_star,
        sibling_escape,
        argmin_consistent: consistent,
        probe_ok: end.probe_ok,
    })
}

/// `beta*_n` alone; see [`backbone_pivots`].
pub fn dual_pivots(trace: &BackboneTrace, arena: &mut TreeArena, depth_cap: u32) -> Result<Vec<f64>> {
    Ok(backbone_pivots(trace, arena, depth_cap, 0.0)?.beta_star)
}
