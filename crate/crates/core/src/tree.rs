//! Lazily grown Galton-Watson trees.
//!
//! Vertices live in a flat arena. Each vertex receives its weight `U` and its
//! offspring count when it is created, drawing exactly two words from the
//! tree's ChaCha stream, so node `k` always consumes stream words
//! `4k..4k+4`. Children of a vertex are allocated together in one contiguous
//! block when the vertex is expanded, which keeps "child `i` of `v`" stable.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;
use crate::rng::{self, derive_stream, purpose, Stream};

/// Default cap on realized vertices per arena.
pub const DEFAULT_NODE_BUDGET: usize = 200_000_000;

const NONE: u32 = u32::MAX;
const WORDS_PER_NODE: u128 = 4;

/// Index of a vertex in its arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    parent: u32,
    depth: u32,
    first_child: u32,
    deg: u32,
    u: f64,
}

/// Contiguous block of child ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Children(Range<u32>);

impl Iterator for Children {
    type Item = NodeId;
    fn next(&mut self) -> Option<NodeId> {
        self.0.next().map(NodeId)
    }
    fn size_hint(&self) -> (usize, Option<usize>) {
        self.0.size_hint()
    }
}

impl ExactSizeIterator for Children {}

/// A Galton-Watson tree realized on demand.
#[derive(Debug, Clone)]
pub struct TreeArena {
    nodes: Vec<Node>,
    dist: Arc<OffspringDistribution>,
    rng: Stream,
    budget: usize,
}

/// Generation sizes `Z_n` and normalized sizes `W_n = Z_n / mu^n` below a vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTrace {
    pub mu: f64,
    pub z: Vec<u64>,
    pub w: Vec<f64>,
}

impl MartingaleTrace {
    fn from_counts(mu: f64, z: Vec<u64>) -> Self {
        let w = z.iter().enumerate().map(|(n, &c)| c as f64 / mu.powi(n as i32)).collect();
        Self { mu, z, w }
    }

    pub fn depth(&self) -> usize {
        self.z.len() - 1
    }

    /// `max_{n <= depth} W_n`, the finite-depth proxy for `sup_n W_n`.
    pub fn w_bar(&self) -> f64 {
        self.w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last_w(&self) -> f64 {
        *self.w.last().unwrap()
    }
}

/// Per-child decomposition `Z_n^{(i)}(v)`: descendants in generation
/// `|v| + n` whose line passes through child `i`. Entry `n = 0` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildDecomposition {
    pub mu: f64,
    pub children: Vec<NodeId>,
    /// `counts[i][n]`.
    pub counts: Vec<Vec<u64>>,
}

impl ChildDecomposition {
    /// `W_n^{(i)}(v)`.
    pub fn w(&self, i: usize, n: usize) -> f64 {
        self.counts[i][n] as f64 / self.mu.powi(n as i32)
    }

    pub fn depth(&self) -> usize {
        self.counts.first().map_or(0, |c| c.len() - 1)
    }
}

impl TreeArena {
    /// A fresh tree whose stream is derived from `seed` alone.
    pub fn new(dist: Arc<OffspringDistribution>, seed: u64) -> Self {
        Self::with_stream(dist, derive_stream(seed, purpose::TREE, 0))
    }

    /// Tree number `index` of the family keyed by `master`.
    pub fn replicate(dist: Arc<OffspringDistribution>, master: u64, index: u64) -> Self {
        Self::with_stream(dist, derive_stream(master, purpose::TREE, index))
    }

    pub fn with_stream(dist: Arc<OffspringDistribution>, rng: Stream) -> Self {
        let mut arena = Self { nodes: Vec::new(), dist, rng, budget: DEFAULT_NODE_BUDGET };
        arena.push_node(NONE, 0);
        arena
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget.max(1);
        self
    }

    pub fn set_budget(&mut self, budget: usize) {
        self.budget = budget.max(1);
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    fn push_node(&mut self, parent: u32, depth: u32) -> u32 {
        let u = rng::uniform(&mut self.rng);
        let deg = self.dist.sample(&mut self.rng);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { parent, depth, first_child: NONE, deg, u });
        id
    }

    pub fn dist(&self) -> &Arc<OffspringDistribution> {
        &self.dist
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    /// Number of realized vertices.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Stream position in 32-bit words; advances only when vertices are created.
    pub fn stream_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    #[inline]
    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    #[inline]
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        let p = self.node(id).parent;
        (p != NONE).then_some(NodeId(p))
    }

    #[inline]
    pub fn depth(&self, id: NodeId) -> u32 {
        self.node(id).depth
    }

    #[inline]
    pub fn deg(&self, id: NodeId) -> u32 {
        self.node(id).deg
    }

    /// The uniform weight `U_v`, fixed at creation.
    #[inline]
    pub fn weight(&self, id: NodeId) -> f64 {
        self.node(id).u
    }

    #[inline]
    pub fn is_expanded(&self, id: NodeId) -> bool {
        self.node(id).first_child != NONE
    }

    /// Children of an expanded vertex; `None` when not yet expanded.
    #[inline]
    pub fn children(&self, id: NodeId) -> Option<Children> {
        let n = self.node(id);
        (n.first_child != NONE).then(|| Children(n.first_child..n.first_child + n.deg))
    }

    /// Child `i` (0-based Ulam-Harris slot) of an expanded vertex.
    pub fn child(&self, id: NodeId, i: u32) -> Option<NodeId> {
        let n = self.node(id);
        (n.first_child != NONE && i < n.deg).then(|| NodeId(n.first_child + i))
    }

    /// Slot index of `id` among its siblings.
    pub fn slot(&self, id: NodeId) -> Option<u32> {
        self.parent(id).map(|p| id.0 - self.node(p).first_child)
    }

    /// Realize the children of `id`. Idempotent: a second call returns the
    /// same ids and draws nothing.
    pub fn expand(&mut self, id: NodeId) -> Result<Children> {
        let n = self.nodes[id.index()];
        if n.first_child != NONE {
            return Ok(Children(n.first_child..n.first_child + n.deg));
        }
        if self.nodes.len() + n.deg as usize > self.budget {
            return Err(Error::Resource { budget: self.budget, depth: n.depth + 1 });
        }
        let first = self.nodes.len() as u32;
        for _ in 0..n.deg {
            self.push_node(id.0, n.depth + 1);
        }
        self.nodes[id.index()].first_child = first;
        Ok(Children(first..first + n.deg))
    }

    /// Expand everything below `id` down to `rel_depth` generations.
    pub fn realize_to_depth(&mut self, id: NodeId, rel_depth: u32) -> Result<()> {
        let mut level = vec![id];
        for _ in 0..rel_depth {
            let mut next = Vec::with_capacity(level.len() * 2);
            for v in level {
                next.extend(self.expand(v)?);
            }
            level = next;
        }
        Ok(())
    }

    /// True when `a` is `b` or an ancestor of `b`.
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        let da = self.depth(a);
        let db = self.depth(b);
        da <= db && self.ancestor_at_depth(b, da) == a
    }

    /// The ancestor of `id` at absolute depth `d` (itself when `d = depth(id)`).
    pub fn ancestor_at_depth(&self, id: NodeId, d: u32) -> NodeId {
        let mut cur = id;
        while self.depth(cur) > d {
            cur = NodeId(self.node(cur).parent);
        }
        cur
    }

    /// Root-to-`id` path, inclusive.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Deepest common ancestor of two vertices.
    pub fn common_ancestor(&self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.depth(a).min(self.depth(b));
        let mut x = self.ancestor_at_depth(a, d);
        let mut y = self.ancestor_at_depth(b, d);
        while x != y {
            x = NodeId(self.node(x).parent);
            y = NodeId(self.node(y).parent);
        }
        x
    }

    /// `Z_n`, `W_n` for `n <= depth` below `id`, expanding as needed.
    pub fn martingale(&mut self, id: NodeId, depth: u32) -> Result<MartingaleTrace> {
        let mu = self.dist.mean();
        let mut z = vec![1u64];
        let mut level = vec![id];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(level.len() * 2);
            for v in level {
                next.extend(self.expand(v)?);
            }
            z.push(next.len() as u64);
            level = next;
        }
        Ok(MartingaleTrace::from_counts(mu, z))
    }

    /// `Z_n^{(i)}(id)` for every child `i` and `n <= depth`.
    pub fn child_decomposition(&mut self, id: NodeId, depth: u32) -> Result<ChildDecomposition> {
        let mu = self.dist.mean();
        let children: Vec<NodeId> = self.expand(id)?.collect();
        let mut counts = vec![vec![0u64]; children.len()];
        if depth == 0 {
            return Ok(ChildDecomposition { mu, children, counts });
        }
        for (i, &c) in children.iter().enumerate() {
            let sub = self.martingale(c, depth - 1)?;
            counts[i].extend(sub.z);
        }
        Ok(ChildDecomposition { mu, children, counts })
    }

    /// A view of the subtree at `id` with depths re-based to zero.
    pub fn view(&mut self, id: NodeId) -> SubtreeView<'_> {
        let base = self.depth(id);
        SubtreeView { arena: self, root: id, base }
    }

    /// Nodes at relative depth `n` below `id`, if all of `T_n(id)` is realized.
    pub fn realized_level(&self, id: NodeId, n: u32) -> Option<Vec<NodeId>> {
        let mut level = vec![id];
        for _ in 0..n {
            let mut next = Vec::with_capacity(level.len() * 2);
            for v in level {
                next.extend(self.children(v)?);
            }
            level = next;
        }
        Some(level)
    }

    /// Copy of the structure of `T_{<= frontier}` with freshly drawn weights.
    ///
    /// Offspring counts of vertices above the frontier are frozen; vertices at
    /// the frontier draw fresh counts, so everything below it is a new
    /// Galton-Watson continuation. Returns the copy and the id map
    /// `prefix id -> copy id` for the frozen vertices (`None` elsewhere).
    pub fn reweighted_prefix(&self, frontier: u32, rng: Stream) -> Result<(TreeArena, Vec<Option<NodeId>>)> {
        self.reweighted_subtree(NodeId::ROOT, frontier, rng)
    }

    /// [`reweighted_prefix`](Self::reweighted_prefix) of the subtree at `top`,
    /// which becomes the root of the copy; `frontier` is relative to `top`.
    pub fn reweighted_subtree(
        &self,
        top: NodeId,
        frontier: u32,
        rng: Stream,
    ) -> Result<(TreeArena, Vec<Option<NodeId>>)> {
        let mut copy = TreeArena::with_stream(self.dist.clone(), rng);
        copy.budget = self.budget;
        let mut map = vec![None; self.nodes.len()];
        map[top.index()] = Some(NodeId::ROOT);
        let mut level = vec![(top, NodeId::ROOT)];
        for d in 0..frontier {
            let mut next = Vec::with_capacity(level.len() * 2);
            for (src, dst) in level {
                let kids = self
                    .children(src)
                    .ok_or_else(|| Error::Precondition(format!("prefix not realized at depth {d}")))?;
                // Freeze the offspring count before expanding the copy.
                copy.nodes[dst.index()].deg = self.deg(src);
                let copies = copy.expand(dst)?;
                for (s, t) in kids.zip(copies) {
                    map[s.index()] = Some(t);
                    next.push((s, t));
                }
            }
            level = next;
        }
        Ok((copy, map))
    }

    /// Line-oriented dump of the realized tree: `nodeid parentid depth deg u_weight`
    /// with bit-exact hexadecimal floats. Header lines start with `#`.
    pub fn write_prefix<W: Write>(&self, out: &mut W, seed_note: &str) -> Result<()> {
        writeln!(out, "# gw-invasion tree prefix v1")?;
        writeln!(out, "# dist = {}", self.dist)?;
        writeln!(out, "# stream = {seed_note}")?;
        writeln!(out, "# nodes = {}", self.nodes.len())?;
        let mut line = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            line.clear();
            let parent = if n.parent == NONE { -1 } else { n.parent as i64 };
            let _ = write!(line, "{i} {parent} {} {} {}", n.depth, n.deg, format_hex_f64(n.u));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Rebuild a tree from [`write_prefix`](Self::write_prefix) output.
    ///
    /// `rng` must be the stream the tree was originally built from; it is
    /// advanced past the recorded vertices so further expansion continues
    /// exactly where the original would have.
    pub fn read_prefix<R: BufRead>(input: R, dist: Arc<OffspringDistribution>, mut rng: Stream) -> Result<TreeArena> {
        let mut nodes: Vec<Node> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad("node id"))?;
            let parent: i64 = fields[1].parse().map_err(|_| bad("parent id"))?;
            let depth: u32 = fields[2].parse().map_err(|_| bad("depth"))?;
            let deg: u32 = fields[3].parse().map_err(|_| bad("deg"))?;
            let u = parse_hex_f64(fields[4]).ok_or_else(|| bad("hex weight"))?;
            if id != nodes.len() {
                return Err(bad("node ids must be consecutive from 0"));
            }
            let parent = if parent < 0 { NONE } else { parent as u32 };
            if (parent == NONE) != (id == 0) {
                return Err(bad("only node 0 may lack a parent"));
            }
            if parent != NONE {
                let p = nodes.get_mut(parent as usize).ok_or_else(|| bad("parent after child"))?;
                if p.depth + 1 != depth {
                    return Err(bad("depth is not parent depth + 1"));
                }
                if p.first_child == NONE {
                    p.first_child = id as u32;
                } else if id as u32 >= p.first_child + p.deg {
                    return Err(bad("children are not contiguous"));
                }
            }
            nodes.push(Node { parent, depth, first_child: NONE, deg, u });
        }
        if nodes.is_empty() {
            return Err(Error::Parse("no vertices".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.first_child != NONE {
                let count = nodes.iter().skip(n.first_child as usize).take_while(|c| c.parent == i as u32).count();
                if count != n.deg as usize {
                    return Err(Error::Parse(format!("vertex {i} has {count} children, deg {}", n.deg)));
                }
            }
        }
        rng.set_word_pos(nodes.len() as u128 * WORDS_PER_NODE);
        Ok(TreeArena { nodes, dist, rng, budget: DEFAULT_NODE_BUDGET })
    }
}

/// Read/expand handle rooted at one vertex, depths measured from it.
pub struct SubtreeView<'a> {
    arena: &'a mut TreeArena,
    root: NodeId,
    base: u32,
}

impl SubtreeView<'_> {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn depth(&self, id: NodeId) -> u32 {
        self.arena.depth(id) - self.base
    }

    pub fn expand(&mut self, id: NodeId) -> Result<Children> {
        self.arena.expand(id)
    }

    pub fn martingale(&mut self, depth: u32) -> Result<MartingaleTrace> {
        self.arena.martingale(self.root, depth)
    }

    pub fn child_decomposition(&mut self, depth: u32) -> Result<ChildDecomposition> {
        self.arena.child_decomposition(self.root, depth)
    }

    pub fn realize_to_depth(&mut self, depth: u32) -> Result<()> {
        self.arena.realize_to_depth(self.root, depth)
    }

    pub fn arena(&self) -> &TreeArena {
        self.arena
    }

    pub fn arena_mut(&mut self) -> &mut TreeArena {
        self.arena
    }
}

/// C99-style hexadecimal float, e.g. `0x1.8p-1` for 0.75.
pub fn format_hex_f64(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0x0p+0".into() } else { "0x0p+0".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Inverse of [`format_hex_f64`]; finite values only.
pub fn parse_hex_f64(s: &str) -> Option<f64> {
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X"))?;
    let (mantissa, exp) = rest.split_once(['p', 'P'])?;
    let exp: i32 = exp.parse().ok()?;
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() || frac_part.len() > 13 {
        return None;
    }
    let int_val = u64::from_str_radix(int_part, 16).ok()?;
    if int_val > 1 {
        return None;
    }
    let frac_val =
        if frac_part.is_empty() { 0 } else { u64::from_str_radix(frac_part, 16).ok()? << (4 * (13 - frac_part.len())) };
    let value = if int_val == 0 && frac_val == 0 {
        0.0
    } else if int_val == 1 {
        if !(-1022..=1023).contains(&exp) {
            return None;
        }
        f64::from_bits((((exp + 1023) as u64) << 52) | frac_val)
    } else {
        if exp != -1022 {
            return None;
        }
        f64::from_bits(frac_val)
    };
    Some(if neg { -value } else { value })
}

/// Replay helper used by tests: the `(U, deg)` draw of node `k` read straight
/// from the stream, without building the tree.
pub fn node_draw_at(dist: &OffspringDistribution, mut rng: ChaCha8Rng, k: u64) -> (f64, u32) {
    rng.set_word_pos(k as u128 * WORDS_PER_NODE);
    let u = rng::unit_open(rng.next_u64());
    let deg = dist.sample_from_unit(rng::unit_open(rng.next_u64()));
    (u, deg)
}
