//! Experiment dispatch and reports.
//!
//! Replicate `i` of every experiment draws from the stream
//! `derive_stream(seed, purpose, i)`, so results do not depend on the
//! number of worker threads: replicates run on a rayon pool and are
//! collected in index order before any aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_bool, parse_extended, parse_grid, parse_list, Experiment, ExperimentConfig, Format};
use crate::error::{Error, Result};
use crate::invasion::{backbone_pivots, backbone_pivots_closed, backbone_with_extension, invade, CertificationPolicy};
use crate::measures::{self, ac_diagnostic, main_theorem_condition, AcOptions, QOptions};
use crate::pivot_chain::{self, run_chain, InitialState, PivotKernel};
use crate::rng::{derive_stream, purpose};
use crate::stats::{self, EcdfSummary};
use crate::survival::{sig12, survival_table, SurvivalSolver};
use crate::{criteria, OffspringDistribution, TreeArena};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    /// A number written with 12 significant digits in CSV.
    Sig(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => format!("{x:e}"),
            Cell::Sig(x) => sig12(*x),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Lt => "<",
            Relation::Gt => ">",
        }
    }
}

/// A pass/fail judgement of `statistic relation tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub id: String,
    pub name: String,
    pub statistic: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    /// NaN statistics fail.
    pub fn new(id: &str, name: &str, statistic: f64, relation: Relation, tolerance: f64) -> Self {
        let pass = match relation {
            Relation::Le => statistic <= tolerance,
            Relation::Ge => statistic >= tolerance,
            Relation::Lt => statistic < tolerance,
            Relation::Gt => statistic > tolerance,
        };
        Self { id: id.into(), name: name.into(), statistic, relation, tolerance, pass }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} {}: {:e} {} {:e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.statistic,
            self.relation.symbol(),
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub seed: u64,
    /// Every setting the run used, defaults included.
    pub config: BTreeMap<String, String>,
    pub replicates: u64,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
    /// Kept out of the rendered report so reruns compare byte for byte.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl ExperimentReport {
    fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            tool: "gw-invasion",
            version: VERSION,
            experiment,
            seed,
            config: BTreeMap::new(),
            replicates: 0,
            tables: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
            wall_clock: Duration::ZERO,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// Header comments, then each table; a `# table` line precedes each
    /// table when there are several.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {} {} experiment={} seed={}\n", self.tool, self.version, self.experiment, self.seed);
        for (k, v) in &self.config {
            let _ = writeln!(out, "# config {k} = {v}");
        }
        let _ = writeln!(out, "# replicates = {}", self.replicates);
        for v in &self.verdicts {
            let _ = writeln!(out, "# verdict {}", v.line());
        }
        for n in &self.notes {
            let _ = writeln!(out, "# note {n}");
        }
        let many = self.tables.len() > 1;
        for (i, t) in self.tables.iter().enumerate() {
            if many {
                if i > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "# table {}", t.name);
            }
            out.push_str(&t.to_csv());
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

/// Typed access to a config's knobs that records every value used.
pub(crate) struct Knobs<'a> {
    cfg: &'a ExperimentConfig,
    echo: BTreeMap<String, String>,
}

impl<'a> Knobs<'a> {
    pub(crate) fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, echo: BTreeMap::new() }
    }

    fn take(&mut self, key: &str, default: String) -> String {
        let v = self.cfg.raw(key).map(str::to_string).unwrap_or(default);
        self.echo.insert(key.into(), v.clone());
        v
    }

    // Values were validated when the config was built.
    pub(crate) fn int(&mut self, key: &str, default: u64) -> u64 {
        self.take(key, default.to_string()).parse().expect("validated knob")
    }

    pub(crate) fn float(&mut self, key: &str, default: f64) -> f64 {
        self.take(key, default.to_string()).parse().expect("validated knob")
    }

    pub(crate) fn extended(&mut self, key: &str, default: f64) -> f64 {
        parse_extended(&self.take(key, default.to_string())).expect("validated knob")
    }

    pub(crate) fn flag(&mut self, key: &str, default: bool) -> bool {
        parse_bool(&self.take(key, default.to_string())).expect("validated knob")
    }

    pub(crate) fn grid(&mut self, key: &str, default: &str) -> Vec<f64> {
        parse_grid(&self.take(key, default.into())).expect("validated knob")
    }

    pub(crate) fn list(&mut self, key: &str, default: &[usize]) -> Vec<usize> {
        let d: Vec<String> = default.iter().map(|x| x.to_string()).collect();
        parse_list(&self.take(key, format!("[{}]", d.join(", ")))).expect("validated knob")
    }

    fn finish(mut self, report: &mut ExperimentReport) {
        self.echo.insert("dist".into(), self.cfg.dist.to_string());
        report.config = self.echo;
    }
}

/// Run `f(0..n)` on the current rayon pool, results in index order.
pub(crate) fn fan_out<T: Send>(n: u64, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

/// The first `need` accepted outcomes of `f(0), f(1), ...`, evaluated in
/// parallel batches; gives up after `max_tries` indices.
pub(crate) fn first_accepted<T: Send>(
    need: usize,
    max_tries: u64,
    f: impl Fn(u64) -> Result<Option<T>> + Sync + Send,
) -> Result<(Vec<T>, u64)> {
    let mut out = Vec::with_capacity(need);
    let mut next = 0u64;
    while out.len() < need {
        if next >= max_tries {
            return Err(Error::Inconclusive {
                reason: format!("only {} of {need} replicates accepted in {max_tries} tries", out.len()),
                rate: out.len() as f64 / max_tries as f64,
            });
        }
        let batch = (need as u64).clamp(64, 4096).min(max_tries - next);
        let got: Vec<Option<T>> = (next..next + batch).into_par_iter().map(&f).collect::<Result<_>>()?;
        for (i, g) in got.into_iter().enumerate() {
            if out.len() == need {
                break;
            }
            if let Some(v) = g {
                out.push(v);
                if out.len() == need {
                    next += i as u64 + 1;
                    return Ok((out, next));
                }
            }
        }
        next += batch;
    }
    Ok((out, next))
}

/// Run on a pool of `threads` workers (default: available parallelism).
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

/// Run one experiment on the current pool.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.check_knobs()?;
    let start = Instant::now();
    let mut report = ExperimentReport::new(cfg.experiment, cfg.seed);
    let mut k = Knobs::new(cfg);
    let dist = Arc::new(cfg.dist.clone());
    match cfg.experiment {
        Experiment::Survival => survival(&dist, &mut k, &mut report)?,
        Experiment::Invade => invade_exp(&dist, cfg.seed, &mut k, &mut report)?,
        Experiment::Backbone => backbone_exp(&dist, cfg.seed, &mut k, &mut report)?,
        Experiment::PivotChain => pivot_chain_exp(&dist, cfg.seed, &mut k, &mut report)?,
        Experiment::ExpLimit => exp_limit(&dist, cfg.seed, &mut k, &mut report)?,
        Experiment::Lpe => lpe(cfg.seed, &mut k, &mut report)?,
        Experiment::DualDecay => dual_decay(&dist, cfg.seed, &mut k, &mut report)?,
        Experiment::Kl => kl(&dist, cfg.seed, &mut k, &mut report)?,
        Experiment::Thm1Check => thm1(&dist, &mut k, &mut report)?,
        Experiment::ValidateAll => criteria::validate_all(cfg.seed, &mut k, &mut report)?,
    }
    k.finish(&mut report);
    report.wall_clock = start.elapsed();
    Ok(report)
}

fn kernel_for(dist: &Arc<OffspringDistribution>) -> Result<PivotKernel> {
    PivotKernel::new(SurvivalSolver::new(dist.clone())?)
}

fn survival(dist: &Arc<OffspringDistribution>, k: &mut Knobs, report: &mut ExperimentReport) -> Result<()> {
    let grid = k.grid("p_grid", "0.5:1:0.01");
    let solver = SurvivalSolver::new(dist.clone())?;
    let mut t = Table::new("survival", &["p", "g", "g_prime"]);
    for r in survival_table(&solver, &grid)? {
        t.push(vec![Cell::Sig(r.p), Cell::Sig(r.g), r.g_prime.map_or(Cell::Empty, Cell::Sig)]);
    }
    report.tables.push(t);
    Ok(())
}

fn invade_exp(
    dist: &Arc<OffspringDistribution>,
    seed: u64,
    k: &mut Knobs,
    report: &mut ExperimentReport,
) -> Result<()> {
    let steps = k.int("steps", 10_000) as usize;
    let mut arena = TreeArena::replicate(dist.clone(), seed, 0);
    let run = invade(&mut arena, steps)?;
    let mut t = Table::new("invasion", &["step", "nodeid", "depth", "u_weight"]);
    for (i, &v) in run.invaded().iter().enumerate() {
        t.push(vec![i.into(), Cell::Int(v.0 as i64), Cell::Int(arena.depth(v) as i64), arena.weight(v).into()]);
    }
    report.replicates = 1;
    report.tables.push(t);
    Ok(())
}

fn backbone_exp(
    dist: &Arc<OffspringDistribution>,
    seed: u64,
    k: &mut Knobs,
    report: &mut ExperimentReport,
) -> Result<()> {
    let steps = k.int("steps", 20_000) as usize;
    let depth_cap = k.int("depth_cap", 25) as u32;
    let tol = k.float("tol", 0.02);
    let closed = k.flag("closed", false);
    let kernel = kernel_for(dist)?;
    let p_c = kernel.p_c();
    let mut arena = TreeArena::replicate(dist.clone(), seed, 0);
    let (trace, _) = backbone_with_extension(&mut arena, steps, CertificationPolicy::default())?;
    let pv = if closed {
        let mut rng = derive_stream(seed, purpose::REDRAW, 0);
        backbone_pivots_closed(&trace, &mut arena, depth_cap, &mut |_| p_c + kernel.sample_initial(&mut rng))?
    } else {
        backbone_pivots(&trace, &mut arena, depth_cap, tol)?
    };
    if let Some(d) = &trace.diagnostic {
        report.notes.push(d.clone());
    }
    let consistent = pv.argmin_consistent.iter().filter(|&&c| c).count();
    report.notes.push(format!(
        "certified length {} of candidate {}; argmin consistent at {consistent} of {} steps; probe {}",
        trace.certified_len,
        trace.candidate_len,
        pv.argmin_consistent.len(),
        if pv.probe_ok { "ok" } else { "failed" }
    ));
    let mut t = Table::new("backbone", &["n", "h_n", "h_star_n", "beta_lower", "beta_upper"]);
    for n in 0..=trace.certified_len {
        t.push(vec![
            n.into(),
            (pv.beta_lower[n] - p_c).into(),
            (pv.beta_star[n] - p_c).into(),
            pv.beta_lower[n].into(),
            pv.beta_upper[n].into(),
        ]);
    }
    report.replicates = 1;
    report.tables.push(t);
    Ok(())
}

fn pivot_chain_exp(
    dist: &Arc<OffspringDistribution>,
    seed: u64,
    k: &mut Knobs,
    report: &mut ExperimentReport,
) -> Result<()> {
    let n = k.int("n", 500) as usize;
    let reps = k.int("replicates", 1000);
    let joint = k.flag("joint", false);
    let kernel = kernel_for(dist)?;
    let paths = fan_out(reps, |r| run_chain(&kernel, InitialState::SampleFromL, n, seed, r, joint))?;
    let mut cols = vec!["k", "h_mean", "h_se", "kh_mean"];
    if joint {
        cols.extend(["h_star_mean", "h_star_se"]);
    }
    let mut t = Table::new("pivot_chain", &cols);
    for step in 0..=n {
        let h: Vec<f64> = paths.iter().map(|p| p.h[step]).collect();
        let (m, se) = stats::mean_se(&h);
        let mut row = vec![step.into(), m.into(), se.into(), (m * step as f64).into()];
        if joint {
            let hs: Vec<f64> = paths.iter().map(|p| p.h_star.as_ref().unwrap()[step]).collect();
            let (ms, ses) = stats::mean_se(&hs);
            row.extend([ms.into(), ses.into()]);
        }
        t.push(row);
    }
    report.replicates = reps;
    report.tables.push(t);
    Ok(())
}

fn ecdf_table(name: &str, summary: &EcdfSummary) -> Table {
    let mut t = Table::new(name, &["x", "empirical_cdf", "analytic_cdf", "ks"]);
    for &(x, e, a) in &summary.grid {
        t.push(vec![x.into(), e.into(), a.into(), summary.ks.into()]);
    }
    t
}

fn exp_limit(dist: &Arc<OffspringDistribution>, seed: u64, k: &mut Knobs, report: &mut ExperimentReport) -> Result<()> {
    let n = k.int("n", 500) as usize;
    let reps = k.int("replicates", 4000);
    let points = k.int("points", 50) as usize;
    let tol = k.float("tol", 0.05);
    let kernel = kernel_for(dist)?;
    let mu = kernel.mu();
    let scaled =
        fan_out(reps, |r| Ok(n as f64 * run_chain(&kernel, InitialState::SampleFromL, n, seed, r, false)?.h[n]))?;
    let summary = EcdfSummary::new(&scaled, |x| if x <= 0.0 { 0.0 } else { -(-mu * x).exp_m1() }, points);
    report.verdicts.push(Verdict::new("exp-limit", "KS(n h_n, p_c Exp(1))", summary.ks, Relation::Le, tol));
    report.replicates = reps;
    report.tables.push(ecdf_table("exp_limit", &summary));
    Ok(())
}

fn lpe(seed: u64, k: &mut Knobs, report: &mut ExperimentReport) -> Result<()> {
    let reps = k.int("replicates", 100_000);
    let t_max = k.float("t", 1.0);
    let start = k.float("start", 1.0);
    let points = k.int("points", 50) as usize;
    let tol = k.float("tol", 0.02);
    let values = fan_out(reps, |r| {
        let mut rng = derive_stream(seed, purpose::LPE, r);
        Ok(pivot_chain::lpe_sample(t_max, start, &mut rng)?.at(t_max))
    })?;
    // min(start, L(t)) with L(t) exponential of rate t.
    let cdf = |x: f64| {
        if x >= start {
            1.0
        } else if x <= 0.0 {
            0.0
        } else {
            -(-t_max * x).exp_m1()
        }
    };
    let summary = EcdfSummary::new(&values, cdf, points);
    report.verdicts.push(Verdict::new("lpe", "KS(min(start, L(t)), analytic)", summary.ks, Relation::Le, tol));
    report.replicates = reps;
    report.tables.push(ecdf_table("lpe", &summary));
    Ok(())
}

fn dual_decay(
    dist: &Arc<OffspringDistribution>,
    seed: u64,
    k: &mut Knobs,
    report: &mut ExperimentReport,
) -> Result<()> {
    let t = k.float("t", 0.75);
    let grid = k.list("n_grid", &[50, 100, 200, 400]);
    let reps = k.int("replicates", 10_000);
    let kernel = kernel_for(dist)?;
    let rows = pivot_chain::dual_decay_experiment(&kernel, t, &grid, reps, seed)?;
    report.verdicts.push(decay_verdict("dual-decay", &rows));
    let mut table = Table::new("dual_decay", &["n", "threshold", "exceed", "replicates", "prob", "ci_lo", "ci_hi"]);
    for r in &rows {
        table.push(vec![
            r.n.into(),
            r.threshold.into(),
            r.exceed.into(),
            r.replicates.into(),
            r.prob.into(),
            r.ci_lo.into(),
            r.ci_hi.into(),
        ]);
    }
    report.replicates = reps;
    report.tables.push(table);
    Ok(())
}

/// Smallest gap between one row's lower interval end and the next row's
/// upper end; positive exactly when the trend is strictly decreasing.
pub(crate) fn decay_verdict(id: &str, rows: &[pivot_chain::DecayRow]) -> Verdict {
    let gap = rows.windows(2).map(|w| w[0].ci_lo - w[1].ci_hi).fold(f64::INFINITY, f64::min);
    Verdict::new(id, "min gap between successive 95% Wilson intervals", gap, Relation::Gt, 0.0)
}

fn kl(dist: &Arc<OffspringDistribution>, seed: u64, k: &mut Knobs, report: &mut ExperimentReport) -> Result<()> {
    let trees = k.int("replicates", 20);
    let n_max = k.int("n_max", 10) as usize;
    let frontier = k.int("prefix_depth", measures::default_frontier(dist) as u64) as u32;
    let proxy_depth = k.int("proxy_depth", measures::default_proxy_depth(dist) as u64) as u32;
    let steps = k.int("steps", 2000) as usize;
    let depth_cap = k.int("depth_cap", 25) as u32;
    let q_reps = k.int("q_replicates", 200);
    let kernel = kernel_for(dist)?;
    let q = QOptions { frontier, ..QOptions::new(q_reps, seed) };
    let opts = AcOptions { trees, n_max, steps, depth_cap, proxy_depth, q };
    let series = ac_diagnostic(dist.clone(), &kernel, &opts)?;
    report.notes.extend(series.warnings.iter().cloned());
    let mut t = Table::new("kl", &["n", "EX_n", "se", "partial_sum"]);
    for r in &series.rows {
        t.push(vec![r.n.into(), r.ex_n.into(), r.se.into(), r.partial_sum.into()]);
    }
    report.replicates = trees;
    report.tables.push(t);
    Ok(())
}

fn thm1(dist: &Arc<OffspringDistribution>, k: &mut Knobs, report: &mut ExperimentReport) -> Result<()> {
    let p = k.extended("p", f64::INFINITY);
    let p1 = k.float("p1", dist.p1());
    let mu = k.float("mu", dist.mean());
    let v = main_theorem_condition(p, p1, mu)?;
    let mut t = Table::new("thm1_check", &["p", "p1", "mu", "q", "margin", "holds"]);
    t.push(vec![p.into(), p1.into(), mu.into(), v.q.into(), v.margin.into(), Cell::Text(v.holds.to_string())]);
    report.tables.push(t);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_relations_and_nan() {
        assert!(Verdict::new("a", "x", 0.01, Relation::Le, 0.02).pass);
        assert!(!Verdict::new("a", "x", f64::NAN, Relation::Le, 0.02).pass);
        assert!(Verdict::new("a", "x", 0.95, Relation::Ge, 0.9).pass);
        assert!(!Verdict::new("a", "x", 0.0, Relation::Gt, 0.0).pass);
    }

    #[test]
    fn first_accepted_is_index_ordered() {
        let (v, tried) = first_accepted(5, 1000, |i| Ok((i % 3 == 0).then_some(i))).unwrap();
        assert_eq!(v, vec![0, 3, 6, 9, 12]);
        assert_eq!(tried, 13);
        assert!(first_accepted(5, 10, |i| Ok((i == 0).then_some(i))).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut r = ExperimentReport::new(Experiment::Survival, 3);
        let mut t = Table::new("a", &["x", "y"]);
        t.push(vec![Cell::Int(1), Cell::Sig(0.5)]);
        r.tables.push(t);
        r.verdicts.push(Verdict::new("v", "stat", 0.1, Relation::Le, 0.2));
        let csv = r.to_csv();
        assert!(csv.starts_with("# gw-invasion"));
        assert!(csv.contains("seed=3"));
        assert!(csv.contains("# verdict PASS v stat"));
        assert!(csv.ends_with("x,y\n1,0.5\n"));
    }
}
