use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gw_invasion::{run_with_threads, Experiment, ExperimentConfig, Result};

/// Invasion percolation on Galton-Watson trees.
///
/// Every subcommand prints a report (CSV with `#` header comments, or JSON)
/// and exits with status 0 iff all of its verdicts pass, 1 if some verdict
/// fails and 2 on errors.
#[derive(Parser)]
#[command(name = "gw-invasion", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Offspring law, e.g. "family = deterministic, b = 2" or "pmf = [[1,0.4],[2,0.6]]".
    #[arg(long)]
    dist: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report format: csv or json.
    #[arg(long)]
    emit: Option<String>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Start from a `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Table `p,g,g_prime` of the annealed survival function.
    Survival {
        #[command(flatten)]
        common: Common,
        /// Grid `start:stop:step`.
        #[arg(long)]
        p_grid: Option<String>,
    },
    /// Invasion from the root: `step,nodeid,depth,u_weight`.
    Invade {
        #[command(flatten)]
        common: Common,
        /// Vertices to invade.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Certified backbone with pivots: `n,h_n,h_star_n,beta_lower,beta_upper`.
    Backbone {
        #[command(flatten)]
        common: Common,
        /// Invasion steps before the backbone is read off.
        #[arg(long)]
        steps: Option<u64>,
        /// Search depth for each pivot.
        #[arg(long)]
        depth_cap: Option<u64>,
        /// Margin above each pivot at which its survival probe runs.
        #[arg(long)]
        tol: Option<f64>,
        /// Close the last pivot with pivot-law draws at the horizon.
        #[arg(long)]
        closed: bool,
    },
    /// Summary of simulated pivot (and dual pivot) chains.
    PivotChain {
        #[command(flatten)]
        common: Common,
        /// Steps per chain.
        #[arg(long)]
        n: Option<u64>,
        /// Number of chains.
        #[arg(long)]
        replicates: Option<u64>,
        /// Also run the dual pivot chain.
        #[arg(long)]
        joint: bool,
    },
    /// `n h_n` against its exponential limit.
    ExpLimit {
        #[command(flatten)]
        common: Common,
        /// Chain length.
        #[arg(long)]
        n: Option<u64>,
        /// Number of chains.
        #[arg(long)]
        replicates: Option<u64>,
        /// Rows in the CDF table.
        #[arg(long)]
        points: Option<u64>,
        /// KS tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Poisson lower envelope at time `t` against its exponential law.
    Lpe {
        #[command(flatten)]
        common: Common,
        /// Number of envelope paths.
        #[arg(long)]
        replicates: Option<u64>,
        /// Observation time.
        #[arg(long)]
        t: Option<f64>,
        /// Starting height.
        #[arg(long)]
        start: Option<f64>,
        /// Rows in the CDF table.
        #[arg(long)]
        points: Option<u64>,
        /// KS tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// `P[h*_n > n^-t]` on a grid of `n`.
    DualDecay {
        #[command(flatten)]
        common: Common,
        /// Exponent of the threshold `n^-t`.
        #[arg(long)]
        t: Option<f64>,
        /// List like `50,100,200,400`.
        #[arg(long)]
        n_grid: Option<String>,
        /// Chains per `n`.
        #[arg(long)]
        replicates: Option<u64>,
    },
    /// Series `n,EX_n,se,partial_sum` of divergences along the backbone.
    Kl {
        #[command(flatten)]
        common: Common,
        /// Depth of the frozen prefix below each backbone vertex.
        #[arg(long)]
        prefix_depth: Option<u64>,
        /// Number of trees.
        #[arg(long)]
        replicates: Option<u64>,
        /// Backbone vertices per tree.
        #[arg(long)]
        n_max: Option<u64>,
        /// Depth of the martingale proxy behind the uniform split.
        #[arg(long)]
        proxy_depth: Option<u64>,
        /// Invasion runs per conditional split.
        #[arg(long)]
        q_replicates: Option<u64>,
    },
    /// Evaluate the absolute-continuity condition: verdict and margin.
    Thm1Check {
        #[command(flatten)]
        common: Common,
        /// Moment order, `inf` allowed.
        #[arg(long)]
        p: Option<String>,
        /// Defaults to `P[Z = 1]` of `--dist`.
        #[arg(long)]
        p1: Option<f64>,
        /// Defaults to the mean of `--dist`.
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Run every acceptance check.
    ValidateAll {
        #[command(flatten)]
        common: Common,
        /// Sample-size multiplier for quick runs.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Run whatever experiment a config file names.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(&'static str, String)> {
    v.as_ref().map(|v| (key, v.to_string()))
}

fn flag(key: &'static str, on: bool) -> Option<(&'static str, String)> {
    on.then(|| (key, "true".to_string()))
}

impl Command {
    fn parts(&self) -> (Option<Experiment>, &Common, Vec<(&'static str, String)>) {
        use Command::*;
        let (e, common, kv) = match self {
            Survival { common, p_grid } => (Experiment::Survival, common, vec![opt("p_grid", p_grid)]),
            Invade { common, steps } => (Experiment::Invade, common, vec![opt("steps", steps)]),
            Backbone { common, steps, depth_cap, tol, closed } => (
                Experiment::Backbone,
                common,
                vec![opt("steps", steps), opt("depth_cap", depth_cap), opt("tol", tol), flag("closed", *closed)],
            ),
            PivotChain { common, n, replicates, joint } => (
                Experiment::PivotChain,
                common,
                vec![opt("n", n), opt("replicates", replicates), flag("joint", *joint)],
            ),
            ExpLimit { common, n, replicates, points, tol } => (
                Experiment::ExpLimit,
                common,
                vec![opt("n", n), opt("replicates", replicates), opt("points", points), opt("tol", tol)],
            ),
            Lpe { common, replicates, t, start, points, tol } => (
                Experiment::Lpe,
                common,
                vec![
                    opt("replicates", replicates),
                    opt("t", t),
                    opt("start", start),
                    opt("points", points),
                    opt("tol", tol),
                ],
            ),
            DualDecay { common, t, n_grid, replicates } => {
                (Experiment::DualDecay, common, vec![opt("t", t), opt("n_grid", n_grid), opt("replicates", replicates)])
            }
            Kl { common, prefix_depth, replicates, n_max, proxy_depth, q_replicates } => (
                Experiment::Kl,
                common,
                vec![
                    opt("prefix_depth", prefix_depth),
                    opt("replicates", replicates),
                    opt("n_max", n_max),
                    opt("proxy_depth", proxy_depth),
                    opt("q_replicates", q_replicates),
                ],
            ),
            Thm1Check { common, p, p1, mu } => {
                (Experiment::Thm1Check, common, vec![opt("p", p), opt("p1", p1), opt("mu", mu)])
            }
            ValidateAll { common, scale } => (Experiment::ValidateAll, common, vec![opt("scale", scale)]),
            Run { common } => return (None, common, Vec::new()),
        };
        (Some(e), common, kv.into_iter().flatten().collect())
    }
}

fn build_config(cmd: &Command) -> Result<ExperimentConfig> {
    let (experiment, common, knobs) = cmd.parts();
    let mut cfg = match &common.config {
        Some(path) => {
            let mut cfg: ExperimentConfig = std::fs::read_to_string(path)?.parse()?;
            if let Some(e) = experiment {
                cfg.experiment = e;
            }
            cfg
        }
        None => match experiment {
            Some(e) => ExperimentConfig::new(e),
            None => return Err(gw_invasion::Error::Config("`run` needs --config FILE".into())),
        },
    };
    if let Some(d) = &common.dist {
        cfg.set("dist", d)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(f) = &common.emit {
        cfg.set("format", f)?;
    }
    if let Some(o) = &common.output {
        cfg.output = Some(o.display().to_string());
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| gw_invasion::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    for (k, v) in knobs {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.command.parts().1.threads;
    let outcome = build_config(&cli.command).and_then(|cfg| {
        let report = run_with_threads(&cfg, threads)?;
        let text = report.render(cfg.format);
        match &cfg.output {
            Some(path) => std::fs::write(path, text)?,
            None => print!("{text}"),
        }
        for v in &report.verdicts {
            eprintln!("{}", v.line());
        }
        eprintln!("wall-clock {:.3} s", report.wall_clock.as_secs_f64());
        Ok(report.all_pass())
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
