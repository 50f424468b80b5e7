//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, lists are written `[a, b, c]`
//! and grids `start:stop:step`. The distribution value is itself a
//! distribution spec, e.g. `dist = family = deterministic, b = 2`; only the
//! first `=` on a line separates key from value.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Survival,
    Invade,
    Backbone,
    PivotChain,
    ExpLimit,
    Lpe,
    DualDecay,
    Kl,
    Thm1Check,
    ValidateAll,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Self::Survival,
        Self::Invade,
        Self::Backbone,
        Self::PivotChain,
        Self::ExpLimit,
        Self::Lpe,
        Self::DualDecay,
        Self::Kl,
        Self::Thm1Check,
        Self::ValidateAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Survival => "survival",
            Self::Invade => "invade",
            Self::Backbone => "backbone",
            Self::PivotChain => "pivot-chain",
            Self::ExpLimit => "exp-limit",
            Self::Lpe => "lpe",
            Self::DualDecay => "dual-decay",
            Self::Kl => "kl",
            Self::Thm1Check => "thm1-check",
            Self::ValidateAll => "validate-all",
        }
    }

    /// Knobs the experiment reads.
    pub fn knobs(self) -> &'static [&'static str] {
        match self {
            Self::Survival => &["p_grid"],
            Self::Invade => &["steps"],
            Self::Backbone => &["closed", "depth_cap", "steps", "tol"],
            Self::PivotChain => &["joint", "n", "replicates"],
            Self::ExpLimit => &["n", "points", "replicates", "tol"],
            Self::Lpe => &["points", "replicates", "start", "t", "tol"],
            Self::DualDecay => &["n_grid", "replicates", "t"],
            Self::Kl => &["depth_cap", "n_max", "prefix_depth", "proxy_depth", "q_replicates", "replicates", "steps"],
            Self::Thm1Check => &["mu", "p", "p1"],
            Self::ValidateAll => &["scale"],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|e| e.name()).collect();
            Error::Config(format!("unknown experiment `{s}`; expected one of {}", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown format `{other}`; expected csv or json"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    PosInt,
    PosFloat,
    /// Positive, `inf` allowed.
    PosExtended,
    Prob,
    Bool,
    Grid,
    IntList,
}

const KNOBS: &[(&str, Kind)] = &[
    ("closed", Kind::Bool),
    ("depth_cap", Kind::PosInt),
    ("joint", Kind::Bool),
    ("mu", Kind::PosFloat),
    ("n", Kind::PosInt),
    ("n_grid", Kind::IntList),
    ("n_max", Kind::PosInt),
    ("p", Kind::PosExtended),
    ("p1", Kind::Prob),
    ("p_grid", Kind::Grid),
    ("points", Kind::PosInt),
    ("prefix_depth", Kind::PosInt),
    ("proxy_depth", Kind::PosInt),
    ("q_replicates", Kind::PosInt),
    ("replicates", Kind::PosInt),
    ("scale", Kind::PosFloat),
    ("start", Kind::PosFloat),
    ("steps", Kind::PosInt),
    ("t", Kind::PosFloat),
    ("tol", Kind::PosFloat),
];

/// Everything needed to rerun an experiment bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub dist: OffspringDistribution,
    pub seed: u64,
    pub format: Format,
    pub output: Option<String>,
    knobs: BTreeMap<&'static str, String>,
}

impl ExperimentConfig {
    /// Defaults: binary tree, seed 1, CSV to stdout.
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            dist: OffspringDistribution::deterministic(2).expect("binary law is valid"),
            seed: 1,
            format: Format::Csv,
            output: None,
            knobs: BTreeMap::new(),
        }
    }

    /// Set one key, validating its value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "experiment" => {
                self.experiment = value.parse()?;
                self.check_knobs()?;
            }
            "dist" => {
                self.dist = value.parse().map_err(|e| Error::Config(format!("dist: {e}")))?;
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed must be an unsigned integer, got `{value}`")))?;
            }
            "format" => self.format = value.parse()?,
            "output" => self.output = (!value.is_empty()).then(|| value.to_string()),
            _ => {
                let Some(&(name, kind)) = KNOBS.iter().find(|(k, _)| *k == key) else {
                    let known: Vec<_> = KNOBS.iter().map(|(k, _)| *k).collect();
                    return Err(Error::Config(format!(
                        "unknown key `{key}`; expected experiment, dist, seed, format, output or one of {}",
                        known.join(", ")
                    )));
                };
                check(name, kind, value)?;
                if !self.experiment.knobs().contains(&name) {
                    return Err(self.misplaced(name));
                }
                self.knobs.insert(name, value.to_string());
            }
        }
        Ok(())
    }

    /// Every set knob must be one the experiment reads.
    pub fn check_knobs(&self) -> Result<()> {
        let used = self.experiment.knobs();
        match self.knobs.keys().find(|k| !used.contains(k)) {
            Some(k) => Err(self.misplaced(k)),
            None => Ok(()),
        }
    }

    fn misplaced(&self, key: &str) -> Error {
        Error::Config(format!(
            "`{key}` does not apply to {}; it takes {}",
            self.experiment,
            self.experiment.knobs().join(", ")
        ))
    }

    /// Explicitly set knobs, in key order.
    pub fn knobs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.knobs.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub(crate) fn raw(&self, key: &str) -> Option<&str> {
        self.knobs.get(key).map(String::as_str)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "experiment = {}\ndist = {}\nseed = {}\nformat = {}\n",
            self.experiment, self.dist, self.seed, self.format
        );
        if let Some(o) = &self.output {
            out.push_str(&format!("output = {o}\n"));
        }
        for (k, v) in &self.knobs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    /// The `experiment` key is required; everything else has defaults.
    fn from_str(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            lines.push((i + 1, k.trim(), v.trim()));
        }
        let exp = lines
            .iter()
            .find(|(_, k, _)| *k == "experiment")
            .ok_or_else(|| Error::Config("missing `experiment = ...` line".into()))?;
        let mut cfg = ExperimentConfig::new(exp.2.parse()?);
        for (line, k, v) in lines {
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        Ok(cfg)
    }
}

fn check(name: &str, kind: Kind, v: &str) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("{name} must be {what}, got `{v}`"));
    match kind {
        Kind::PosInt => match v.parse::<u64>() {
            Ok(x) if x > 0 => Ok(()),
            _ => Err(bad("a positive integer")),
        },
        Kind::PosFloat => match v.parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => Ok(()),
            _ => Err(bad("a positive number")),
        },
        Kind::PosExtended => match parse_extended(v) {
            Some(x) if x > 0.0 => Ok(()),
            _ => Err(bad("a positive number or inf")),
        },
        Kind::Prob => match v.parse::<f64>() {
            Ok(x) if (0.0..1.0).contains(&x) => Ok(()),
            _ => Err(bad("a probability in [0, 1)")),
        },
        Kind::Bool => parse_bool(v).map(|_| ()).ok_or_else(|| bad("true or false")),
        Kind::Grid => parse_grid(v).map(|_| ()).ok_or_else(|| bad("a grid start:stop:step with step > 0")),
        Kind::IntList => match parse_list(v) {
            Some(l) if !l.is_empty() && l.iter().all(|&x| x > 0) => Ok(()),
            _ => Err(bad("a nonempty list of positive integers like [50, 100]")),
        },
    }
}

pub(crate) fn parse_extended(v: &str) -> Option<f64> {
    match v {
        "inf" | "infinity" | "Inf" => Some(f64::INFINITY),
        _ => v.parse::<f64>().ok().filter(|x| !x.is_nan()),
    }
}

pub(crate) fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_grid(v: &str) -> Option<Vec<f64>> {
    let parts: Vec<f64> = v.split(':').map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().ok()?;
    let [a, b, step] = parts[..] else { return None };
    if !(step > 0.0) || !(a <= b) || !a.is_finite() || !b.is_finite() {
        return None;
    }
    let count = ((b - a) / step + 1e-9).floor() as usize;
    (count < 10_000_000).then(|| (0..=count).map(|i| a + i as f64 * step).collect())
}

pub(crate) fn parse_list(v: &str) -> Option<Vec<usize>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    inner.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse::<usize>().ok()).collect()
}
