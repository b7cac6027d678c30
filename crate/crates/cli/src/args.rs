use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use spinbench::instances::InstanceClass;
use spinbench::resilience::NoiseSpec;
use spinbench::solver::{Engine, SolverParams};
use spinbench::topology::{build_chimera_rect, Graph};

#[derive(Debug, Parser)]
#[command(name = "spinbench", version, about = "Chimera spin-glass benchmark toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded disorder realizations as instance files plus a manifest.
    Generate(GenerateArgs),
    /// Find ground states of instance files.
    Solve(SolveArgs),
    /// Resilience of unique ground states to quenched noise.
    Resilience(ResilienceArgs),
    /// Yield of unique ground states for freshly generated instances.
    Yield(YieldArgs),
    /// Mine for unique instances, then measure their resilience.
    Mine(MineArgs),
    /// Aggregate results files into tables.
    Report(ReportArgs),
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Generate(_) => "generate",
            Self::Solve(_) => "solve",
            Self::Resilience(_) => "resilience",
            Self::Yield(_) => "yield",
            Self::Mine(_) => "mine",
            Self::Report(_) => "report",
        }
    }
}

/// Flags shared by every command that runs experiments.
#[derive(Debug, Clone, Args, Serialize)]
pub struct RunOpts {
    /// Master seed; every random stream is derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Results file; defaults to `<kind>.jsonl` under $SPINBENCH_OUT, else stdout.
    #[arg(long, short)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Add wall-clock times to records (outputs are then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineChoice {
    /// Exhaustive enumeration (at most 32 spins).
    Oracle,
    /// Parallel tempering with cluster moves.
    PtIcm,
    /// The oracle up to 32 spins, parallel tempering beyond.
    Auto,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverOpts {
    #[arg(long, value_enum, default_value_t = EngineChoice::Auto)]
    pub engine: EngineChoice,
    /// File of `key = value` solver parameters applied over the class defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep budget as a power of two.
    #[arg(long)]
    pub b: Option<u32>,
    /// Extra `key=value` solver parameter; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Contents of `config`, captured for the results header.
    #[arg(skip)]
    pub config_text: Option<String>,
}

impl SolverOpts {
    /// Read the config file once so later lookups cannot fail or drift.
    pub fn load(&mut self) -> Result<()> {
        if let Some(path) = &self.config {
            self.config_text =
                Some(std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?);
        }
        self.params(InstanceClass::U1).map(|_| ())
    }

    pub fn params(&self, class: InstanceClass) -> Result<SolverParams> {
        let mut p = SolverParams::table_one(class);
        if let Some(text) = &self.config_text {
            p.apply_config(text).context("in solver config")?;
        }
        if let Some(b) = self.b {
            p.set("b", &b.to_string())?;
        }
        for kv in &self.sets {
            let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got '{kv}'") };
            p.set(k.trim(), v.trim())?;
        }
        p.validate()?;
        Ok(p)
    }

    /// Engine for `class` whose heuristic runs are seeded with `seed`.
    pub fn engine(&self, class: Option<InstanceClass>, seed: u64) -> Result<Engine> {
        let params = || -> Result<SolverParams> {
            Ok(self.params(class.unwrap_or(InstanceClass::U4))?.with_seed(seed))
        };
        Ok(match self.engine {
            EngineChoice::Oracle => Engine::Oracle,
            EngineChoice::PtIcm => Engine::Heuristic(params()?),
            EngineChoice::Auto => Engine::Auto(params()?),
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TopologyOpts {
    /// Chimera cells per side.
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// Columns of cells, for a rectangular m x cols graph.
    #[arg(long)]
    pub cols: Option<usize>,
}

impl TopologyOpts {
    pub fn graph(&self) -> Result<Graph> {
        Ok(build_chimera_rect(self.m, self.cols.unwrap_or(self.m))?)
    }
}

fn parse_class(s: &str) -> std::result::Result<InstanceClass, String> {
    s.parse().map_err(|e: spinbench::error::Error| e.to_string())
}

/// Classes from a list where `all` expands to every class.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassOpts {
    /// Instance class (U1, U4, U567, S28 or all); repeatable.
    #[arg(long = "class", required = true, value_name = "CLASS")]
    pub classes: Vec<String>,
}

impl ClassOpts {
    pub fn resolve(&self) -> Result<Vec<InstanceClass>> {
        let mut out = Vec::new();
        for c in &self.classes {
            if c.eq_ignore_ascii_case("all") {
                out.extend(InstanceClass::ALL);
            } else {
                out.push(parse_class(c).map_err(anyhow::Error::msg)?);
            }
        }
        out.dedup();
        Ok(out)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NoiseOpts {
    /// Coupler noise widths (comma separated).
    #[arg(long = "delta-j", value_delimiter = ',')]
    pub delta_j: Vec<f64>,
    /// Field noise widths (comma separated); combined with every coupler width.
    #[arg(long = "delta-h", value_delimiter = ',')]
    pub delta_h: Vec<f64>,
    /// Named noise point (dw2, dw2x); repeatable.
    #[arg(long)]
    pub preset: Vec<String>,
    #[arg(long, default_value_t = spinbench::resilience::DEFAULT_TRIALS)]
    pub trials: usize,
}

impl NoiseOpts {
    /// Noise points in command-line order, all sharing one trial seed base.
    pub fn points(&self, seed_base: u64) -> Result<Vec<NoiseSpec>> {
        let mut points = Vec::new();
        if !self.delta_j.is_empty() || !self.delta_h.is_empty() {
            let js = if self.delta_j.is_empty() { vec![0.0] } else { self.delta_j.clone() };
            let hs = if self.delta_h.is_empty() { vec![0.0] } else { self.delta_h.clone() };
            for &j in &js {
                for &h in &hs {
                    points.push(NoiseSpec::new(j, h));
                }
            }
        }
        for p in &self.preset {
            points.push(NoiseSpec::preset(p)?);
        }
        if points.is_empty() {
            bail!("no noise points: give --delta-j, --delta-h or --preset");
        }
        let points: Vec<NoiseSpec> =
            points.into_iter().map(|p| p.with_trials(self.trials).with_seed_base(seed_base)).collect();
        for p in &points {
            p.validate()?;
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ladder {
    /// Levels spaced by the class gap above the ground energy.
    Uniform,
    /// The populated levels of the exact spectrum (oracle sizes only).
    Populated,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub class: ClassOpts,
    #[command(flatten)]
    pub topology: TopologyOpts,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to `instances` under $SPINBENCH_OUT.
    #[arg(long, short)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    /// Instance files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ResilienceArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseOpts,
    /// Relaxed-resilience levels to report (comma separated).
    #[arg(long = "k", value_delimiter = ',', default_value = "0,1,2")]
    pub ks: Vec<i64>,
    #[arg(long, value_enum, default_value_t = Ladder::Uniform)]
    pub ladder: Ladder,
    /// Also write the per-noise-point class averages as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct YieldArgs {
    #[command(flatten)]
    pub class: ClassOpts,
    #[command(flatten)]
    pub topology: TopologyOpts,
    #[arg(long, default_value_t = 100)]
    pub count: u64,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MineArgs {
    #[command(flatten)]
    pub class: ClassOpts,
    #[command(flatten)]
    pub topology: TopologyOpts,
    #[arg(long, default_value_t = 100)]
    pub count: u64,
    /// Keep instances with at most this many first excited configurations.
    #[arg(long = "max-n1")]
    pub max_n1: Option<u64>,
    /// Also keep instances with degenerate ground states (they get no resilience).
    #[arg(long)]
    pub allow_degenerate: bool,
    #[command(flatten)]
    pub noise: NoiseOpts,
    /// Write the selected instances and a manifest to this directory.
    #[arg(long)]
    #[serde(skip)]
    pub export: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Results files of one kind.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Directory for CSV tables.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Summary destination (default stdout).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Resolve an output path: explicit, then `$SPINBENCH_OUT/<name>`, else none.
pub fn default_path(explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| std::env::var_os(crate::OUT_ENV).map(|d| Path::new(&d).join(name)))
}
