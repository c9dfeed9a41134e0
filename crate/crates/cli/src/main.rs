//! `textloc` command-line front end.
//!
//! Settings resolve as built-in defaults, then `--config`, then flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use textloc::eval::{self, train_textmap, RunInputs, SweepSpec};
use textloc::integration::SeedLocations;
use textloc::simulator::generate_scenario_with;
use textloc::{Config, Method, OccupancyGrid, ScenarioKind, SequenceLog, TextLikelihoodMap};

#[derive(Parser)]
#[command(name = "textloc", version, about = "Monte Carlo localization with text-cue particle injection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` settings applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    particles: Option<usize>,
    /// Strategy name (none, inject_first, sm2, ...) or `odometry`.
    #[arg(long, global = true)]
    strategy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario: world config, base map, training and evaluation logs.
    Simulate {
        /// corridor_closed, office_static or office_dynamic.
        scenario: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write the hand-picked seed locations to this file.
        #[arg(long)]
        seeds_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Learn a text map from a training log.
    BuildTextmap {
        log: PathBuf,
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Replay one log through the filter.
    Localize {
        log: PathBuf,
        map: PathBuf,
        #[arg(long)]
        textmap: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// Trajectory output, one `<t> EST <x> <y> <theta>` line per correction.
        #[arg(long)]
        out: PathBuf,
        /// Report output; printed to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a benchmark matrix and write per-run CSV, aggregates and plot data.
    Benchmark {
        /// Matrix file; defaults cover the corridor sweep.
        matrix: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Leave the wall-clock columns empty so output is byte-reproducible.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse::<Method>().map_err(|e| anyhow::anyhow!("{e}"))
}

/// Defaults, then the config file, then flags. Returns the method implied by
/// `--strategy`, if given.
fn resolve(common: &Common, extra: &[(usize, String, String)]) -> Result<(Config, Option<Method>)> {
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for (line, k, v) in extra {
        cfg.set(k, v).map_err(|msg| anyhow::anyhow!("matrix line {line}: {msg}"))?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.particles {
        cfg.filter.particles = n;
    }
    let method = common.strategy.as_deref().map(parse_method).transpose()?;
    if let Some(Method::Filter(mode)) = method {
        cfg.strategy.mode = mode;
    }
    cfg.validate()?;
    Ok((cfg, method))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn simulate(scenario: &str, out: &Path, seeds_out: Option<&Path>, common: &Common) -> Result<()> {
    let kind: ScenarioKind = scenario.parse()?;
    let (cfg, _) = resolve(common, &[])?;
    let s = generate_scenario_with(kind, cfg.seed, cfg.sim)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    s.save_config(out.join("world.cfg"))?;
    s.base_map().save(out.join("map.gridmap"))?;
    s.training_log.save(out.join("train.seqlog"))?;
    s.eval_log.save(out.join("eval.seqlog"))?;
    if let Some(p) = seeds_out {
        s.seeds.save(p)?;
    }
    println!(
        "{kind} seed {}: {} training and {} evaluation records written to {}",
        cfg.seed,
        s.training_log.len(),
        s.eval_log.len(),
        out.display()
    );
    Ok(())
}

fn build_textmap(log: &Path, map: &Path, out: &Path, common: &Common) -> Result<()> {
    let (cfg, _) = resolve(common, &[])?;
    let log = SequenceLog::load(log)?;
    // the map is read to reject mismatched inputs early
    OccupancyGrid::load(map)?;
    let textmap = match train_textmap(&log, &cfg) {
        Err(e @ eval::EvalError::NoDetections) => bail!("{e}; record a longer training run"),
        other => other?,
    };
    textmap.save(out)?;
    println!("{} tag regions written to {}", textmap.len(), out.display());
    Ok(())
}

struct LocalizeArgs<'a> {
    log: &'a Path,
    map: &'a Path,
    textmap: Option<&'a Path>,
    seeds: Option<&'a Path>,
    out: &'a Path,
    report: Option<&'a Path>,
}

fn localize(a: LocalizeArgs<'_>, common: &Common) -> Result<()> {
    let (cfg, method) = resolve(common, &[])?;
    let method = method.unwrap_or(Method::Filter(cfg.strategy.mode));
    let log = SequenceLog::load(a.log)?;
    let map = OccupancyGrid::load(a.map)?;
    let textmap = a.textmap.map(TextLikelihoodMap::load).transpose()?;
    let seeds = a.seeds.map(SeedLocations::load).transpose()?;
    let name = a.log.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    let inputs = RunInputs {
        scenario: name,
        log: &log,
        map: &map,
        textmap: textmap.as_ref(),
        seeds: seeds.as_ref(),
    };
    let out = eval::run(inputs, method, &cfg, cfg.seed)?;
    let mut traj = String::new();
    for (t, p) in &out.trajectory {
        let _ = writeln!(traj, "{t:.3} EST {:.6} {:.6} {:.6}", p.x, p.y, p.theta);
    }
    write(a.out, &traj)?;
    match a.report {
        Some(p) => write(p, &out.report.to_text())?,
        None => print!("{}", out.report.to_text()),
    }
    Ok(())
}

fn benchmark(matrix: Option<&Path>, out: &Path, no_timing: bool, common: &Common) -> Result<()> {
    let (mut spec, rest) = match matrix {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read matrix {}", p.display()))?;
            SweepSpec::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => (SweepSpec::default(), Vec::new()),
    };
    let (cfg, method) = resolve(common, &rest)?;
    if let Some(m) = method {
        spec.methods = vec![m];
    }
    if let Some(n) = common.particles {
        spec.particles = vec![n];
    }
    if let Some(s) = common.seed {
        spec.seeds = vec![s];
    }
    if no_timing {
        spec.timing = false;
    }
    let result = textloc::sweep(&spec, &cfg)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(&out.join("results.csv"), &result.csv())?;
    write(&out.join("aggregate.csv"), &result.aggregate_csv())?;
    write(&out.join("plot.dat"), &result.plot_data())?;
    print!("{}", result.aggregate_csv());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, out, seeds_out, common } => simulate(&scenario, &out, seeds_out.as_deref(), &common),
        Command::BuildTextmap { log, map, out, common } => build_textmap(&log, &map, &out, &common),
        Command::Localize { log, map, textmap, seeds, out, report, common } => localize(
            LocalizeArgs {
                log: &log,
                map: &map,
                textmap: textmap.as_deref(),
                seeds: seeds.as_deref(),
                out: &out,
                report: report.as_deref(),
            },
            &common,
        ),
        Command::Benchmark { matrix, out, no_timing, common } => benchmark(matrix.as_deref(), &out, no_timing, &common),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
