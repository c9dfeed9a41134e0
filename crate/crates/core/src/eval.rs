//! Log replay through filter variants, trajectory metrics and sweeps.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{key_values, Config, ConfigError};
use crate::filter::{FilterError, ParticleSet};
use crate::geometry::angle_diff;
use crate::gridmap::{compute_edt, OccupancyGrid};
use crate::integration::{
    DetectionAction, IntegrationError, SeedLocations, StrategyMode, TextDetectionEvent, TextIntegrator,
};
use crate::motion::Pose;
use crate::sensor::{BeamEndModel, Scan, SensorError};
use crate::seqlog::{Record, SequenceLog};
use crate::simulator::{generate_scenario_with, ScenarioKind, SimError};
use crate::textmap::{HistogramSet, TextLikelihoodMap, TextMapError};

/// Convergence radius, metres.
pub const CONVERGENCE_RADIUS: f64 = 0.5;
/// Convergence must happen within this fraction of the sequence.
pub const CONVERGENCE_CUTOFF: f64 = 0.95;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("training log has no text detections; record a longer training run")]
    NoDetections,
    #[error("text map is empty at tau = {0}; lower tau or record a longer training run")]
    EmptyTextMap(f64),
    #[error("benchmark matrix line {line}: {msg}")]
    Matrix { line: usize, msg: String },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    TextMap(#[from] TextMapError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// What is run over a log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Uniform initialization, prediction only.
    Odometry,
    Filter(StrategyMode),
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Odometry,
        Method::Filter(StrategyMode::None),
        Method::Filter(StrategyMode::InjectFirst),
        Method::Filter(StrategyMode::InjectRepeat),
        Method::Filter(StrategyMode::InjectConservative),
        Method::Filter(StrategyMode::SeedLocations),
        Method::Filter(StrategyMode::Sm1),
        Method::Filter(StrategyMode::Sm2),
    ];
    pub const MCL: Method = Method::Filter(StrategyMode::None);
    pub const MCL_TEXT: Method = Method::Filter(StrategyMode::InjectFirst);

    pub fn id(self) -> &'static str {
        match self {
            Method::Odometry => "odometry",
            Method::Filter(StrategyMode::None) => "mcl",
            Method::Filter(StrategyMode::InjectFirst) => "mcl_text",
            Method::Filter(m) => m.name(),
        }
    }

    pub fn needs_textmap(self) -> bool {
        matches!(self, Method::Filter(m) if m.needs_textmap())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    /// Accepts method ids and strategy names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(m) = Method::ALL.into_iter().find(|m| m.id() == s) {
            return Ok(m);
        }
        s.parse::<StrategyMode>()
            .map(Method::Filter)
            .map_err(|_| EvalError::UnknownMethod(s.to_string()))
    }
}

/// Ground truth at `t`: linear in position, shortest arc in heading, clamped
/// at the ends. `gt` must be sorted by time.
pub fn interpolate(gt: &[(f64, Pose)], t: f64) -> Option<Pose> {
    let (first, last) = (gt.first()?, gt.last()?);
    if t <= first.0 {
        return Some(first.1);
    }
    if t >= last.0 {
        return Some(last.1);
    }
    let k = gt.partition_point(|(tg, _)| *tg <= t);
    let (t0, a) = gt[k - 1];
    let (t1, b) = gt[k];
    if t1 == t0 {
        return Some(b);
    }
    let f = (t - t0) / (t1 - t0);
    Some(Pose::new(
        a.x + f * (b.x - a.x),
        a.y + f * (b.y - a.y),
        a.theta + f * angle_diff(b.theta, a.theta),
    ))
}

fn errors(est: &[(f64, Pose)], gt: &[(f64, Pose)]) -> Result<Vec<(f64, f64, f64)>, EvalError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    Ok(est
        .iter()
        .map(|(t, e)| {
            let g = interpolate(gt, *t).expect("non-empty");
            let trans = e.position().distance(g.position());
            (*t, trans, angle_diff(e.theta, g.theta).abs())
        })
        .collect())
}

/// First estimate time, relative to the start of `gt`, whose translational
/// error is within `radius`. `None` if that is later than `cutoff` of the
/// sequence duration or never happens.
pub fn convergence_time(
    est: &[(f64, Pose)],
    gt: &[(f64, Pose)],
    radius: f64,
    cutoff: f64,
) -> Result<Option<f64>, EvalError> {
    let errs = errors(est, gt)?;
    let t0 = gt[0].0;
    let duration = gt[gt.len() - 1].0 - t0;
    Ok(errs
        .iter()
        .find(|(_, e, _)| *e <= radius)
        .map(|(t, _, _)| t - t0)
        .filter(|t| *t <= cutoff * duration))
}

/// Mean (angular, translational) error over estimates at or after `t_conv`
/// (relative to the start of `gt`). Angular errors are wrapped to `[0, pi]`.
pub fn ate_after_convergence(est: &[(f64, Pose)], gt: &[(f64, Pose)], t_conv: f64) -> Result<(f64, f64), EvalError> {
    let t0 = gt.first().ok_or(EvalError::EmptyTrajectory)?.0;
    let errs = errors(est, gt)?;
    let after: Vec<_> = errs.iter().filter(|(t, _, _)| t - t0 >= t_conv).collect();
    if after.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let n = after.len() as f64;
    let ang = after.iter().map(|e| e.2).sum::<f64>() / n;
    let trans = after.iter().map(|e| e.1).sum::<f64>() / n;
    Ok((ang, trans))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ate {
    pub trans: f64,
    pub ang: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub particles: usize,
    pub converged: bool,
    pub convergence_time: Option<f64>,
    /// Present iff converged.
    pub ate: Option<Ate>,
    /// Mean translational error over every estimate of the run.
    pub mean_error_all: f64,
    pub duration: f64,
    pub corrections: usize,
    pub degeneracies: usize,
    pub injections: usize,
    pub mean_correct_ms: f64,
    pub max_correct_ms: f64,
}

pub const CSV_HEADER: &str =
    "scenario,method,particles,seed,converged,t_conv_s,ate_trans_m,ate_ang_rad,mean_correct_ms,max_correct_ms";

impl RunReport {
    /// Post-convergence translational ATE, or the whole-run mean error for a
    /// run that never converged. Used to compare methods across seeds.
    pub fn penalized_ate(&self) -> f64 {
        self.ate.map_or(self.mean_error_all, |a| a.trans)
    }

    /// One CSV row. With `timing` off the wall-clock columns are left empty
    /// so that reruns are byte-identical.
    pub fn csv_row(&self, timing: bool) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or(String::new(), |v| format!("{v:.prec$}"));
        let (mean_ms, max_ms) = if timing {
            (format!("{:.4}", self.mean_correct_ms), format!("{:.4}", self.max_correct_ms))
        } else {
            (String::new(), String::new())
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.method,
            self.particles,
            self.seed,
            self.converged,
            opt(self.convergence_time, 2),
            opt(self.ate.map(|a| a.trans), 4),
            opt(self.ate.map(|a| a.ang), 4),
            mean_ms,
            max_ms
        )
    }

    /// Human-readable `key = value` summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario = {}", self.scenario);
        let _ = writeln!(out, "method = {}", self.method);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "particles = {}", self.particles);
        let _ = writeln!(out, "converged = {}", self.converged);
        if let Some(t) = self.convergence_time {
            let _ = writeln!(out, "t_conv_s = {t:.2}");
        }
        if let Some(a) = self.ate {
            let _ = writeln!(out, "ate_trans_m = {:.4}", a.trans);
            let _ = writeln!(out, "ate_ang_rad = {:.4}", a.ang);
        }
        let _ = writeln!(out, "mean_error_all_m = {:.4}", self.mean_error_all);
        let _ = writeln!(out, "duration_s = {:.2}", self.duration);
        let _ = writeln!(out, "corrections = {}", self.corrections);
        let _ = writeln!(out, "degeneracies = {}", self.degeneracies);
        let _ = writeln!(out, "injections = {}", self.injections);
        let _ = writeln!(out, "mean_correct_ms = {:.4}", self.mean_correct_ms);
        let _ = writeln!(out, "max_correct_ms = {:.4}", self.max_correct_ms);
        out
    }
}

/// Everything a run reads.
#[derive(Debug, Clone, Copy)]
pub struct RunInputs<'a> {
    pub scenario: &'a str,
    pub log: &'a SequenceLog,
    pub map: &'a OccupancyGrid,
    pub textmap: Option<&'a TextLikelihoodMap>,
    pub seeds: Option<&'a SeedLocations>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Estimate after every correction (gate instant for odometry).
    pub trajectory: Vec<(f64, Pose)>,
}

/// Random stream for the filter, independent of the simulator's.
pub fn filter_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100);
    rng
}

/// Replays `inputs.log`: predict on ODOM, gated correction on SCAN, detection
/// handling on TEXT.
pub fn run(inputs: RunInputs<'_>, method: Method, cfg: &Config, seed: u64) -> Result<RunOutput, EvalError> {
    let p = &cfg.filter;
    let mut rng = filter_rng(seed);
    let dfield = compute_edt(inputs.map, p.r_max);
    let model = BeamEndModel::new(p.sigma_obs, p.beam_stride)?;
    let mut set = ParticleSet::init_uniform(p.particles, inputs.map, &mut rng)?;
    let mut integrator = match method {
        Method::Odometry => None,
        Method::Filter(mode) => {
            let mut s = cfg.strategy;
            s.mode = mode;
            Some(TextIntegrator::new(s, inputs.textmap.cloned(), inputs.seeds.cloned())?)
        }
    };

    let mut trajectory = Vec::new();
    let mut times_ms = Vec::new();
    let (mut degeneracies, mut injections) = (0, 0);
    for record in inputs.log.records() {
        match record {
            Record::Odom { delta, .. } => set.predict(delta, &p.sigma_odom, &mut rng),
            Record::Scan { t, ranges } => {
                if !set.should_correct(p.d_xy, p.d_theta) {
                    continue;
                }
                let Some(integ) = integrator.as_mut() else {
                    set.reset_motion();
                    trajectory.push((*t, set.estimate_pose()));
                    continue;
                };
                let scan = Scan::panoramic(*t, ranges, p.max_range);
                if scan.valid_count() == 0 {
                    continue;
                }
                let factor = integ.take_factor(*t);
                let start = Instant::now();
                let outcome = set.correct_with(&scan, &dfield, &model, |pose| factor.as_ref().map_or(1.0, |f| f.eval(pose)), &mut rng)?;
                times_ms.push(start.elapsed().as_secs_f64() * 1e3);
                degeneracies += outcome.degenerate as usize;
                trajectory.push((*t, set.estimate_pose()));
            }
            Record::Text { t, tag, camera } => {
                if let Some(integ) = integrator.as_mut() {
                    let event = TextDetectionEvent {
                        tag: tag.clone(),
                        camera_id: *camera,
                        timestamp: *t,
                    };
                    if let DetectionAction::Injected(_) = integ.handle_detection(&mut set, &event, &mut rng)? {
                        injections += 1;
                    }
                }
            }
            Record::GroundTruth { .. } => {}
        }
    }

    let gt = inputs.log.ground_truth();
    let duration = gt.last().map_or(0.0, |l| l.0) - gt.first().map_or(0.0, |f| f.0);
    let (convergence_time, ate, mean_error_all) = if trajectory.is_empty() || gt.is_empty() {
        (None, None, f64::INFINITY)
    } else {
        let t_conv = convergence_time(&trajectory, &gt, CONVERGENCE_RADIUS, CONVERGENCE_CUTOFF)?;
        let ate = match t_conv {
            Some(tc) => {
                let (ang, trans) = ate_after_convergence(&trajectory, &gt, tc)?;
                Some(Ate { trans, ang })
            }
            None => None,
        };
        let all = errors(&trajectory, &gt)?;
        let mean_all = all.iter().map(|e| e.1).sum::<f64>() / all.len() as f64;
        (t_conv, ate, mean_all)
    };
    let corrections = times_ms.len();
    let mean_correct_ms = if corrections > 0 { times_ms.iter().sum::<f64>() / corrections as f64 } else { 0.0 };
    let max_correct_ms = times_ms.iter().copied().fold(0.0, f64::max);
    Ok(RunOutput {
        report: RunReport {
            scenario: inputs.scenario.to_string(),
            method,
            seed,
            particles: p.particles,
            converged: convergence_time.is_some(),
            convergence_time,
            ate,
            mean_error_all,
            duration,
            corrections,
            degeneracies,
            injections,
            mean_correct_ms,
            max_correct_ms,
        },
        trajectory,
    })
}

/// Learns a text map from a training log.
pub fn train_textmap(log: &SequenceLog, cfg: &Config) -> Result<TextLikelihoodMap, EvalError> {
    let mut hist = HistogramSet::new(cfg.cell_size)?;
    if hist.accumulate_log(log, cfg.sim.camera_period)? == 0 {
        return Err(EvalError::NoDetections);
    }
    let map = hist.build(cfg.tau);
    if map.is_empty() {
        return Err(EvalError::EmptyTextMap(cfg.tau));
    }
    Ok(map)
}

/// A generated scenario with its learned text map, ready to replay.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub map: OccupancyGrid,
    pub log: SequenceLog,
    pub textmap: TextLikelihoodMap,
    pub seeds: SeedLocations,
}

impl PreparedScenario {
    pub fn generate(kind: ScenarioKind, seed: u64, cfg: &Config) -> Result<Self, EvalError> {
        let s = generate_scenario_with(kind, seed, cfg.sim)?;
        let textmap = train_textmap(&s.training_log, cfg)?;
        Ok(Self {
            kind,
            seed,
            map: s.world.base,
            log: s.eval_log,
            textmap,
            seeds: s.seeds,
        })
    }

    pub fn inputs(&self) -> RunInputs<'_> {
        RunInputs {
            scenario: self.kind.name(),
            log: &self.log,
            map: &self.map,
            textmap: Some(&self.textmap),
            seeds: Some(&self.seeds),
        }
    }

    pub fn run(&self, method: Method, cfg: &Config) -> Result<RunOutput, EvalError> {
        run(self.inputs(), method, cfg, self.seed)
    }
}

/// A `key = value` config line with its 1-based line number.
pub type Setting = (usize, String, String);

/// The benchmark cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub scenarios: Vec<ScenarioKind>,
    pub methods: Vec<Method>,
    pub particles: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Emit wall-clock columns; off for byte-reproducible output.
    pub timing: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            scenarios: vec![ScenarioKind::CorridorClosed],
            methods: vec![Method::MCL, Method::MCL_TEXT],
            particles: vec![300, 500, 1000, 10000],
            seeds: (0..10).collect(),
            timing: true,
        }
    }
}

impl SweepSpec {
    /// Parses a matrix file: `scenarios`, `methods`, `particles`, `seeds`
    /// (comma or space separated lists; seeds may be a range `a..b`) and
    /// `timing = true|false`. Other lines are config settings that apply to
    /// every run and are returned as pairs.
    pub fn parse(text: &str) -> Result<(Self, Vec<Setting>), EvalError> {
        let mut spec = SweepSpec::default();
        let mut rest = Vec::new();
        for kv in key_values(text) {
            let (line, key, value) = kv?;
            let err = |msg: String| EvalError::Matrix { line, msg };
            let items: Vec<&str> = value.split([',', ' ']).filter(|s| !s.is_empty()).collect();
            match key {
                "scenarios" => {
                    spec.scenarios = items.iter().map(|s| s.parse()).collect::<Result<_, SimError>>().map_err(|e| err(e.to_string()))?
                }
                "methods" => spec.methods = items.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|e: EvalError| err(e.to_string()))?,
                "particles" => {
                    spec.particles = items
                        .iter()
                        .map(|s| s.parse::<usize>().ok().filter(|n| *n > 0))
                        .collect::<Option<_>>()
                        .ok_or_else(|| err(format!("bad particle counts {value:?}")))?
                }
                "seeds" => spec.seeds = parse_seeds(&items).ok_or_else(|| err(format!("bad seeds {value:?}")))?,
                "timing" => {
                    spec.timing = value.parse().map_err(|_| err(format!("timing must be true or false, got {value:?}")))?
                }
                _ => rest.push((line, key.to_string(), value.to_string())),
            }
        }
        for (name, empty) in [
            ("scenarios", spec.scenarios.is_empty()),
            ("methods", spec.methods.is_empty()),
            ("particles", spec.particles.is_empty()),
            ("seeds", spec.seeds.is_empty()),
        ] {
            if empty {
                return Err(EvalError::Matrix { line: 0, msg: format!("{name} list is empty") });
            }
        }
        Ok((spec, rest))
    }
}

fn parse_seeds(items: &[&str]) -> Option<Vec<u64>> {
    let mut out = Vec::new();
    for s in items {
        if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (a.parse::<u64>().ok()?, b.parse::<u64>().ok()?);
            out.extend(a..b);
        } else {
            out.push(s.parse().ok()?);
        }
    }
    Some(out)
}

/// Per-cell aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub method: Method,
    pub particles: usize,
    pub runs: usize,
    pub failures: usize,
    /// Mean ATE over converged runs, if any converged.
    pub mean_ate_trans: Option<f64>,
    /// Mean of [`RunReport::penalized_ate`] over every run.
    pub mean_penalized_ate: f64,
    pub mean_correct_ms: f64,
}

impl Aggregate {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.runs as f64
    }
}

pub fn aggregate(reports: &[RunReport]) -> Vec<Aggregate> {
    let mut cells: BTreeMap<(String, Method, usize), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        cells.entry((r.scenario.clone(), r.method, r.particles)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((scenario, method, particles), rs)| {
            let n = rs.len() as f64;
            let ates: Vec<f64> = rs.iter().filter_map(|r| r.ate.map(|a| a.trans)).collect();
            Aggregate {
                scenario,
                method,
                particles,
                runs: rs.len(),
                failures: rs.iter().filter(|r| !r.converged).count(),
                mean_ate_trans: (!ates.is_empty()).then(|| ates.iter().sum::<f64>() / ates.len() as f64),
                mean_penalized_ate: rs.iter().map(|r| r.penalized_ate()).sum::<f64>() / n,
                mean_correct_ms: rs.iter().map(|r| r.mean_correct_ms).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub reports: Vec<RunReport>,
}

impl SweepResult {
    pub fn csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.reports {
            out.push_str(&self.row(r));
            out.push('\n');
        }
        out
    }

    pub fn row(&self, r: &RunReport) -> String {
        r.csv_row(self.spec.timing)
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        aggregate(&self.reports)
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("scenario,method,particles,runs,failures,failure_rate,mean_ate_trans_m,mean_penalized_ate_m\n");
        for a in self.aggregates() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3},{},{:.4}",
                a.scenario,
                a.method,
                a.particles,
                a.runs,
                a.failures,
                a.failure_rate(),
                a.mean_ate_trans.map_or(String::new(), |v| format!("{v:.4}")),
                a.mean_penalized_ate
            );
        }
        out
    }

    /// One block per scenario: particle count, then the penalized mean ATE of
    /// each method in column order. Blocks are separated by two blank lines.
    pub fn plot_data(&self) -> String {
        let aggs = self.aggregates();
        let mut out = String::new();
        for s in &self.spec.scenarios {
            let _ = write!(out, "# {s}\n# particles");
            for m in &self.spec.methods {
                let _ = write!(out, " {m}");
            }
            out.push('\n');
            for &n in &self.spec.particles {
                let _ = write!(out, "{n}");
                for m in &self.spec.methods {
                    let v = aggs
                        .iter()
                        .find(|a| a.scenario == s.name() && a.method == *m && a.particles == n)
                        .map_or(f64::NAN, |a| a.mean_penalized_ate);
                    let _ = write!(out, " {v:.4}");
                }
                out.push('\n');
            }
            out.push_str("\n\n");
        }
        out
    }
}

/// Runs the full cross product. Rows are ordered by scenario, method,
/// particle count, then seed.
pub fn sweep(spec: &SweepSpec, cfg: &Config) -> Result<SweepResult, EvalError> {
    let mut reports = Vec::new();
    for &kind in &spec.scenarios {
        let prepared = spec
            .seeds
            .iter()
            .map(|&s| PreparedScenario::generate(kind, s, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        for &method in &spec.methods {
            for &n in &spec.particles {
                let mut c = cfg.clone();
                c.filter.particles = n;
                for p in &prepared {
                    reports.push(p.run(method, &c)?.report);
                }
            }
        }
    }
    Ok(SweepResult {
        spec: spec.clone(),
        reports,
    })
}
