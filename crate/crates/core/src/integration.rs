//! Fusing text detections into the particle filter.
//!
//! Injection strategies replace the lowest-weight particles with samples from
//! the detected tag's region. The SM1/SM2 baselines instead arm a per-particle
//! weight factor that the next correction multiplies in.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::filter::{Particle, ParticleSet};
use crate::motion::Pose;
use crate::textmap::{BBox, TextLikelihoodMap, TextRegion, NUM_CAMERAS};

#[derive(Error, Debug)]
pub enum IntegrationError {
    #[error("injection ratio {0} is outside [0, 1]")]
    BadRho(f64),
    #[error("injecting {count} of {n} particles would replace the whole set")]
    InjectAll { n: usize, count: usize },
    #[error("{name} must be positive and finite, got {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("strategy {0} needs a text map")]
    MissingTextMap(StrategyMode),
    #[error("strategy seed_locations needs a seed-location file")]
    MissingSeeds,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("cannot read or write seed file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("seed file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextDetectionEvent {
    pub tag: String,
    pub camera_id: usize,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum StrategyMode {
    #[default]
    None,
    InjectFirst,
    InjectRepeat,
    InjectConservative,
    SeedLocations,
    Sm1,
    Sm2,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 7] = [
        StrategyMode::None,
        StrategyMode::InjectFirst,
        StrategyMode::InjectRepeat,
        StrategyMode::InjectConservative,
        StrategyMode::SeedLocations,
        StrategyMode::Sm1,
        StrategyMode::Sm2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyMode::None => "none",
            StrategyMode::InjectFirst => "inject_first",
            StrategyMode::InjectRepeat => "inject_repeat",
            StrategyMode::InjectConservative => "inject_conservative",
            StrategyMode::SeedLocations => "seed_locations",
            StrategyMode::Sm1 => "sm1",
            StrategyMode::Sm2 => "sm2",
        }
    }

    pub fn needs_textmap(self) -> bool {
        !matches!(self, StrategyMode::None | StrategyMode::SeedLocations)
    }
}

impl fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyMode {
    type Err = IntegrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| IntegrationError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub mode: StrategyMode,
    pub rho: f64,
    /// Heading noise of injected particles, radians.
    pub sigma_inject: f64,
    pub sm1_w_in: f64,
    pub sm1_w_out: f64,
    /// Meters.
    pub sm2_sigma: f64,
    /// Seconds a detection stays eligible to weight the next correction.
    pub detection_window: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            mode: StrategyMode::None,
            rho: 0.5,
            sigma_inject: 0.05,
            sm1_w_in: 1.0,
            sm1_w_out: 0.1,
            sm2_sigma: 2.0,
            detection_window: 1.0,
        }
    }
}

impl StrategyConfig {
    pub fn with_mode(mode: StrategyMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Number of particles an injection replaces in a set of `n`.
    pub fn injection_count(&self, n: usize) -> Result<usize, IntegrationError> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(IntegrationError::BadRho(self.rho));
        }
        let count = (self.rho * n as f64).floor() as usize;
        if count >= n {
            return Err(IntegrationError::InjectAll { n, count });
        }
        Ok(count)
    }

    pub fn validate(&self, n: usize) -> Result<(), IntegrationError> {
        self.injection_count(n)?;
        let positive = [
            ("sm2_sigma", self.sm2_sigma),
            ("sm1_w_in", self.sm1_w_in),
            ("sm1_w_out", self.sm1_w_out),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(IntegrationError::BadParameter { name, value });
            }
        }
        for (name, value) in [
            ("sigma_inject", self.sigma_inject),
            ("detection_window", self.detection_window),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(IntegrationError::BadParameter { name, value });
            }
        }
        Ok(())
    }
}

/// 1.0 inside the closed box, 0.1 outside, with the weights configurable.
pub fn sm1_factor(pose: &Pose, bbox: &BBox, w_in: f64, w_out: f64) -> f64 {
    if bbox.contains(pose.position()) {
        w_in
    } else {
        w_out
    }
}

/// Gaussian of the distance from the pose to the closed box.
pub fn sm2_factor(pose: &Pose, bbox: &BBox, sigma: f64) -> f64 {
    let d = bbox.distance(pose.position());
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// A weight factor waiting to be folded into the next correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrectionFactor {
    Sm1 { bbox: BBox, w_in: f64, w_out: f64 },
    Sm2 { bbox: BBox, sigma: f64 },
}

impl CorrectionFactor {
    pub fn eval(&self, pose: &Pose) -> f64 {
        match *self {
            CorrectionFactor::Sm1 { bbox, w_in, w_out } => sm1_factor(pose, &bbox, w_in, w_out),
            CorrectionFactor::Sm2 { bbox, sigma } => sm2_factor(pose, &bbox, sigma),
        }
    }
}

/// Hand-picked pose for a tag, with isotropic position and heading spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedLocation {
    /// Heading at which camera 0 faces the tag.
    pub pose: Pose,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedLocations {
    seeds: BTreeMap<String, SeedLocation>,
}

impl SeedLocations {
    pub fn insert(&mut self, tag: impl Into<String>, seed: SeedLocation) {
        self.seeds.insert(tag.into(), seed);
    }

    pub fn lookup(&self, tag: &str) -> Option<&SeedLocation> {
        self.seeds.get(tag)
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// One `tag x y theta sigma_xy sigma_theta` line per seed.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tag, s) in &self.seeds {
            let _ = writeln!(
                out,
                "{tag} {} {} {} {} {}",
                s.pose.x, s.pose.y, s.pose.theta, s.sigma_xy, s.sigma_theta
            );
        }
        out
    }

    /// The last five tokens are numbers; everything before them is the tag.
    pub fn parse(text: &str) -> Result<Self, IntegrationError> {
        let mut seeds = SeedLocations::default();
        for (i, line) in text.lines().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() || tokens[0].starts_with('#') {
                continue;
            }
            let err = |msg: String| IntegrationError::Parse { line: i + 1, msg };
            if tokens.len() < 6 {
                return Err(err("expected `tag x y theta sigma_xy sigma_theta`".into()));
            }
            let (tag, nums) = tokens.split_at(tokens.len() - 5);
            let v = nums
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("bad number {t:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if v[3] < 0.0 || v[4] < 0.0 {
                return Err(err("spreads must be non-negative".into()));
            }
            let tag = tag.join(" ");
            if seeds.seeds.contains_key(&tag) {
                return Err(err(format!("duplicate tag {tag:?}")));
            }
            seeds.insert(
                tag,
                SeedLocation {
                    pose: Pose::new(v[0], v[1], v[2]),
                    sigma_xy: v[3],
                    sigma_theta: v[4],
                },
            );
        }
        Ok(seeds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IntegrationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IntegrationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IntegrationError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| IntegrationError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Indices of the `k` lowest-weight particles, ties broken by lower index.
pub fn lowest_weight_indices(particles: &[Particle], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..particles.len()).collect();
    order.sort_by(|&a, &b| particles[a].weight.total_cmp(&particles[b].weight).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Robot heading at which `camera` faces the tag. Falls back to another
/// camera's prior rotated by the mounting offset difference.
pub fn camera_heading(region: &TextRegion, camera: usize) -> Option<f64> {
    if let Some(h) = region.prior(camera) {
        return Some(h);
    }
    (0..NUM_CAMERAS).find_map(|other| {
        region
            .prior(other)
            .map(|h| h + (other as f64 - camera as f64) * FRAC_PI_2)
    })
}

/// Replaces the `count` lowest-weight particles in place with poses drawn by
/// `sample`, each weighted 1/N, then renormalizes. Returns the replaced indices.
pub fn replace_lowest<R, F>(set: &mut ParticleSet, count: usize, rng: &mut R, mut sample: F) -> Vec<usize>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Pose,
{
    let n = set.len();
    let idx = lowest_weight_indices(set.particles(), count);
    let w = 1.0 / n as f64;
    let particles = set.particles_mut();
    for &i in &idx {
        particles[i] = Particle {
            pose: sample(rng),
            weight: w,
        };
    }
    set.normalize();
    idx
}

/// Uniform positions in the region's box; heading from the camera prior plus
/// Gaussian noise, or uniform when no prior exists.
pub fn inject_region<R: Rng + ?Sized>(
    set: &mut ParticleSet,
    region: &TextRegion,
    camera: usize,
    count: usize,
    sigma_inject: f64,
    rng: &mut R,
) -> Vec<usize> {
    let b = region.bbox;
    let heading = camera_heading(region, camera);
    replace_lowest(set, count, rng, |rng| {
        let x = b.x_min + (b.x_max - b.x_min) * rng.random::<f64>();
        let y = b.y_min + (b.y_max - b.y_min) * rng.random::<f64>();
        let theta = match heading {
            Some(h) => h + sigma_inject * rng.sample::<f64, _>(StandardNormal),
            None => rng.random_range(0.0..std::f64::consts::TAU),
        };
        Pose::new(x, y, theta)
    })
}

/// Gaussian poses around a seed, heading rotated for the detecting camera.
pub fn inject_seed<R: Rng + ?Sized>(
    set: &mut ParticleSet,
    seed: &SeedLocation,
    camera: usize,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let heading = seed.pose.theta - camera as f64 * FRAC_PI_2;
    replace_lowest(set, count, rng, |rng| {
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        let et: f64 = rng.sample(StandardNormal);
        Pose::new(
            seed.pose.x + seed.sigma_xy * ex,
            seed.pose.y + seed.sigma_xy * ey,
            heading + seed.sigma_theta * et,
        )
    })
}

/// What a detection did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionAction {
    Ignored,
    Injected(usize),
    /// A weight factor is armed for the next correction.
    Armed,
}

/// Per-run text fusion state: dedup memory and any armed sensor-model factor.
#[derive(Debug, Clone)]
pub struct TextIntegrator {
    cfg: StrategyConfig,
    textmap: Option<TextLikelihoodMap>,
    seeds: Option<SeedLocations>,
    last: Option<(String, usize)>,
    pending: Option<(f64, CorrectionFactor)>,
}

impl TextIntegrator {
    pub fn new(
        cfg: StrategyConfig,
        textmap: Option<TextLikelihoodMap>,
        seeds: Option<SeedLocations>,
    ) -> Result<Self, IntegrationError> {
        if cfg.mode.needs_textmap() && textmap.is_none() {
            return Err(IntegrationError::MissingTextMap(cfg.mode));
        }
        if cfg.mode == StrategyMode::SeedLocations && seeds.is_none() {
            return Err(IntegrationError::MissingSeeds);
        }
        Ok(Self {
            cfg,
            textmap,
            seeds,
            last: None,
            pending: None,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    fn region(&self, tag: &str) -> Option<&TextRegion> {
        self.textmap.as_ref().and_then(|m| m.lookup(tag))
    }

    pub fn handle_detection<R: Rng + ?Sized>(
        &mut self,
        set: &mut ParticleSet,
        event: &TextDetectionEvent,
        rng: &mut R,
    ) -> Result<DetectionAction, IntegrationError> {
        let key = (event.tag.clone(), event.camera_id);
        let repeated = self.last.as_ref() == Some(&key);
        self.last = Some(key);
        let count = self.cfg.injection_count(set.len())?;

        let action = match self.cfg.mode {
            StrategyMode::None => DetectionAction::Ignored,
            StrategyMode::InjectFirst | StrategyMode::InjectRepeat | StrategyMode::InjectConservative => {
                let Some(region) = self.region(&event.tag).cloned() else {
                    return Ok(DetectionAction::Ignored);
                };
                let skip = match self.cfg.mode {
                    StrategyMode::InjectFirst => repeated,
                    StrategyMode::InjectConservative => {
                        repeated || region.bbox.contains(set.estimate_pose().position())
                    }
                    _ => false,
                };
                if skip {
                    DetectionAction::Ignored
                } else {
                    inject_region(set, &region, event.camera_id, count, self.cfg.sigma_inject, rng);
                    DetectionAction::Injected(count)
                }
            }
            StrategyMode::SeedLocations => {
                let seed = self.seeds.as_ref().and_then(|s| s.lookup(&event.tag)).copied();
                match seed {
                    Some(seed) if !repeated => {
                        inject_seed(set, &seed, event.camera_id, count, rng);
                        DetectionAction::Injected(count)
                    }
                    _ => DetectionAction::Ignored,
                }
            }
            StrategyMode::Sm1 | StrategyMode::Sm2 => {
                let Some(region) = self.region(&event.tag) else {
                    return Ok(DetectionAction::Ignored);
                };
                let factor = if self.cfg.mode == StrategyMode::Sm1 {
                    CorrectionFactor::Sm1 {
                        bbox: region.bbox,
                        w_in: self.cfg.sm1_w_in,
                        w_out: self.cfg.sm1_w_out,
                    }
                } else {
                    CorrectionFactor::Sm2 {
                        bbox: region.bbox,
                        sigma: self.cfg.sm2_sigma,
                    }
                };
                self.pending = Some((event.timestamp, factor));
                DetectionAction::Armed
            }
        };
        Ok(action)
    }

    /// Consumes the armed factor for a correction at time `t`, if it has not
    /// expired.
    pub fn take_factor(&mut self, t: f64) -> Option<CorrectionFactor> {
        let (t_det, factor) = self.pending.take()?;
        (t - t_det <= self.cfg.detection_window).then_some(factor)
    }
}
