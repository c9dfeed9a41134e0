//! Deterministic synthetic worlds and sensor streams.
//!
//! A world is a base occupancy grid (the map the filter is given) plus doors,
//! quasi-static clutter, text tags and moving disc obstacles. The realized grid
//! renders closed doors and clutter as occupied; discs exist only in raycasts.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{angle_diff, normalize_angle, Point};
use crate::gridmap::{raycast, Cell, CellIndex, MapError, OccupancyGrid};
use crate::integration::{SeedLocation, SeedLocations, TextDetectionEvent};
use crate::motion::{MotionNoise, OdomDelta, Pose};
use crate::seqlog::{Record, SequenceLog};

#[derive(Error, Debug)]
pub enum SimError {
    #[error("{what} span {span} lies outside the grid")]
    SpanOutOfGrid { what: &'static str, span: CellSpan },
    #[error("door span {0} does not touch occupied structure")]
    DoorOffStructure(CellSpan),
    #[error("tag {0:?} is not mounted on occupied structure")]
    TagOffStructure(String),
    #[error("duplicate tag {0:?}")]
    DuplicateTag(String),
    #[error("invalid simulator setting: {0}")]
    BadConfig(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("world config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read or write world config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Inclusive rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpan {
    pub col0: usize,
    pub row0: usize,
    pub col1: usize,
    pub row1: usize,
}

impl CellSpan {
    pub fn new(col0: usize, row0: usize, col1: usize, row1: usize) -> Self {
        Self {
            col0: col0.min(col1),
            row0: row0.min(row1),
            col1: col0.max(col1),
            row1: row0.max(row1),
        }
    }

    pub fn contains(&self, idx: CellIndex) -> bool {
        (self.col0..=self.col1).contains(&idx.col) && (self.row0..=self.row1).contains(&idx.row)
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (self.row0..=self.row1).flat_map(move |r| (self.col0..=self.col1).map(move |c| CellIndex::new(c, r)))
    }

    fn fits(&self, grid: &OccupancyGrid) -> bool {
        self.col1 < grid.width() && self.row1 < grid.height()
    }
}

impl fmt::Display for CellSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.col0, self.row0, self.col1, self.row1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Door {
    pub span: CellSpan,
    pub state: DoorState,
}

/// A text sign on a wall. `normal` is the direction it faces, radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Tag {
    pub name: String,
    pub position: Point,
    pub normal: f64,
}

/// Disc moving back and forth along a polyline at constant speed.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObstacle {
    pub waypoints: Vec<Point>,
    pub radius: f64,
    pub speed: f64,
}

impl DynamicObstacle {
    fn path_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn position_at(&self, t: f64) -> Point {
        let len = self.path_length();
        if self.waypoints.len() < 2 || len == 0.0 {
            return self.waypoints.first().copied().unwrap_or_default();
        }
        let mut s = (self.speed * t).rem_euclid(2.0 * len);
        if s > len {
            s = 2.0 * len - s;
        }
        for w in self.waypoints.windows(2) {
            let seg = w[0].distance(w[1]);
            if s <= seg {
                let f = if seg > 0.0 { s / seg } else { 0.0 };
                return Point::new(w[0].x + f * (w[1].x - w[0].x), w[0].y + f * (w[1].y - w[0].y));
            }
            s -= seg;
        }
        *self.waypoints.last().unwrap()
    }
}

/// Distance along a unit-direction ray to a disc, `Some(0)` from inside.
pub fn ray_disc(origin: Point, dir: Point, center: Point, radius: f64) -> Option<f64> {
    let ox = origin.x - center.x;
    let oy = origin.y - center.y;
    let b = ox * dir.x + oy * dir.y;
    let c = ox * ox + oy * oy - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub base: OccupancyGrid,
    pub doors: Vec<Door>,
    /// Quasi-static objects present in the world but not in the map.
    pub clutter: Vec<CellSpan>,
    pub tags: Vec<Tag>,
    pub obstacles: Vec<DynamicObstacle>,
}

impl World {
    pub fn validate(&self) -> Result<(), SimError> {
        let g = &self.base;
        for d in &self.doors {
            if !d.span.fits(g) {
                return Err(SimError::SpanOutOfGrid { what: "door", span: d.span });
            }
            if !touches_structure(g, &d.span) {
                return Err(SimError::DoorOffStructure(d.span));
            }
        }
        for c in &self.clutter {
            if !c.fits(g) {
                return Err(SimError::SpanOutOfGrid { what: "clutter", span: *c });
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tags {
            if !names.insert(t.name.as_str()) {
                return Err(SimError::DuplicateTag(t.name.clone()));
            }
            let (s, c) = t.normal.sin_cos();
            let r = g.resolution() * 0.5;
            let behind = Point::new(t.position.x - c * r, t.position.y - s * r);
            if !g.cell_of(behind).is_ok_and(|idx| g.get(idx) == Cell::Occupied) {
                return Err(SimError::TagOffStructure(t.name.clone()));
            }
        }
        Ok(())
    }

    /// One line per element; the base grid is stored separately.
    pub fn to_config_text(&self) -> String {
        let mut out = String::from("# world elements; the map is stored separately\n");
        for d in &self.doors {
            let state = match d.state {
                DoorState::Open => "open",
                DoorState::Closed => "closed",
            };
            let _ = writeln!(out, "door {} {state}", d.span);
        }
        for c in &self.clutter {
            let _ = writeln!(out, "clutter {c}");
        }
        for t in &self.tags {
            let _ = writeln!(out, "tag {} {} {} {}", t.position.x, t.position.y, t.normal, t.name);
        }
        for o in &self.obstacles {
            let _ = write!(out, "obstacle {} {}", o.radius, o.speed);
            for p in &o.waypoints {
                let _ = write!(out, " {} {}", p.x, p.y);
            }
            out.push('\n');
        }
        out
    }

    /// Parses element lines; other `key value` lines are ignored so the same
    /// file can carry scenario and simulator settings.
    pub fn from_config_text(base: OccupancyGrid, text: &str) -> Result<Self, SimError> {
        let mut world = World {
            base,
            doors: Vec::new(),
            clutter: Vec::new(),
            tags: Vec::new(),
            obstacles: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let Some(&kind) = tokens.first() else { continue };
            let err = |msg: &str| SimError::Parse { line: i + 1, msg: msg.to_string() };
            let num = |s: &str| -> Result<f64, SimError> {
                s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(&format!("bad number {s:?}")))
            };
            let span = |t: &[&str]| -> Result<CellSpan, SimError> {
                let v = t
                    .iter()
                    .map(|s| s.parse::<usize>().map_err(|_| err(&format!("bad cell index {s:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(CellSpan::new(v[0], v[1], v[2], v[3]))
            };
            match kind {
                "door" => {
                    if tokens.len() != 6 {
                        return Err(err("expected `door col0 row0 col1 row1 open|closed`"));
                    }
                    let state = match tokens[5] {
                        "open" => DoorState::Open,
                        "closed" => DoorState::Closed,
                        _ => return Err(err("door state must be open or closed")),
                    };
                    world.doors.push(Door { span: span(&tokens[1..5])?, state });
                }
                "clutter" => {
                    if tokens.len() != 5 {
                        return Err(err("expected `clutter col0 row0 col1 row1`"));
                    }
                    world.clutter.push(span(&tokens[1..5])?);
                }
                "tag" => {
                    if tokens.len() < 5 {
                        return Err(err("expected `tag x y normal name`"));
                    }
                    world.tags.push(Tag {
                        position: Point::new(num(tokens[1])?, num(tokens[2])?),
                        normal: num(tokens[3])?,
                        name: tokens[4..].join(" "),
                    });
                }
                "obstacle" => {
                    if tokens.len() < 5 || !(tokens.len() - 3).is_multiple_of(2) {
                        return Err(err("expected `obstacle radius speed x1 y1 [x2 y2 ...]`"));
                    }
                    let coords = tokens[3..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
                    world.obstacles.push(DynamicObstacle {
                        radius: num(tokens[1])?,
                        speed: num(tokens[2])?,
                        waypoints: coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect(),
                    });
                }
                _ => {}
            }
        }
        world.validate()?;
        Ok(world)
    }
}

fn touches_structure(g: &OccupancyGrid, span: &CellSpan) -> bool {
    let neighbours = |c: CellIndex| {
        let (col, row) = (c.col as i64, c.row as i64);
        [(col - 1, row), (col + 1, row), (col, row - 1), (col, row + 1)]
    };
    span.cells().any(|c| {
        neighbours(c).iter().any(|&(col, row)| {
            g.checked_index(col, row)
                .is_ok_and(|n| !span.contains(n) && g.get(n) == Cell::Occupied)
        })
    })
}

/// The grid the robot actually moves in: closed doors and clutter occupied.
pub fn realize_world(world: &World) -> Result<OccupancyGrid, SimError> {
    world.validate()?;
    let mut g = world.base.clone();
    for d in world.doors.iter().filter(|d| d.state == DoorState::Closed) {
        for c in d.span.cells() {
            g.set(c, Cell::Occupied);
        }
    }
    for span in &world.clutter {
        for c in span.cells() {
            g.set(c, Cell::Occupied);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub lidar_beams: usize,
    pub sigma_range: f64,
    pub lidar_max_range: f64,
    pub odom_period: f64,
    pub scan_period: f64,
    pub camera_period: f64,
    /// Drift added to each emitted odometry increment.
    pub odom_noise: MotionNoise,
    pub d_detect: f64,
    /// Radians.
    pub incidence: f64,
    pub p_detect: f64,
    pub speed: f64,
    /// Radians per second.
    pub turn_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lidar_beams: 360,
            sigma_range: 0.01,
            lidar_max_range: 30.0,
            odom_period: 0.05,
            scan_period: 0.1,
            camera_period: 0.2,
            odom_noise: MotionNoise::new(0.002, 0.002, 0.002),
            d_detect: 2.5,
            incidence: 60f64.to_radians(),
            p_detect: 0.8,
            speed: 0.3,
            turn_rate: 0.5,
        }
    }
}

impl SimConfig {
    /// A configuration with every noise source off and certain detection.
    pub fn noiseless() -> Self {
        Self {
            sigma_range: 0.0,
            odom_noise: MotionNoise::ZERO,
            p_detect: 1.0,
            ..Self::default()
        }
    }

    fn ticks_per(&self, period: f64) -> Result<u64, SimError> {
        let k = period / self.odom_period;
        let r = k.round();
        if !(r >= 1.0 && (k - r).abs() < 1e-9) {
            return Err(SimError::BadConfig(format!(
                "period {period} is not a multiple of the odometry period {}",
                self.odom_period
            )));
        }
        Ok(r as u64)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::BadConfig(m.to_string()));
        if self.lidar_beams == 0 {
            return bad("lidar_beams must be at least 1");
        }
        if !(self.odom_period > 0.0 && self.lidar_max_range > 0.0 && self.speed > 0.0 && self.turn_rate > 0.0) {
            return bad("periods, ranges and speeds must be positive");
        }
        if !(self.sigma_range >= 0.0 && self.odom_noise.is_valid()) {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.p_detect) {
            return bad("p_detect must lie in [0, 1]");
        }
        self.ticks_per(self.scan_period)?;
        self.ticks_per(self.camera_period)?;
        Ok(())
    }

    /// `key value` lines, the same keys [`set`](Self::set) accepts.
    pub fn to_config_text(&self) -> String {
        format!(
            "lidar_beams {}\nsigma_range {}\nlidar_max_range {}\nodom_period {}\nscan_period {}\ncamera_period {}\n\
             odom_noise {} {} {}\nd_detect {}\nincidence {}\np_detect {}\nspeed {}\nturn_rate {}\n",
            self.lidar_beams,
            self.sigma_range,
            self.lidar_max_range,
            self.odom_period,
            self.scan_period,
            self.camera_period,
            self.odom_noise.x,
            self.odom_noise.y,
            self.odom_noise.theta,
            self.d_detect,
            self.incidence,
            self.p_detect,
            self.speed,
            self.turn_rate
        )
    }

    /// Sets one parameter. Returns `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, values: &[f64]) -> Result<bool, String> {
        let one = || -> Result<f64, String> {
            match values {
                [v] => Ok(*v),
                _ => Err(format!("{key} takes one value")),
            }
        };
        match key {
            "lidar_beams" => {
                let v = one()?;
                if v < 1.0 || v.fract() != 0.0 {
                    return Err("lidar_beams must be a positive integer".into());
                }
                self.lidar_beams = v as usize;
            }
            "sigma_range" => self.sigma_range = one()?,
            "lidar_max_range" => self.lidar_max_range = one()?,
            "odom_period" => self.odom_period = one()?,
            "scan_period" => self.scan_period = one()?,
            "camera_period" => self.camera_period = one()?,
            "odom_noise" => match values {
                [x, y, t] => self.odom_noise = MotionNoise::new(*x, *y, *t),
                _ => return Err("odom_noise takes three values".into()),
            },
            "d_detect" => self.d_detect = one()?,
            "incidence" => self.incidence = one()?,
            "p_detect" => self.p_detect = one()?,
            "speed" => self.speed = one()?,
            "turn_rate" => self.turn_rate = one()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Index of the camera whose quadrant contains the relative bearing.
pub fn camera_for_bearing(relative: f64) -> usize {
    ((normalize_angle(relative + FRAC_PI_4) / FRAC_PI_2) as usize).min(3)
}

/// Tag/camera pairs that pass every geometric gate from `pose` at time `t`.
pub fn visible_tags(
    realized: &OccupancyGrid,
    world: &World,
    pose: &Pose,
    t: f64,
    cfg: &SimConfig,
) -> Vec<(usize, usize)> {
    let p = pose.position();
    let tol = 2.0 * realized.resolution() * 2f64.sqrt();
    let mut out = Vec::new();
    for (i, tag) in world.tags.iter().enumerate() {
        let dist = p.distance(tag.position);
        if dist > cfg.d_detect || dist == 0.0 {
            continue;
        }
        let to_tag = (tag.position.y - p.y).atan2(tag.position.x - p.x);
        if angle_diff(to_tag + PI, tag.normal).abs() > cfg.incidence {
            continue;
        }
        let Ok(hit) = raycast(realized, p, to_tag, dist) else { continue };
        if hit < dist - tol {
            continue;
        }
        let dir = Point::new(to_tag.cos(), to_tag.sin());
        let blocked = world.obstacles.iter().any(|o| {
            ray_disc(p, dir, o.position_at(t), o.radius).is_some_and(|d| d < dist)
        });
        if blocked {
            continue;
        }
        out.push((i, camera_for_bearing(angle_diff(to_tag, pose.theta))));
    }
    out
}

/// Independent random streams for each noise source.
struct NoiseStreams {
    odom: ChaCha8Rng,
    range: ChaCha8Rng,
    detect: ChaCha8Rng,
}

impl NoiseStreams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            odom: stream(1),
            range: stream(2),
            detect: stream(3),
        }
    }
}

/// What one simulation step emits.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub t: f64,
    pub ground_truth: Pose,
    pub odom: OdomDelta,
    pub scan: Option<Vec<f64>>,
    pub detections: Vec<TextDetectionEvent>,
    pub collided: bool,
}

pub struct Simulator<'a> {
    world: &'a World,
    realized: OccupancyGrid,
    cfg: SimConfig,
    scan_every: u64,
    camera_every: u64,
    with_scans: bool,
    pose: Pose,
    tick: u64,
    noise: NoiseStreams,
    collisions: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(world: &'a World, cfg: SimConfig, start: Pose, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let realized = realize_world(world)?;
        let start_cell = realized.cell_of(start.position())?;
        if realized.get(start_cell) != Cell::Free {
            return Err(SimError::BadConfig("start pose is not in free space".into()));
        }
        Ok(Self {
            world,
            scan_every: cfg.ticks_per(cfg.scan_period)?,
            camera_every: cfg.ticks_per(cfg.camera_period)?,
            realized,
            cfg,
            with_scans: true,
            pose: start,
            tick: 0,
            noise: NoiseStreams::new(seed),
            collisions: 0,
        })
    }

    /// Disables LiDAR synthesis, e.g. for text-map training runs.
    pub fn without_scans(mut self) -> Self {
        self.with_scans = false;
        self
    }

    pub fn realized(&self) -> &OccupancyGrid {
        &self.realized
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.odom_period
    }

    pub fn collisions(&self) -> usize {
        self.collisions
    }

    /// Noise-free ranges from `pose` at time `t`, including moving discs.
    pub fn ideal_scan(&self, pose: &Pose, t: f64) -> Vec<f64> {
        let k = self.cfg.lidar_beams;
        let max = self.cfg.lidar_max_range;
        let p = pose.position();
        let discs: Vec<(Point, f64)> = self.world.obstacles.iter().map(|o| (o.position_at(t), o.radius)).collect();
        (0..k)
            .map(|i| {
                let bearing = pose.theta + TAU * i as f64 / k as f64;
                let mut r = raycast(&self.realized, p, bearing, max).unwrap_or(0.0);
                let dir = Point::new(bearing.cos(), bearing.sin());
                for &(c, rad) in &discs {
                    if let Some(d) = ray_disc(p, dir, c, rad) {
                        r = r.min(d);
                    }
                }
                r
            })
            .collect()
    }

    fn noisy_scan(&mut self) -> Vec<f64> {
        let max = self.cfg.lidar_max_range;
        let ideal = self.ideal_scan(&self.pose, self.time());
        ideal
            .into_iter()
            .map(|r| {
                let e: f64 = self.noise.range.sample(StandardNormal);
                if r >= max {
                    return max;
                }
                if r <= 0.0 {
                    return 0.0;
                }
                let noisy = ((r + self.cfg.sigma_range * e) * 1000.0).round() / 1000.0;
                noisy.clamp(0.001, max)
            })
            .collect()
    }

    fn detect(&mut self) -> Vec<TextDetectionEvent> {
        let t = self.time();
        let candidates = visible_tags(&self.realized, self.world, &self.pose, t, &self.cfg);
        let mut out = Vec::new();
        for (i, camera_id) in candidates {
            let u: f64 = self.noise.detect.random();
            if u < self.cfg.p_detect {
                out.push(TextDetectionEvent {
                    tag: self.world.tags[i].name.clone(),
                    camera_id,
                    timestamp: t,
                });
            }
        }
        out
    }

    /// Current-instant sensor output without advancing time.
    fn observe(&mut self) -> (Option<Vec<f64>>, Vec<TextDetectionEvent>) {
        let scan = (self.with_scans && self.tick.is_multiple_of(self.scan_every)).then(|| self.noisy_scan());
        let detections = if self.tick.is_multiple_of(self.camera_every) { self.detect() } else { Vec::new() };
        (scan, detections)
    }

    /// Advances one odometry period by `commanded`. A move ending outside
    /// free space is dropped and counted as a collision.
    pub fn step(&mut self, commanded: &OdomDelta) -> StepOutput {
        self.tick += 1;
        let next = self.pose.compose(commanded);
        let free = self
            .realized
            .cell_of(next.position())
            .is_ok_and(|c| self.realized.get(c) == Cell::Free);
        let actual = if free {
            self.pose = next;
            *commanded
        } else {
            self.collisions += 1;
            OdomDelta::default()
        };
        let odom = self.cfg.odom_noise.perturb(&actual, &mut self.noise.odom);
        let (scan, detections) = self.observe();
        StepOutput {
            t: self.time(),
            ground_truth: self.pose,
            odom,
            scan,
            detections,
            collided: !free,
        }
    }

    /// Drives through `waypoints` (turn in place, then straight at constant
    /// speed) and records everything into a log.
    pub fn run(mut self, waypoints: &[Point]) -> (SequenceLog, usize) {
        let mut log = SequenceLog::new();
        let (scan, detections) = self.observe();
        push_instant(&mut log, 0.0, self.pose, None, scan, detections);
        let dt = self.cfg.odom_period;
        let max_turn = self.cfg.turn_rate * dt;
        let max_step = self.cfg.speed * dt;
        for &target in waypoints {
            loop {
                let p = self.pose.position();
                let dist = p.distance(target);
                if dist < 1e-9 {
                    break;
                }
                let heading = (target.y - p.y).atan2(target.x - p.x);
                let err = angle_diff(heading, self.pose.theta);
                let cmd = if dist > max_step && err.abs() > 1e-6 || err.abs() > 0.01 {
                    OdomDelta::new(0.0, 0.0, err.clamp(-max_turn, max_turn))
                } else {
                    let step = dist.min(max_step);
                    OdomDelta::new(step * err.cos(), step * err.sin(), 0.0)
                };
                let out = self.step(&cmd);
                push_instant(&mut log, out.t, out.ground_truth, Some(out.odom), out.scan, out.detections);
                if out.collided {
                    break;
                }
            }
        }
        let collisions = self.collisions;
        (log, collisions)
    }
}

fn push_instant(
    log: &mut SequenceLog,
    t: f64,
    gt: Pose,
    odom: Option<OdomDelta>,
    scan: Option<Vec<f64>>,
    detections: Vec<TextDetectionEvent>,
) {
    log.push(Record::GroundTruth { t, pose: gt });
    if let Some(delta) = odom {
        log.push(Record::Odom { t, delta });
    }
    if let Some(ranges) = scan {
        log.push(Record::Scan { t, ranges });
    }
    for d in detections {
        log.push(Record::Text {
            t,
            tag: d.tag,
            camera: d.camera_id,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    CorridorClosed,
    OfficeStatic,
    OfficeDynamic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::CorridorClosed,
        ScenarioKind::OfficeStatic,
        ScenarioKind::OfficeDynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CorridorClosed => "corridor_closed",
            ScenarioKind::OfficeStatic => "office_static",
            ScenarioKind::OfficeDynamic => "office_dynamic",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::UnknownScenario(s.to_string()))
    }
}

/// Geometry of a straight corridor flanked by rooms on both sides.
///
/// The corridor interior spans `[0, length] x [0, width]`. Room tags are
/// spaced evenly along the corridor, alternating between the north and south
/// walls, and each sits in a shallow niche between two pilasters so that it
/// can only be read from within 45 degrees of its normal. Doors sit a fixed
/// distance east of north tags and west of south tags, which makes the whole
/// building symmetric under a half turn about the corridor center.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorLayout {
    pub length: f64,
    pub width: f64,
    pub rooms_per_side: usize,
    pub room_depth: f64,
    pub wall: f64,
    pub door_width: f64,
    /// Along-corridor distance from a tag to the center of its door.
    pub door_offset: f64,
    /// (width along the wall, depth into the corridor).
    pub pilaster_size: (f64, f64),
    /// Gap between a tag and each flanking pilaster; `None` for a flush tag.
    pub niche_gap: Option<f64>,
    /// Extra pilasters on the north wall; the south wall gets their
    /// half-turn images.
    pub pilasters: Vec<f64>,
    /// Open hall beyond the east end: (length, half-height beyond the walls).
    pub lobby: Option<(f64, f64)>,
    pub resolution: f64,
}

impl CorridorLayout {
    pub fn corridor() -> Self {
        Self {
            length: 40.0,
            width: 2.5,
            rooms_per_side: 5,
            room_depth: 3.5,
            wall: 0.2,
            door_width: 1.0,
            door_offset: 1.5,
            pilaster_size: (0.4, 0.25),
            niche_gap: Some(0.25),
            pilasters: Vec::new(),
            lobby: None,
            resolution: 0.05,
        }
    }

    pub fn office() -> Self {
        Self {
            length: 24.0,
            rooms_per_side: 3,
            lobby: Some((6.0, 2.0)),
            ..Self::corridor()
        }
    }

    fn bay(&self) -> f64 {
        self.length / self.rooms_per_side as f64
    }

    /// Tag sites in naming order: north wall west to east, then south wall
    /// east to west. `true` marks the north wall.
    pub fn tag_sites(&self) -> Vec<(f64, bool)> {
        let step = self.bay() / 2.0;
        let north = (0..self.rooms_per_side).map(|k| (step / 2.0 + 2.0 * step * k as f64, true));
        let south = (0..self.rooms_per_side).map(|k| (self.length - step / 2.0 - 2.0 * step * k as f64, false));
        north.chain(south).collect()
    }

    /// Door centers in tag order.
    pub fn door_centers(&self) -> Vec<(f64, bool)> {
        self.tag_sites()
            .into_iter()
            .map(|(x, north)| (if north { x + self.door_offset } else { x - self.door_offset }, north))
            .collect()
    }

    /// Builds the map (doors open), the door leaves and the room tags.
    pub fn build(&self) -> Result<(OccupancyGrid, Vec<Door>, Vec<Tag>), SimError> {
        let res = self.resolution;
        let margin = 0.5;
        let (lobby_len, lobby_half) = self.lobby.unwrap_or((0.0, 0.0));
        let outer = self.wall + self.room_depth + self.wall;
        let origin = Point::new(-self.wall - margin, -outer.max(lobby_half + self.wall) - margin);
        let x_max = self.length + lobby_len + self.wall + margin;
        let y_max = self.width + outer.max(lobby_half + self.wall) + margin;
        let width = ((x_max - origin.x) / res).round() as usize;
        let height = ((y_max - origin.y) / res).round() as usize;
        let mut g = OccupancyGrid::new(width, height, res, origin, Cell::Unknown)?;
        let to_col = |x: f64| ((x - origin.x) / res).round() as i64;
        let to_row = |y: f64| ((y - origin.y) / res).round() as i64;
        // half-open world rectangle to cell span
        let span = |x0: f64, y0: f64, x1: f64, y1: f64| -> CellSpan {
            CellSpan::new(to_col(x0) as usize, to_row(y0) as usize, (to_col(x1) - 1) as usize, (to_row(y1) - 1) as usize)
        };
        let fill = |g: &mut OccupancyGrid, s: CellSpan, cell: Cell| {
            for c in s.cells() {
                g.set(c, cell);
            }
        };

        let w = self.width;
        let t = self.wall;
        let bay = self.bay();
        fill(&mut g, span(0.0, 0.0, self.length, w), Cell::Free);
        for k in 0..self.rooms_per_side {
            let x0 = k as f64 * bay + t / 2.0;
            let x1 = (k + 1) as f64 * bay - t / 2.0;
            fill(&mut g, span(x0, w + t, x1, w + t + self.room_depth), Cell::Free);
            fill(&mut g, span(x0, -t - self.room_depth, x1, -t), Cell::Free);
        }
        if let Some((len, half)) = self.lobby {
            fill(&mut g, span(self.length, -half, self.length + len, w + half), Cell::Free);
        }
        // every unknown cell within one wall thickness of free space is wall
        let reach = (t / res).round() as i64;
        let free: Vec<CellIndex> = g.free_cells();
        for c in free {
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    if let Ok(n) = g.checked_index(c.col as i64 + dc, c.row as i64 + dr) {
                        if g.get(n) == Cell::Unknown {
                            g.set(n, Cell::Occupied);
                        }
                    }
                }
            }
        }

        let (pw, pd) = self.pilaster_size;
        let mut north_pilasters = self.pilasters.clone();
        if let Some(gap) = self.niche_gap {
            for (x, north) in self.tag_sites() {
                // south niches are the half-turn images of north ones
                let xn = if north { x } else { self.length - x };
                north_pilasters.extend([xn - gap - pw / 2.0, xn + gap + pw / 2.0]);
            }
        }
        north_pilasters.sort_by(f64::total_cmp);
        north_pilasters.dedup();
        for &x in &north_pilasters {
            fill(&mut g, span(x - pw / 2.0, w - pd, x + pw / 2.0, w), Cell::Occupied);
            let xs = self.length - x;
            fill(&mut g, span(xs - pw / 2.0, 0.0, xs + pw / 2.0, pd), Cell::Occupied);
        }

        let mut doors = Vec::new();
        let mut tags = Vec::new();
        let hw = self.door_width / 2.0;
        let sites = self.tag_sites().into_iter().zip(self.door_centers());
        for (n, ((tx, north), (dx, _))) in sites.enumerate() {
            let name = format!("Room {}", n + 1);
            let (opening, leaf, tag) = if north {
                (
                    span(dx - hw, w, dx + hw, w + t),
                    span(dx - hw, w + t - res, dx + hw, w + t),
                    Tag { name, position: Point::new(tx, w), normal: -FRAC_PI_2 },
                )
            } else {
                (
                    span(dx - hw, -t, dx + hw, 0.0),
                    span(dx - hw, -t, dx + hw, -t + res),
                    Tag { name, position: Point::new(tx, 0.0), normal: FRAC_PI_2 },
                )
            };
            fill(&mut g, opening, Cell::Free);
            doors.push(Door { span: leaf, state: DoorState::Open });
            tags.push(tag);
        }
        Ok((g, doors, tags))
    }
}

/// Everything one scenario instance provides.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub layout: CorridorLayout,
    pub sim: SimConfig,
    /// World used for the evaluation log.
    pub world: World,
    /// Driven with every door open to learn the text map.
    pub training_log: SequenceLog,
    pub eval_log: SequenceLog,
    pub start: Pose,
    /// Hand-picked injection poses: in front of each tag, facing it.
    pub seeds: SeedLocations,
}

impl Scenario {
    pub fn base_map(&self) -> &OccupancyGrid {
        &self.world.base
    }

    /// Scenario header plus simulator settings plus world elements.
    pub fn to_config_text(&self) -> String {
        let mut out = format!("scenario {}\nseed {}\n", self.kind, self.seed);
        out.push_str(&self.sim.to_config_text());
        out.push_str(&self.world.to_config_text());
        out
    }

    pub fn save_config(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_config_text()).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Number of distinct start offsets along the corridor.
pub const START_OFFSETS: u64 = 10;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Builds a reproducible scenario instance. The start offset cycles through
/// [`START_OFFSETS`] positions spread along the corridor with `seed`.
pub fn generate_scenario(kind: ScenarioKind, seed: u64) -> Result<Scenario, SimError> {
    generate_scenario_with(kind, seed, SimConfig::default())
}

pub fn generate_scenario_with(kind: ScenarioKind, seed: u64, sim: SimConfig) -> Result<Scenario, SimError> {
    let layout = match kind {
        ScenarioKind::CorridorClosed => CorridorLayout::corridor(),
        ScenarioKind::OfficeStatic | ScenarioKind::OfficeDynamic => CorridorLayout::office(),
    };
    let (base, open_doors, tags) = layout.build()?;
    let l = layout.length;
    let w = layout.width;
    let mut layout_rng = seeded(seed, 10);

    let training_world = World {
        base: base.clone(),
        doors: open_doors.clone(),
        clutter: Vec::new(),
        tags: tags.clone(),
        obstacles: Vec::new(),
    };

    let mut doors = open_doors;
    let mut clutter = Vec::new();
    let mut obstacles = Vec::new();
    match kind {
        ScenarioKind::CorridorClosed => {
            for d in &mut doors {
                d.state = DoorState::Closed;
            }
        }
        ScenarioKind::OfficeStatic | ScenarioKind::OfficeDynamic => {
            for d in &mut doors {
                if layout_rng.random::<f64>() < 0.5 {
                    d.state = DoorState::Closed;
                }
            }
            let res = layout.resolution;
            for _ in 0..3 {
                let x = layout_rng.random_range(1.0..l - 1.0);
                let north = layout_rng.random::<bool>();
                let y0 = if north { w - 0.35 } else { 0.0 };
                let p0 = base.cell_of(Point::new(x - 0.3, y0 + res / 2.0))?;
                let p1 = base.cell_of(Point::new(x + 0.3, y0 + 0.35 - res / 2.0))?;
                clutter.push(CellSpan::new(p0.col, p0.row, p1.col, p1.row));
            }
            if kind == ScenarioKind::OfficeDynamic {
                for k in 0..3 {
                    let y = if k % 2 == 0 { 0.5 } else { w - 0.5 };
                    let a = layout_rng.random_range(1.0..l / 2.0);
                    let b = layout_rng.random_range(l / 2.0..l - 1.0);
                    obstacles.push(DynamicObstacle {
                        waypoints: vec![Point::new(a, y), Point::new(b, y)],
                        radius: 0.25,
                        speed: layout_rng.random_range(0.5..1.2),
                    });
                }
            }
        }
    }
    let world = World {
        base,
        doors,
        clutter,
        tags,
        obstacles,
    };
    world.validate()?;

    // training: east along one lane, west along another, all doors open
    let lane_a = 0.4 * w;
    let lane_b = 0.6 * w;
    let train_start = Pose::new(1.0, lane_a, 0.0);
    let training_route = [
        Point::new(l - 1.0, lane_a),
        Point::new(l - 1.0, lane_b),
        Point::new(1.0, lane_b),
    ];
    let (training_log, _) = Simulator::new(&training_world, sim, train_start, seed ^ 0x5eed_0000)?
        .without_scans()
        .run(&training_route);

    let offset = seed % START_OFFSETS;
    let start_x = 2.0 + offset as f64 * (l - 4.0) / (START_OFFSETS - 1) as f64;
    let lane = w / 2.0 + layout_rng.random_range(-0.2..0.2);
    let (far_x, back_x) = if start_x < l / 2.0 {
        (l - 1.0, l - 11.0)
    } else {
        (1.0, 11.0)
    };
    let heading = if far_x > start_x { 0.0 } else { PI };
    let start = Pose::new(start_x, lane, heading);
    let route = [Point::new(far_x, lane), Point::new(back_x, lane)];
    let (eval_log, _) = Simulator::new(&world, sim, start, seed)?.run(&route);

    let mut seeds = SeedLocations::default();
    for tag in &world.tags {
        let (s, c) = tag.normal.sin_cos();
        let d = w / 2.0;
        seeds.insert(
            tag.name.clone(),
            SeedLocation {
                pose: Pose::new(tag.position.x + c * d, tag.position.y + s * d, tag.normal + PI),
                sigma_xy: 0.3,
                sigma_theta: 0.1,
            },
        );
    }

    Ok(Scenario {
        kind,
        seed,
        layout,
        sim,
        world,
        training_log,
        eval_log,
        start,
        seeds,
    })
}
