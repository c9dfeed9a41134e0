//! Text likelihood maps.
//!
//! Pose-stamped detections are binned into per-tag 2D histograms; each tag is
//! then reduced to the axis-aligned box around every histogram cell whose
//! detection rate exceeds a threshold, plus, per camera, the mean robot
//! heading observed when that camera saw the tag.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{CircularAccumulator, Point};
use crate::motion::Pose;
use crate::seqlog::{Record, SequenceLog};

pub const NUM_CAMERAS: usize = 4;

/// Default histogram cell edge, meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.25;

#[derive(Error, Debug)]
pub enum TextMapError {
    #[error("cannot read or write text map {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("text map line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("camera id {0} out of range (expected < {NUM_CAMERAS})")]
    BadCamera(usize),
    #[error("histogram cell size must be positive, got {0}")]
    BadCellSize(f64),
    #[error("detection for tag {0:?} has no ground-truth pose at t={1}")]
    MissingPose(String, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub tag: String,
    pub camera_id: usize,
    pub pose: Pose,
    pub timestamp: f64,
}

/// Closed axis-aligned box in world meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Euclidean distance from `p` to the box; zero inside.
    pub fn distance(&self, p: Point) -> f64 {
        let dx = (self.x_min - p.x).max(0.0).max(p.x - self.x_max);
        let dy = (self.y_min - p.y).max(0.0).max(p.y - self.y_max);
        dx.hypot(dy)
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    fn union(self, other: BBox) -> BBox {
        BBox::new(
            self.x_min.min(other.x_min),
            self.y_min.min(other.y_min),
            self.x_max.max(other.x_max),
            self.y_max.max(other.y_max),
        )
    }
}

type HistCell = (i64, i64);

#[derive(Debug, Clone, Default)]
struct TagHistogram {
    detections: BTreeMap<HistCell, u64>,
    headings: [CircularAccumulator; NUM_CAMERAS],
    last_frame: Option<u64>,
}

/// Visit and detection counts for every tag, on a shared square lattice
/// anchored at the world origin.
#[derive(Debug, Clone)]
pub struct HistogramSet {
    cell_size: f64,
    visits: BTreeMap<HistCell, u64>,
    tags: BTreeMap<String, TagHistogram>,
    last_visit: Option<(u64, HistCell)>,
}

impl HistogramSet {
    pub fn new(cell_size: f64) -> Result<Self, TextMapError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(TextMapError::BadCellSize(cell_size));
        }
        Ok(Self {
            cell_size,
            visits: BTreeMap::new(),
            tags: BTreeMap::new(),
            last_visit: None,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, p: Point) -> HistCell {
        (
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
        )
    }

    fn register_visit(&mut self, cell: HistCell, timestamp: f64) {
        let key = (timestamp.to_bits(), cell);
        if self.last_visit != Some(key) {
            *self.visits.entry(cell).or_default() += 1;
            self.last_visit = Some(key);
        }
    }

    /// Counts one processed camera frame taken at `pose`.
    pub fn accumulate_visit(&mut self, pose: &Pose, timestamp: f64) {
        let cell = self.cell_of(pose.position());
        self.register_visit(cell, timestamp);
    }

    /// Counts a detection. The frame's visit is registered too if it was not
    /// already, so detections never outnumber visits.
    pub fn accumulate(&mut self, record: &DetectionRecord) -> Result<(), TextMapError> {
        if record.camera_id >= NUM_CAMERAS {
            return Err(TextMapError::BadCamera(record.camera_id));
        }
        let cell = self.cell_of(record.pose.position());
        self.register_visit(cell, record.timestamp);
        let hist = self.tags.entry(record.tag.clone()).or_default();
        let frame = record.timestamp.to_bits();
        if hist.last_frame != Some(frame) {
            *hist.detections.entry(cell).or_default() += 1;
            hist.last_frame = Some(frame);
        }
        hist.headings[record.camera_id].push(record.pose.theta, 1.0);
        Ok(())
    }

    /// Feeds a recorded log: every ground-truth sample on the camera frame
    /// grid (multiples of `frame_period`) is a visit, every TEXT record a
    /// detection at the ground-truth pose of the same instant.
    pub fn accumulate_log(
        &mut self,
        log: &SequenceLog,
        frame_period: f64,
    ) -> Result<usize, TextMapError> {
        let mut current: Option<(f64, Pose)> = None;
        let mut detections = 0;
        for record in log.records() {
            match record {
                Record::GroundTruth { t, pose } => {
                    current = Some((*t, *pose));
                    if on_frame_grid(*t, frame_period) {
                        self.accumulate_visit(pose, *t);
                    }
                }
                Record::Text { t, tag, camera } => {
                    let pose = match current {
                        Some((tg, pose)) if tg == *t => pose,
                        _ => return Err(TextMapError::MissingPose(tag.clone(), *t)),
                    };
                    self.accumulate(&DetectionRecord {
                        tag: tag.clone(),
                        camera_id: *camera,
                        pose,
                        timestamp: *t,
                    })?;
                    detections += 1;
                }
                _ => {}
            }
        }
        Ok(detections)
    }

    pub fn visit_count(&self, cell: HistCell) -> u64 {
        self.visits.get(&cell).copied().unwrap_or(0)
    }

    pub fn detection_count(&self, tag: &str, cell: HistCell) -> u64 {
        self.tags
            .get(tag)
            .and_then(|h| h.detections.get(&cell))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_detections(&self) -> u64 {
        self.tags
            .values()
            .flat_map(|h| h.detections.values())
            .sum()
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tags.keys().map(String::as_str)
    }

    /// Histogram cells of `tag` whose detection rate exceeds `tau`.
    pub fn qualifying_cells(&self, tag: &str, tau: f64) -> Vec<HistCell> {
        let Some(hist) = self.tags.get(tag) else {
            return Vec::new();
        };
        hist.detections
            .iter()
            .filter(|&(cell, &det)| {
                let visits = self.visit_count(*cell);
                visits > 0 && det as f64 / visits as f64 > tau
            })
            .map(|(cell, _)| *cell)
            .collect()
    }

    fn cell_box(&self, (i, j): HistCell) -> BBox {
        let s = self.cell_size;
        BBox::new(i as f64 * s, j as f64 * s, (i + 1) as f64 * s, (j + 1) as f64 * s)
    }

    pub fn build(&self, tau: f64) -> TextLikelihoodMap {
        let mut map = TextLikelihoodMap::default();
        for (tag, hist) in &self.tags {
            let bbox = self
                .qualifying_cells(tag, tau)
                .into_iter()
                .map(|c| self.cell_box(c))
                .reduce(BBox::union);
            if let Some(bbox) = bbox {
                let mut priors = [None; NUM_CAMERAS];
                for (prior, acc) in priors.iter_mut().zip(&hist.headings) {
                    *prior = acc.mean();
                }
                map.insert(tag.clone(), TextRegion { bbox, priors });
            }
        }
        map
    }
}

fn on_frame_grid(t: f64, period: f64) -> bool {
    let k = (t / period).round();
    (t - k * period).abs() <= 1e-6 * period.max(1.0)
}

/// Where a tag can be read from, and the robot heading expected when each
/// camera reads it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextRegion {
    pub bbox: BBox,
    pub priors: [Option<f64>; NUM_CAMERAS],
}

impl TextRegion {
    pub fn prior(&self, camera: usize) -> Option<f64> {
        self.priors.get(camera).copied().flatten()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextLikelihoodMap {
    regions: BTreeMap<String, TextRegion>,
}

impl TextLikelihoodMap {
    pub fn insert(&mut self, tag: String, region: TextRegion) {
        self.regions.insert(tag, region);
    }

    pub fn lookup(&self, tag: &str) -> Option<&TextRegion> {
        self.regions.get(tag)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TextRegion)> {
        self.regions.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tag, r) in &self.regions {
            let b = r.bbox;
            let _ = write!(out, "{tag} {} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max);
            for p in r.priors {
                match p {
                    Some(v) => {
                        let _ = write!(out, " {v}");
                    }
                    None => out.push_str(" nan"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TextMapError> {
        let mut map = TextLikelihoodMap::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let err = |msg: String| TextMapError::Parse { line: line_no, msg };
            let n_numeric = 4 + NUM_CAMERAS;
            if tokens.len() <= n_numeric {
                return Err(err(format!(
                    "expected a tag followed by {n_numeric} numbers, found {} fields",
                    tokens.len()
                )));
            }
            let (tag_tokens, nums) = tokens.split_at(tokens.len() - n_numeric);
            let tag = tag_tokens.join(" ");
            let mut values = Vec::with_capacity(n_numeric);
            for tok in nums {
                values.push(parse_opt_f64(tok).map_err(|_| err(format!("bad number {tok:?}")))?);
            }
            let coord = |k: usize| values[k].ok_or_else(|| err("bounding box cannot be nan".into()));
            let bbox = BBox::new(coord(0)?, coord(1)?, coord(2)?, coord(3)?);
            if !(bbox.x_min <= bbox.x_max && bbox.y_min <= bbox.y_max) {
                return Err(err(format!("inverted bounding box for {tag:?}")));
            }
            let mut priors = [None; NUM_CAMERAS];
            priors.copy_from_slice(&values[4..]);
            if map.regions.contains_key(&tag) {
                return Err(err(format!("duplicate tag {tag:?}")));
            }
            map.insert(tag, TextRegion { bbox, priors });
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextMapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TextMapError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextMapError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| TextMapError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn parse_opt_f64(tok: &str) -> Result<Option<f64>, std::num::ParseFloatError> {
    if tok.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    tok.parse::<f64>().map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_diff;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn record(tag: &str, cam: usize, x: f64, y: f64, theta: f64, t: f64) -> DetectionRecord {
        DetectionRecord {
            tag: tag.into(),
            camera_id: cam,
            pose: Pose::new(x, y, theta),
            timestamp: t,
        }
    }

    #[test]
    fn detection_lands_in_expected_cell() {
        let mut h = HistogramSet::new(0.25).unwrap();
        h.accumulate(&record("Room 1", 0, 3.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(h.detection_count("Room 1", (12, 4)), 1);
        // detection implies a visit
        assert_eq!(h.visit_count((12, 4)), 1);
    }

    #[test]
    fn visit_then_detection_in_same_frame_counts_once() {
        let mut h = HistogramSet::new(0.25).unwrap();
        let pose = Pose::new(3.0, 1.0, 0.0);
        h.accumulate_visit(&pose, 0.2);
        h.accumulate(&record("A", 1, 3.0, 1.0, 0.0, 0.2)).unwrap();
        h.accumulate(&record("B", 2, 3.0, 1.0, 0.0, 0.2)).unwrap();
        assert_eq!(h.visit_count((12, 4)), 1);
        h.accumulate_visit(&pose, 0.4);
        assert_eq!(h.visit_count((12, 4)), 2);
    }

    #[test]
    fn bad_camera_rejected() {
        let mut h = HistogramSet::new(0.25).unwrap();
        assert!(matches!(
            h.accumulate(&record("A", 4, 0.0, 0.0, 0.0, 0.0)),
            Err(TextMapError::BadCamera(4))
        ));
        assert!(HistogramSet::new(0.0).is_err());
    }

    #[test]
    fn counts_every_record() {
        let mut h = HistogramSet::new(0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tags = ["Room 1", "Room 2", "Room 3"];
        for k in 0..1000 {
            let tag = tags[rng.random_range(0..3)];
            let r = record(tag, rng.random_range(0..4), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0, k as f64);
            h.accumulate(&r).unwrap();
        }
        assert_eq!(h.total_detections(), 1000);
    }

    #[test]
    fn bbox_uses_outer_cell_extents() {
        let mut h = HistogramSet::new(1.0).unwrap();
        h.accumulate(&record("A", 0, 2.5, 2.5, 0.0, 0.0)).unwrap();
        h.accumulate(&record("A", 0, 5.5, 3.5, 0.0, 1.0)).unwrap();
        let map = h.build(0.0);
        // enumeration oracle: min over cell lower corners, max over upper corners
        let cells = [(2i64, 2i64), (5, 3)];
        let oracle = BBox::new(
            cells.iter().map(|c| c.0 as f64).fold(f64::INFINITY, f64::min),
            cells.iter().map(|c| c.1 as f64).fold(f64::INFINITY, f64::min),
            cells.iter().map(|c| c.0 as f64 + 1.0).fold(f64::NEG_INFINITY, f64::max),
            cells.iter().map(|c| c.1 as f64 + 1.0).fold(f64::NEG_INFINITY, f64::max),
        );
        assert_eq!(map.lookup("A").unwrap().bbox, oracle);
        assert_eq!(oracle, BBox::new(2.0, 2.0, 6.0, 4.0));
    }

    #[test]
    fn tau_one_empties_the_map() {
        let mut h = HistogramSet::new(1.0).unwrap();
        h.accumulate(&record("A", 0, 2.5, 2.5, 0.0, 0.0)).unwrap();
        assert!(h.build(1.0).is_empty());
        assert_eq!(h.build(0.0).len(), 1);
    }

    #[test]
    fn tau_filters_by_rate() {
        let mut h = HistogramSet::new(1.0).unwrap();
        // cell (0,0): 1 of 4 frames; cell (3,0): 2 of 2 frames
        for k in 0..4 {
            h.accumulate_visit(&Pose::new(0.5, 0.5, 0.0), k as f64);
        }
        h.accumulate(&record("A", 0, 0.5, 0.5, 0.0, 0.0)).unwrap();
        h.accumulate(&record("A", 0, 3.5, 0.5, 0.0, 10.0)).unwrap();
        h.accumulate(&record("A", 0, 3.5, 0.5, 0.0, 11.0)).unwrap();
        assert_eq!(h.build(0.5).lookup("A").unwrap().bbox, BBox::new(3.0, 0.0, 4.0, 1.0));
        assert_eq!(h.build(0.1).lookup("A").unwrap().bbox, BBox::new(0.0, 0.0, 4.0, 1.0));
    }

    #[test]
    fn orientation_prior_is_circular_mean() {
        let mut h = HistogramSet::new(0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 0..200 {
            let theta = FRAC_PI_2 + rng.random_range(-0.1..0.1);
            h.accumulate(&record("A", 1, 1.0, 1.0, theta, k as f64)).unwrap();
        }
        // headings straddling zero must not average to π
        h.accumulate(&record("A", 3, 1.0, 1.0, 0.05, 500.0)).unwrap();
        h.accumulate(&record("A", 3, 1.0, 1.0, TAU - 0.05, 501.0)).unwrap();
        let region = *h.build(0.0).lookup("A").unwrap();
        assert!(angle_diff(region.prior(1).unwrap(), FRAC_PI_2).abs() < 0.02);
        assert!(angle_diff(region.prior(3).unwrap(), 0.0).abs() < 1e-9);
        assert_eq!(region.prior(0), None);
        assert_eq!(region.prior(2), None);
    }

    #[test]
    fn bbox_contains_qualifying_cell_centers() {
        let mut h = HistogramSet::new(0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..300 {
            h.accumulate_visit(&Pose::new(rng.random_range(0.0..6.0), rng.random_range(0.0..2.0), 0.0), k as f64);
            if rng.random::<f64>() < 0.4 {
                h.accumulate(&record("T", 0, rng.random_range(1.0..4.0), rng.random_range(0.0..2.0), 0.0, 1000.0 + k as f64)).unwrap();
            }
        }
        for tau in [0.0, 0.3, 0.6] {
            let map = h.build(tau);
            let Some(region) = map.lookup("T") else { continue };
            for (i, j) in h.qualifying_cells("T", tau) {
                let c = Point::new((i as f64 + 0.5) * 0.25, (j as f64 + 0.5) * 0.25);
                assert!(region.bbox.contains(c));
            }
        }
    }

    #[test]
    fn shrinking_tau_never_shrinks_boxes() {
        let mut h = HistogramSet::new(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for k in 0..2000 {
            let pose = Pose::new(rng.random_range(0.0..10.0), rng.random_range(0.0..3.0), 0.0);
            h.accumulate_visit(&pose, k as f64);
            if rng.random::<f64>() < (1.0 - (pose.x - 5.0).abs() / 5.0) {
                h.accumulate(&DetectionRecord { tag: "T".into(), camera_id: 0, pose, timestamp: k as f64 }).unwrap();
            }
        }
        let taus = [0.9, 0.7, 0.5, 0.3, 0.0];
        let mut prev: Option<BBox> = None;
        for tau in taus {
            let cur = h.build(tau).lookup("T").map(|r| r.bbox);
            if let (Some(p), Some(c)) = (prev, cur) {
                assert!(c.x_min <= p.x_min && c.y_min <= p.y_min && c.x_max >= p.x_max && c.y_max >= p.y_max);
            }
            if prev.is_some() {
                assert!(cur.is_some());
            }
            prev = cur.or(prev);
        }
    }

    #[test]
    fn lookup_absent_for_unknown_tag() {
        let mut map = TextLikelihoodMap::default();
        map.insert("Room 4".into(), TextRegion { bbox: BBox::new(0.0, 0.0, 1.0, 1.0), priors: [None; 4] });
        assert!(map.lookup("Room 4").is_some());
        assert!(map.lookup("Room 5").is_none());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(TextLikelihoodMap::parse("Room 1 0 0 1\n").is_err());
        assert!(TextLikelihoodMap::parse("Room 1 0 0 1 x nan nan nan nan\n").is_err());
        assert!(TextLikelihoodMap::parse("A 2 0 1 1 nan nan nan nan\n").is_err());
        assert!(TextLikelihoodMap::parse("A 0 0 1 1 nan nan nan nan\nA 0 0 1 1 nan nan nan nan\n").is_err());
    }

    #[test]
    fn box_distance() {
        let b = BBox::new(0.0, 0.0, 2.0, 1.0);
        assert_eq!(b.distance(Point::new(1.0, 0.5)), 0.0);
        assert_eq!(b.distance(Point::new(2.0, 1.0)), 0.0);
        assert!((b.distance(Point::new(5.0, 5.0)) - 5.0).abs() < 1e-12);
        assert!((b.distance(Point::new(-1.0, 0.5)) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn serialization_round_trip(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut map = TextLikelihoodMap::default();
            for k in 0..rng.random_range(0..12) {
                let x0 = rng.random_range(-50.0..50.0);
                let y0 = rng.random_range(-50.0..50.0);
                let mut priors = [None; NUM_CAMERAS];
                for p in priors.iter_mut() {
                    if rng.random::<bool>() { *p = Some(rng.random_range(0.0..TAU)); }
                }
                map.insert(format!("Room {k}"), TextRegion {
                    bbox: BBox::new(x0, y0, x0 + rng.random_range(0.0..4.0), y0 + rng.random_range(0.0..4.0)),
                    priors,
                });
            }
            let back = TextLikelihoodMap::parse(&map.to_text()).unwrap();
            prop_assert_eq!(&back, &map);
            for (tag, region) in map.iter() {
                prop_assert_eq!(back.lookup(tag), Some(region));
            }
        }
    }
}
