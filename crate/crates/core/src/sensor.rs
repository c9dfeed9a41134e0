//! Beam-end observation model.
//!
//! Each valid beam endpoint is scored by a Gaussian on its distance to the
//! nearest mapped obstacle; a scan's likelihood is the geometric mean of its
//! beam likelihoods, evaluated in log space. The Gaussian normalizer is
//! omitted because it cancels once particle weights are normalized.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::geometry::Point;
use crate::gridmap::DistanceField;
use crate::motion::Pose;

/// Lower clamp for a single beam likelihood.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SensorError {
    #[error("scan at t={0} has no valid beams")]
    NoValidBeams(f64),
    #[error("sigma_obs must be positive, got {0}")]
    BadSigma(f64),
    #[error("beam stride must be at least 1")]
    BadStride,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    /// Sensor-frame bearing, radians.
    pub bearing: f64,
    pub range: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub timestamp: f64,
    pub beams: Vec<Beam>,
}

impl Scan {
    /// A panoramic scan with `ranges.len()` beams evenly spaced over a full
    /// turn starting at bearing 0. Ranges that are non-positive, non-finite
    /// or at/above `max_range` are marked invalid (no return).
    pub fn panoramic(timestamp: f64, ranges: &[f64], max_range: f64) -> Self {
        let k = ranges.len();
        let beams = ranges
            .iter()
            .enumerate()
            .map(|(i, &range)| Beam {
                bearing: TAU * i as f64 / k as f64,
                range,
                valid: range.is_finite() && range > 0.0 && range < max_range,
            })
            .collect();
        Self { timestamp, beams }
    }

    pub fn valid_count(&self) -> usize {
        self.beams.iter().filter(|b| b.valid).count()
    }
}

/// Likelihood of a single endpoint, `exp(-d² / 2σ²)` with the floor applied.
pub fn beam_likelihood(dfield: &DistanceField, endpoint: Point, sigma_obs: f64) -> f64 {
    let d = dfield.lookup(endpoint);
    (-d * d / (2.0 * sigma_obs * sigma_obs)).exp().max(LIKELIHOOD_FLOOR)
}

/// Geometric mean of the beam likelihoods of every valid beam of `scan`
/// projected from `pose`.
pub fn scan_likelihood(
    dfield: &DistanceField,
    pose: &Pose,
    scan: &Scan,
    sigma_obs: f64,
) -> Result<f64, SensorError> {
    let model = BeamEndModel::new(sigma_obs, 1)?;
    let prepared = model.prepare(scan)?;
    Ok(model.log_likelihood(dfield, pose, &prepared).exp())
}

/// Scan endpoints in the sensor frame, restricted to the beams that take part
/// in weighting.
#[derive(Debug, Clone)]
pub struct PreparedScan {
    endpoints: Vec<Point>,
}

impl PreparedScan {
    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }
}

const FIXED_SCALE: f64 = (1u64 << 52) as f64;

/// Beam-end model parameters. `stride` keeps every `stride`-th beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamEndModel {
    sigma_obs: f64,
    stride: usize,
}

impl BeamEndModel {
    pub fn new(sigma_obs: f64, stride: usize) -> Result<Self, SensorError> {
        if !(sigma_obs.is_finite() && sigma_obs > 0.0) {
            return Err(SensorError::BadSigma(sigma_obs));
        }
        if stride == 0 {
            return Err(SensorError::BadStride);
        }
        Ok(Self { sigma_obs, stride })
    }

    pub fn sigma_obs(&self) -> f64 {
        self.sigma_obs
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn prepare(&self, scan: &Scan) -> Result<PreparedScan, SensorError> {
        let endpoints: Vec<Point> = scan
            .beams
            .iter()
            .step_by(self.stride)
            .filter(|b| b.valid)
            .map(|b| {
                let (s, c) = b.bearing.sin_cos();
                Point::new(b.range * c, b.range * s)
            })
            .collect();
        if endpoints.is_empty() {
            return Err(SensorError::NoValidBeams(scan.timestamp));
        }
        Ok(PreparedScan { endpoints })
    }

    /// Log of the geometric-mean likelihood of `scan` seen from `pose`.
    pub fn log_likelihood(&self, dfield: &DistanceField, pose: &Pose, scan: &PreparedScan) -> f64 {
        let (s, c) = pose.theta.sin_cos();
        let inv = 1.0 / (2.0 * self.sigma_obs * self.sigma_obs);
        let floor = LIKELIHOOD_FLOOR.ln();
        // Fixed-point terms: integer addition is associative, so the result
        // does not depend on beam order. Each term lies in [ln floor, 0] and
        // fits an i64 at this scale; truncation costs < 2.3e-16 per term.
        let sum: i128 = scan
            .endpoints
            .iter()
            .map(|e| {
                let p = Point::new(pose.x + c * e.x - s * e.y, pose.y + s * e.x + c * e.y);
                let d = dfield.lookup(p);
                ((-d * d * inv).max(floor) * FIXED_SCALE) as i64 as i128
            })
            .sum();
        sum as f64 / FIXED_SCALE / scan.endpoints.len() as f64
    }
}
