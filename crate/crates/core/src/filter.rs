//! Particle set and the asynchronous MCL update steps.
//!
//! Prediction runs on every odometry input. Correction is gated on the motion
//! accumulated since the last correction, multiplies each weight by the scan
//! likelihood in log space, renormalizes, and resamples (low-variance) when the
//! effective sample size drops below N/2.

use std::f64::consts::TAU;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{CircularAccumulator, Point};
use crate::gridmap::{DistanceField, OccupancyGrid};
use crate::motion::{sample_motion, MotionNoise, OdomDelta, Pose};
use crate::sensor::{BeamEndModel, Scan, SensorError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FilterError {
    #[error("map has no free cells to initialize particles on")]
    NoFreeCells,
    #[error("a particle set needs at least one particle")]
    Empty,
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
}

/// What a correction did to the set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionOutcome {
    /// Effective sample size after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
    /// All weights underflowed and were reset to uniform.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    acc_translation: f64,
    acc_rotation: f64,
}

impl ParticleSet {
    /// Wraps existing particles; weights are used as given.
    pub fn from_particles(particles: Vec<Particle>) -> Result<Self, FilterError> {
        if particles.is_empty() {
            return Err(FilterError::Empty);
        }
        Ok(Self {
            particles,
            acc_translation: 0.0,
            acc_rotation: 0.0,
        })
    }

    /// `n` particles uniform over the free cells of `grid`, uniform heading,
    /// equal weights.
    pub fn init_uniform<R: Rng + ?Sized>(
        n: usize,
        grid: &OccupancyGrid,
        rng: &mut R,
    ) -> Result<Self, FilterError> {
        if n == 0 {
            return Err(FilterError::Empty);
        }
        let free = grid.free_cells();
        if free.is_empty() {
            return Err(FilterError::NoFreeCells);
        }
        let res = grid.resolution();
        let origin = grid.origin();
        let w = 1.0 / n as f64;
        let particles = (0..n)
            .map(|_| {
                let cell = free[rng.random_range(0..free.len())];
                let x = origin.x + (cell.col as f64 + rng.random::<f64>()) * res;
                let y = origin.y + (cell.row as f64 + rng.random::<f64>()) * res;
                let theta = rng.random_range(0.0..TAU);
                Particle {
                    pose: Pose::new(x, y, theta),
                    weight: w,
                }
            })
            .collect();
        Self::from_particles(particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Direct access for injection strategies. Callers are responsible for
    /// keeping the count fixed and renormalizing.
    pub fn particles_mut(&mut self) -> &mut [Particle] {
        &mut self.particles
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// `(translation, rotation)` accumulated since the last correction.
    pub fn accumulated_motion(&self) -> (f64, f64) {
        (self.acc_translation, self.acc_rotation)
    }

    pub fn reset_motion(&mut self) {
        self.acc_translation = 0.0;
        self.acc_rotation = 0.0;
    }

    pub fn predict<R: Rng + ?Sized>(&mut self, delta: &OdomDelta, noise: &MotionNoise, rng: &mut R) {
        for p in &mut self.particles {
            p.pose = sample_motion(&p.pose, delta, noise, rng);
        }
        self.acc_translation += delta.translation();
        self.acc_rotation += delta.dtheta.abs();
    }

    /// Either gate suffices.
    pub fn should_correct(&self, d_xy: f64, d_theta: f64) -> bool {
        self.acc_translation >= d_xy || self.acc_rotation >= d_theta
    }

    /// Weights every particle by the scan likelihood, renormalizes, resets the
    /// motion accumulators and resamples if the set degenerated.
    pub fn correct<R: Rng + ?Sized>(
        &mut self,
        scan: &Scan,
        dfield: &DistanceField,
        model: &BeamEndModel,
        rng: &mut R,
    ) -> Result<CorrectionOutcome, FilterError> {
        self.correct_with(scan, dfield, model, |_| 1.0, rng)
    }

    /// As [`correct`](Self::correct), with an extra multiplicative per-particle
    /// factor applied in the same update.
    pub fn correct_with<R, F>(
        &mut self,
        scan: &Scan,
        dfield: &DistanceField,
        model: &BeamEndModel,
        factor: F,
        rng: &mut R,
    ) -> Result<CorrectionOutcome, FilterError>
    where
        R: Rng + ?Sized,
        F: Fn(&Pose) -> f64,
    {
        let prepared = model.prepare(scan)?;
        let log_lik: Vec<f64> = self
            .particles
            .iter()
            .map(|p| model.log_likelihood(dfield, &p.pose, &prepared) + factor(&p.pose).ln())
            .collect();
        let degenerate = !self.reweight_log(&log_lik);
        self.reset_motion();
        let ess = self.effective_sample_size();
        let resampled = self.resample_if_needed(rng);
        Ok(CorrectionOutcome {
            ess,
            resampled,
            degenerate,
        })
    }

    /// `w_i ← w_i · exp(log_factor_i)`, normalized with max subtraction.
    /// Returns `false` and resets to uniform weights if nothing survives.
    pub fn reweight_log(&mut self, log_factors: &[f64]) -> bool {
        debug_assert_eq!(log_factors.len(), self.particles.len());
        let logs: Vec<f64> = self
            .particles
            .iter()
            .zip(log_factors)
            .map(|(p, lf)| p.weight.ln() + lf)
            .collect();
        let max = logs
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            self.reset_uniform();
            return false;
        }
        for (p, l) in self.particles.iter_mut().zip(&logs) {
            p.weight = if l.is_nan() { 0.0 } else { (l - max).exp() };
        }
        self.normalize()
    }

    /// Scales weights to sum to one. Returns `false` (after resetting to
    /// uniform) when the sum is zero or not finite.
    pub fn normalize(&mut self) -> bool {
        let sum = self.weight_sum();
        if !(sum.is_finite() && sum > 0.0) {
            self.reset_uniform();
            return false;
        }
        for p in &mut self.particles {
            p.weight /= sum;
        }
        true
    }

    fn reset_uniform(&mut self) {
        let w = 1.0 / self.particles.len() as f64;
        for p in &mut self.particles {
            p.weight = w;
        }
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
    }

    /// Resamples iff ESS < N/2.
    pub fn resample_if_needed<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        if self.effective_sample_size() < self.particles.len() as f64 / 2.0 {
            self.resample_low_variance(rng);
            true
        } else {
            false
        }
    }

    /// Systematic resampling: one uniform offset in `[0, 1/N)` and N evenly
    /// spaced pointers into the cumulative weights.
    pub fn resample_low_variance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let indices = systematic_indices(&self.weights(), rng.random::<f64>());
        let n = self.particles.len();
        let w = 1.0 / n as f64;
        self.particles = indices
            .into_iter()
            .map(|i| Particle {
                pose: self.particles[i].pose,
                weight: w,
            })
            .collect();
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Weighted mean position and weighted circular mean heading.
    pub fn estimate_pose(&self) -> Pose {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sw = 0.0;
        let mut heading = CircularAccumulator::default();
        for p in &self.particles {
            sx += p.weight * p.pose.x;
            sy += p.weight * p.pose.y;
            sw += p.weight;
            heading.push(p.pose.theta, p.weight);
        }
        let c = Point::new(sx / sw, sy / sw);
        Pose::new(c.x, c.y, heading.mean().unwrap_or(0.0))
    }
}

/// Indices chosen by systematic resampling; `u01` in `[0, 1)` sets the offset.
pub fn systematic_indices(weights: &[f64], u01: f64) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let r = u01 * step;
    let mut out = Vec::with_capacity(n);
    let mut c = weights[0];
    let mut i = 0;
    for m in 0..n {
        let u = r + m as f64 * step;
        while u > c && i + 1 < n {
            i += 1;
            c += weights[i];
        }
        out.push(i);
    }
    out
}
