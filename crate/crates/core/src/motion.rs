//! Planar poses and the holonomic odometry proposal.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{normalize_angle, Point};

/// Robot pose in the world frame. `theta` is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Maps a point given in this pose's frame into the world frame.
    pub fn transform(&self, local: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
        )
    }

    /// Applies a robot-frame displacement.
    pub fn compose(&self, delta: &OdomDelta) -> Pose {
        let p = self.transform(Point::new(delta.dx, delta.dy));
        Pose::new(p.x, p.y, self.theta + delta.dtheta)
    }
}

/// Odometry increment expressed in the robot frame at the start of the step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdomDelta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl OdomDelta {
    pub const fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self { dx, dy, dtheta }
    }

    pub fn translation(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dtheta.is_finite()
    }
}

/// Per-component standard deviations of the odometry noise: meters for the
/// two translations, radians for the rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionNoise {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl MotionNoise {
    pub const ZERO: MotionNoise = MotionNoise::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.theta]
            .iter()
            .all(|s| s.is_finite() && *s >= 0.0)
    }

    /// Draws a noisy version of `delta`. Three normals are always consumed so
    /// the stream position does not depend on the noise magnitude.
    pub fn perturb<R: Rng + ?Sized>(&self, delta: &OdomDelta, rng: &mut R) -> OdomDelta {
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        let et: f64 = rng.sample(StandardNormal);
        OdomDelta::new(
            delta.dx + self.x * ex,
            delta.dy + self.y * ey,
            delta.dtheta + self.theta * et,
        )
    }
}

/// Samples a successor pose: the robot-frame displacement is perturbed by
/// independent Gaussian noise, then composed onto `pose`.
pub fn sample_motion<R: Rng + ?Sized>(
    pose: &Pose,
    delta: &OdomDelta,
    noise: &MotionNoise,
    rng: &mut R,
) -> Pose {
    pose.compose(&noise.perturb(delta, rng))
}
