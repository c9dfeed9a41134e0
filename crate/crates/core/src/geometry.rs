//! Planar points and angle arithmetic shared by every module.

use std::f64::consts::{PI, TAU};

/// A point in world coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Signed shortest-arc difference `a - b`, in `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Accumulates weighted unit vectors to form a circular mean.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CircularAccumulator {
    pub sin_sum: f64,
    pub cos_sum: f64,
    pub count: u64,
}

impl CircularAccumulator {
    pub fn push(&mut self, theta: f64, weight: f64) {
        self.sin_sum += weight * theta.sin();
        self.cos_sum += weight * theta.cos();
        self.count += 1;
    }

    /// Mean direction in `[0, 2π)`, or `None` if nothing was pushed or the
    /// resultant vector vanishes.
    pub fn mean(&self) -> Option<f64> {
        if self.count == 0 || (self.sin_sum == 0.0 && self.cos_sum == 0.0) {
            return None;
        }
        Some(normalize_angle(self.sin_sum.atan2(self.cos_sum)))
    }
}
