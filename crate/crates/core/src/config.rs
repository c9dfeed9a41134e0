//! Run configuration and its flat `key = value` file format.
//!
//! Keys follow the algorithm parameter names (`sigma_obs`, `r_max`, `rho`,
//! `d_xy`, `d_theta`, `tau`, ...). `sigma_odom` and the simulator's
//! `odom_noise` take three whitespace-separated values; everything else
//! takes one. `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::integration::{StrategyConfig, StrategyMode};
use crate::motion::MotionNoise;
use crate::simulator::SimConfig;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Particle filter parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub particles: usize,
    /// Prediction noise per odometry step: metres, metres, radians.
    pub sigma_odom: MotionNoise,
    pub sigma_obs: f64,
    /// Distance-field cap.
    pub r_max: f64,
    pub d_xy: f64,
    pub d_theta: f64,
    pub beam_stride: usize,
    /// Ranges at or beyond this are treated as no return.
    pub max_range: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            particles: 300,
            sigma_odom: MotionNoise::new(0.02, 0.02, 0.02),
            sigma_obs: 2.0,
            r_max: 15.0,
            d_xy: 0.05,
            d_theta: 0.05,
            beam_stride: 1,
            max_range: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub filter: FilterParams,
    pub strategy: StrategyConfig,
    /// Text-map detection-rate threshold.
    pub tau: f64,
    /// Text-map histogram cell size, metres.
    pub cell_size: f64,
    pub sim: SimConfig,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            filter: FilterParams::default(),
            strategy: StrategyConfig::default(),
            tau: 0.0,
            cell_size: 0.25,
            sim: SimConfig::default(),
            seed: 0,
        }
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("bad number {s:?}"))
}

fn parse_count(s: &str) -> Result<u64, String> {
    s.parse::<u64>().map_err(|_| format!("expected a non-negative integer, got {s:?}"))
}

/// Splits `key = value` lines, skipping blanks and comments. Yields the
/// 1-based line number with each pair.
pub fn key_values(text: &str) -> Vec<Result<(usize, &str, &str), ConfigError>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((i + 1, k.trim(), v.trim())),
            _ => Err(ConfigError::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, found {line:?}"),
            }),
        })
    })
    .collect()
}

impl Config {
    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let one = || parse_f64(value);
        let f = &mut self.filter;
        let s = &mut self.strategy;
        match key {
            "particles" => f.particles = parse_count(value)? as usize,
            "sigma_odom" => {
                let v = value.split_whitespace().map(parse_f64).collect::<Result<Vec<_>, _>>()?;
                match v[..] {
                    [x, y, t] => f.sigma_odom = MotionNoise::new(x, y, t),
                    _ => return Err("sigma_odom takes three values".into()),
                }
            }
            "sigma_obs" => f.sigma_obs = one()?,
            "r_max" => f.r_max = one()?,
            "d_xy" => f.d_xy = one()?,
            "d_theta" => f.d_theta = one()?,
            "beam_stride" => f.beam_stride = parse_count(value)? as usize,
            "max_range" => f.max_range = one()?,
            "strategy" => s.mode = value.parse().map_err(|e: crate::integration::IntegrationError| e.to_string())?,
            "rho" => s.rho = one()?,
            "sigma_inject" => s.sigma_inject = one()?,
            "sm1_w_in" => s.sm1_w_in = one()?,
            "sm1_w_out" => s.sm1_w_out = one()?,
            "sm2_sigma" => s.sm2_sigma = one()?,
            "detection_window" => s.detection_window = one()?,
            "tau" => self.tau = one()?,
            "cell_size" => self.cell_size = one()?,
            "seed" => self.seed = parse_count(value)?,
            _ => {
                let v = value.split_whitespace().map(parse_f64).collect::<Result<Vec<_>, _>>()?;
                if !self.sim.set(key, &v)? {
                    return Err(format!("unknown key {key:?}"));
                }
            }
        }
        Ok(())
    }

    /// Applies every line of a config file on top of `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for kv in key_values(text) {
            let (line, k, v) = kv?;
            self.set(k, v).map_err(|msg| ConfigError::Parse { line, msg })?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let f = &self.filter;
        if f.particles == 0 {
            return bad("particles must be at least 1".into());
        }
        if !f.sigma_odom.is_valid() {
            return bad("sigma_odom components must be non-negative".into());
        }
        for (name, v) in [("sigma_obs", f.sigma_obs), ("r_max", f.r_max), ("max_range", f.max_range), ("cell_size", self.cell_size)] {
            if v.is_nan() || v <= 0.0 {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("d_xy", f.d_xy), ("d_theta", f.d_theta)] {
            if v.is_nan() || v < 0.0 {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if f.beam_stride == 0 {
            return bad("beam_stride must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.strategy.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.strategy.rho));
        }
        self.strategy.validate(f.particles).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        self.sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let f = &self.filter;
        let s = &self.strategy;
        let mut out = String::new();
        let _ = writeln!(out, "particles = {}", f.particles);
        let _ = writeln!(out, "sigma_odom = {} {} {}", f.sigma_odom.x, f.sigma_odom.y, f.sigma_odom.theta);
        for (k, v) in [
            ("sigma_obs", f.sigma_obs),
            ("r_max", f.r_max),
            ("d_xy", f.d_xy),
            ("d_theta", f.d_theta),
            ("max_range", f.max_range),
            ("rho", s.rho),
            ("sigma_inject", s.sigma_inject),
            ("sm1_w_in", s.sm1_w_in),
            ("sm1_w_out", s.sm1_w_out),
            ("sm2_sigma", s.sm2_sigma),
            ("detection_window", s.detection_window),
            ("tau", self.tau),
            ("cell_size", self.cell_size),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "beam_stride = {}", f.beam_stride);
        let _ = writeln!(out, "strategy = {}", s.mode);
        let _ = writeln!(out, "seed = {}", self.seed);
        for line in self.sim.to_config_text().lines() {
            if let Some((k, v)) = line.split_once(' ') {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn with_strategy(mut self, mode: StrategyMode) -> Self {
        self.strategy.mode = mode;
        self
    }
}
