//! Monte Carlo localization on 2D occupancy grids with text-cue particle
//! injection, plus a synthetic world simulator and benchmark harness.

pub mod config;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod gridmap;
pub mod integration;
pub mod motion;
pub mod sensor;
pub mod seqlog;
pub mod simulator;
pub mod textmap;

pub use config::{Config, ConfigError, FilterParams};
pub use eval::{run, sweep, EvalError, Method, RunInputs, RunOutput, RunReport, SweepSpec};
pub use filter::{FilterError, Particle, ParticleSet};
pub use gridmap::{compute_edt, raycast, Cell, CellIndex, DistanceField, MapError, OccupancyGrid};
pub use integration::{StrategyConfig, StrategyMode, TextDetectionEvent, TextIntegrator};
pub use motion::{MotionNoise, OdomDelta, Pose};
pub use sensor::{scan_likelihood, BeamEndModel, Scan};
pub use seqlog::{Record, SequenceLog};
pub use simulator::{generate_scenario, realize_world, ScenarioKind, SimConfig, World};
pub use textmap::{HistogramSet, TextLikelihoodMap};
