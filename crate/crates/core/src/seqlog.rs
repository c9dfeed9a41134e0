//! Time-ordered sensor logs and their line-oriented text format.
//!
//! ```text
//! <t> GT <x> <y> <theta>
//! <t> ODOM <dx> <dy> <dtheta>
//! <t> SCAN <K> <r_1> ... <r_K>
//! <t> TEXT <tag> <camera_id>
//! ```
//!
//! Scan bearings are implied: `K` beams evenly spaced over a full turn,
//! starting at bearing 0. A beam without a return carries the sensor's
//! maximum range.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::motion::{OdomDelta, Pose};

#[derive(Error, Debug)]
pub enum LogError {
    #[error("cannot read or write log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("log line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    GroundTruth { t: f64, pose: Pose },
    Odom { t: f64, delta: OdomDelta },
    Scan { t: f64, ranges: Vec<f64> },
    Text { t: f64, tag: String, camera: usize },
}

impl Record {
    pub fn timestamp(&self) -> f64 {
        match self {
            Record::GroundTruth { t, .. }
            | Record::Odom { t, .. }
            | Record::Scan { t, .. }
            | Record::Text { t, .. } => *t,
        }
    }

    fn write_line(&self, out: &mut String) {
        let _ = match self {
            Record::GroundTruth { t, pose } => {
                writeln!(out, "{t} GT {} {} {}", pose.x, pose.y, pose.theta)
            }
            Record::Odom { t, delta } => {
                writeln!(out, "{t} ODOM {} {} {}", delta.dx, delta.dy, delta.dtheta)
            }
            Record::Scan { t, ranges } => {
                let _ = write!(out, "{t} SCAN {}", ranges.len());
                for r in ranges {
                    let _ = write!(out, " {r}");
                }
                writeln!(out)
            }
            Record::Text { t, tag, camera } => writeln!(out, "{t} TEXT {tag} {camera}"),
        };
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceLog {
    records: Vec<Record>,
}

impl SequenceLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; timestamps must not decrease.
    pub fn push(&mut self, record: Record) {
        debug_assert!(
            self.records
                .last()
                .is_none_or(|r| r.timestamp() <= record.timestamp()),
            "log timestamps must be non-decreasing"
        );
        self.records.push(record);
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ground_truth(&self) -> Vec<(f64, Pose)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::GroundTruth { t, pose } => Some((*t, *pose)),
                _ => None,
            })
            .collect()
    }

    /// Time between the first and last record.
    pub fn duration(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.timestamp() - a.timestamp(),
            _ => 0.0,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            r.write_line(&mut out);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        let mut log = SequenceLog::new();
        let mut last_t = f64::NEG_INFINITY;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let err = |msg: String| LogError::Parse { line: line_no, msg };
            let num = |tok: &str| -> Result<f64, LogError> {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad number {tok:?}")))
            };
            if tokens.len() < 2 {
                return Err(err("expected `<t> <KIND> ...`".into()));
            }
            let t = num(tokens[0])?;
            if t < last_t {
                return Err(err(format!("timestamp {t} is earlier than {last_t}")));
            }
            last_t = t;
            let args = &tokens[2..];
            let expect = |n: usize| -> Result<(), LogError> {
                if args.len() != n {
                    return Err(err(format!(
                        "{} record needs {n} values, found {}",
                        tokens[1],
                        args.len()
                    )));
                }
                Ok(())
            };
            let record = match tokens[1] {
                "GT" => {
                    expect(3)?;
                    Record::GroundTruth {
                        t,
                        pose: Pose::new(num(args[0])?, num(args[1])?, num(args[2])?),
                    }
                }
                "ODOM" => {
                    expect(3)?;
                    Record::Odom {
                        t,
                        delta: OdomDelta::new(num(args[0])?, num(args[1])?, num(args[2])?),
                    }
                }
                "SCAN" => {
                    let k: usize = args
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("SCAN needs a beam count".into()))?;
                    if args.len() != k + 1 {
                        return Err(err(format!(
                            "SCAN declares {k} beams but has {} ranges",
                            args.len() - 1
                        )));
                    }
                    let ranges = args[1..].iter().map(|s| num(s)).collect::<Result<_, _>>()?;
                    Record::Scan { t, ranges }
                }
                "TEXT" => {
                    if args.len() < 2 {
                        return Err(err("TEXT needs a tag and a camera id".into()));
                    }
                    let (cam, tag) = args.split_last().unwrap();
                    let camera = cam
                        .parse::<usize>()
                        .map_err(|_| err(format!("bad camera id {cam:?}")))?;
                    Record::Text {
                        t,
                        tag: tag.join(" "),
                        camera,
                    }
                }
                other => return Err(err(format!("unknown record kind {other:?}"))),
            };
            log.records.push(record);
        }
        Ok(log)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
