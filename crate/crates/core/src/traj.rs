//! Dual-arm end-effector trajectories: data model, CSV ingestion and
//! kinematic derivations.
//!
//! Units are fixed: positions in meters, angles in radians, timestamps in
//! seconds. Nothing here converts units.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column names of the canonical trajectory file, in order.
pub const TRAJECTORY_HEADER: [&str; 15] = [
    "t", "lx", "ly", "lz", "lroll", "lpitch", "lyaw", "lo", "rx", "ry", "rz", "rroll", "rpitch", "ryaw", "ro",
];

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("empty trajectory")]
    Empty,
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: timestamp {t} does not increase over previous {prev}")]
    NonMonotone { row: usize, t: f64, prev: f64 },
    #[error("bad header: expected `{}`, found `{found}`", TRAJECTORY_HEADER.join(","))]
    BadHeader { found: String },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("trajectory too short: need {needed} steps, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("profile undefined: need {needed} steps, have {have}")]
    ProfileUndefined { needed: usize, have: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];
}

/// Which arms an operation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSelector {
    Left,
    Right,
    #[default]
    Both,
}

impl ArmSelector {
    pub fn arms(self) -> &'static [Arm] {
        match self {
            ArmSelector::Left => &[Arm::Left],
            ArmSelector::Right => &[Arm::Right],
            ArmSelector::Both => &Arm::BOTH,
        }
    }

    pub fn includes(self, arm: Arm) -> bool {
        self.arms().contains(&arm)
    }
}

impl fmt::Display for ArmSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArmSelector::Left => "left",
            ArmSelector::Right => "right",
            ArmSelector::Both => "both",
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// One end-effector state: position, roll/pitch/yaw and gripper openness
/// (1 = fully open).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
    pub openness: f64,
}

impl Pose {
    pub fn new(position: [f64; 3], orientation: [f64; 3], openness: f64) -> Result<Self, TrajError> {
        let pose = Pose {
            position,
            orientation,
            openness,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), TrajError> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(TrajError::InvalidPose("non-finite component".into()));
        }
        if !(0.0..=1.0).contains(&self.openness) {
            return Err(TrajError::InvalidPose(format!(
                "openness {} outside [0, 1]",
                self.openness
            )));
        }
        if let Some(a) = self.orientation.iter().find(|a| !(**a > -PI && **a <= PI)) {
            return Err(TrajError::InvalidPose(format!("orientation {a} outside (-pi, pi]")));
        }
        Ok(())
    }

    /// `[x, y, z, roll, pitch, yaw, o]`
    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.position;
        let [r, p, w] = self.orientation;
        [x, y, z, r, p, w, self.openness]
    }

    pub fn from_array(v: [f64; 7]) -> Result<Self, TrajError> {
        Pose::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualArmStep {
    pub timestamp: f64,
    pub left: Pose,
    pub right: Pose,
}

impl DualArmStep {
    pub fn pose(&self, arm: Arm) -> &Pose {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }

    /// Left arm then right arm, 14 scalars.
    pub fn flatten(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[..7].copy_from_slice(&self.left.to_array());
        out[7..].copy_from_slice(&self.right.to_array());
        out
    }
}

/// A validated sequence of dual-arm steps with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    steps: Vec<DualArmStep>,
}

impl Trajectory {
    pub fn new(steps: Vec<DualArmStep>) -> Result<Self, TrajError> {
        if steps.is_empty() {
            return Err(TrajError::Empty);
        }
        for (i, s) in steps.iter().enumerate() {
            let row = i + 1;
            if !s.timestamp.is_finite() || s.timestamp < 0.0 {
                return Err(TrajError::MalformedRow {
                    row,
                    reason: format!("timestamp {} must be finite and non-negative", s.timestamp),
                });
            }
            for pose in [&s.left, &s.right] {
                pose.validate().map_err(|e| TrajError::MalformedRow {
                    row,
                    reason: e.to_string(),
                })?;
            }
            if i > 0 && s.timestamp <= steps[i - 1].timestamp {
                return Err(TrajError::NonMonotone {
                    row,
                    t: s.timestamp,
                    prev: steps[i - 1].timestamp,
                });
            }
        }
        Ok(Trajectory { steps })
    }

    pub fn steps(&self) -> &[DualArmStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn positions(&self, arm: Arm) -> Vec<[f64; 3]> {
        self.steps.iter().map(|s| s.pose(arm).position).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.timestamp).collect()
    }

    /// The `K x 14` action matrix, one flattened step per row.
    pub fn to_matrix(&self) -> Vec<[f64; 14]> {
        self.steps.iter().map(DualArmStep::flatten).collect()
    }

    /// Same path traversed backwards; step `i` keeps timestamp `t_i` but takes
    /// the poses of step `K-1-i`.
    pub fn reversed(&self) -> Trajectory {
        let n = self.steps.len();
        let steps = (0..n)
            .map(|i| DualArmStep {
                timestamp: self.steps[i].timestamp,
                left: self.steps[n - 1 - i].left,
                right: self.steps[n - 1 - i].right,
            })
            .collect();
        Trajectory { steps }
    }

    /// Writes the canonical CSV form. Floats use the shortest representation
    /// that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrajError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(TRAJECTORY_HEADER)?;
        for s in &self.steps {
            let mut row = Vec::with_capacity(15);
            row.push(s.timestamp.to_string());
            row.extend(s.flatten().iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| TrajError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrajError> {
        let file = std::fs::File::create(path).map_err(|source| TrajError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Parses a trajectory file.
///
/// With `ArmSelector::Left` or `Right`, the columns of the other arm are not
/// read; they may be blank and the unselected arm is filled with the default
/// (all-zero) pose.
pub fn parse_trajectory(path: &Path, arms: ArmSelector) -> Result<Trajectory, TrajError> {
    let file = std::fs::File::open(path).map_err(|source| TrajError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trajectory(file, arms)
}

pub fn read_trajectory<R: Read>(input: R, arms: ArmSelector) -> Result<Trajectory, TrajError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(TrajError::Empty),
        Some(h) => h?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != TRAJECTORY_HEADER {
        return Err(TrajError::BadHeader { found: names.join(",") });
    }

    let mut steps = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| TrajError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() != TRAJECTORY_HEADER.len() {
            return Err(TrajError::MalformedRow {
                row,
                reason: format!("expected {} columns, found {}", TRAJECTORY_HEADER.len(), rec.len()),
            });
        }
        let field = |col: usize| -> Result<f64, TrajError> {
            let raw = rec[col].trim();
            raw.parse::<f64>().map_err(|_| TrajError::MalformedRow {
                row,
                reason: format!("column `{}`: `{raw}` is not a number", TRAJECTORY_HEADER[col]),
            })
        };
        let pose = |start: usize| -> Result<Pose, TrajError> {
            let mut v = [0.0; 7];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = field(start + k)?;
            }
            Pose::from_array(v).map_err(|e| TrajError::MalformedRow {
                row,
                reason: e.to_string(),
            })
        };
        let timestamp = field(0)?;
        let left = if arms.includes(Arm::Left) {
            pose(1)?
        } else {
            Pose::default()
        };
        let right = if arms.includes(Arm::Right) {
            pose(8)?
        } else {
            Pose::default()
        };
        if let Some(prev) = steps.last().map(|s: &DualArmStep| s.timestamp) {
            if timestamp <= prev {
                return Err(TrajError::NonMonotone {
                    row,
                    t: timestamp,
                    prev,
                });
            }
        }
        steps.push(DualArmStep { timestamp, left, right });
    }
    Trajectory::new(steps)
}

/// Step-to-step change of one arm's pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionDelta {
    pub dp: [f64; 3],
    /// Orientation change, wrapped into `(-pi, pi]` per component.
    pub dr: [f64; 3],
}

pub fn motion_deltas(t: &Trajectory, arm: Arm) -> Result<Vec<MotionDelta>, TrajError> {
    if t.len() < 2 {
        return Err(TrajError::TooShort {
            needed: 2,
            have: t.len(),
        });
    }
    Ok(t.steps
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].pose(arm), w[1].pose(arm));
            MotionDelta {
                dp: std::array::from_fn(|k| b.position[k] - a.position[k]),
                dr: std::array::from_fn(|k| wrap_angle(b.orientation[k] - a.orientation[k])),
            }
        })
        .collect())
}

/// Scalar speed and acceleration series of one arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KinematicProfile {
    pub speeds: Vec<f64>,
    pub accelerations: Vec<f64>,
}

/// `speeds[i] = |p[i+1] - p[i]| / (t[i+1] - t[i])` and
/// `accelerations[i] = (speeds[i+1] - speeds[i]) / (t[i+2] - t[i+1])`.
///
/// A two-step trajectory yields one speed and no accelerations.
pub fn kinematic_profile(t: &Trajectory, arm: Arm) -> Result<KinematicProfile, TrajError> {
    if t.len() < 2 {
        return Err(TrajError::ProfileUndefined {
            needed: 2,
            have: t.len(),
        });
    }
    let steps = &t.steps;
    let speeds: Vec<f64> = steps
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].pose(arm).position, w[1].pose(arm).position);
            let d2: f64 = (0..3).map(|k| (b[k] - a[k]) * (b[k] - a[k])).sum();
            d2.sqrt() / (w[1].timestamp - w[0].timestamp)
        })
        .collect();
    let accelerations = speeds
        .windows(2)
        .enumerate()
        .map(|(i, v)| (v[1] - v[0]) / (steps[i + 2].timestamp - steps[i + 1].timestamp))
        .collect();
    Ok(KinematicProfile { speeds, accelerations })
}
