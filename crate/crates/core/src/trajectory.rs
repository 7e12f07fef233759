//! Trajectory container, validation, RBF resampling and JSON-lines files.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{EulerFixedRPY, RigidTransform};
use crate::io::{parse_jsonl, write_jsonl_atomic};
use crate::kinematics::HAND_DOF;

pub const FEATURE_DIM: usize = 512;
pub const DEFAULT_RESAMPLE_LEN: usize = 200;
const RBF_RIDGE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("invalid trajectory: {}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("feature vector must have {FEATURE_DIM} entries, got {0}")]
    FeatureLength(usize),
    #[error("initial {0} does not match trajectory step 0")]
    InitMismatch(&'static str),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embodiment {
    Hand16,
    Gripper1,
}

impl Embodiment {
    pub fn hand_dim(self) -> usize {
        match self {
            Embodiment::Hand16 => HAND_DOF,
            Embodiment::Gripper1 => 1,
        }
    }

    pub fn from_hand_dim(n: usize) -> Option<Self> {
        match n {
            HAND_DOF => Some(Embodiment::Hand16),
            1 => Some(Embodiment::Gripper1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub name: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.detail)
    }
}

/// Time-indexed wrist pose (xyz meters, fixed-axis RPY radians) and hand
/// channels (16 joint angles, or a single gripper aperture).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub wrist: Vec<[f64; 6]>,
    pub hand: Vec<Vec<f64>>,
    pub embodiment: Embodiment,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, wrist: Vec<[f64; 6]>, hand: Vec<Vec<f64>>, embodiment: Embodiment) -> Result<Self, TrajectoryError> {
        let t = Self {
            times,
            wrist,
            hand,
            embodiment,
        };
        validate(&t).map_err(TrajectoryError::Invalid)?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn wrist_pose(&self, k: usize) -> RigidTransform {
        let w = &self.wrist[k];
        RigidTransform::from_parts(
            EulerFixedRPY::new(w[3], w[4], w[5]).to_matrix(),
            nalgebra::Vector3::new(w[0], w[1], w[2]),
        )
    }

    /// Wrist and hand values of step `k` as one flat row.
    pub fn row(&self, k: usize) -> Vec<f64> {
        let mut r = self.wrist[k].to_vec();
        r.extend_from_slice(&self.hand[k]);
        r
    }

    pub fn channel_count(&self) -> usize {
        6 + self.embodiment.hand_dim()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        if c < 6 {
            self.wrist.iter().map(|w| w[c]).collect()
        } else {
            self.hand.iter().map(|h| h[c - 6]).collect()
        }
    }

    /// Rebuilds a trajectory from per-channel series (6 wrist then hand).
    fn from_channels(times: Vec<f64>, channels: &[Vec<f64>], embodiment: Embodiment) -> Self {
        let n = times.len();
        let wrist = (0..n).map(|k| std::array::from_fn(|c| channels[c][k])).collect();
        let hand = (0..n).map(|k| channels[6..].iter().map(|ch| ch[k]).collect()).collect();
        Self {
            times,
            wrist,
            hand,
            embodiment,
        }
    }

    /// Makes each RPY channel continuous by removing jumps larger than pi.
    pub fn unwrap_orientation(&mut self) {
        for c in 3..6 {
            let mut ch: Vec<f64> = self.wrist.iter().map(|w| w[c]).collect();
            unwrap_angles(&mut ch);
            for (w, v) in self.wrist.iter_mut().zip(ch) {
                w[c] = v;
            }
        }
    }
}

/// In-place phase unwrapping.
pub fn unwrap_angles(xs: &mut [f64]) {
    let mut offset = 0.0;
    for k in 1..xs.len() {
        let prev = xs[k - 1];
        let mut cur = xs[k] + offset;
        while cur - prev > PI {
            cur -= 2.0 * PI;
            offset -= 2.0 * PI;
        }
        while cur - prev < -PI {
            cur += 2.0 * PI;
            offset += 2.0 * PI;
        }
        xs[k] = cur;
    }
}

/// Checks every invariant and reports all violations.
pub fn validate(t: &Trajectory) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let mut push = |name: &'static str, detail: String| v.push(Violation { name, detail });
    let n = t.times.len();
    if n < 2 {
        push("length", format!("need at least 2 steps, got {n}"));
    }
    if t.wrist.len() != n || t.hand.len() != n {
        push(
            "length",
            format!("times {n}, wrist {}, hand {} differ", t.wrist.len(), t.hand.len()),
        );
    }
    if t.times.iter().any(|x| !x.is_finite()) {
        push("times finite", "non-finite time stamp".into());
    }
    if let Some(k) = t.times.windows(2).position(|w| !(w[1] > w[0])) {
        push("times", format!("not strictly increasing at step {}", k + 1));
    }
    if t.wrist.iter().flatten().any(|x| !x.is_finite()) {
        push("wrist finite", "non-finite wrist value".into());
    }
    if t.hand.iter().flatten().any(|x| !x.is_finite()) {
        push("hand finite", "non-finite hand value".into());
    }
    let dim = t.embodiment.hand_dim();
    if let Some(k) = t.hand.iter().position(|h| h.len() != dim) {
        push("hand width", format!("step {k} has {} channels, expected {dim}", t.hand[k].len()));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Gaussian RBF interpolant over normalized time, one center per sample.
/// A cubic trend matching the endpoint values and one-sided slope estimates
/// is removed before fitting and added back afterwards.
struct RbfFit {
    centers: Vec<f64>,
    width: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl RbfFit {
    fn new(s: &[f64]) -> Self {
        let m = s.len();
        let width = (s[m - 1] - s[0]) / (m - 1) as f64;
        let mut k = DMatrix::from_fn(m, m, |i, j| gauss((s[i] - s[j]) / width));
        for i in 0..m {
            k[(i, i)] += RBF_RIDGE;
        }
        let chol = k.cholesky().expect("Gaussian kernel with ridge is positive definite");
        Self {
            centers: s.to_vec(),
            width,
            chol,
        }
    }

    fn eval(&self, ys: &[f64], at: &[f64]) -> Vec<f64> {
        let trend = endpoint_trend(&self.centers, ys);
        let m = ys.len();
        let resid = DVector::from_iterator(m, self.centers.iter().zip(ys).map(|(s, y)| y - trend(*s)));
        let coef = self.chol.solve(&resid);
        at.iter()
            .map(|&s| {
                trend(s)
                    + self
                        .centers
                        .iter()
                        .zip(coef.iter())
                        .map(|(c, a)| a * gauss((s - c) / self.width))
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Cubic Hermite curve through both endpoints whose end slopes are
/// second-order one-sided differences (a straight line for 2 samples).
fn endpoint_trend<'a>(s: &'a [f64], y: &'a [f64]) -> impl Fn(f64) -> f64 + 'a {
    let m = s.len();
    let (s0, s1) = (s[0], s[m - 1]);
    let span = s1 - s0;
    let chord = (y[m - 1] - y[0]) / span;
    let (d0, d1) = if m >= 3 {
        (
            one_sided_slope([s[0], s[1], s[2]], [y[0], y[1], y[2]]),
            one_sided_slope([s[m - 1], s[m - 2], s[m - 3]], [y[m - 1], y[m - 2], y[m - 3]]),
        )
    } else {
        (chord, chord)
    };
    move |x: f64| {
        let u = (x - s0) / span;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * y[0] + h10 * span * d0 + h01 * y[m - 1] + h11 * span * d1
    }
}

/// Derivative at `x[0]` of the parabola through three samples.
fn one_sided_slope(x: [f64; 3], y: [f64; 3]) -> f64 {
    let (a, b) = (x[1] - x[0], x[2] - x[0]);
    (y[1] - y[0]) * b / (a * (b - a)) - (y[2] - y[0]) * a / (b * (b - a))
}

fn gauss(r: f64) -> f64 {
    (-r * r).exp()
}

/// Resamples every channel to `n` uniformly spaced times spanning the input.
pub fn resample_rbf(traj: &Trajectory, n: usize) -> Result<Trajectory, TrajectoryError> {
    if traj.len() < 2 {
        return Err(TrajectoryError::TooShort(traj.len()));
    }
    if n < 2 {
        return Err(TrajectoryError::TooShort(n));
    }
    validate(traj).map_err(TrajectoryError::Invalid)?;
    let mut src = traj.clone();
    src.unwrap_orientation();
    let (t0, t1) = (traj.times[0], traj.times[traj.len() - 1]);
    let s: Vec<f64> = traj.times.iter().map(|t| (t - t0) / (t1 - t0)).collect();
    let at: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let fit = RbfFit::new(&s);
    let channels: Vec<Vec<f64>> = (0..src.channel_count()).map(|c| fit.eval(&src.channel(c), &at)).collect();
    let times = at.iter().map(|a| t0 + a * (t1 - t0)).collect();
    Ok(Trajectory::from_channels(times, &channels, traj.embodiment))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    HumanRetargeted,
    RobotDemo,
}

/// One training example: target trajectory plus the conditioning inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord {
    pub trajectory: Trajectory,
    pub features: Vec<f64>,
    pub init_hand: Vec<f64>,
    pub init_wrist: [f64; 6],
    pub label: String,
    pub source: Source,
}

impl DemoRecord {
    /// Initial state is taken from step 0 of the trajectory.
    pub fn new(trajectory: Trajectory, features: Vec<f64>, label: &str, source: Source) -> Result<Self, TrajectoryError> {
        if features.len() != FEATURE_DIM {
            return Err(TrajectoryError::FeatureLength(features.len()));
        }
        validate(&trajectory).map_err(TrajectoryError::Invalid)?;
        Ok(Self {
            init_hand: trajectory.hand[0].clone(),
            init_wrist: trajectory.wrist[0],
            trajectory,
            features,
            label: label.to_string(),
            source,
        })
    }

    pub fn check(&self) -> Result<(), TrajectoryError> {
        if self.features.len() != FEATURE_DIM {
            return Err(TrajectoryError::FeatureLength(self.features.len()));
        }
        validate(&self.trajectory).map_err(TrajectoryError::Invalid)?;
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
        if !close(&self.init_hand, &self.trajectory.hand[0]) {
            return Err(TrajectoryError::InitMismatch("hand"));
        }
        if !close(&self.init_wrist, &self.trajectory.wrist[0]) {
            return Err(TrajectoryError::InitMismatch("wrist"));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StepLine {
    t: f64,
    wrist: RigidTransform,
    hand: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

fn to_lines(t: &Trajectory) -> Vec<StepLine> {
    (0..t.len())
        .map(|k| StepLine {
            t: t.times[k],
            wrist: t.wrist_pose(k),
            hand: t.hand[k].clone(),
            features: None,
            source: None,
            label: None,
        })
        .collect()
}

fn from_lines(lines: &[StepLine]) -> Result<Trajectory, TrajectoryError> {
    let dim = lines.first().map(|l| l.hand.len()).ok_or(TrajectoryError::TooShort(0))?;
    let embodiment = Embodiment::from_hand_dim(dim).ok_or_else(|| {
        TrajectoryError::Invalid(vec![Violation {
            name: "hand width",
            detail: format!("{dim} hand channels"),
        }])
    })?;
    let wrist = lines
        .iter()
        .map(|l| {
            let p = &l.wrist.translation;
            let [r, pi, y] = l.wrist.rpy().as_array();
            [p.x, p.y, p.z, r, pi, y]
        })
        .collect();
    let mut t = Trajectory {
        times: lines.iter().map(|l| l.t).collect(),
        wrist,
        hand: lines.iter().map(|l| l.hand.clone()).collect(),
        embodiment,
    };
    t.unwrap_orientation();
    validate(&t).map_err(TrajectoryError::Invalid)?;
    Ok(t)
}

fn parse_lines(text: &str) -> Result<Vec<StepLine>, TrajectoryError> {
    parse_jsonl(text).map_err(|(line, e)| TrajectoryError::Parse { line, msg: e.to_string() })
}

pub fn trajectory_to_jsonl(t: &Trajectory) -> String {
    to_lines(t).iter().map(|l| serde_json::to_string(l).expect("serializable") + "\n").collect()
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<(), TrajectoryError> {
    Ok(write_jsonl_atomic(path, &to_lines(t))?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, TrajectoryError> {
    from_lines(&parse_lines(&fs::read_to_string(path)?)?)
}

/// Demo files are trajectory files whose first line also carries
/// `features`, `source` and `label`.
pub fn write_demo(path: &Path, d: &DemoRecord) -> Result<(), TrajectoryError> {
    let mut lines = to_lines(&d.trajectory);
    lines[0].features = Some(d.features.clone());
    lines[0].source = Some(d.source);
    lines[0].label = Some(d.label.clone());
    Ok(write_jsonl_atomic(path, &lines)?)
}

pub fn read_demo(path: &Path) -> Result<DemoRecord, TrajectoryError> {
    let mut lines = parse_lines(&fs::read_to_string(path)?)?;
    let first = lines.first_mut().ok_or(TrajectoryError::TooShort(0))?;
    let missing = |what: &str| TrajectoryError::Parse {
        line: 1,
        msg: format!("missing \"{what}\""),
    };
    let features = first.features.take().ok_or_else(|| missing("features"))?;
    let source = first.source.take().ok_or_else(|| missing("source"))?;
    let label = first.label.take().ok_or_else(|| missing("label"))?;
    let d = DemoRecord::new(from_lines(&lines)?, features, &label, source)?;
    d.check()?;
    Ok(d)
}
