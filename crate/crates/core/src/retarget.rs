//! Human-to-robot retargeting: fingertip-vector matching for the hand, the
//! camera/world/robot transform chain for the wrist, workspace fitting,
//! gripper reduction, smoothing, augmentation and hand-policy distillation.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    accel_to_camera, camera_in_world_from_accel, project_to_rotation, world_to_robot, AccelSample, EulerFixedRPY, GeometryError,
    RigidTransform,
};
use crate::kinematics::{HandChain, JointVector, KinematicsError};
use crate::learn::{AdamConfig, AdamState, LearnError, Mlp, MlpShape};
use crate::pnp::{solve_pnp, CameraIntrinsics, Correspondence, PnpError};
use crate::trajectory::Trajectory;

pub const HUMAN_KEYPOINTS: usize = 21;
pub const WRIST: usize = 0;
pub const THUMB_TIP: usize = 4;
pub const INDEX_TIP: usize = 8;
pub const MIDDLE_TIP: usize = 12;
pub const RING_TIP: usize = 16;
pub const PINKY_TIP: usize = 20;

pub const DEFAULT_GRIPPER_THRESHOLD: f64 = 0.06;

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("keypoint index {index} out of range for {len} keypoints")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid hand frame: {0}")]
    InvalidFrame(String),
    #[error("invalid key-vector spec: {0}")]
    InvalidSpec(String),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("frame {frame}: no wrist pose (needs 2D keypoints or an ingested camera-frame pose)")]
    MissingWristPose { frame: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("frame {frame}: {source}")]
    Pnp { frame: usize, source: PnpError },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// 3D hand keypoints in the wrist-local frame (21 points, MANO order),
/// optional detector pixels and shape/pose metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanHandFrame {
    pub keypoints: Vec<Vector3<f64>>,
    pub keypoints_2d: Option<Vec<Vector2<f64>>>,
    pub theta: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub timestamp: f64,
}

impl HumanHandFrame {
    pub fn new(keypoints: Vec<Vector3<f64>>, timestamp: f64) -> Result<Self, RetargetError> {
        let f = Self {
            keypoints,
            keypoints_2d: None,
            theta: None,
            beta: None,
            timestamp,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), RetargetError> {
        if self.keypoints.len() != HUMAN_KEYPOINTS {
            return Err(RetargetError::InvalidFrame(format!(
                "expected {HUMAN_KEYPOINTS} keypoints, got {}",
                self.keypoints.len()
            )));
        }
        if self.keypoints.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(RetargetError::InvalidFrame("non-finite keypoint".into()));
        }
        if let Some(kp) = &self.keypoints_2d {
            if kp.len() != HUMAN_KEYPOINTS || kp.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(RetargetError::InvalidFrame("2D keypoints must be 21 finite points".into()));
            }
        }
        if !self.timestamp.is_finite() {
            return Err(RetargetError::InvalidFrame("non-finite timestamp".into()));
        }
        Ok(())
    }
}

/// One matched vector: `human[1] - human[0]` against `robot[1] - robot[0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub human: [usize; 2],
    pub robot: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyVectorSpec {
    pub pairs: Vec<KeyPair>,
    pub scales: Vec<f64>,
}

/// Human keypoint standing in for each robot keypoint (palm, thumb, index,
/// middle, ring); the human pinky drives the robot ring finger.
const HUMAN_FOR_ROBOT: [usize; 5] = [WRIST, THUMB_TIP, INDEX_TIP, MIDDLE_TIP, PINKY_TIP];

/// Robot keypoint index pairs of the default spec: palm to each tip, thumb
/// to each finger, then index-middle, middle-ring and index-ring.
const DEFAULT_ROBOT_PAIRS: [[usize; 2]; 10] = [[0, 1], [0, 2], [0, 3], [0, 4], [1, 2], [1, 3], [1, 4], [2, 3], [3, 4], [2, 4]];

impl KeyVectorSpec {
    pub fn new(pairs: Vec<KeyPair>, scales: Vec<f64>) -> Result<Self, RetargetError> {
        let s = Self { pairs, scales };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), RetargetError> {
        if self.pairs.is_empty() {
            return Err(RetargetError::InvalidSpec("need at least one pair".into()));
        }
        if self.pairs.len() != self.scales.len() {
            return Err(RetargetError::InvalidSpec(format!(
                "{} pairs but {} scales",
                self.pairs.len(),
                self.scales.len()
            )));
        }
        if self.scales.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(RetargetError::InvalidSpec("scales must be positive".into()));
        }
        Ok(())
    }

    /// Checks every index against the two embodiments.
    pub fn check_indices(&self, human_len: usize, robot_len: usize) -> Result<(), RetargetError> {
        for p in &self.pairs {
            for &i in &p.human {
                if i >= human_len {
                    return Err(RetargetError::IndexOutOfRange { index: i, len: human_len });
                }
            }
            for &i in &p.robot {
                if i >= robot_len {
                    return Err(RetargetError::IndexOutOfRange { index: i, len: robot_len });
                }
            }
        }
        Ok(())
    }

    fn default_pairs() -> Vec<KeyPair> {
        DEFAULT_ROBOT_PAIRS
            .iter()
            .map(|&[a, b]| KeyPair {
                human: [HUMAN_FOR_ROBOT[a], HUMAN_FOR_ROBOT[b]],
                robot: [a, b],
            })
            .collect()
    }

    /// Default ten pairs, each scaled by the ratio of its length on the
    /// canonical flat human hand to its length on the robot at `q = 0`.
    pub fn default_for(chain: &HandChain) -> Result<Self, RetargetError> {
        let pairs = Self::default_pairs();
        let human = canonical_flat_hand();
        let robot = chain.robot_keypoints(&JointVector::zeros(chain.dof()))?;
        let mut scales = Vec::with_capacity(pairs.len());
        for p in &pairs {
            let vh = (human[p.human[1]] - human[p.human[0]]).norm();
            let vr = (robot[p.robot[1]] - robot[p.robot[0]]).norm();
            if vr <= 1e-12 {
                return Err(RetargetError::InvalidSpec("robot key vector has zero length at rest".into()));
            }
            scales.push(vh / vr);
        }
        Self::new(pairs, scales)
    }

    /// Default pairs with one shared scale.
    pub fn uniform(scale: f64) -> Result<Self, RetargetError> {
        let pairs = Self::default_pairs();
        let n = pairs.len();
        Self::new(pairs, vec![scale; n])
    }
}

/// Flat right hand, wrist at the origin, fingers along `+x`, thumb toward
/// `+y`, palm facing `-z` (meters).
pub fn canonical_flat_hand() -> Vec<Vector3<f64>> {
    let pts: [[f64; 3]; HUMAN_KEYPOINTS] = [
        [0.0, 0.0, 0.0],
        [0.025, 0.025, -0.01],
        [0.045, 0.045, -0.015],
        [0.065, 0.06, -0.015],
        [0.085, 0.072, -0.015],
        [0.085, 0.025, 0.0],
        [0.125, 0.027, 0.0],
        [0.148, 0.028, 0.0],
        [0.168, 0.029, 0.0],
        [0.088, 0.003, 0.0],
        [0.131, 0.003, 0.0],
        [0.157, 0.003, 0.0],
        [0.179, 0.003, 0.0],
        [0.083, -0.018, 0.0],
        [0.122, -0.02, 0.0],
        [0.146, -0.021, 0.0],
        [0.166, -0.022, 0.0],
        [0.075, -0.037, 0.0],
        [0.105, -0.042, 0.0],
        [0.123, -0.045, 0.0],
        [0.14, -0.047, 0.0],
    ];
    pts.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect()
}

/// Human key vectors the robot should match, one per spec pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HandTarget {
    pub vectors: Vec<Vector3<f64>>,
}

impl HandTarget {
    pub fn from_human(human: &HumanHandFrame, spec: &KeyVectorSpec) -> Result<Self, RetargetError> {
        spec.check_indices(human.keypoints.len(), usize::MAX)?;
        let k = &human.keypoints;
        Ok(Self {
            vectors: spec.pairs.iter().map(|p| k[p.human[1]] - k[p.human[0]]).collect(),
        })
    }

    /// Target that the robot reaches exactly at `q`.
    pub fn from_robot(chain: &HandChain, q: &JointVector, spec: &KeyVectorSpec) -> Result<Self, RetargetError> {
        Ok(Self {
            vectors: robot_vectors(chain, q, spec)?
                .iter()
                .zip(&spec.scales)
                .map(|(v, c)| v * *c)
                .collect(),
        })
    }
}

fn robot_vectors(chain: &HandChain, q: &JointVector, spec: &KeyVectorSpec) -> Result<Vec<Vector3<f64>>, RetargetError> {
    let r = chain.robot_keypoints(q)?;
    spec.check_indices(usize::MAX, r.len())?;
    Ok(spec.pairs.iter().map(|p| r[p.robot[1]] - r[p.robot[0]]).collect())
}

/// `sum_i |target_i - c_i * v_i(q)|^2`.
pub fn target_energy(target: &HandTarget, q: &JointVector, chain: &HandChain, spec: &KeyVectorSpec) -> Result<f64, RetargetError> {
    if target.vectors.len() != spec.pairs.len() {
        return Err(RetargetError::LengthMismatch {
            what: "target vectors",
            expected: spec.pairs.len(),
            got: target.vectors.len(),
        });
    }
    let vr = robot_vectors(chain, q, spec)?;
    Ok(target
        .vectors
        .iter()
        .zip(&vr)
        .zip(&spec.scales)
        .map(|((h, r), c)| (h - r * *c).norm_squared())
        .sum())
}

/// Fingertip-vector energy between a human frame and a robot configuration.
pub fn energy(human: &HumanHandFrame, q: &JointVector, chain: &HandChain, spec: &KeyVectorSpec) -> Result<f64, RetargetError> {
    target_energy(&HandTarget::from_human(human, spec)?, q, chain, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetargetOptions {
    pub max_iters: usize,
    pub fd_step: f64,
    pub grad_tol: f64,
    pub initial_step: f64,
}

impl Default for RetargetOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            fd_step: 1e-5,
            grad_tol: 1e-6,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetResult {
    pub q: JointVector,
    pub energy: f64,
    /// Energy of every accepted iterate, starting with the initial one.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent from `q_init` on the target energy.
///
/// The gradient is a central finite difference. Each iteration halves the
/// step until the energy strictly decreases, then doubles it for the next
/// iteration. Stops when the projected gradient's max-norm reaches
/// `grad_tol`, when no step decreases the energy, or after `max_iters`.
pub fn retarget_to_target(
    target: &HandTarget,
    chain: &HandChain,
    spec: &KeyVectorSpec,
    q_init: &JointVector,
    opts: &RetargetOptions,
) -> Result<RetargetResult, RetargetError> {
    let e = |q: &JointVector| target_energy(target, q, chain, spec);
    let mut q = chain.clamp(q_init);
    if q.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            got: q_init.len(),
        }
        .into());
    }
    let mut cur = e(&q)?;
    let mut trace = vec![cur];
    let mut step = opts.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    let limits = chain.limits();
    while iterations < opts.max_iters {
        let mut grad = vec![0.0; q.len()];
        for (i, g) in grad.iter_mut().enumerate() {
            let mut a = q.clone();
            a.0[i] += opts.fd_step;
            let mut b = q.clone();
            b.0[i] -= opts.fd_step;
            *g = (e(&a)? - e(&b)?) / (2.0 * opts.fd_step);
        }
        let projected = q
            .0
            .iter()
            .zip(&grad)
            .zip(limits)
            .map(|((x, g), [lo, hi])| (x - (x - g).clamp(*lo, *hi)).abs())
            .fold(0.0, f64::max);
        if projected <= opts.grad_tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        while step > 1e-12 {
            let cand = JointVector(
                q.0.iter()
                    .zip(&grad)
                    .zip(limits)
                    .map(|((x, g), [lo, hi])| (x - step * g).clamp(*lo, *hi))
                    .collect(),
            );
            let ec = e(&cand)?;
            if ec < cur {
                accepted = Some((cand, ec));
                break;
            }
            step *= 0.5;
        }
        let Some((next, en)) = accepted else {
            converged = true;
            break;
        };
        q = next;
        cur = en;
        trace.push(cur);
        iterations += 1;
        step *= 2.0;
    }
    Ok(RetargetResult {
        q,
        energy: cur,
        trace,
        iterations,
        converged,
    })
}

pub fn retarget_hand(
    human: &HumanHandFrame,
    chain: &HandChain,
    spec: &KeyVectorSpec,
    q_init: &JointVector,
    opts: &RetargetOptions,
) -> Result<RetargetResult, RetargetError> {
    human.validate()?;
    retarget_to_target(&HandTarget::from_human(human, spec)?, chain, spec, q_init, opts)
}

/// Axis-aligned box the rescaled wrist trajectory must fit in (robot frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl Workspace {
    pub fn new(center: [f64; 3], half_extents: [f64; 3]) -> Result<Self, RetargetError> {
        let w = Self { center, half_extents };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RetargetError> {
        if self.half_extents.iter().any(|h| !(*h > 0.0 && h.is_finite())) || self.center.iter().any(|c| !c.is_finite()) {
            return Err(RetargetError::InvalidSpec("workspace half extents must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|d| (p[d] - self.center[d]).abs() <= self.half_extents[d] + tol)
    }
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            center: [0.45, 0.0, 0.25],
            half_extents: [0.2, 0.3, 0.2],
        }
    }
}

/// Moves the bounding-box midpoint to the workspace center, then shrinks
/// displacements uniformly if any axis overflows.
pub fn rescale_to_workspace(positions: &[Vector3<f64>], ws: &Workspace) -> Vec<Vector3<f64>> {
    if positions.is_empty() {
        return Vec::new();
    }
    let c = Vector3::from(ws.center);
    let mut lo = positions[0];
    let mut hi = positions[0];
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let mid = (lo + hi) * 0.5;
    let half_span = (hi - lo) * 0.5;
    let mut scale: f64 = 1.0;
    for d in 0..3 {
        if half_span[d] > ws.half_extents[d] {
            scale = scale.min(ws.half_extents[d] / half_span[d]);
        }
    }
    positions.iter().map(|p| c + (p - mid) * scale).collect()
}

/// Inputs for one clip: per-frame hand observations, camera poses
/// (`M^{Ct}_{C1}`), the gravity reading in accelerometer axes, and
/// optionally the wrist pose in each camera frame when no pixels exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipObservation {
    pub hand_frames: Vec<HumanHandFrame>,
    pub camera_traj: Vec<RigidTransform>,
    pub gravity: AccelSample,
    pub intrinsics: CameraIntrinsics,
    pub label: String,
    pub wrist_cam: Option<Vec<RigidTransform>>,
}

impl ClipObservation {
    pub fn validate(&self) -> Result<(), RetargetError> {
        let n = self.hand_frames.len();
        if self.camera_traj.len() != n {
            return Err(RetargetError::LengthMismatch {
                what: "camera trajectory",
                expected: n,
                got: self.camera_traj.len(),
            });
        }
        if let Some(w) = &self.wrist_cam {
            if w.len() != n {
                return Err(RetargetError::LengthMismatch {
                    what: "wrist poses",
                    expected: n,
                    got: w.len(),
                });
            }
        }
        for f in &self.hand_frames {
            f.validate()?;
        }
        if let Some(k) = self.hand_frames.windows(2).position(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(RetargetError::InvalidFrame(format!("timestamps not increasing at frame {}", k + 1)));
        }
        self.intrinsics.validate().map_err(|e| RetargetError::Pnp { frame: 0, source: e })?;
        Ok(())
    }
}

/// Wrist pose in each camera frame: PnP on the 3D/2D keypoints when pixels
/// are present, else the ingested pose.
pub fn wrist_in_camera(clip: &ClipObservation) -> Result<Vec<RigidTransform>, RetargetError> {
    let mut out = Vec::with_capacity(clip.hand_frames.len());
    let mut prev: Option<RigidTransform> = None;
    for (t, f) in clip.hand_frames.iter().enumerate() {
        let pose = match &f.keypoints_2d {
            Some(px) => {
                let corrs: Vec<Correspondence> = f.keypoints.iter().zip(px).map(|(p, u)| Correspondence::new(*p, *u)).collect();
                let first = solve_pnp(&corrs, &clip.intrinsics, None);
                // fall back to the previous frame's pose as a seed if EPnP alone fails
                let sol = match (first, prev.as_ref()) {
                    (Ok(s), _) => s,
                    (Err(_), Some(p)) => solve_pnp(&corrs, &clip.intrinsics, Some(p)).map_err(|e| RetargetError::Pnp { frame: t, source: e })?,
                    (Err(e), None) => return Err(RetargetError::Pnp { frame: t, source: e }),
                };
                sol.pose
            }
            None => match &clip.wrist_cam {
                Some(w) => w[t],
                None => return Err(RetargetError::MissingWristPose { frame: t }),
            },
        };
        prev = Some(pose);
        out.push(pose);
    }
    Ok(out)
}

/// Wrist poses in the robot frame before workspace fitting:
/// `T_world_robot · M_c1_world · M_ct_c1 · M_wrist_ct`.
///
/// The camera trajectory is first re-expressed relative to its first pose,
/// and gravity (given in the same reference frame as the trajectory) is
/// rotated into the first camera's axes.
pub fn wrist_chain(clip: &ClipObservation, wrist_cam: &[RigidTransform]) -> Result<Vec<RigidTransform>, RetargetError> {
    if wrist_cam.len() != clip.camera_traj.len() {
        return Err(RetargetError::LengthMismatch {
            what: "wrist poses",
            expected: clip.camera_traj.len(),
            got: wrist_cam.len(),
        });
    }
    let Some(first) = clip.camera_traj.first() else {
        return Ok(Vec::new());
    };
    let base = first.inverse();
    let p = accel_to_camera();
    let g = p.transpose() * base.rotation * p * clip.gravity.as_vector();
    let cam1_world = camera_in_world_from_accel(AccelSample::new(g.x, g.y, g.z))?;
    let head = world_to_robot().compose(&cam1_world);
    Ok(clip
        .camera_traj
        .iter()
        .zip(wrist_cam)
        .map(|(c, w)| head.compose(&base.compose(c)).compose(w))
        .collect())
}

/// Full wrist retargeting: per-frame wrist pose, transform chain, then
/// workspace fitting of the positions.
pub fn retarget_wrist(clip: &ClipObservation, ws: &Workspace) -> Result<Vec<RigidTransform>, RetargetError> {
    clip.validate()?;
    let cam = wrist_in_camera(clip)?;
    let poses = wrist_chain(clip, &cam)?;
    Ok(fit_workspace(&poses, ws))
}

/// Applies [`rescale_to_workspace`] to the translations of `poses`.
pub fn fit_workspace(poses: &[RigidTransform], ws: &Workspace) -> Vec<RigidTransform> {
    let pos: Vec<Vector3<f64>> = poses.iter().map(|p| p.translation).collect();
    rescale_to_workspace(&pos, ws)
        .into_iter()
        .zip(poses)
        .map(|(t, p)| RigidTransform::from_parts(p.rotation, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripperState {
    Open,
    Close,
}

impl GripperState {
    /// Channel value used in gripper trajectories.
    pub fn value(self) -> f64 {
        match self {
            GripperState::Open => 0.0,
            GripperState::Close => 1.0,
        }
    }
}

/// Mean distance from the thumb tip to the other four fingertips.
pub fn hand_aperture(human: &HumanHandFrame) -> f64 {
    let k = &human.keypoints;
    let others = [INDEX_TIP, MIDDLE_TIP, RING_TIP, PINKY_TIP];
    others.iter().map(|&i| (k[i] - k[THUMB_TIP]).norm()).sum::<f64>() / others.len() as f64
}

pub fn gripper_from_hand(human: &HumanHandFrame, threshold: f64) -> GripperState {
    if hand_aperture(human) < threshold {
        GripperState::Close
    } else {
        GripperState::Open
    }
}

/// Exponential moving average over equally long real vectors.
pub fn lowpass_series(xs: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
    for x in xs {
        let y = match out.last() {
            None => x.clone(),
            Some(prev) => x.iter().zip(prev).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect(),
        };
        out.push(y);
    }
    out
}

/// Smooths 3D (and 2D, when present) keypoints of consecutive frames.
pub fn lowpass_frames(frames: &[HumanHandFrame], alpha: f64) -> Vec<HumanHandFrame> {
    let flat3: Vec<Vec<f64>> = frames.iter().map(|f| f.keypoints.iter().flat_map(|p| p.iter().copied()).collect()).collect();
    let s3 = lowpass_series(&flat3, alpha);
    let has2 = frames.iter().all(|f| f.keypoints_2d.is_some());
    let s2 = if has2 {
        let flat2: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| f.keypoints_2d.as_ref().expect("checked").iter().flat_map(|p| p.iter().copied()).collect())
            .collect();
        Some(lowpass_series(&flat2, alpha))
    } else {
        None
    };
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| HumanHandFrame {
            keypoints: s3[t].chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
            keypoints_2d: match &s2 {
                Some(s) => Some(s[t].chunks_exact(2).map(|c| Vector2::new(c[0], c[1])).collect()),
                None => f.keypoints_2d.clone(),
            },
            ..f.clone()
        })
        .collect()
}

/// Moving average of translations; rotations are blended linearly and
/// projected back onto the rotation group.
pub fn lowpass_poses(poses: &[RigidTransform], alpha: f64) -> Vec<RigidTransform> {
    let mut out: Vec<RigidTransform> = Vec::with_capacity(poses.len());
    for p in poses {
        let y = match out.last() {
            None => *p,
            Some(prev) => {
                let r: Matrix3<f64> = p.rotation * alpha + prev.rotation * (1.0 - alpha);
                RigidTransform::from_parts(
                    project_to_rotation(&r),
                    p.translation * alpha + prev.translation * (1.0 - alpha),
                )
            }
        };
        out.push(y);
    }
    out
}

/// Scale and rotation applied by [`augment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub scale: f64,
    pub rpy: EulerFixedRPY,
}

pub const AUGMENT_SCALE_RANGE: f64 = 0.1;
pub const AUGMENT_ANGLE_RANGE: f64 = 10.0 * std::f64::consts::PI / 180.0;

impl AugmentDraw {
    /// Uniform draws mapped to `[1 - 0.1, 1 + 0.1]` and `[-10°, 10°]`.
    pub fn sample(rng: &mut impl RngCore) -> Self {
        let mut sym = |range: f64| range * (2.0 * rng.gen::<f64>() - 1.0);
        let scale = 1.0 + sym(AUGMENT_SCALE_RANGE);
        let (r, p, y) = (sym(AUGMENT_ANGLE_RANGE), sym(AUGMENT_ANGLE_RANGE), sym(AUGMENT_ANGLE_RANGE));
        Self {
            scale,
            rpy: EulerFixedRPY::new(r, p, y),
        }
    }
}

/// Rotates and scales the wrist path about its centroid and rotates every
/// wrist orientation; hand channels are untouched.
pub fn augment_with(traj: &Trajectory, draw: &AugmentDraw) -> Trajectory {
    let n = traj.len() as f64;
    let centroid = traj.wrist.iter().fold(Vector3::zeros(), |acc, w| acc + Vector3::new(w[0], w[1], w[2])) / n;
    let r = draw.rpy.to_matrix();
    let mut out = traj.clone();
    for (k, w) in out.wrist.iter_mut().enumerate() {
        let pose = traj.wrist_pose(k);
        let p = centroid + r * (pose.translation - centroid) * draw.scale;
        let [a, b, c] = EulerFixedRPY::from_matrix(&(r * pose.rotation)).as_array();
        *w = [p.x, p.y, p.z, a, b, c];
    }
    out.unwrap_orientation();
    out
}

pub fn augment_with_rng(traj: &Trajectory, rng: &mut impl RngCore) -> Trajectory {
    augment_with(traj, &AugmentDraw::sample(rng))
}

/// Seeded augmentation.
pub fn augment(traj: &Trajectory, seed: u64) -> Trajectory {
    augment_with_rng(traj, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillOptions {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistillOptions {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 300,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Network mapping wrist-relative keypoints straight to joint angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledHand {
    pub net: Mlp,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub limits: Vec<[f64; 2]>,
    /// Mean absolute joint error on the training set after training.
    pub train_error: f64,
}

fn frame_features(f: &HumanHandFrame) -> Vec<f64> {
    let w = f.keypoints[WRIST];
    f.keypoints.iter().flat_map(|p| (p - w).iter().copied().collect::<Vec<_>>()).collect()
}

impl DistilledHand {
    fn normalized(&self, f: &HumanHandFrame) -> Vec<f64> {
        frame_features(f)
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Joint angles clamped to the chain limits.
    pub fn predict(&self, f: &HumanHandFrame) -> Result<JointVector, RetargetError> {
        let raw = self.net.apply(&self.normalized(f))?;
        Ok(JointVector(raw.iter().zip(&self.limits).map(|(v, [lo, hi])| v.clamp(*lo, *hi)).collect()))
    }

    /// Mean absolute joint error over a labelled set.
    pub fn mean_error(&self, data: &[(HumanHandFrame, JointVector)]) -> Result<f64, RetargetError> {
        if data.is_empty() {
            return Err(RetargetError::EmptyDataset);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (f, q) in data {
            let p = self.predict(f)?;
            total += p.0.iter().zip(&q.0).map(|(a, b)| (a - b).abs()).sum::<f64>();
            count += q.len();
        }
        Ok(total / count as f64)
    }
}

/// Fits a two-hidden-layer network to optimizer outputs with a squared loss.
pub fn distill_hand(data: &[(HumanHandFrame, JointVector)], chain: &HandChain, opts: &DistillOptions) -> Result<DistilledHand, RetargetError> {
    if data.is_empty() {
        return Err(RetargetError::EmptyDataset);
    }
    let dof = chain.dof();
    for (f, q) in data {
        f.validate()?;
        if q.len() != dof {
            return Err(KinematicsError::DimensionMismatch { expected: dof, got: q.len() }.into());
        }
    }
    let feats: Vec<Vec<f64>> = data.iter().map(|(f, _)| frame_features(f)).collect();
    let d_in = feats[0].len();
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..d_in).map(|j| feats.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..d_in)
        .map(|j| {
            let var = feats.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1e-6)
        })
        .collect();
    let inputs: Vec<Vec<f64>> = feats
        .iter()
        .map(|x| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let shape = MlpShape::new(vec![d_in, opts.hidden, opts.hidden, dof])?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut net = Mlp::new(shape, &mut rng);
    let adam_cfg = AdamConfig {
        lr: opts.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(net.params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let b = chunk.len();
            let x = DMatrix::from_iterator(d_in, b, chunk.iter().flat_map(|&i| inputs[i].iter().copied()));
            let tape = net.shape.forward(&net.params, x)?;
            let y = DMatrix::from_iterator(dof, b, chunk.iter().flat_map(|&i| data[i].1 .0.iter().copied()));
            let dout = (&tape.output - y) * (2.0 / (b * dof) as f64);
            let mut grad = vec![0.0; net.params.len()];
            net.shape.backward(&net.params, &tape, dout, &mut grad);
            adam.step(&adam_cfg, &mut net.params, &mut grad);
        }
    }
    let mut out = DistilledHand {
        net,
        input_mean: mean,
        input_scale: scale,
        limits: chain.limits().to_vec(),
        train_error: 0.0,
    };
    out.train_error = out.mean_error(data)?;
    Ok(out)
}

/// Human keypoints (MANO order) read off the robot hand at `q`, scaled
/// about the palm keypoint. The human ring finger is the midpoint of the
/// robot middle and ring fingers; the pinky follows the robot ring finger.
pub fn human_from_robot(chain: &HandChain, q: &JointVector, scale: f64) -> Result<Vec<Vector3<f64>>, RetargetError> {
    let fk = chain.forward_kinematics(q)?;
    let palm = chain.palm_keypoint();
    let finger = |name: &str| -> Result<Vec<Vector3<f64>>, RetargetError> {
        let tip = format!("{name}_tip");
        let links = chain.finger_links(&tip);
        if links.len() < 4 {
            return Err(RetargetError::InvalidSpec(format!("finger {name} has fewer than 4 links")));
        }
        Ok(links[links.len() - 4..]
            .iter()
            .map(|l| (fk.get(l).expect("link exists").translation - palm) * scale)
            .collect())
    };
    let thumb = finger("thumb")?;
    let index = finger("index")?;
    let middle = finger("middle")?;
    let ring = finger("ring")?;
    let human_ring: Vec<Vector3<f64>> = middle.iter().zip(&ring).map(|(a, b)| (a + b) * 0.5).collect();
    let mut out = vec![Vector3::zeros()];
    for f in [&thumb, &index, &middle, &human_ring, &ring] {
        out.extend_from_slice(f);
    }
    Ok(out)
}
