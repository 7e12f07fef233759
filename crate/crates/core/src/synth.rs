//! Synthetic data with known ground truth: a hidden task family mapping
//! latent task parameters to features and trajectories, and clips built by
//! composing known camera, gravity, wrist and hand motion.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{camera_in_world_from_accel, rot_x, rot_y, world_to_robot, AccelSample, EulerFixedRPY, RigidTransform};
use crate::kinematics::{HandChain, JointVector};
use crate::ndp::{rollout, DmpConfig, NdpError, NdpParams};
use crate::pnp::{project, CameraIntrinsics};
use crate::retarget::{fit_workspace, human_from_robot, ClipObservation, HumanHandFrame, RetargetError, Workspace};
use crate::trajectory::{DemoRecord, Embodiment, Source, Trajectory, TrajectoryError, FEATURE_DIM};

pub const TASK_DIM: usize = 4;

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Affine map from task parameters to one stream's DMP inputs.
#[derive(Debug, Clone)]
struct StreamMap {
    init: DMatrix<f64>,
    init0: DVector<f64>,
    goal: DMatrix<f64>,
    goal0: DVector<f64>,
    weights: DMatrix<f64>,
}

impl StreamMap {
    fn eval(&self, theta: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let init = &self.init * theta + &self.init0;
        let goal = &self.goal * theta + &self.goal0;
        let w = &self.weights * theta;
        (init.as_slice().to_vec(), goal.as_slice().to_vec(), w.as_slice().to_vec())
    }
}

/// Systematic differences between retargeted human motion and robot
/// demonstrations of the same task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanGap {
    /// Multiplier on every displacement from the initial state.
    pub scale: f64,
    /// Added to every wrist position.
    pub offset: [f64; 3],
    /// Standard deviation of per-step noise on every channel.
    pub noise: f64,
}

impl Default for HumanGap {
    fn default() -> Self {
        Self {
            scale: 0.85,
            offset: [0.02, -0.015, 0.01],
            noise: 0.005,
        }
    }
}

/// Hidden ground-truth policy: features are `tanh(P θ + b)` and both
/// trajectory streams are DMP rollouts whose initial state, goal and
/// forcing weights are affine in `θ`.
#[derive(Debug, Clone)]
pub struct TaskFamily {
    pub label: String,
    pub embodiment: Embodiment,
    pub dmp: DmpConfig,
    proj: DMatrix<f64>,
    bias: DVector<f64>,
    wrist: StreamMap,
    hand: StreamMap,
}

impl TaskFamily {
    /// `limits` bounds the hand stream's initial and goal states (one entry
    /// per hand channel).
    pub fn new(seed: u64, label: &str, dmp: DmpConfig, limits: &[[f64; 2]]) -> Result<Self, NdpError> {
        let embodiment = Embodiment::from_hand_dim(limits.len()).ok_or(NdpError::InvalidConfig(format!(
            "{} hand channels",
            limits.len()
        )))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = normal_matrix(&mut rng, FEATURE_DIM, TASK_DIM, 1.0);
        let bias = normal_vector(&mut rng, FEATURE_DIM, 0.5);
        let n = dmp.n_basis;

        let mut init = normal_matrix(&mut rng, 6, TASK_DIM, 0.03);
        let mut goal = normal_matrix(&mut rng, 6, TASK_DIM, 0.08);
        for r in 3..6 {
            for c in 0..TASK_DIM {
                init[(r, c)] *= 3.0;
                goal[(r, c)] *= 3.0;
            }
        }
        let wrist = StreamMap {
            init,
            init0: DVector::from_vec(vec![0.38, -0.05, 0.18, 0.0, 0.0, 0.0]),
            goal,
            goal0: DVector::from_vec(vec![0.5, 0.05, 0.28, 0.1, -0.1, 0.2]),
            weights: normal_matrix(&mut rng, n * 6, TASK_DIM, 3.0),
        };

        let hd = limits.len();
        let span = DVector::from_iterator(hd, limits.iter().map(|[lo, hi]| hi - lo));
        let lo = DVector::from_iterator(hd, limits.iter().map(|[lo, _]| *lo));
        let mut hinit = normal_matrix(&mut rng, hd, TASK_DIM, 0.02);
        let mut hgoal = normal_matrix(&mut rng, hd, TASK_DIM, 0.06);
        for r in 0..hd {
            for c in 0..TASK_DIM {
                hinit[(r, c)] *= span[r];
                hgoal[(r, c)] *= span[r];
            }
        }
        let hand = StreamMap {
            init: hinit,
            init0: &lo + span.scale(0.3),
            goal: hgoal,
            goal0: &lo + span.scale(0.6),
            weights: normal_matrix(&mut rng, n * hd, TASK_DIM, 2.0),
        };
        Ok(Self {
            label: label.to_string(),
            embodiment,
            dmp,
            proj,
            bias,
            wrist,
            hand,
        })
    }

    /// Task parameters uniform in `[-1, 1]^4`.
    pub fn sample_task(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..TASK_DIM).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }

    pub fn features(&self, task: &[f64]) -> Vec<f64> {
        let theta = DVector::from_column_slice(task);
        (&self.proj * theta + &self.bias).map(f64::tanh).as_slice().to_vec()
    }

    fn stream(&self, map: &StreamMap, task: &[f64]) -> Result<(Vec<f64>, usize), NdpError> {
        let (init, goal, w) = map.eval(&DVector::from_column_slice(task));
        let d = init.len();
        let y = rollout(&self.dmp, &NdpParams { w, g: goal }, &init, &vec![0.0; d])?;
        Ok((y, d))
    }

    /// Ground-truth robot trajectory with `dmp.steps + 1` rows.
    pub fn robot_trajectory(&self, task: &[f64]) -> Result<Trajectory, TrajectoryError> {
        let (w, _) = self.stream(&self.wrist, task).map_err(invalid)?;
        let (h, hd) = self.stream(&self.hand, task).map_err(invalid)?;
        let rows = self.dmp.steps + 1;
        let times = (0..rows).map(|k| k as f64 * self.dmp.dt()).collect();
        let wrist = w.chunks_exact(6).map(|c| std::array::from_fn(|i| c[i])).collect();
        let hand = h.chunks_exact(hd).map(<[f64]>::to_vec).collect();
        Trajectory::new(times, wrist, hand, self.embodiment)
    }

    /// The same task as a human would show it: displacements scaled, wrist
    /// offset, plus noise on every sample after the first.
    pub fn human_trajectory(&self, task: &[f64], gap: &HumanGap, rng: &mut impl Rng) -> Result<Trajectory, TrajectoryError> {
        let mut t = self.robot_trajectory(task)?;
        let w0 = t.wrist[0];
        let h0 = t.hand[0].clone();
        for (k, (w, h)) in t.wrist.iter_mut().zip(t.hand.iter_mut()).enumerate() {
            let mut noise = || if k == 0 { 0.0 } else { gap.noise * rng.sample::<f64, _>(StandardNormal) };
            for c in 0..6 {
                w[c] = w0[c] + gap.scale * (w[c] - w0[c]) + noise();
                if c < 3 {
                    w[c] += gap.offset[c];
                }
            }
            for (v, v0) in h.iter_mut().zip(&h0) {
                *v = v0 + gap.scale * (*v - v0) + noise();
            }
        }
        Ok(t)
    }

    pub fn robot_record(&self, task: &[f64]) -> Result<DemoRecord, TrajectoryError> {
        DemoRecord::new(self.robot_trajectory(task)?, self.features(task), &self.label, Source::RobotDemo)
    }

    pub fn human_record(&self, task: &[f64], gap: &HumanGap, rng: &mut impl Rng) -> Result<DemoRecord, TrajectoryError> {
        DemoRecord::new(
            self.human_trajectory(task, gap, rng)?,
            self.features(task),
            &self.label,
            Source::HumanRetargeted,
        )
    }
}

fn invalid(e: NdpError) -> TrajectoryError {
    TrajectoryError::Invalid(vec![crate::trajectory::Violation {
        name: "length",
        detail: e.to_string(),
    }])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipOptions {
    /// Distance of the wrist in front of the first camera frame (meters).
    pub depth: f64,
    /// Human hand size relative to the robot hand.
    pub hand_scale: f64,
    /// Camera drift amplitude (meters).
    pub camera_motion: f64,
    /// Largest gravity tilt about either horizontal axis (radians).
    pub max_tilt: f64,
    /// Emit detector pixels (otherwise the camera-frame wrist pose is kept).
    pub pixels: bool,
}

impl Default for ClipOptions {
    fn default() -> Self {
        Self {
            depth: 0.45,
            hand_scale: 1.1,
            camera_motion: 0.03,
            max_tilt: 0.35,
            pixels: true,
        }
    }
}

/// A clip plus what it was built from.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub clip: ClipObservation,
    /// Wrist poses in the robot frame before workspace fitting.
    pub wrist_robot: Vec<RigidTransform>,
    /// Wrist poses in each camera frame.
    pub wrist_camera: Vec<RigidTransform>,
    /// Joint angles the human keypoints were generated from.
    pub joints: Vec<JointVector>,
    pub features: Vec<f64>,
}

impl SynthClip {
    /// Robot-frame trajectory after workspace fitting, with the generating
    /// joint angles as the hand stream.
    pub fn truth(&self, ws: &Workspace) -> Result<Trajectory, TrajectoryError> {
        let fitted = fit_workspace(&self.wrist_robot, ws);
        let wrist = fitted
            .iter()
            .map(|p| {
                let [r, pi, y] = p.rpy().as_array();
                [p.translation.x, p.translation.y, p.translation.z, r, pi, y]
            })
            .collect();
        let mut t = Trajectory {
            times: self.clip.hand_frames.iter().map(|f| f.timestamp).collect(),
            wrist,
            hand: self.joints.iter().map(|q| q.0.clone()).collect(),
            embodiment: Embodiment::Hand16,
        };
        t.unwrap_orientation();
        crate::trajectory::validate(&t).map_err(TrajectoryError::Invalid)?;
        Ok(t)
    }
}

/// Builds a clip showing `task` from `family` (a 16-joint family).
///
/// The human wrist follows the family's human trajectory, offset so that it
/// starts `depth` in front of the first camera. The camera drifts and the
/// gravity reading is tilted; the camera-frame wrist poses and pixels then
/// follow by composition.
pub fn synth_clip(
    family: &TaskFamily,
    task: &[f64],
    chain: &HandChain,
    intrinsics: &CameraIntrinsics,
    opts: &ClipOptions,
    rng: &mut impl Rng,
) -> Result<SynthClip, RetargetError> {
    let traj = family
        .human_trajectory(task, &HumanGap { noise: 0.0, ..HumanGap::default() }, rng)
        .map_err(|e| RetargetError::InvalidFrame(e.to_string()))?;
    let n = traj.len();

    let tilt = |rng: &mut dyn rand::RngCore| rng.gen_range(-opts.max_tilt..=opts.max_tilt);
    let g = rot_x(tilt(rng)) * rot_y(tilt(rng)) * Vector3::new(0.0, 0.0, 9.81);
    let gravity = AccelSample::new(g.x, g.y, g.z);
    let head = world_to_robot().compose(&camera_in_world_from_accel(gravity)?);

    let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let cams: Vec<RigidTransform> = (0..n)
        .map(|k| {
            let s = k as f64 / (n - 1).max(1) as f64;
            let t = Vector3::from_fn(|i, _| opts.camera_motion * ((2.0 * s + phase[i]).sin() - phase[i].sin()));
            let r = EulerFixedRPY::new(0.05 * s * phase[0].cos(), 0.05 * s * phase[1].cos(), 0.05 * s * phase[2].cos());
            RigidTransform::from_parts(r.to_matrix(), t)
        })
        .collect();

    let start = head.compose(&cams[0]).transform_point(&Vector3::new(0.0, 0.0, opts.depth));
    let shift = start - traj.wrist_pose(0).translation;
    let wrist_robot: Vec<RigidTransform> = (0..n)
        .map(|k| {
            let p = traj.wrist_pose(k);
            RigidTransform::from_parts(p.rotation, p.translation + shift)
        })
        .collect();
    let wrist_camera: Vec<RigidTransform> = cams
        .iter()
        .zip(&wrist_robot)
        .map(|(c, x)| head.compose(c).inverse().compose(x))
        .collect();

    let mut joints = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let q = chain.clamp(&JointVector(traj.hand[k].clone()));
        let kp = human_from_robot(chain, &q, opts.hand_scale)?;
        let mut f = HumanHandFrame::new(kp, traj.times[k])?;
        if opts.pixels {
            let px = f
                .keypoints
                .iter()
                .map(|p| project(p, &wrist_camera[k], intrinsics))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| RetargetError::Pnp { frame: k, source: e })?;
            f.keypoints_2d = Some(px);
        }
        joints.push(q);
        frames.push(f);
    }
    let clip = ClipObservation {
        hand_frames: frames,
        camera_traj: cams,
        gravity,
        intrinsics: *intrinsics,
        label: family.label.clone(),
        wrist_cam: if opts.pixels { None } else { Some(wrist_camera.clone()) },
    };
    clip.validate()?;
    Ok(SynthClip {
        clip,
        wrist_robot,
        wrist_camera,
        joints,
        features: family.features(task),
    })
}
