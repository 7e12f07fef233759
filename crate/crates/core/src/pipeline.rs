//! Batch commands behind the `dexprior` binary: clip retargeting, synthetic
//! data generation, the two training phases, evaluation and validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{AccelSample, RigidTransform};
use crate::io::{parse_jsonl, read_json, write_atomic, write_json_atomic, write_jsonl_atomic};
use crate::kinematics::HandChain;
use crate::learn::{evaluate, train_phase, Checkpoint, Metrics, Phase, Policy, PolicyConfig, PolicyMode, PolicyOutput, Sample, TrainConfig};
use crate::ndp::DmpConfig;
use crate::pnp::CameraIntrinsics;
use crate::retarget::{
    fit_workspace, gripper_from_hand, lowpass_frames, retarget_hand, wrist_chain, wrist_in_camera, ClipObservation, HumanHandFrame,
    KeyVectorSpec, RetargetError, RetargetOptions, Workspace, DEFAULT_GRIPPER_THRESHOLD,
};
use crate::synth::{synth_clip, ClipOptions, TaskFamily};
use crate::trajectory::{
    read_demo, resample_rbf, validate, write_demo, write_trajectory, DemoRecord, Embodiment, Source, Trajectory, TrajectoryError,
    DEFAULT_RESAMPLE_LEN,
};

pub const CONFIG_SCHEMA: &str = "dexprior.config.v1";
pub const MANIFEST_SCHEMA: &str = "dexprior.manifest.v1";
pub const METRICS_SCHEMA: &str = "dexprior.metrics.v1";
pub const REPORT_SCHEMA: &str = "dexprior.report.v1";

/// Intrinsics given either by preset name or explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntrinsicsSpec {
    Preset(String),
    Explicit(CameraIntrinsics),
}

impl IntrinsicsSpec {
    pub fn resolve(&self) -> Result<CameraIntrinsics> {
        match self {
            IntrinsicsSpec::Preset(name) => CameraIntrinsics::preset(name).with_context(|| format!("unknown intrinsics preset {name:?}")),
            IntrinsicsSpec::Explicit(k) => {
                k.validate()?;
                Ok(*k)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub clips: PathBuf,
    pub demos: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: String,
    pub paths: Paths,
    pub workspace: Workspace,
    pub chain: Option<PathBuf>,
    pub key_vectors: Option<PathBuf>,
    pub intrinsics: IntrinsicsSpec,
    pub embodiment: Embodiment,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub lowpass_alpha: f64,
    pub gripper_threshold: f64,
    pub resample_len: usize,
    pub retarget: RetargetOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            paths: Paths {
                clips: "clips".into(),
                demos: "demos".into(),
                out: "out".into(),
            },
            workspace: Workspace::default(),
            chain: None,
            key_vectors: None,
            intrinsics: IntrinsicsSpec::Preset("gopro".into()),
            embodiment: Embodiment::Hand16,
            policy: PolicyConfig::desk(16, PolicyMode::TwoStream),
            train: TrainConfig::default(),
            lowpass_alpha: 0.5,
            gripper_threshold: DEFAULT_GRIPPER_THRESHOLD,
            resample_len: DEFAULT_RESAMPLE_LEN,
            retarget: RetargetOptions::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.clips = resolve(base, &cfg.paths.clips);
        cfg.paths.demos = resolve(base, &cfg.paths.demos);
        cfg.paths.out = resolve(base, &cfg.paths.out);
        cfg.chain = cfg.chain.map(|p| resolve(base, &p));
        cfg.key_vectors = cfg.key_vectors.map(|p| resolve(base, &p));
        cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.schema == CONFIG_SCHEMA, "unsupported schema {:?}", self.schema);
        self.workspace.validate()?;
        self.intrinsics.resolve()?;
        self.policy.validate()?;
        self.train.validate()?;
        ensure!(
            self.policy.hand_dim == self.embodiment.hand_dim(),
            "policy hand_dim {} does not match embodiment {:?}",
            self.policy.hand_dim,
            self.embodiment
        );
        ensure!(
            self.lowpass_alpha > 0.0 && self.lowpass_alpha <= 1.0,
            "lowpass_alpha must be in (0, 1], got {}",
            self.lowpass_alpha
        );
        ensure!(self.gripper_threshold > 0.0, "gripper_threshold must be positive");
        ensure!(self.resample_len >= 2, "resample_len must be at least 2");
        for p in [&self.chain, &self.key_vectors].into_iter().flatten() {
            ensure!(p.is_file(), "referenced file {} does not exist", p.display());
        }
        Ok(())
    }

    pub fn hand_chain(&self) -> Result<HandChain> {
        match &self.chain {
            Some(p) => Ok(HandChain::load(p)?),
            None => Ok(HandChain::default_hand()),
        }
    }

    pub fn key_vector_spec(&self, chain: &HandChain) -> Result<KeyVectorSpec> {
        let spec = match &self.key_vectors {
            Some(p) => {
                let s: KeyVectorSpec = read_json(p)?;
                s.validate()?;
                s
            }
            None => KeyVectorSpec::default_for(chain)?,
        };
        spec.check_indices(crate::retarget::HUMAN_KEYPOINTS, chain.fingertips().len() + 1)?;
        Ok(spec)
    }
}

/// Per-task lists of demo files; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskFiles {
    #[serde(default)]
    pub human: Vec<PathBuf>,
    #[serde(default)]
    pub robot: Vec<PathBuf>,
    #[serde(default)]
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub tasks: BTreeMap<String, TaskFiles>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Human,
    Robot,
    Test,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Self = read_json(path)?;
        ensure!(m.schema == MANIFEST_SCHEMA, "{}: unsupported schema {:?}", path.display(), m.schema);
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        for files in m.tasks.values_mut() {
            for list in [&mut files.human, &mut files.robot, &mut files.test] {
                for p in list.iter_mut() {
                    *p = resolve(&base, p);
                }
            }
        }
        Ok(m)
    }

    pub fn files(&self, split: Split) -> Vec<(String, PathBuf)> {
        let mut out = Vec::new();
        for (label, f) in &self.tasks {
            let list = match split {
                Split::Human => &f.human,
                Split::Robot => &f.robot,
                Split::Test => &f.test,
            };
            out.extend(list.iter().map(|p| (label.clone(), p.clone())));
        }
        out
    }
}

/// Loads one demo as a training sample, resampled to the policy horizon.
pub fn load_sample(path: &Path, cfg: &PolicyConfig) -> Result<Sample> {
    let rec = read_demo(path).with_context(|| format!("loading {}", path.display()))?;
    sample_from_record(&rec, cfg).with_context(|| format!("preparing {}", path.display()))
}

pub fn sample_from_record(rec: &DemoRecord, cfg: &PolicyConfig) -> Result<Sample> {
    ensure!(
        rec.trajectory.embodiment.hand_dim() == cfg.hand_dim,
        "{} hand channels but the policy expects {}",
        rec.trajectory.embodiment.hand_dim(),
        cfg.hand_dim
    );
    let rows = cfg.steps() + 1;
    let rec = if rec.trajectory.len() == rows {
        rec.clone()
    } else {
        let t = resample_rbf(&rec.trajectory, rows)?;
        DemoRecord::new(t, rec.features.clone(), &rec.label, rec.source)?
    };
    Ok(Sample::from_record(&rec, cfg)?)
}

fn load_split(manifest: &Manifest, split: Split, cfg: &PolicyConfig) -> Result<Vec<(String, Sample)>> {
    manifest
        .files(split)
        .into_iter()
        .map(|(label, p)| Ok((label, load_sample(&p, cfg)?)))
        .collect()
}

/// One line of a clip file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLine {
    pub t: f64,
    pub kp3d: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp2d: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

impl FrameLine {
    pub fn from_frame(f: &HumanHandFrame) -> Self {
        Self {
            t: f.timestamp,
            kp3d: f.keypoints.iter().map(|p| [p.x, p.y, p.z]).collect(),
            kp2d: f.keypoints_2d.as_ref().map(|v| v.iter().map(|p| [p.x, p.y]).collect()),
            theta: f.theta.clone(),
            beta: f.beta.clone(),
        }
    }

    pub fn to_frame(&self) -> HumanHandFrame {
        HumanHandFrame {
            keypoints: self.kp3d.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            keypoints_2d: self.kp2d.as_ref().map(|v| v.iter().map(|p| Vector2::new(p[0], p[1])).collect()),
            theta: self.theta.clone(),
            beta: self.beta.clone(),
            timestamp: self.t,
        }
    }
}

/// Per-clip metadata stored next to the frame file (`<stem>.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub label: String,
    pub camera: Vec<RigidTransform>,
    pub gravity: [f64; 3],
    pub intrinsics: IntrinsicsSpec,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrist_cam: Option<Vec<RigidTransform>>,
}

pub fn sidecar_path(clip: &Path) -> PathBuf {
    clip.with_extension("json")
}

pub fn write_clip(path: &Path, clip: &ClipObservation, features: &[f64]) -> Result<()> {
    let lines: Vec<FrameLine> = clip.hand_frames.iter().map(FrameLine::from_frame).collect();
    write_jsonl_atomic(path, &lines)?;
    let g = clip.gravity.as_vector();
    let side = ClipSidecar {
        label: clip.label.clone(),
        camera: clip.camera_traj.clone(),
        gravity: [g.x, g.y, g.z],
        intrinsics: IntrinsicsSpec::Explicit(clip.intrinsics),
        features: features.to_vec(),
        wrist_cam: clip.wrist_cam.clone(),
    };
    write_json_atomic(&sidecar_path(path), &side)?;
    Ok(())
}

/// Why a clip failed, grouped for the batch report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureClass {
    Io,
    Parse,
    Invalid,
    Pnp,
    Kinematics,
    Geometry,
    Trajectory,
}

#[derive(Debug)]
pub struct ClipFailure {
    pub class: FailureClass,
    pub message: String,
}

impl From<RetargetError> for ClipFailure {
    fn from(e: RetargetError) -> Self {
        let class = match &e {
            RetargetError::Pnp { .. } | RetargetError::MissingWristPose { .. } => FailureClass::Pnp,
            RetargetError::Kinematics(_) => FailureClass::Kinematics,
            RetargetError::Geometry(_) => FailureClass::Geometry,
            _ => FailureClass::Invalid,
        };
        Self {
            class,
            message: e.to_string(),
        }
    }
}

impl From<TrajectoryError> for ClipFailure {
    fn from(e: TrajectoryError) -> Self {
        Self {
            class: FailureClass::Trajectory,
            message: e.to_string(),
        }
    }
}

fn fail(class: FailureClass, message: String) -> ClipFailure {
    ClipFailure { class, message }
}

/// Reads a clip and its sidecar.
pub fn read_clip(path: &Path) -> Result<(ClipObservation, Vec<f64>), ClipFailure> {
    let text = fs::read_to_string(path).map_err(|e| fail(FailureClass::Io, format!("{}: {e}", path.display())))?;
    let lines: Vec<FrameLine> =
        parse_jsonl(&text).map_err(|(line, e)| fail(FailureClass::Parse, format!("{}:{line}: {e}", path.display())))?;
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| fail(FailureClass::Io, format!("{}: {e}", side_path.display())))?;
    let side: ClipSidecar =
        serde_json::from_str(&side_text).map_err(|e| fail(FailureClass::Parse, format!("{}: {e}", side_path.display())))?;
    let intrinsics = side.intrinsics.resolve().map_err(|e| fail(FailureClass::Invalid, e.to_string()))?;
    let clip = ClipObservation {
        hand_frames: lines.iter().map(FrameLine::to_frame).collect(),
        camera_traj: side.camera,
        gravity: AccelSample::new(side.gravity[0], side.gravity[1], side.gravity[2]),
        intrinsics,
        label: side.label,
        wrist_cam: side.wrist_cam,
    };
    if clip.hand_frames.len() < 2 {
        return Err(fail(FailureClass::Invalid, format!("{} frames; need at least 2", clip.hand_frames.len())));
    }
    clip.validate()?;
    Ok((clip, side.features))
}

/// Everything a clip needs besides its own data.
pub struct RetargetContext {
    pub chain: HandChain,
    pub spec: KeyVectorSpec,
    pub workspace: Workspace,
    pub embodiment: Embodiment,
    pub lowpass_alpha: f64,
    pub gripper_threshold: f64,
    pub resample_len: usize,
    pub options: RetargetOptions,
}

impl RetargetContext {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let chain = cfg.hand_chain()?;
        let spec = cfg.key_vector_spec(&chain)?;
        if cfg.embodiment == Embodiment::Hand16 {
            chain.require_hand()?;
        }
        Ok(Self {
            chain,
            spec,
            workspace: cfg.workspace,
            embodiment: cfg.embodiment,
            lowpass_alpha: cfg.lowpass_alpha,
            gripper_threshold: cfg.gripper_threshold,
            resample_len: cfg.resample_len,
            options: cfg.retarget,
        })
    }

    /// Smoothing, wrist chain, hand retargeting (or gripper reduction),
    /// workspace fitting and resampling.
    pub fn process(&self, clip: &ClipObservation) -> Result<Trajectory, ClipFailure> {
        let mut clip = clip.clone();
        clip.hand_frames = lowpass_frames(&clip.hand_frames, self.lowpass_alpha);
        let cam = wrist_in_camera(&clip)?;
        let poses = fit_workspace(&wrist_chain(&clip, &cam)?, &self.workspace);

        let hand: Vec<Vec<f64>> = match self.embodiment {
            Embodiment::Hand16 => {
                let mut q = self.chain.mid_configuration();
                let mut out = Vec::with_capacity(clip.hand_frames.len());
                for f in &clip.hand_frames {
                    q = retarget_hand(f, &self.chain, &self.spec, &q, &self.options)?.q;
                    out.push(q.0.clone());
                }
                out
            }
            Embodiment::Gripper1 => clip
                .hand_frames
                .iter()
                .map(|f| vec![gripper_from_hand(f, self.gripper_threshold).value()])
                .collect(),
        };
        let wrist = poses
            .iter()
            .map(|p| {
                let [r, pi, y] = p.rpy().as_array();
                [p.translation.x, p.translation.y, p.translation.z, r, pi, y]
            })
            .collect();
        let mut traj = Trajectory {
            times: clip.hand_frames.iter().map(|f| f.timestamp).collect(),
            wrist,
            hand,
            embodiment: self.embodiment,
        };
        traj.unwrap_orientation();
        validate(&traj).map_err(TrajectoryError::Invalid)?;
        Ok(resample_rbf(&traj, self.resample_len)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipStatus {
    pub clip: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<FailureClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetReport {
    pub schema: String,
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failures: BTreeMap<FailureClass, usize>,
    pub clips: Vec<ClipStatus>,
}

/// Clip files (`*.jsonl`) in `dir`, sorted by name.
pub fn list_clips(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    v.sort();
    Ok(v)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn retarget_one(ctx: &RetargetContext, path: &Path, out_dir: &Path) -> Result<PathBuf, ClipFailure> {
    let (clip, features) = read_clip(path)?;
    let traj = ctx.process(&clip)?;
    let rec = DemoRecord::new(traj, features, &clip.label, Source::HumanRetargeted)?;
    let out = out_dir.join(format!("{}.jsonl", stem(path)));
    write_demo(&out, &rec)?;
    Ok(out)
}

/// Retargets every clip in parallel; failures are recorded, never fatal.
/// Writes `retargeted/<clip>.jsonl` and `retarget_report.json` under `out`.
pub fn cmd_retarget(cfg: &PipelineConfig, clips: &[PathBuf], out: &Path, jobs: usize) -> Result<RetargetReport> {
    let ctx = RetargetContext::from_config(cfg)?;
    let out_dir = out.join("retargeted");
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let results: Vec<Result<PathBuf, ClipFailure>> = pool.install(|| clips.par_iter().map(|p| retarget_one(&ctx, p, &out_dir)).collect());

    let mut report = RetargetReport {
        schema: REPORT_SCHEMA.into(),
        total: clips.len(),
        succeeded: 0,
        failed: 0,
        failures: BTreeMap::new(),
        clips: Vec::with_capacity(clips.len()),
    };
    for (p, r) in clips.iter().zip(results) {
        let status = match r {
            Ok(o) => {
                report.succeeded += 1;
                ClipStatus {
                    clip: p.display().to_string(),
                    ok: true,
                    output: Some(o.display().to_string()),
                    class: None,
                    error: None,
                }
            }
            Err(f) => {
                log::warn!("{}: {} ({:?})", p.display(), f.message, f.class);
                report.failed += 1;
                *report.failures.entry(f.class).or_default() += 1;
                ClipStatus {
                    clip: p.display().to_string(),
                    ok: false,
                    output: None,
                    class: Some(f.class),
                    error: Some(f.message),
                }
            }
        };
        report.clips.push(status);
    }
    write_json_atomic(&out.join("retarget_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub schema: String,
    pub phase: Phase,
    pub seed: u64,
    pub samples: usize,
    /// "pretrained" when fine-tuning starts from a checkpoint, otherwise
    /// "scratch" (the robot-only baseline).
    pub init: String,
    pub losses: Vec<f64>,
    pub checkpoint: String,
}

fn run_phase(cfg: &PipelineConfig, manifest: &Manifest, split: Split, phase: Phase, init: Option<&Path>, seed: u64, out: &Path) -> Result<TrainingReport> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let data: Vec<Sample> = load_split(manifest, split, &cfg.policy)?.into_iter().map(|(_, s)| s).collect();
    ensure!(!data.is_empty(), "manifest has no {split:?} demos");
    let (mut policy, init_kind) = match init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ensure!(ck.policy == cfg.policy, "checkpoint {} was trained with a different policy config", p.display());
            (ck.to_policy()?, "pretrained")
        }
        None => (Policy::new(cfg.policy.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?, "scratch"),
    };
    let epochs = match phase {
        Phase::Pretrain => train_cfg.pretrain_epochs,
        Phase::Finetune => train_cfg.finetune_epochs,
    };
    let outcome = train_phase(&mut policy, &data, &train_cfg, phase, epochs)?;
    let name = match phase {
        Phase::Pretrain => "pretrain",
        Phase::Finetune => "finetune",
    };
    let ck_path = out.join(format!("{name}.ckpt.json"));
    let ck = Checkpoint::new(&policy, &train_cfg, Some(phase), Some(outcome.adam), Some(outcome.rng), outcome.losses.clone());
    ck.save(&ck_path)?;
    let report = TrainingReport {
        schema: REPORT_SCHEMA.into(),
        phase,
        seed,
        samples: data.len(),
        init: init_kind.into(),
        losses: outcome.losses,
        checkpoint: ck_path.display().to_string(),
    };
    write_json_atomic(&out.join(format!("{name}_report.json")), &report)?;
    Ok(report)
}

/// Trains a fresh policy on the manifest's human demos.
pub fn cmd_pretrain(cfg: &PipelineConfig, manifest: &Manifest, seed: u64, out: &Path) -> Result<TrainingReport> {
    run_phase(cfg, manifest, Split::Human, Phase::Pretrain, None, seed, out)
}

/// Fine-tunes on robot demos, from `checkpoint` when given, else from a
/// fresh policy (robot-only baseline).
pub fn cmd_finetune(cfg: &PipelineConfig, manifest: &Manifest, checkpoint: Option<&Path>, seed: u64, out: &Path) -> Result<TrainingReport> {
    if checkpoint.is_none() {
        log::info!("no pretrained checkpoint given: training the robot-only baseline from scratch");
    }
    run_phase(cfg, manifest, Split::Robot, Phase::Finetune, checkpoint, seed, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub schema: String,
    pub split: Split,
    pub overall: Metrics,
    pub tasks: BTreeMap<String, Metrics>,
}

impl MetricsFile {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.schema == METRICS_SCHEMA, "unsupported metrics schema {:?}", self.schema);
        ensure!(!self.tasks.is_empty(), "metrics list no tasks");
        let total: usize = self.tasks.values().map(|m| m.count).sum();
        ensure!(total == self.overall.count, "task counts sum to {total}, overall count is {}", self.overall.count);
        for (name, m) in std::iter::once(("overall", &self.overall)).chain(self.tasks.iter().map(|(k, v)| (k.as_str(), v))) {
            ensure!(m.count > 0, "{name}: empty");
            let e = &m.terminal_error;
            for v in [m.mean_l1, m.wrist_l1, m.hand_l1, e.mean, e.median, e.p90, e.max] {
                ensure!(v.is_finite() && v >= 0.0, "{name}: metric {v} is not a finite nonnegative number");
            }
            ensure!(e.median <= e.p90 && e.p90 <= e.max, "{name}: terminal error quantiles out of order");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        m.validate().with_context(|| format!("{}", path.display()))?;
        Ok(m)
    }
}

fn trajectory_csv(pred: &PolicyOutput, s: &Sample, cfg: &PolicyConfig) -> String {
    let mut out = String::from("stream,step,channel,pred,target\n");
    for (name, p, t, d) in [("wrist", &pred.wrist, &s.target_wrist, cfg.wrist_dim), ("hand", &pred.hand, &s.target_hand, cfg.hand_dim)] {
        for (i, (a, b)) in p.iter().zip(t.iter()).enumerate() {
            let _ = writeln!(out, "{name},{},{},{a},{b}", i / d, i % d);
        }
    }
    out
}

/// Evaluates a checkpoint on one manifest split. Writes `metrics.json` and
/// per-sample CSV trajectory dumps under `out/eval`.
pub fn cmd_eval(manifest: &Manifest, checkpoint: &Path, split: Split, out: &Path) -> Result<MetricsFile> {
    let ck = Checkpoint::load(checkpoint)?;
    let policy = ck.to_policy()?;
    let data = load_split(manifest, split, policy.config())?;
    ensure!(!data.is_empty(), "manifest has no {split:?} demos");
    let mut by_task: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (label, s) in data {
        by_task.entry(label).or_default().push(s);
    }
    let mut tasks = BTreeMap::new();
    let mut all = Vec::new();
    for (label, set) in &by_task {
        tasks.insert(label.clone(), evaluate(&policy, set)?);
        for (i, (pred, s)) in policy.forward_batch(set)?.iter().zip(set).enumerate() {
            let path = out.join("eval").join(format!("{label}_{i:04}.csv"));
            write_atomic(&path, trajectory_csv(pred, s, policy.config()).as_bytes())?;
        }
        all.extend(set.iter().cloned());
    }
    let metrics = MetricsFile {
        schema: METRICS_SCHEMA.into(),
        split,
        overall: evaluate(&policy, &all)?,
        tasks,
    };
    metrics.validate()?;
    write_json_atomic(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub tasks: usize,
    pub clips_per_task: usize,
    pub demos_per_task: usize,
    pub test_per_task: usize,
    pub frames: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            tasks: 2,
            clips_per_task: 4,
            demos_per_task: 5,
            test_per_task: 10,
            frames: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub schema: String,
    pub seed: u64,
    pub options: SynthOptions,
    pub clips: Vec<String>,
    pub demos: Vec<String>,
}

const SYNTH_BASIS: usize = 10;

/// Writes a complete synthetic workspace under `out`: config, chain and
/// key-vector files, clips with sidecars, ground truth, robot and test
/// demos, and a manifest whose human entries name the retargeting outputs
/// (`run/retargeted/<clip>.jsonl`).
pub fn cmd_synth(seed: u64, opts: &SynthOptions, out: &Path) -> Result<SynthReport> {
    ensure!(opts.tasks > 0 && opts.frames >= 2, "need at least one task and two frames");
    let chain = HandChain::default_hand();
    let clip_opts = ClipOptions::default();
    let intrinsics = CameraIntrinsics::gopro();
    let mut cfg = PipelineConfig {
        chain: Some("chain.json".into()),
        key_vectors: Some("key_vectors.json".into()),
        lowpass_alpha: 1.0,
        paths: Paths {
            clips: "clips".into(),
            demos: "demos".into(),
            out: "run".into(),
        },
        ..PipelineConfig::default()
    };
    cfg.train.seed = seed;
    write_atomic(&out.join("chain.json"), chain.to_json_string().as_bytes())?;
    write_json_atomic(&out.join("key_vectors.json"), &KeyVectorSpec::uniform(clip_opts.hand_scale)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        tasks: BTreeMap::new(),
    };
    let mut report = SynthReport {
        schema: REPORT_SCHEMA.into(),
        seed,
        options: *opts,
        clips: Vec::new(),
        demos: Vec::new(),
    };
    for task_idx in 0..opts.tasks {
        let label = format!("task{task_idx}");
        let family_seed = seed.wrapping_mul(1_000_003).wrapping_add(task_idx as u64);
        let clip_family = TaskFamily::new(family_seed, &label, DmpConfig::with_size(SYNTH_BASIS, opts.frames - 1)?, chain.limits())?;
        let demo_family = TaskFamily::new(
            family_seed,
            &label,
            DmpConfig::with_size(SYNTH_BASIS, cfg.resample_len - 1)?,
            chain.limits(),
        )?;
        let mut files = TaskFiles::default();
        for i in 0..opts.clips_per_task {
            let name = format!("{label}_clip{i:03}");
            let task = clip_family.sample_task(&mut rng);
            let s = synth_clip(&clip_family, &task, &chain, &intrinsics, &clip_opts, &mut rng)?;
            write_clip(&out.join("clips").join(format!("{name}.jsonl")), &s.clip, &s.features)?;
            let truth = resample_rbf(&s.truth(&cfg.workspace)?, cfg.resample_len)?;
            write_trajectory(&out.join("truth").join(format!("{name}.jsonl")), &truth)?;
            files.human.push(PathBuf::from("run/retargeted").join(format!("{name}.jsonl")));
            report.clips.push(name);
        }
        for (split, count) in [(Split::Robot, opts.demos_per_task), (Split::Test, opts.test_per_task)] {
            for i in 0..count {
                let prefix = if split == Split::Robot { "demo" } else { "test" };
                let name = format!("{label}_{prefix}{i:03}.jsonl");
                let task = demo_family.sample_task(&mut rng);
                write_demo(&out.join("demos").join(&name), &demo_family.robot_record(&task)?)?;
                let rel = PathBuf::from("demos").join(&name);
                match split {
                    Split::Robot => files.robot.push(rel),
                    _ => files.test.push(rel),
                }
                report.demos.push(name);
            }
        }
        manifest.tasks.insert(label, files);
    }
    write_json_atomic(&out.join("config.json"), &cfg)?;
    write_json_atomic(&out.join("manifest.json"), &manifest)?;
    write_json_atomic(&out.join("synth_report.json"), &report)?;
    Ok(report)
}

/// Checks a config, and optionally a manifest (every demo must load) and a
/// metrics file.
pub fn cmd_validate(cfg: &PipelineConfig, manifest: Option<&Manifest>, metrics: Option<&Path>) -> Result<()> {
    let chain = cfg.hand_chain()?;
    cfg.key_vector_spec(&chain)?;
    if let Some(m) = manifest {
        for split in [Split::Human, Split::Robot, Split::Test] {
            load_split(m, split, &cfg.policy)?;
        }
    }
    if let Some(p) = metrics {
        MetricsFile::load(p)?;
    }
    Ok(())
}
