//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured value, the threshold and the runtime against its budget.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dexprior::geometry::{pitch_from_accel, rot_x, rot_y, upright_from_accel, upright_rpy, AccelSample, EulerFixedRPY, RigidTransform};
use dexprior::kinematics::{HandChain, JointVector};
use dexprior::learn::{evaluate, train, Policy, PolicyConfig, PolicyMode, Sample, TrainConfig};
use dexprior::ndp::{relative_error, rollout, rollout_vjp, DmpConfig, NdpParams};
use dexprior::pipeline::MetricsFile;
use dexprior::pnp::{
    project, reprojection_error, rotation_error_deg, relative_translation_error, solve_pnp, solve_pnp_ransac, CameraIntrinsics,
    Correspondence, RansacParams,
};
use dexprior::retarget::{
    distill_hand, fit_workspace, human_from_robot, retarget_hand, retarget_to_target, wrist_chain, wrist_in_camera, DistillOptions,
    HandTarget, HumanHandFrame, KeyVectorSpec, RetargetOptions, Workspace,
};
use dexprior::synth::{synth_clip, ClipOptions, HumanGap, TaskFamily};
use dexprior::trajectory::{resample_rbf, Embodiment, Trajectory};

fn criterion(id: u32, name: &str, budget: Duration, run: impl FnOnce() -> (bool, String)) {
    let start = Instant::now();
    let (ok, detail) = run();
    let elapsed = start.elapsed();
    let pass = ok && elapsed <= budget;
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{verdict} [{id:>2}] {name}: {detail}; runtime {elapsed:.2?} (budget {budget:?})");
    assert!(pass, "criterion {id} ({name}) failed: {detail}; runtime {elapsed:.2?}");
}

fn percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * p).ceil() as usize]
}

fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

#[test]
fn c01_dmp_convergence() {
    criterion(1, "DMP convergence, w = 0, 200 steps", Duration::from_secs(1), || {
        let cfg = DmpConfig::default();
        let d = 3;
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y0 = uniform_vec(&mut rng, d, 1.0);
            let g = uniform_vec(&mut rng, d, 1.0);
            let p = NdpParams {
                w: vec![0.0; cfg.n_basis * d],
                g: g.clone(),
            };
            let y = rollout(&cfg, &p, &y0, &vec![0.0; d]).unwrap();
            let last = &y[cfg.steps * d..];
            let err: f64 = last.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let init: f64 = y0.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err / init);
        }
        (worst <= 1e-3, format!("worst terminal/initial error {worst:.3e} over 20 seeds (threshold 1e-3)"))
    });
}

#[test]
fn c02_rollout_affinity() {
    criterion(2, "rollout affine in (w, g)", Duration::from_secs(1), || {
        let cfg = DmpConfig::default();
        let d = 3;
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y0 = uniform_vec(&mut rng, d, 1.0);
            let v0 = uniform_vec(&mut rng, d, 0.5);
            let a = NdpParams {
                w: uniform_vec(&mut rng, cfg.n_basis * d, 20.0),
                g: uniform_vec(&mut rng, d, 1.0),
            };
            let b = NdpParams {
                w: uniform_vec(&mut rng, cfg.n_basis * d, 20.0),
                g: uniform_vec(&mut rng, d, 1.0),
            };
            let lam = rng.gen_range(-0.5..1.5);
            let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| lam * p + (1.0 - lam) * q).collect::<Vec<f64>>();
            let c = NdpParams {
                w: mix(&a.w, &b.w),
                g: mix(&a.g, &b.g),
            };
            let ya = rollout(&cfg, &a, &y0, &v0).unwrap();
            let yb = rollout(&cfg, &b, &y0, &v0).unwrap();
            let yc = rollout(&cfg, &c, &y0, &v0).unwrap();
            for ((pa, pb), pc) in ya.iter().zip(&yb).zip(&yc) {
                worst = worst.max((lam * pa + (1.0 - lam) * pb - pc).abs());
            }
        }
        (worst <= 1e-8, format!("max deviation {worst:.3e} over 20 seeds (threshold 1e-8)"))
    });
}

#[test]
fn c03_gradient_exactness() {
    criterion(3, "gradients match central differences", Duration::from_secs(30), || {
        let cfg = DmpConfig::default();
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NdpParams {
            w: uniform_vec(&mut rng, cfg.n_basis * d, 10.0),
            g: uniform_vec(&mut rng, d, 1.0),
        };
        let y0 = uniform_vec(&mut rng, d, 1.0);
        let v0 = uniform_vec(&mut rng, d, 0.5);
        let upstream = uniform_vec(&mut rng, (cfg.steps + 1) * d, 1.0);
        let grad = rollout_vjp(&cfg, &p, &y0, &v0, &upstream).unwrap();
        let objective = |p: &NdpParams, y0: &[f64], v0: &[f64]| -> f64 {
            rollout(&cfg, p, y0, v0).unwrap().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let mut rollout_worst: f64 = 0.0;
        let mut flat = p.to_flat();
        let analytic: Vec<f64> = grad.w.iter().chain(&grad.g).copied().collect();
        for i in 0..flat.len() {
            let x = flat[i];
            flat[i] = x + h;
            let fp = objective(&NdpParams::from_flat(&cfg, d, &flat).unwrap(), &y0, &v0);
            flat[i] = x - h;
            let fm = objective(&NdpParams::from_flat(&cfg, d, &flat).unwrap(), &y0, &v0);
            flat[i] = x;
            rollout_worst = rollout_worst.max(relative_error((fp - fm) / (2.0 * h), analytic[i]));
        }
        for (which, base, g) in [(0, &y0, &grad.y0), (1, &v0, &grad.ydot0)] {
            for i in 0..d {
                let mut a = base.clone();
                a[i] += h;
                let mut b = base.clone();
                b[i] -= h;
                let (fp, fm) = if which == 0 {
                    (objective(&p, &a, &v0), objective(&p, &b, &v0))
                } else {
                    (objective(&p, &y0, &a), objective(&p, &y0, &b))
                };
                rollout_worst = rollout_worst.max(relative_error((fp - fm) / (2.0 * h), g[i]));
            }
        }

        let dmp = DmpConfig::with_size(5, 10).unwrap();
        let mut policy_worst: f64 = 0.0;
        for (k, mode) in [PolicyMode::TwoStream, PolicyMode::SingleStream, PolicyMode::OpenHead].into_iter().enumerate() {
            let pc = PolicyConfig {
                feature_dim: 6,
                wrist_dim: 2,
                hand_dim: 2,
                hidden: 8,
                latent: 8,
                mode,
                wrist_dmp: dmp.clone(),
                hand_dmp: dmp.clone(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(30 + k as u64);
            let mut pol = Policy::new(pc.clone(), &mut rng).unwrap();
            let n = pol.param_count();
            pol.set_params(uniform_vec(&mut rng, n, 0.5)).unwrap();
            let rows = pc.steps() + 1;
            let batch: Vec<Sample> = (0..3)
                .map(|_| Sample {
                    features: uniform_vec(&mut rng, pc.feature_dim, 1.0),
                    init_hand: uniform_vec(&mut rng, 2, 1.0),
                    init_wrist: uniform_vec(&mut rng, 2, 1.0),
                    target_wrist: uniform_vec(&mut rng, rows * 2, 1.0),
                    target_hand: uniform_vec(&mut rng, rows * 2, 1.0),
                })
                .collect();
            let (_, grad) = pol.loss_and_grad(&batch).unwrap();
            for i in 0..n {
                let x = pol.params()[i];
                pol.params_mut()[i] = x + h;
                let fp = pol.loss(&batch).unwrap();
                pol.params_mut()[i] = x - h;
                let fm = pol.loss(&batch).unwrap();
                pol.params_mut()[i] = x;
                policy_worst = policy_worst.max(relative_error((fp - fm) / (2.0 * h), grad[i]));
            }
        }
        (
            rollout_worst <= 1e-4 && policy_worst <= 1e-3,
            format!("rollout worst rel. err {rollout_worst:.3e} (threshold 1e-4), tiny policy worst rel. err {policy_worst:.3e} (threshold 1e-3)"),
        )
    });
}

fn hand_points(chain: &HandChain, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let q = JointVector(chain.limits().iter().map(|[lo, hi]| rng.gen_range(*lo..=*hi)).collect());
    human_from_robot(chain, &q, 1.0).unwrap()
}

fn camera_pose(rng: &mut impl Rng) -> RigidTransform {
    let r = EulerFixedRPY::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-3.1..3.1));
    let t = Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(0.4..0.8));
    RigidTransform::from_parts(r.to_matrix(), t)
}

#[test]
fn c04_pnp_recovery() {
    criterion(4, "PnP recovery", Duration::from_secs(30), || {
        let chain = HandChain::default_hand();
        let k = CameraIntrinsics::gopro();
        let (mut rot, mut trans, mut ransac_rot) = (Vec::new(), Vec::new(), Vec::new());
        let mut leaked = 0usize;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = camera_pose(&mut rng);
            let pts = hand_points(&chain, &mut rng);
            let corrs: Vec<Correspondence> = pts.iter().map(|p| Correspondence::new(*p, project(p, &pose, &k).unwrap())).collect();
            let sol = solve_pnp(&corrs, &k, None).unwrap();
            rot.push(rotation_error_deg(&sol.pose, &pose));
            trans.push(relative_translation_error(&sol.pose, &pose));

            let mut noisy = corrs.clone();
            let n_out = (noisy.len() as f64 * 0.3).round() as usize;
            for c in noisy.iter_mut().take(n_out) {
                c.image_point = Vector2::new(rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0));
            }
            let params = RansacParams::with_seed(seed);
            let (rs, mask) = solve_pnp_ransac(&noisy, &k, &params).unwrap();
            ransac_rot.push(rotation_error_deg(&rs.pose, &pose));
            leaked += noisy
                .iter()
                .zip(&mask)
                .filter(|(c, m)| **m && reprojection_error(c, &pose, &k) > params.inlier_threshold)
                .count();
        }
        let max_rot = rot.iter().cloned().fold(0.0, f64::max);
        let max_trans = trans.iter().cloned().fold(0.0, f64::max);
        let p95 = percentile(ransac_rot, 0.95);
        (
            max_rot <= 0.5 && max_trans <= 0.01 && p95 <= 1.0 && leaked == 0,
            format!(
                "noiseless max rotation {max_rot:.2e} deg (<= 0.5), max translation {:.2e}% (<= 1%); 30% outliers: p95 rotation {p95:.3e} deg (<= 1), outliers in mask {leaked} (= 0); 100 seeds",
                max_trans * 100.0
            ),
        )
    });
}

#[test]
fn c05_gravity_alignment() {
    criterion(5, "gravity alignment round trip", Duration::from_secs(1), || {
        let mut worst: f64 = 0.0;
        let mut level: f64 = 0.0;
        let mut count = 0;
        for i in -12..=12 {
            for j in -12..=12 {
                let pitch = (5 * i) as f64 * std::f64::consts::PI / 180.0;
                let roll = (5 * j) as f64 * std::f64::consts::PI / 180.0;
                let g = rot_x(-roll) * rot_y(pitch) * Vector3::z() * 9.81;
                let a = AccelSample::new(g.x, g.y, g.z);
                let rpy = upright_rpy(a).unwrap().as_array();
                worst = worst.max((pitch_from_accel(a).unwrap() - pitch).abs());
                worst = worst.max((-rpy[1] - pitch).abs());
                worst = worst.max((rpy[0] - roll).abs());
                worst = worst.max(rpy[2].abs());
                let up = upright_from_accel(a).unwrap().transform_vector(&(g / g.norm()));
                level = level.max((up - Vector3::z()).amax());
                count += 1;
            }
        }
        (
            worst <= 1e-6 && level <= 1e-6,
            format!("{count} grid points: worst angle error {worst:.2e} rad, worst leveling error {level:.2e} (threshold 1e-6)"),
        )
    });
}

#[test]
fn c06_wrist_chain() {
    criterion(6, "wrist chain recovery and workspace fit", Duration::from_secs(5), || {
        let chain = HandChain::default_hand();
        let k = CameraIntrinsics::gopro();
        let ws = Workspace::default();
        let family = TaskFamily::new(6, "reach", DmpConfig::with_size(10, 39).unwrap(), chain.limits()).unwrap();
        let mut worst: f64 = 0.0;
        let mut outside = 0usize;
        let mut clips = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let opts = ClipOptions {
                pixels: seed % 2 == 0,
                camera_motion: 0.1,
                ..ClipOptions::default()
            };
            let task = family.sample_task(&mut rng);
            let s = synth_clip(&family, &task, &chain, &k, &opts, &mut rng).unwrap();
            let cam = wrist_in_camera(&s.clip).unwrap();
            let poses = wrist_chain(&s.clip, &cam).unwrap();
            for (a, b) in poses.iter().zip(&s.wrist_robot) {
                worst = worst.max((a.translation - b.translation).amax());
                worst = worst.max((a.rotation - b.rotation).amax());
            }
            // a wide sweep forces the uniform shrink
            let stretched: Vec<RigidTransform> = poses
                .iter()
                .map(|p| RigidTransform::from_parts(p.rotation, p.translation * 8.0))
                .collect();
            for p in fit_workspace(&poses, &ws).iter().chain(&fit_workspace(&stretched, &ws)) {
                if !ws.contains(&p.translation, 1e-9) {
                    outside += 1;
                }
            }
            clips += 1;
        }
        (
            worst <= 1e-6 && outside == 0,
            format!("{clips} clips: worst pose error before rescale {worst:.2e} (threshold 1e-6), points outside workspace {outside}"),
        )
    });
}

#[test]
fn c07_hand_retargeting() {
    criterion(7, "hand retargeting and distillation", Duration::from_secs(120), || {
        let chain = HandChain::default_hand();
        let spec = KeyVectorSpec::default_for(&chain).unwrap();
        let opts = RetargetOptions::default();
        let mut worst_energy: f64 = 0.0;
        let mut monotone = true;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q_star = JointVector(chain.limits().iter().map(|[lo, hi]| rng.gen_range(*lo..=*hi)).collect());
            let target = HandTarget::from_robot(&chain, &q_star, &spec).unwrap();
            let r = retarget_to_target(&target, &chain, &spec, &chain.mid_configuration(), &opts).unwrap();
            worst_energy = worst_energy.max(r.energy);
            monotone &= r.trace.windows(2).all(|w| w[1] <= w[0]);
        }

        let scale = 1.1;
        let uniform = KeyVectorSpec::uniform(scale).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data: Vec<(HumanHandFrame, JointVector)> = (0..1200)
            .map(|i| {
                let q = JointVector(
                    chain
                        .limits()
                        .iter()
                        .map(|[lo, hi]| {
                            let (mid, half) = (0.5 * (lo + hi), 0.3 * (hi - lo));
                            rng.gen_range(mid - half..=mid + half)
                        })
                        .collect(),
                );
                let f = HumanHandFrame::new(human_from_robot(&chain, &q, scale).unwrap(), i as f64).unwrap();
                let r = retarget_hand(&f, &chain, &uniform, &chain.mid_configuration(), &opts).unwrap();
                (f, r.q)
            })
            .collect();
        let (train_set, test_set) = data.split_at(1000);
        let net = distill_hand(
            train_set,
            &chain,
            &DistillOptions {
                epochs: 200,
                ..DistillOptions::default()
            },
        )
        .unwrap();
        let held_out = net.mean_error(test_set).unwrap();
        (
            worst_energy <= 1e-4 && monotone && held_out <= 0.05,
            format!(
                "50 feasible targets: worst energy {worst_energy:.2e} (<= 1e-4), traces monotone {monotone}; distilled held-out mean joint error {held_out:.4} rad (<= 0.05)"
            ),
        )
    });
}

#[test]
fn c08_rbf_resampling() {
    criterion(8, "RBF resampling", Duration::from_secs(5), || {
        let n = 50;
        let times: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64 * 2.0).collect();
        let f = |c: usize, t: f64| (1.3 * t + 0.4 * c as f64).sin() * (0.5 + 0.1 * c as f64);
        let wrist = times.iter().map(|&t| std::array::from_fn(|c| f(c, t))).collect();
        let hand = times.iter().map(|&t| (0..16).map(|c| f(c + 6, t)).collect()).collect();
        let traj = Trajectory::new(times.clone(), wrist, hand, Embodiment::Hand16).unwrap();
        let up = resample_rbf(&traj, 200).unwrap();
        let mut err: f64 = 0.0;
        for (k, &t) in up.times.iter().enumerate() {
            let row = up.row(k);
            for (c, v) in row.iter().enumerate() {
                err = err.max((v - f(c, t)).abs());
            }
        }
        let last = up.len() - 1;
        let mut ends: f64 = 0.0;
        for (a, b) in [(0, 0), (n - 1, last)] {
            for (x, y) in traj.row(a).iter().zip(up.row(b)) {
                ends = ends.max((x - y).abs());
            }
        }
        let twice = resample_rbf(&up, 200).unwrap();
        let mut idem: f64 = 0.0;
        for k in 0..up.len() {
            for (x, y) in up.row(k).iter().zip(twice.row(k)) {
                idem = idem.max((x - y).abs());
            }
        }
        (
            err <= 1e-2 && ends <= 1e-6 && idem <= 1e-6,
            format!("50 -> 200 max error {err:.2e} (<= 1e-2), endpoint error {ends:.2e} (<= 1e-6), idempotence {idem:.2e} (<= 1e-6)"),
        )
    });
}

#[test]
fn c09_action_prior() {
    criterion(9, "action-prior sample efficiency", Duration::from_secs(15 * 60), || {
        let chain = HandChain::default_hand();
        let pcfg = PolicyConfig::desk(16, PolicyMode::TwoStream);
        let gap = HumanGap::default();
        let (mut better_ft, mut better_init) = (0, 0);
        let mut rows = Vec::new();
        for seed in 0..5u64 {
            let family = TaskFamily::new(900 + seed, "synthetic", pcfg.hand_dmp.clone(), chain.limits()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw = |human: bool, rng: &mut ChaCha8Rng| {
                let task = family.sample_task(rng);
                let rec = if human {
                    family.human_record(&task, &gap, rng).unwrap()
                } else {
                    family.robot_record(&task).unwrap()
                };
                Sample::from_record(&rec, &pcfg).unwrap()
            };
            let human: Vec<Sample> = (0..500).map(|_| draw(true, &mut rng)).collect();
            let robot: Vec<Sample> = (0..5).map(|_| draw(false, &mut rng)).collect();
            let test: Vec<Sample> = (0..200).map(|_| draw(false, &mut rng)).collect();
            let tc = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let init = Policy::new(pcfg.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let random_l1 = evaluate(&init, &test).unwrap().mean_l1;

            let mut prior = init.clone();
            train(&mut prior, &human, &[], &tc).unwrap();
            let prior_l1 = evaluate(&prior, &test).unwrap().mean_l1;
            let mut tuned = prior.clone();
            train(&mut tuned, &[], &robot, &tc).unwrap();
            let tuned_l1 = evaluate(&tuned, &test).unwrap().mean_l1;

            let mut scratch = init.clone();
            train(&mut scratch, &[], &robot, &tc).unwrap();
            let scratch_l1 = evaluate(&scratch, &test).unwrap().mean_l1;

            better_ft += usize::from(tuned_l1 <= scratch_l1);
            better_init += usize::from(prior_l1 < random_l1);
            rows.push(format!("{tuned_l1:.4}/{scratch_l1:.4}"));
        }
        (
            better_ft >= 4 && better_init == 5,
            format!(
                "pretrain+finetune <= scratch in {better_ft}/5 seeds (need >= 4) [held-out L1 {}], pretrained-only < random init in {better_init}/5 (need 5)",
                rows.join(", ")
            ),
        )
    });
}

fn dexprior(args: &[&str], dir: &Path) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dexprior"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!("dexprior {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn pipeline(dir: &Path, seed: &str, synth_args: &[&str]) -> bool {
    let mut synth = vec!["synth", "--seed", seed, "--out", "data"];
    synth.extend_from_slice(synth_args);
    let steps: Vec<Vec<&str>> = vec![
        synth,
        vec!["retarget", "--config", "data/config.json", "--seed", seed, "--jobs", "2"],
        vec!["pretrain", "--config", "data/config.json", "--manifest", "data/manifest.json", "--seed", seed],
        vec![
            "finetune",
            "--config",
            "data/config.json",
            "--manifest",
            "data/manifest.json",
            "--seed",
            seed,
            "--checkpoint",
            "data/run/pretrain.ckpt.json",
        ],
        vec![
            "eval",
            "--config",
            "data/config.json",
            "--manifest",
            "data/manifest.json",
            "--checkpoint",
            "data/run/finetune.ckpt.json",
        ],
    ];
    steps.iter().all(|a| dexprior(a, dir).status.success())
}

#[test]
fn c10_reproducibility() {
    criterion(10, "reproducible checkpoints and metrics", Duration::from_secs(300), || {
        let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
        let small = ["--tasks", "1", "--clips", "2", "--demos", "3", "--test", "4", "--frames", "30"];
        let ok = runs.iter().all(|d| pipeline(d.path(), "5", &small));
        let files = ["data/run/pretrain.ckpt.json", "data/run/finetune.ckpt.json", "data/run/metrics.json"];
        let same: Vec<bool> = files
            .iter()
            .map(|f| {
                let a = fs::read(runs[0].path().join(f));
                let b = fs::read(runs[1].path().join(f));
                matches!((a, b), (Ok(a), Ok(b)) if a == b)
            })
            .collect();
        let identical = same.iter().filter(|s| **s).count();
        (
            ok && identical == files.len(),
            format!("commands succeeded {ok}; byte-identical files {identical}/{} (checkpoints and metrics)", files.len()),
        )
    });
}

#[test]
fn c11_end_to_end() {
    criterion(11, "synth -> retarget -> pretrain -> finetune -> eval", Duration::from_secs(20 * 60), || {
        let dir = tempfile::tempdir().unwrap();
        let ok = pipeline(dir.path(), "11", &[]);
        let valid = ok
            && dexprior(
                &["validate", "--config", "data/config.json", "--metrics", "data/run/metrics.json"],
                dir.path(),
            )
            .status
            .success();
        let metrics = MetricsFile::load(&dir.path().join("data/run/metrics.json"));
        let detail = match &metrics {
            Ok(m) => format!("exit 0 for every command {ok}; metrics validate {valid}; held-out mean L1 {:.4}", m.overall.mean_l1),
            Err(e) => format!("exit 0 for every command {ok}; metrics unreadable: {e:#}"),
        };
        (ok && valid && metrics.is_ok(), detail)
    });
}
