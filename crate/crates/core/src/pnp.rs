//! Wrist pose from 2D-3D hand keypoint correspondences.
//!
//! [`solve_pnp`] runs an EPnP linear initialization (control points on the
//! principal axes of the model points) followed by Levenberg-Marquardt on
//! pixel reprojection residuals. [`solve_pnp_ransac`] wraps it in a seeded
//! consensus loop. No lens distortion is modeled.
//!
//! All poses map model (hand) coordinates into the camera frame.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2, Vector3, Vector6};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rot_axis, RigidTransform};

/// Minimum number of correspondences accepted by [`solve_pnp`].
pub const MIN_CORRESPONDENCES: usize = 6;

const GRADIENT_TOL: f64 = 1e-10;
const MAX_LM_ITERATIONS: usize = 100;
const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {need} correspondences, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("degenerate correspondences: {0}")]
    Degenerate(&'static str),
    #[error("refinement did not converge after {iterations} iterations (gradient {gradient:e})")]
    NoConvergence { iterations: usize, gradient: f64 },
    #[error("point is behind the camera (depth {0:e})")]
    BehindCamera(f64),
    #[error("no hypothesis reached {needed} inliers (best {best})")]
    ConsensusFailure { best: usize, needed: usize },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite correspondence")]
    NonFinite,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, PnpError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// GoPro Hero 7 intrinsics at 1920x1080.
    pub fn gopro() -> Self {
        Self {
            fx: 2304.002572862,
            fy: 2304.002572862,
            cx: 960.0,
            cy: 540.0,
        }
    }

    /// Named presets accepted in configuration files.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "gopro" | "gopro_hero7" => Some(Self::gopro()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PnpError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(PnpError::InvalidIntrinsics(format!(
                "fx={} fy={} cx={} cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }
}

/// A hand-model point and its detected pixel location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub model_point: Vector3<f64>,
    pub image_point: Vector2<f64>,
}

impl Correspondence {
    pub fn new(model_point: Vector3<f64>, image_point: Vector2<f64>) -> Self {
        Self { model_point, image_point }
    }

    fn is_finite(&self) -> bool {
        self.model_point.iter().chain(self.image_point.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    /// Pixels.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl RansacParams {
    /// Default thresholds with an explicit seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 8.0,
            min_inliers: 6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PnpError> {
        if self.iterations == 0 {
            return Err(PnpError::InvalidParams("iterations must be >= 1".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(PnpError::InvalidParams("inlier_threshold must be > 0".into()));
        }
        if self.min_inliers < 4 {
            return Err(PnpError::InvalidParams("min_inliers must be >= 4".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub pose: RigidTransform,
    /// Root-mean-square reprojection error over the points used, in pixels.
    pub rms: f64,
    pub iterations: usize,
}

/// Pixel projection of a model point through `pose` and `k`.
pub fn project(point: &Vector3<f64>, pose: &RigidTransform, k: &CameraIntrinsics) -> Result<Vector2<f64>, PnpError> {
    let pc = pose.transform_point(point);
    if pc.z <= MIN_DEPTH {
        return Err(PnpError::BehindCamera(pc.z));
    }
    Ok(Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
}

/// Reprojection error of one correspondence, `+inf` if behind the camera.
pub fn reprojection_error(c: &Correspondence, pose: &RigidTransform, k: &CameraIntrinsics) -> f64 {
    match project(&c.model_point, pose, k) {
        Ok(uv) => (uv - c.image_point).norm(),
        Err(_) => f64::INFINITY,
    }
}

pub fn reprojection_rms(corrs: &[Correspondence], pose: &RigidTransform, k: &CameraIntrinsics) -> f64 {
    if corrs.is_empty() {
        return 0.0;
    }
    let sum: f64 = corrs.iter().map(|c| reprojection_error(c, pose, k).powi(2)).sum();
    (sum / corrs.len() as f64).sqrt()
}

fn check_inputs(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<(), PnpError> {
    k.validate()?;
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(PnpError::TooFewPoints {
            need: MIN_CORRESPONDENCES,
            got: corrs.len(),
        });
    }
    if !corrs.iter().all(Correspondence::is_finite) {
        return Err(PnpError::NonFinite);
    }
    for (i, a) in corrs.iter().enumerate() {
        for b in &corrs[i + 1..] {
            if (a.model_point - b.model_point).norm() == 0.0 {
                return Err(PnpError::Degenerate("duplicate model points"));
            }
        }
    }
    Ok(())
}

/// Least-squares pose from correspondences.
///
/// When `init` is given it seeds the refinement; otherwise EPnP does.
pub fn solve_pnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    init: Option<&RigidTransform>,
) -> Result<PnpSolution, PnpError> {
    check_inputs(corrs, k)?;
    let start = match init {
        Some(p) => *p,
        None => epnp(corrs, k)?,
    };
    refine_lm(corrs, k, start)
}

/// Linear EPnP estimate (no iterative refinement).
pub fn epnp(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<RigidTransform, PnpError> {
    let n = corrs.len();
    if n < 4 {
        return Err(PnpError::TooFewPoints { need: 4, got: n });
    }
    let centroid = corrs.iter().map(|c| c.model_point).sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for c in corrs {
        let d = c.model_point - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axes: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    if lambda[0] <= 0.0 || lambda[1] <= 1e-12 * lambda[0] {
        return Err(PnpError::Degenerate("collinear model points"));
    }
    let planar = lambda[2] <= 1e-10 * lambda[0];
    let n_ctrl = if planar { 3 } else { 4 };

    // control points: centroid plus one per principal axis
    let scales: Vec<f64> = lambda.iter().map(|l| (l / n as f64).sqrt()).collect();
    let mut ctrl_world = vec![centroid];
    for j in 0..n_ctrl - 1 {
        ctrl_world.push(centroid + axes[j] * scales[j]);
    }
    // barycentric coordinates, exact because the axes are orthonormal
    let alphas: Vec<Vec<f64>> = corrs
        .iter()
        .map(|c| {
            let d = c.model_point - centroid;
            let mut a = vec![0.0; n_ctrl];
            let mut sum = 0.0;
            for j in 0..n_ctrl - 1 {
                a[j + 1] = d.dot(&axes[j]) / scales[j];
                sum += a[j + 1];
            }
            a[0] = 1.0 - sum;
            a
        })
        .collect();

    let cols = 3 * n_ctrl;
    let mut m = DMatrix::<f64>::zeros(2 * n, cols);
    for (i, (c, a)) in corrs.iter().zip(&alphas).enumerate() {
        let (u, v) = (c.image_point.x, c.image_point.y);
        for j in 0..n_ctrl {
            m[(2 * i, 3 * j)] = a[j] * k.fx;
            m[(2 * i, 3 * j + 2)] = a[j] * (k.cx - u);
            m[(2 * i + 1, 3 * j + 1)] = a[j] * k.fy;
            m[(2 * i + 1, 3 * j + 2)] = a[j] * (k.cy - v);
        }
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut ev_order: Vec<usize> = (0..cols).collect();
    ev_order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let max_ev = eig.eigenvalues[ev_order[cols - 1]].abs();
    let null_dims = ev_order
        .iter()
        .filter(|&&i| eig.eigenvalues[i].abs() <= 1e-14 * max_ev)
        .count();
    if max_ev == 0.0 || null_dims > 4 {
        return Err(PnpError::Degenerate("rank-deficient linear system"));
    }
    let kernel: Vec<DVector<f64>> = ev_order.iter().take(3).map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

    let pairs: Vec<(usize, usize)> = (0..n_ctrl).flat_map(|a| (a + 1..n_ctrl).map(move |b| (a, b))).collect();
    let ctrl_dist2: Vec<f64> = pairs.iter().map(|&(a, b)| (ctrl_world[a] - ctrl_world[b]).norm_squared()).collect();
    let diff = |v: &DVector<f64>, a: usize, b: usize| -> Vector3<f64> {
        Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
    };

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    // one kernel vector
    {
        let (mut num, mut den) = (0.0, 0.0);
        for (p, &(a, b)) in pairs.iter().enumerate() {
            let dv = diff(&kernel[0], a, b).norm();
            num += dv * ctrl_dist2[p].sqrt();
            den += dv * dv;
        }
        if den > 0.0 {
            candidates.push(vec![num / den]);
        }
    }
    // two and three kernel vectors, linearized in the products beta_i * beta_j
    let max_kernel = if planar { 2 } else { 3 };
    for nk in 2..=max_kernel {
        let prods: Vec<(usize, usize)> = (0..nk).flat_map(|i| (i..nk).map(move |j| (i, j))).collect();
        let mut l = DMatrix::<f64>::zeros(pairs.len(), prods.len());
        for (p, &(a, b)) in pairs.iter().enumerate() {
            let d: Vec<Vector3<f64>> = (0..nk).map(|i| diff(&kernel[i], a, b)).collect();
            for (q, &(i, j)) in prods.iter().enumerate() {
                let f = if i == j { 1.0 } else { 2.0 };
                l[(p, q)] = f * d[i].dot(&d[j]);
            }
        }
        let rho = DVector::from_vec(ctrl_dist2.clone());
        let Ok(x) = l.clone().svd(true, true).solve(&rho, 1e-14) else {
            continue;
        };
        let sq = |i: usize| prods.iter().position(|&p| p == (i, i)).unwrap();
        let cross = |j: usize| prods.iter().position(|&p| p == (0, j)).unwrap();
        let mut betas = vec![x[sq(0)].abs().sqrt()];
        for j in 1..nk {
            let s = if x[cross(j)] < 0.0 { -1.0 } else { 1.0 };
            betas.push(s * x[sq(j)].abs().sqrt());
        }
        candidates.push(betas);
    }

    let mut best: Option<(f64, RigidTransform)> = None;
    for betas in candidates {
        let mut x = DVector::<f64>::zeros(cols);
        for (b, v) in betas.iter().zip(&kernel) {
            x += v * *b;
        }
        let ctrl_cam: Vec<Vector3<f64>> = (0..n_ctrl).map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2])).collect();
        let mut cam_pts: Vec<Vector3<f64>> = alphas
            .iter()
            .map(|a| (0..n_ctrl).map(|j| ctrl_cam[j] * a[j]).sum())
            .collect();
        if cam_pts.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            cam_pts.iter_mut().for_each(|p| *p = -*p);
        }
        let model: Vec<Vector3<f64>> = corrs.iter().map(|c| c.model_point).collect();
        let Some(pose) = absolute_orientation(&model, &cam_pts) else {
            continue;
        };
        let err = reprojection_rms(corrs, &pose, k);
        if err.is_finite() && best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p).ok_or(PnpError::Degenerate("no valid linear solution"))
}

/// Rigid alignment taking `src` points onto `dst` (no scale).
pub(crate) fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<RigidTransform> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = vt.transpose() * d * u.transpose();
    }
    let t = cd - r * cs;
    if !r.iter().chain(t.iter()).all(|v| v.is_finite()) {
        return None;
    }
    Some(RigidTransform::from_parts(r, t))
}

fn residuals_and_jacobian(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    pose: &RigidTransform,
    with_jacobian: bool,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = corrs.len();
    let mut r = DVector::zeros(2 * n);
    let mut jac = DMatrix::zeros(if with_jacobian { 2 * n } else { 0 }, 6);
    for (i, c) in corrs.iter().enumerate() {
        let rx = pose.rotation * c.model_point;
        let p = rx + pose.translation;
        if p.z <= MIN_DEPTH {
            return None;
        }
        let iz = 1.0 / p.z;
        r[2 * i] = k.fx * p.x * iz + k.cx - c.image_point.x;
        r[2 * i + 1] = k.fy * p.y * iz + k.cy - c.image_point.y;
        if with_jacobian {
            // d(u,v)/dp
            let du = Vector3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz);
            let dv = Vector3::new(0.0, k.fy * iz, -k.fy * p.y * iz * iz);
            // dp/domega = -[R X]x for a left perturbation exp(omega) R
            let skew = rx.cross_matrix();
            let du_w = -(du.transpose() * skew);
            let dv_w = -(dv.transpose() * skew);
            for j in 0..3 {
                jac[(2 * i, j)] = du_w[j];
                jac[(2 * i + 1, j)] = dv_w[j];
                jac[(2 * i, 3 + j)] = du[j];
                jac[(2 * i + 1, 3 + j)] = dv[j];
            }
        }
    }
    Some((r, jac))
}

fn apply_step(pose: &RigidTransform, step: &Vector6<f64>) -> RigidTransform {
    let w = Vector3::new(step[0], step[1], step[2]);
    let angle = w.norm();
    let dr = if angle > 0.0 { rot_axis(&(w / angle), angle) } else { Matrix3::identity() };
    RigidTransform::from_parts(dr * pose.rotation, pose.translation + Vector3::new(step[3], step[4], step[5]))
}

/// Levenberg-Marquardt on pixel residuals.
///
/// Converges on `|grad|_inf <= 1e-10`, or when no damped step can lower the
/// cost any further (the cost has reached its floating-point floor).
fn refine_lm(corrs: &[Correspondence], k: &CameraIntrinsics, start: RigidTransform) -> Result<PnpSolution, PnpError> {
    let Some((mut r, mut jac)) = residuals_and_jacobian(corrs, k, &start, true) else {
        return Err(PnpError::BehindCamera(f64::NAN));
    };
    let mut pose = start;
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = 1e-3;
    let mut grad = Vector6::<f64>::zeros();
    for iter in 0..MAX_LM_ITERATIONS {
        let g = jac.transpose() * &r;
        grad.copy_from(&g);
        if grad.amax() <= GRADIENT_TOL {
            return Ok(solution(corrs, k, pose, iter));
        }
        let h = jac.transpose() * &jac;
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = h.clone();
            for d in 0..6 {
                damped[(d, d)] += lambda * h[(d, d)].max(1e-12);
            }
            let step = damped.cholesky().map(|c| -c.solve(&g));
            if let Some(step) = step {
                let step = Vector6::from_column_slice(step.as_slice());
                let cand = apply_step(&pose, &step);
                if let Some((rc, jc)) = residuals_and_jacobian(corrs, k, &cand, true) {
                    let c_cost = 0.5 * rc.norm_squared();
                    if c_cost < cost {
                        pose = cand;
                        r = rc;
                        jac = jc;
                        cost = c_cost;
                        lambda = (lambda * 0.1).max(1e-12);
                        improved = true;
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            return Ok(solution(corrs, k, pose, iter));
        }
    }
    let g = jac.transpose() * &r;
    if g.amax() <= GRADIENT_TOL {
        return Ok(solution(corrs, k, pose, MAX_LM_ITERATIONS));
    }
    Err(PnpError::NoConvergence {
        iterations: MAX_LM_ITERATIONS,
        gradient: g.amax(),
    })
}

fn solution(corrs: &[Correspondence], k: &CameraIntrinsics, pose: RigidTransform, iterations: usize) -> PnpSolution {
    PnpSolution {
        pose,
        rms: reprojection_rms(corrs, &pose, k),
        iterations,
    }
}

fn canonical_cmp(a: &Correspondence, b: &Correspondence) -> Ordering {
    let ka = [a.model_point.x, a.model_point.y, a.model_point.z, a.image_point.x, a.image_point.y];
    let kb = [b.model_point.x, b.model_point.y, b.model_point.z, b.image_point.x, b.image_point.y];
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Robust pose with an inlier mask in input order.
///
/// Correspondences are sorted into a canonical order before a seeded
/// permutation drives the sampler, so the result does not depend on input
/// order. The best consensus set is refined with [`solve_pnp`] and the mask
/// marks points within `inlier_threshold` pixels of the refined pose.
pub fn solve_pnp_ransac(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<(PnpSolution, Vec<bool>), PnpError> {
    params.validate()?;
    k.validate()?;
    let n = corrs.len();
    let need = params.min_inliers.max(MIN_CORRESPONDENCES);
    if n < need {
        return Err(PnpError::TooFewPoints { need, got: n });
    }
    if !corrs.iter().all(Correspondence::is_finite) {
        return Err(PnpError::NonFinite);
    }
    let mut canonical: Vec<usize> = (0..n).collect();
    canonical.sort_by(|&a, &b| canonical_cmp(&corrs[a], &corrs[b]));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut perm = canonical.clone();
    perm.shuffle(&mut rng);

    let mut best: Option<(usize, f64, RigidTransform)> = None;
    let mut sample = Vec::with_capacity(MIN_CORRESPONDENCES);
    for _ in 0..params.iterations {
        let picks = rand::seq::index::sample(&mut rng, n, MIN_CORRESPONDENCES);
        sample.clear();
        sample.extend(picks.iter().map(|p| corrs[perm[p]]));
        let Ok(pose) = epnp(&sample, k) else {
            continue;
        };
        let (count, score) = consensus(corrs, &canonical, k, &pose, params.inlier_threshold);
        let better = match &best {
            None => true,
            Some((bc, bs, _)) => count > *bc || (count == *bc && score < *bs),
        };
        if better {
            best = Some((count, score, pose));
        }
    }
    let (best_count, _, mut pose) = best.ok_or(PnpError::ConsensusFailure { best: 0, needed: need })?;
    if best_count < need {
        return Err(PnpError::ConsensusFailure {
            best: best_count,
            needed: need,
        });
    }

    let mut mask = inlier_mask(corrs, k, &pose, params.inlier_threshold);
    let mut solution = None;
    for _ in 0..3 {
        let inliers: Vec<Correspondence> = canonical.iter().filter(|&&i| mask[i]).map(|&i| corrs[i]).collect();
        if inliers.len() < need {
            return Err(PnpError::ConsensusFailure {
                best: inliers.len(),
                needed: need,
            });
        }
        let sol = solve_pnp(&inliers, k, None)?;
        pose = sol.pose;
        let next = inlier_mask(corrs, k, &pose, params.inlier_threshold);
        let stable = next == mask;
        mask = next;
        solution = Some(sol);
        if stable {
            break;
        }
    }
    let sol = solution.expect("refined at least once");
    Ok((sol, mask))
}

fn consensus(
    corrs: &[Correspondence],
    canonical: &[usize],
    k: &CameraIntrinsics,
    pose: &RigidTransform,
    threshold: f64,
) -> (usize, f64) {
    let mut count = 0;
    let mut score = 0.0;
    for &i in canonical {
        let e = reprojection_error(&corrs[i], pose, k);
        if e <= threshold {
            count += 1;
            score += e;
        } else {
            score += threshold;
        }
    }
    (count, score)
}

fn inlier_mask(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &RigidTransform, threshold: f64) -> Vec<bool> {
    corrs.iter().map(|c| reprojection_error(c, pose, k) <= threshold).collect()
}

/// Angle of the relative rotation between two poses, in degrees.
pub fn rotation_error_deg(a: &RigidTransform, b: &RigidTransform) -> f64 {
    crate::geometry::rotation_angle_between(&a.rotation, &b.rotation).to_degrees()
}

/// `|t_a - t_b| / |t_b|`.
pub fn relative_translation_error(estimate: &RigidTransform, truth: &RigidTransform) -> f64 {
    (estimate.translation - truth.translation).norm() / truth.translation.norm().max(f64::MIN_POSITIVE)
}
