//! Discrete dynamic movement primitives with a normalized radial-basis
//! forcing term, and the exact adjoint of the rollout.
//!
//! Trajectories are stored row-major: step `k`, channel `c` lives at
//! `k * d + c`. Forcing weights are `n_basis × d`, also row-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NdpError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid DMP configuration: {0}")]
    InvalidConfig(String),
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), NdpError> {
    if expected == got {
        Ok(())
    } else {
        Err(NdpError::DimensionMismatch { what, expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DmpScalars {
    alpha: f64,
    beta: f64,
    ax: f64,
    n_basis: usize,
    steps: usize,
    tau: f64,
}

/// Integrator constants, basis layout and the cached per-step basis
/// activations `x_k * psi_i(x_k) / sum_j psi_j(x_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DmpScalars", into = "DmpScalars")]
pub struct DmpConfig {
    pub alpha: f64,
    pub beta: f64,
    pub ax: f64,
    pub n_basis: usize,
    pub steps: usize,
    pub tau: f64,
    centers: Vec<f64>,
    widths: Vec<f64>,
    activations: Vec<f64>,
}

impl TryFrom<DmpScalars> for DmpConfig {
    type Error = NdpError;
    fn try_from(s: DmpScalars) -> Result<Self, NdpError> {
        DmpConfig::new(s.alpha, s.beta, s.ax, s.n_basis, s.steps, s.tau)
    }
}

impl From<DmpConfig> for DmpScalars {
    fn from(c: DmpConfig) -> Self {
        DmpScalars {
            alpha: c.alpha,
            beta: c.beta,
            ax: c.ax,
            n_basis: c.n_basis,
            steps: c.steps,
            tau: c.tau,
        }
    }
}

impl Default for DmpConfig {
    fn default() -> Self {
        Self::new(15.0, 3.75, 1.0, 300, 200, 1.0).expect("default config is valid")
    }
}

impl DmpConfig {
    pub fn new(alpha: f64, beta: f64, ax: f64, n_basis: usize, steps: usize, tau: f64) -> Result<Self, NdpError> {
        let positive = [("alpha", alpha), ("beta", beta), ("ax", ax), ("tau", tau)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NdpError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if n_basis < 2 {
            return Err(NdpError::InvalidConfig("need at least 2 basis functions".into()));
        }
        if steps < 1 {
            return Err(NdpError::InvalidConfig("need at least 1 step".into()));
        }
        let centers: Vec<f64> = (0..n_basis).map(|i| (-ax * i as f64 / (n_basis - 1) as f64).exp()).collect();
        let mut widths: Vec<f64> = centers.windows(2).map(|c| 1.0 / (c[1] - c[0]).powi(2)).collect();
        widths.push(*widths.last().expect("n_basis >= 2"));
        let mut cfg = Self {
            alpha,
            beta,
            ax,
            n_basis,
            steps,
            tau,
            centers,
            widths,
            activations: Vec::new(),
        };
        cfg.activations = (0..steps).flat_map(|k| cfg.basis(cfg.phase(k))).collect();
        Ok(cfg)
    }

    /// Critically damped (`beta = alpha / 4`), unit-decay configuration.
    pub fn with_size(n_basis: usize, steps: usize) -> Result<Self, NdpError> {
        Self::new(15.0, 3.75, 1.0, n_basis, steps, 1.0)
    }

    pub fn dt(&self) -> f64 {
        self.tau / self.steps as f64
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Canonical phase at step `k`.
    pub fn phase(&self, k: usize) -> f64 {
        (-self.ax * k as f64 * self.dt() / self.tau).exp()
    }

    /// `x * psi_i(x) / sum_j psi_j(x)` for every basis function.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let psi: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.widths)
            .map(|(c, h)| (-h * (x - c).powi(2)).exp())
            .collect();
        let total: f64 = psi.iter().sum();
        if total <= 0.0 {
            return vec![0.0; self.n_basis];
        }
        psi.iter().map(|p| x * p / total).collect()
    }

    fn activation(&self, k: usize) -> &[f64] {
        &self.activations[k * self.n_basis..(k + 1) * self.n_basis]
    }

    /// Number of reals a head must emit for `d` channels: weights then goal.
    pub fn param_len(&self, d: usize) -> usize {
        self.n_basis * d + d
    }
}

/// Forcing weights (`n_basis × d`, row-major) and per-channel goal.
#[derive(Debug, Clone, PartialEq)]
pub struct NdpParams {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
}

impl NdpParams {
    pub fn zeros(n_basis: usize, d: usize) -> Self {
        Self {
            w: vec![0.0; n_basis * d],
            g: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Splits a flat head output into weights followed by goal.
    pub fn from_flat(cfg: &DmpConfig, d: usize, flat: &[f64]) -> Result<Self, NdpError> {
        check("head output", cfg.param_len(d), flat.len())?;
        let nw = cfg.n_basis * d;
        Ok(Self {
            w: flat[..nw].to_vec(),
            g: flat[nw..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.w.clone();
        v.extend_from_slice(&self.g);
        v
    }

    fn check(&self, cfg: &DmpConfig) -> Result<usize, NdpError> {
        let d = self.g.len();
        check("w", cfg.n_basis * d, self.w.len())?;
        Ok(d)
    }
}

/// Forcing value at phase `x` for every channel.
pub fn forcing(cfg: &DmpConfig, params: &NdpParams, x: f64) -> Result<Vec<f64>, NdpError> {
    let d = params.check(cfg)?;
    Ok(weighted(&cfg.basis(x), &params.w, d))
}

fn weighted(act: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    let mut f = vec![0.0; d];
    for (a, row) in act.iter().zip(w.chunks_exact(d)) {
        for (fc, wc) in f.iter_mut().zip(row) {
            *fc += a * wc;
        }
    }
    f
}

/// Semi-implicit Euler rollout; returns `steps + 1` rows including `y0`.
pub fn rollout(cfg: &DmpConfig, params: &NdpParams, y0: &[f64], ydot0: &[f64]) -> Result<Vec<f64>, NdpError> {
    let d = params.check(cfg)?;
    check("y0", d, y0.len())?;
    check("ydot0", d, ydot0.len())?;
    let dt = cfg.dt();
    let ab = cfg.alpha * cfg.beta;
    let mut out = Vec::with_capacity((cfg.steps + 1) * d);
    out.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let mut z = ydot0.to_vec();
    for k in 0..cfg.steps {
        let f = weighted(cfg.activation(k), &params.w, d);
        for c in 0..d {
            z[c] += dt * (ab * (params.g[c] - y[c]) - cfg.alpha * z[c] + f[c]);
            y[c] += dt * z[c];
        }
        out.extend_from_slice(&y);
    }
    Ok(out)
}

/// Gradients of `sum_k <upstream_k, y_k>` with respect to every input.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGrad {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub y0: Vec<f64>,
    pub ydot0: Vec<f64>,
}

/// Reverse-mode pass through [`rollout`]. `upstream` has the rollout's
/// shape. The forward states are not needed because the recursion is
/// linear in the state.
pub fn rollout_vjp(cfg: &DmpConfig, params: &NdpParams, y0: &[f64], ydot0: &[f64], upstream: &[f64]) -> Result<RolloutGrad, NdpError> {
    let d = params.check(cfg)?;
    check("y0", d, y0.len())?;
    check("ydot0", d, ydot0.len())?;
    let s = cfg.steps;
    check("upstream", (s + 1) * d, upstream.len())?;
    let dt = cfg.dt();
    let ab = cfg.alpha * cfg.beta;
    let mut gw = vec![0.0; cfg.n_basis * d];
    let mut gg = vec![0.0; d];
    let mut ybar = upstream[s * d..].to_vec();
    let mut zbar = vec![0.0; d];
    let mut fbar = vec![0.0; d];
    for k in (0..s).rev() {
        for c in 0..d {
            // adjoint of z_{k+1}, which feeds both y_{k+1} and later steps
            let zn = zbar[c] + dt * ybar[c];
            gg[c] += dt * ab * zn;
            fbar[c] = dt * zn;
            ybar[c] += -dt * ab * zn + upstream[k * d + c];
            zbar[c] = (1.0 - cfg.alpha * dt) * zn;
        }
        for (a, row) in cfg.activation(k).iter().zip(gw.chunks_exact_mut(d)) {
            for (gc, fc) in row.iter_mut().zip(&fbar) {
                *gc += a * fc;
            }
        }
    }
    Ok(RolloutGrad {
        w: gw,
        g: gg,
        y0: ybar,
        ydot0: zbar,
    })
}

/// `|a - b| / max(|a|, |b|, floor)` with the floor at 1e-4, so that
/// near-zero derivatives are compared against finite-difference rounding
/// noise rather than their own magnitude.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}
