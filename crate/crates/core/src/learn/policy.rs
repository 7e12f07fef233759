//! Feature-conditioned trajectory policy: a shared trunk feeding one or two
//! heads whose outputs parameterize DMP rollouts (or, in open-head mode,
//! the trajectory itself).

use std::borrow::Borrow;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpShape, Tape};
use super::LearnError;
use crate::ndp::{rollout, rollout_vjp, DmpConfig, NdpParams};
use crate::trajectory::{DemoRecord, FEATURE_DIM};

const HEAD_OUTPUT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    /// Separate wrist and hand heads, each driving its own DMP.
    TwoStream,
    /// One head and one DMP over the concatenated wrist and hand channels.
    SingleStream,
    /// Two heads that emit trajectory values directly.
    OpenHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub feature_dim: usize,
    pub wrist_dim: usize,
    pub hand_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub mode: PolicyMode,
    pub wrist_dmp: DmpConfig,
    pub hand_dmp: DmpConfig,
}

impl PolicyConfig {
    /// Small network and short horizon for desk-scale runs.
    pub fn desk(hand_dim: usize, mode: PolicyMode) -> Self {
        let dmp = DmpConfig::with_size(10, 50).expect("valid");
        Self {
            feature_dim: FEATURE_DIM,
            wrist_dim: 6,
            hand_dim,
            hidden: 64,
            latent: 64,
            mode,
            wrist_dmp: dmp.clone(),
            hand_dmp: dmp,
        }
    }

    /// Hidden width 512, 300 basis functions, 200 steps.
    pub fn full(hand_dim: usize, mode: PolicyMode) -> Self {
        Self {
            hidden: 512,
            latent: 512,
            wrist_dmp: DmpConfig::default(),
            hand_dmp: DmpConfig::default(),
            ..Self::desk(hand_dim, mode)
        }
    }

    pub fn steps(&self) -> usize {
        self.wrist_dmp.steps
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim + self.hand_dim + self.wrist_dim
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("wrist_dim", self.wrist_dim),
            ("hand_dim", self.hand_dim),
            ("hidden", self.hidden),
            ("latent", self.latent),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(LearnError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.wrist_dmp.steps != self.hand_dmp.steps {
            return Err(LearnError::InvalidConfig("wrist and hand rollouts need equal step counts".into()));
        }
        Ok(())
    }
}

/// One output head and the trajectory channels it produces. Channels are
/// ordered wrist first, then hand.
#[derive(Debug, Clone)]
struct Head {
    shape: MlpShape,
    offset: usize,
    dmp: Option<DmpConfig>,
    wrist: Range<usize>,
    hand: Range<usize>,
}

impl Head {
    fn dim(&self) -> usize {
        self.wrist.len() + self.hand.len()
    }
}

/// Predicted wrist and hand trajectories, `steps + 1` rows each, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub wrist: Vec<f64>,
    pub hand: Vec<f64>,
}

/// Network input and index-aligned targets for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub init_hand: Vec<f64>,
    pub init_wrist: Vec<f64>,
    pub target_wrist: Vec<f64>,
    pub target_hand: Vec<f64>,
}

impl Sample {
    /// Requires the record to already have `steps + 1` rows.
    pub fn from_record(rec: &DemoRecord, cfg: &PolicyConfig) -> Result<Self, LearnError> {
        let t = &rec.trajectory;
        if t.len() != cfg.steps() + 1 {
            return Err(LearnError::LengthMismatch {
                expected: cfg.steps() + 1,
                got: t.len(),
            });
        }
        let s = Self {
            features: rec.features.clone(),
            init_hand: rec.init_hand.clone(),
            init_wrist: rec.init_wrist.to_vec(),
            target_wrist: t.wrist.iter().flatten().copied().collect(),
            target_hand: t.hand.iter().flatten().copied().collect(),
        };
        s.check(cfg)?;
        Ok(s)
    }

    pub fn check(&self, cfg: &PolicyConfig) -> Result<(), LearnError> {
        let rows = cfg.steps() + 1;
        let checks = [
            ("features", cfg.feature_dim, self.features.len()),
            ("init_hand", cfg.hand_dim, self.init_hand.len()),
            ("init_wrist", cfg.wrist_dim, self.init_wrist.len()),
            ("target_wrist", rows * cfg.wrist_dim, self.target_wrist.len()),
            ("target_hand", rows * cfg.hand_dim, self.target_hand.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(LearnError::DimensionMismatch { what, expected, got });
            }
        }
        Ok(())
    }

    fn input(&self) -> impl Iterator<Item = f64> + '_ {
        self.features.iter().chain(&self.init_hand).chain(&self.init_wrist).copied()
    }
}

/// Mean absolute error of each stream, averaged with equal weight.
pub fn l1_loss(pred: &PolicyOutput, target_wrist: &[f64], target_hand: &[f64]) -> Result<f64, LearnError> {
    let (w, h) = stream_l1(pred, target_wrist, target_hand)?;
    Ok(0.5 * (w + h))
}

/// Per-stream mean absolute errors.
pub fn stream_l1(pred: &PolicyOutput, target_wrist: &[f64], target_hand: &[f64]) -> Result<(f64, f64), LearnError> {
    let mean_abs = |a: &[f64], b: &[f64]| -> Result<f64, LearnError> {
        if a.len() != b.len() || a.is_empty() {
            return Err(LearnError::LengthMismatch {
                expected: b.len(),
                got: a.len(),
            });
        }
        Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
    };
    Ok((mean_abs(&pred.wrist, target_wrist)?, mean_abs(&pred.hand, target_hand)?))
}

#[derive(Debug, Clone)]
pub struct Policy {
    cfg: PolicyConfig,
    trunk: MlpShape,
    heads: Vec<Head>,
    params: Vec<f64>,
}

/// Intermediate values of a batch forward pass.
struct Pass {
    trunk: Tape,
    heads: Vec<Tape>,
    /// `[sample][head]` rollouts, `(steps + 1) × head.dim()` each.
    rollouts: Vec<Vec<Vec<f64>>>,
}

impl Policy {
    /// Glorot-initialized policy; head output layers are scaled down so
    /// initial rollouts stay close to the unforced system.
    pub fn new(cfg: PolicyConfig, rng: &mut impl Rng) -> Result<Self, LearnError> {
        let mut p = Self::zeroed(cfg)?;
        let mut params = p.trunk.init(rng, 1.0);
        for h in &p.heads {
            params.extend(h.shape.init(rng, HEAD_OUTPUT_SCALE));
        }
        p.params = params;
        Ok(p)
    }

    /// Same layout with every weight and bias zero.
    pub fn zeroed(cfg: PolicyConfig) -> Result<Self, LearnError> {
        cfg.validate()?;
        let (h, l, s) = (cfg.hidden, cfg.latent, cfg.steps());
        let trunk = MlpShape::new(vec![cfg.input_dim(), h, h, l])?;
        let (wd, hd) = (cfg.wrist_dim, cfg.hand_dim);
        let specs: Vec<(Option<DmpConfig>, Range<usize>, Range<usize>)> = match cfg.mode {
            PolicyMode::TwoStream => vec![
                (Some(cfg.wrist_dmp.clone()), 0..wd, 0..0),
                (Some(cfg.hand_dmp.clone()), 0..0, 0..hd),
            ],
            PolicyMode::SingleStream => vec![(Some(cfg.wrist_dmp.clone()), 0..wd, 0..hd)],
            PolicyMode::OpenHead => vec![(None, 0..wd, 0..0), (None, 0..0, 0..hd)],
        };
        let mut offset = trunk.param_count();
        let mut heads = Vec::new();
        for (dmp, wrist, hand) in specs {
            let d = wrist.len() + hand.len();
            let out = match &dmp {
                Some(c) => c.param_len(d),
                None => s * d,
            };
            let shape = MlpShape::new(vec![l, h, out])?;
            let n = shape.param_count();
            heads.push(Head {
                shape,
                offset,
                dmp,
                wrist,
                hand,
            });
            offset += n;
        }
        Ok(Self {
            cfg,
            trunk,
            heads,
            params: vec![0.0; offset],
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), LearnError> {
        if params.len() != self.params.len() {
            return Err(LearnError::DimensionMismatch {
                what: "parameters",
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Layer sizes of the trunk followed by each head.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        std::iter::once(&self.trunk)
            .chain(self.heads.iter().map(|h| &h.shape))
            .map(|s| s.sizes().to_vec())
            .collect()
    }

    fn trunk_params(&self) -> &[f64] {
        &self.params[..self.trunk.param_count()]
    }

    fn head_params(&self, h: &Head) -> &[f64] {
        &self.params[h.offset..h.offset + h.shape.param_count()]
    }

    fn pass<S: Borrow<Sample>>(&self, batch: &[S]) -> Result<Pass, LearnError> {
        for s in batch {
            s.borrow().check(&self.cfg)?;
        }
        let n_in = self.cfg.input_dim();
        let x = DMatrix::from_iterator(n_in, batch.len(), batch.iter().flat_map(|s| s.borrow().input()));
        let trunk = self.trunk.forward(self.trunk_params(), x)?;
        let mut heads = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            heads.push(h.shape.forward(self.head_params(h), trunk.output.clone())?);
        }
        let mut rollouts = Vec::with_capacity(batch.len());
        for (j, s) in batch.iter().map(Borrow::borrow).enumerate() {
            let mut per_head = Vec::with_capacity(self.heads.len());
            for (h, tape) in self.heads.iter().zip(&heads) {
                let out = tape.output.column(j);
                let y0 = head_init(h, s);
                let traj = match &h.dmp {
                    Some(cfg) => {
                        let p = NdpParams::from_flat(cfg, h.dim(), out.as_slice())?;
                        rollout(cfg, &p, &y0, &vec![0.0; h.dim()])?
                    }
                    None => y0.iter().chain(out.iter()).copied().collect(),
                };
                per_head.push(traj);
            }
            rollouts.push(per_head);
        }
        Ok(Pass { trunk, heads, rollouts })
    }

    fn assemble(&self, rollouts: &[Vec<f64>]) -> PolicyOutput {
        let rows = self.cfg.steps() + 1;
        let mut wrist = vec![0.0; rows * self.cfg.wrist_dim];
        let mut hand = vec![0.0; rows * self.cfg.hand_dim];
        for (h, traj) in self.heads.iter().zip(rollouts) {
            let d = h.dim();
            for k in 0..rows {
                let row = &traj[k * d..(k + 1) * d];
                let (rw, rh) = row.split_at(h.wrist.len());
                wrist[k * self.cfg.wrist_dim..][h.wrist.clone()].copy_from_slice(rw);
                hand[k * self.cfg.hand_dim..][h.hand.clone()].copy_from_slice(rh);
            }
        }
        PolicyOutput { wrist, hand }
    }

    /// Full open-loop trajectories from the first observation.
    pub fn forward(&self, features: &[f64], init_hand: &[f64], init_wrist: &[f64]) -> Result<PolicyOutput, LearnError> {
        let rows = self.cfg.steps() + 1;
        let s = Sample {
            features: features.to_vec(),
            init_hand: init_hand.to_vec(),
            init_wrist: init_wrist.to_vec(),
            target_wrist: vec![0.0; rows * self.cfg.wrist_dim],
            target_hand: vec![0.0; rows * self.cfg.hand_dim],
        };
        Ok(self.forward_batch(std::slice::from_ref(&s))?.remove(0))
    }

    pub fn forward_batch<S: Borrow<Sample>>(&self, batch: &[S]) -> Result<Vec<PolicyOutput>, LearnError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let pass = self.pass(batch)?;
        Ok(pass.rollouts.iter().map(|r| self.assemble(r)).collect())
    }

    /// Mean batch loss.
    pub fn loss<S: Borrow<Sample>>(&self, batch: &[S]) -> Result<f64, LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptySet);
        }
        let preds = self.forward_batch(batch)?;
        let mut total = 0.0;
        for (p, s) in preds.iter().zip(batch.iter().map(Borrow::borrow)) {
            total += l1_loss(p, &s.target_wrist, &s.target_hand)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean batch loss and its exact gradient with respect to every
    /// parameter. The subgradient of `|r|` at `r = 0` is taken as 0.
    pub fn loss_and_grad<S: Borrow<Sample>>(&self, batch: &[S]) -> Result<(f64, Vec<f64>), LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptySet);
        }
        let pass = self.pass(batch)?;
        let rows = self.cfg.steps() + 1;
        let b = batch.len() as f64;
        let scale_w = 0.5 / (rows * self.cfg.wrist_dim) as f64 / b;
        let scale_h = 0.5 / (rows * self.cfg.hand_dim) as f64 / b;

        let mut loss = 0.0;
        let mut dheads: Vec<DMatrix<f64>> = self
            .heads
            .iter()
            .map(|h| DMatrix::zeros(h.shape.output_dim(), batch.len()))
            .collect();
        for (j, s) in batch.iter().map(Borrow::borrow).enumerate() {
            for (hi, h) in self.heads.iter().enumerate() {
                let traj = &pass.rollouts[j][hi];
                let d = h.dim();
                let mut upstream = vec![0.0; rows * d];
                for k in 0..rows {
                    for (c, wc) in h.wrist.clone().enumerate() {
                        let r = traj[k * d + c] - s.target_wrist[k * self.cfg.wrist_dim + wc];
                        loss += scale_w * r.abs();
                        upstream[k * d + c] = scale_w * sign(r);
                    }
                    let off = h.wrist.len();
                    for (c, hc) in h.hand.clone().enumerate() {
                        let r = traj[k * d + off + c] - s.target_hand[k * self.cfg.hand_dim + hc];
                        loss += scale_h * r.abs();
                        upstream[k * d + off + c] = scale_h * sign(r);
                    }
                }
                let mut col = dheads[hi].column_mut(j);
                match &h.dmp {
                    Some(cfg) => {
                        let out = pass.heads[hi].output.column(j);
                        let p = NdpParams::from_flat(cfg, d, out.as_slice())?;
                        let g = rollout_vjp(cfg, &p, &head_init(h, s), &vec![0.0; d], &upstream)?;
                        let nw = g.w.len();
                        col.rows_mut(0, nw).copy_from_slice(&g.w);
                        col.rows_mut(nw, d).copy_from_slice(&g.g);
                    }
                    None => col.copy_from_slice(&upstream[d..]),
                }
            }
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut dlatent = DMatrix::zeros(self.cfg.latent, batch.len());
        for ((h, tape), dh) in self.heads.iter().zip(&pass.heads).zip(dheads) {
            let range = h.offset..h.offset + h.shape.param_count();
            dlatent += h.shape.backward(self.head_params(h), tape, dh, &mut grad[range]);
        }
        let nt = self.trunk.param_count();
        self.trunk.backward(self.trunk_params(), &pass.trunk, dlatent, &mut grad[..nt]);
        Ok((loss, grad))
    }
}

fn head_init(h: &Head, s: &Sample) -> Vec<f64> {
    s.init_wrist[h.wrist.clone()].iter().chain(&s.init_hand[h.hand.clone()]).copied().collect()
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndp::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config(mode: PolicyMode) -> PolicyConfig {
        let dmp = DmpConfig::with_size(5, 10).unwrap();
        PolicyConfig {
            feature_dim: 4,
            wrist_dim: 2,
            hand_dim: 2,
            hidden: 8,
            latent: 8,
            mode,
            wrist_dmp: dmp.clone(),
            hand_dmp: dmp,
        }
    }

    fn random_sample(cfg: &PolicyConfig, rng: &mut impl Rng) -> Sample {
        let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let rows = cfg.steps() + 1;
        Sample {
            features: v(cfg.feature_dim),
            init_hand: v(cfg.hand_dim),
            init_wrist: v(cfg.wrist_dim),
            target_wrist: v(rows * cfg.wrist_dim),
            target_hand: v(rows * cfg.hand_dim),
        }
    }

    /// Policy whose head output layers are full-scale so that gradients
    /// exercise every path with non-trivial magnitudes.
    fn scrambled(cfg: PolicyConfig, seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Policy::new(cfg, &mut rng).unwrap();
        for v in p.params_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn zero_network_rolls_out_unforced_dmp() {
        let cfg = tiny_config(PolicyMode::TwoStream);
        let p = Policy::zeroed(cfg.clone()).unwrap();
        let out = p.forward(&[0.5; 4], &[0.3, -0.1], &[1.0, 2.0]).unwrap();
        let zero = NdpParams::zeros(5, 2);
        let wrist = rollout(&cfg.wrist_dmp, &zero, &[1.0, 2.0], &[0.0; 2]).unwrap();
        let hand = rollout(&cfg.hand_dmp, &zero, &[0.3, -0.1], &[0.0; 2]).unwrap();
        assert_eq!(out.wrist, wrist);
        assert_eq!(out.hand, hand);
    }

    #[test]
    fn forward_is_deterministic_and_input_sensitive() {
        let cfg = tiny_config(PolicyMode::TwoStream);
        let p = scrambled(cfg, 3);
        let a = p.forward(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.1], &[0.2, 0.3]).unwrap();
        let b = p.forward(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.1], &[0.2, 0.3]).unwrap();
        assert_eq!(a, b);
        let c = p.forward(&[0.1, 0.2, 0.3, 0.9], &[0.0, 0.1], &[0.2, 0.3]).unwrap();
        assert_ne!(a, c);
        let d = p.forward(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.1], &[0.2, 0.35]).unwrap();
        assert_eq!(d.wrist[1], 0.35);
        assert_ne!(a.hand[5], d.hand[5]);
    }

    #[test]
    fn forward_matches_manual_recomputation() {
        let cfg = tiny_config(PolicyMode::TwoStream);
        let p = scrambled(cfg.clone(), 4);
        let (f, ih, iw) = ([0.3, -0.2, 0.1, 0.0], [0.2, 0.1], [-0.4, 0.5]);
        let out = p.forward(&f, &ih, &iw).unwrap();
        let x: Vec<f64> = f.iter().chain(&ih).chain(&iw).copied().collect();
        let trunk = super::super::mlp::Mlp {
            shape: p.trunk.clone(),
            params: p.trunk_params().to_vec(),
        };
        let latent = trunk.apply(&x).unwrap();
        let wh = super::super::mlp::Mlp {
            shape: p.heads[0].shape.clone(),
            params: p.head_params(&p.heads[0]).to_vec(),
        };
        let np = NdpParams::from_flat(&cfg.wrist_dmp, 2, &wh.apply(&latent).unwrap()).unwrap();
        assert_eq!(out.wrist, rollout(&cfg.wrist_dmp, &np, &iw, &[0.0; 2]).unwrap());
    }

    #[test]
    fn modes_share_output_shapes() {
        let mut shapes = Vec::new();
        for mode in [PolicyMode::TwoStream, PolicyMode::SingleStream, PolicyMode::OpenHead] {
            let cfg = tiny_config(mode);
            let p = scrambled(cfg, 5);
            let out = p.forward(&[0.0; 4], &[0.1, 0.2], &[0.3, 0.4]).unwrap();
            assert_eq!(&out.wrist[..2], &[0.3, 0.4]);
            assert_eq!(&out.hand[..2], &[0.1, 0.2]);
            shapes.push((out.wrist.len(), out.hand.len()));
        }
        assert!(shapes.windows(2).all(|w| w[0] == w[1]));
        let heads = |m| Policy::zeroed(tiny_config(m)).unwrap().layer_shapes();
        assert_eq!(heads(PolicyMode::TwoStream).len(), 3);
        assert_eq!(heads(PolicyMode::SingleStream).len(), 2);
        assert_eq!(heads(PolicyMode::SingleStream)[1], vec![8, 8, 5 * 4 + 4]);
        assert_eq!(heads(PolicyMode::OpenHead)[1], vec![8, 8, 10 * 2]);
    }

    #[test]
    fn l1_loss_cases() {
        let t = PolicyOutput {
            wrist: vec![1.0, 2.0, 3.0],
            hand: vec![0.5, -0.5],
        };
        assert_eq!(l1_loss(&t, &t.wrist, &t.hand).unwrap(), 0.0);
        let shifted = PolicyOutput {
            wrist: t.wrist.iter().map(|v| v + 1.0).collect(),
            hand: t.hand.iter().map(|v| v + 1.0).collect(),
        };
        assert!((l1_loss(&shifted, &t.wrist, &t.hand).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = PolicyOutput {
            wrist: r[..3].to_vec(),
            hand: r[3..].to_vec(),
        };
        let mut sw = 0.0;
        for i in 0..3 {
            sw += (r[i] - t.wrist[i]).abs();
        }
        let mut sh = 0.0;
        for i in 0..2 {
            sh += (r[3 + i] - t.hand[i]).abs();
        }
        let expected = 0.5 * (sw / 3.0 + sh / 2.0);
        assert!((l1_loss(&p, &t.wrist, &t.hand).unwrap() - expected).abs() < 1e-15);
        assert!(l1_loss(&p, &t.wrist[..2], &t.hand).is_err());
    }

    fn check_gradient(mode: PolicyMode, seed: u64) {
        let cfg = tiny_config(mode);
        let p = scrambled(cfg.clone(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let batch: Vec<Sample> = (0..3).map(|_| random_sample(&cfg, &mut rng)).collect();
        let (loss, grad) = p.loss_and_grad(&batch).unwrap();
        assert!((loss - p.loss(&batch).unwrap()).abs() < 1e-12);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.param_count() {
            let mut a = p.clone();
            a.params_mut()[i] += h;
            let mut b = p.clone();
            b.params_mut()[i] -= h;
            let num = (a.loss(&batch).unwrap() - b.loss(&batch).unwrap()) / (2.0 * h);
            worst = worst.max(relative_error(num, grad[i]));
        }
        assert!(worst <= 1e-3, "{mode:?}: worst relative error {worst}");
    }

    #[test]
    fn gradient_two_stream() {
        check_gradient(PolicyMode::TwoStream, 11);
    }

    #[test]
    fn gradient_single_stream() {
        check_gradient(PolicyMode::SingleStream, 12);
    }

    #[test]
    fn gradient_open_head() {
        check_gradient(PolicyMode::OpenHead, 13);
    }

    #[test]
    fn duplicated_sample_has_same_gradient() {
        let cfg = tiny_config(PolicyMode::TwoStream);
        let p = scrambled(cfg.clone(), 7);
        let s = random_sample(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        let (l1, g1) = p.loss_and_grad(std::slice::from_ref(&s)).unwrap();
        let (l2, g2) = p.loss_and_grad(&[s.clone(), s]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn exact_prediction_gives_zero_gradient() {
        let cfg = tiny_config(PolicyMode::TwoStream);
        let p = scrambled(cfg.clone(), 9);
        let mut s = random_sample(&cfg, &mut ChaCha8Rng::seed_from_u64(10));
        let out = p.forward(&s.features, &s.init_hand, &s.init_wrist).unwrap();
        s.target_wrist = out.wrist;
        s.target_hand = out.hand;
        let (loss, grad) = p.loss_and_grad(&[s]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn dimension_checks() {
        let cfg = tiny_config(PolicyMode::TwoStream);
        let p = Policy::zeroed(cfg).unwrap();
        assert!(p.forward(&[0.0; 3], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(p.forward(&[0.0; 4], &[0.0; 3], &[0.0; 2]).is_err());
        assert!(p.loss::<Sample>(&[]).is_err());
    }
}
