//! Versioned JSON checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::policy::{Policy, PolicyConfig};
use super::train::{Phase, RngState, TrainConfig};
use super::LearnError;
use crate::io::write_json_atomic;

pub const CHECKPOINT_SCHEMA: &str = "dexprior.checkpoint.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub phase: Option<Phase>,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub shapes: Vec<Vec<usize>>,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
    pub rng: Option<RngState>,
    pub losses: Vec<f64>,
}

impl Checkpoint {
    pub fn new(policy: &Policy, train: &TrainConfig, phase: Option<Phase>, adam: Option<AdamState>, rng: Option<RngState>, losses: Vec<f64>) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            phase,
            policy: policy.config().clone(),
            train: train.clone(),
            shapes: policy.layer_shapes(),
            params: policy.params().to_vec(),
            adam,
            rng,
            losses,
        }
    }

    /// Rebuilds the policy, checking the schema and every recorded shape.
    pub fn to_policy(&self) -> Result<Policy, LearnError> {
        let bad = |m: String| Err(LearnError::Checkpoint(m));
        if self.schema != CHECKPOINT_SCHEMA {
            return bad(format!("unsupported schema {:?}", self.schema));
        }
        let mut p = Policy::zeroed(self.policy.clone())?;
        if p.layer_shapes() != self.shapes {
            return bad(format!("layer shapes {:?} do not match config {:?}", self.shapes, p.layer_shapes()));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return bad("non-finite weights".into());
        }
        p.set_params(self.params.clone())?;
        if let Some(a) = &self.adam {
            if a.m.len() != self.params.len() || a.v.len() != self.params.len() {
                return bad("optimizer state does not match parameter count".into());
            }
        }
        if let Some(r) = &self.rng {
            r.restore()?;
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        write_json_atomic(path, self).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let text = fs::read_to_string(path).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.to_policy()?;
        Ok(ck)
    }
}
