//! Forward kinematics for tree-structured robot hands.
//!
//! A chain is a set of joints, each attached to a parent link by a fixed
//! `origin` offset. Every joint creates a child link carrying the joint's
//! name; the root link is `"palm"`. Revolute joints rotate their child link
//! about `axis`; fixed joints only carry an offset (used for fingertip
//! frames). Joint values are ordered by sorted revolute joint name.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rot_axis, rot_z, RigidTransform};

pub const ROOT_LINK: &str = "palm";

/// Degrees of freedom of the hand embodiment.
pub const HAND_DOF: usize = 16;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("failed to read chain file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse chain file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    #[default]
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub parent: String,
    pub origin: RigidTransform,
    #[serde(default = "default_axis")]
    pub axis: Vector3<f64>,
    #[serde(default)]
    pub limits: [f64; 2],
    #[serde(default, rename = "type")]
    pub kind: JointKind,
}

fn default_axis() -> Vector3<f64> {
    Vector3::z()
}

impl JointSpec {
    pub fn revolute(name: &str, parent: &str, origin: RigidTransform, axis: Vector3<f64>, limits: [f64; 2]) -> Self {
        Self {
            name: name.to_string(),
            parent: parent.to_string(),
            origin,
            axis,
            limits,
            kind: JointKind::Revolute,
        }
    }

    pub fn fixed(name: &str, parent: &str, origin: RigidTransform) -> Self {
        Self {
            name: name.to_string(),
            parent: parent.to_string(),
            origin,
            axis: Vector3::z(),
            limits: [0.0, 0.0],
            kind: JointKind::Fixed,
        }
    }
}

/// Chain file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainFile {
    joints: Vec<JointSpec>,
    fingertips: Vec<String>,
    palm_keypoint: [f64; 3],
}

/// Joint angles in radians, in the chain's canonical (sorted-name) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Validated, immutable kinematic tree.
#[derive(Debug, Clone)]
pub struct HandChain {
    /// Joints in topological order (parents before children).
    joints: Vec<JointSpec>,
    parent: Vec<Option<usize>>,
    /// For each joint, its index into the joint vector (revolute only).
    q_index: Vec<Option<usize>>,
    /// Revolute joint names in canonical order.
    joint_names: Vec<String>,
    limits: Vec<[f64; 2]>,
    fingertips: Vec<String>,
    fingertip_idx: Vec<usize>,
    palm_keypoint: Vector3<f64>,
}

/// Poses of every link in the palm frame.
#[derive(Debug, Clone)]
pub struct LinkPoses {
    names: Vec<String>,
    poses: Vec<RigidTransform>,
}

impl LinkPoses {
    pub fn get(&self, link: &str) -> Option<&RigidTransform> {
        if link == ROOT_LINK {
            return self.poses.first();
        }
        self.names.iter().position(|n| n == link).map(|i| &self.poses[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RigidTransform)> {
        self.names.iter().map(String::as_str).zip(&self.poses)
    }

    pub fn to_map(&self) -> HashMap<String, RigidTransform> {
        self.iter().map(|(n, p)| (n.to_string(), *p)).collect()
    }
}

impl HandChain {
    /// Validates a joint tree: unique names, a single root, no cycles, unit
    /// axes, ordered limits, and fingertips that are leaf links.
    pub fn new(joints: Vec<JointSpec>, fingertips: Vec<String>, palm_keypoint: Vector3<f64>) -> Result<Self, KinematicsError> {
        let invalid = |m: String| Err(KinematicsError::InvalidChain(m));
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (i, j) in joints.iter().enumerate() {
            if j.name == ROOT_LINK {
                return invalid(format!("joint may not be named {ROOT_LINK:?}"));
            }
            if by_name.insert(j.name.as_str(), i).is_some() {
                return invalid(format!("duplicate joint {:?}", j.name));
            }
            j.origin
                .check(1e-9)
                .map_err(|e| KinematicsError::InvalidChain(format!("joint {:?} origin: {e}", j.name)))?;
            if j.kind == JointKind::Revolute {
                if ((j.axis.norm() - 1.0).abs()) > 1e-9 {
                    return invalid(format!("joint {:?} axis is not unit length", j.name));
                }
                if !(j.limits[0] <= j.limits[1]) {
                    return invalid(format!("joint {:?} has lo > hi", j.name));
                }
            }
        }
        for j in &joints {
            if j.parent != ROOT_LINK && !by_name.contains_key(j.parent.as_str()) {
                return invalid(format!("joint {:?} has unknown parent {:?}", j.name, j.parent));
            }
        }
        // topological order from the root; anything unreached is on a cycle
        let mut order: Vec<usize> = Vec::with_capacity(joints.len());
        let mut frontier = vec![ROOT_LINK.to_string()];
        while let Some(link) = frontier.pop() {
            let mut children: Vec<usize> = (0..joints.len()).filter(|&i| joints[i].parent == link).collect();
            children.sort_by(|&a, &b| joints[b].name.cmp(&joints[a].name));
            for c in children {
                order.push(c);
                frontier.push(joints[c].name.clone());
            }
        }
        if order.len() != joints.len() {
            return invalid("joint graph has a cycle or disconnected component".into());
        }
        let sorted: Vec<JointSpec> = order.iter().map(|&i| joints[i].clone()).collect();
        let pos: HashMap<&str, usize> = sorted.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
        let parent: Vec<Option<usize>> = sorted.iter().map(|j| pos.get(j.parent.as_str()).copied()).collect();

        let mut joint_names: Vec<String> = sorted
            .iter()
            .filter(|j| j.kind == JointKind::Revolute)
            .map(|j| j.name.clone())
            .collect();
        joint_names.sort();
        let q_index: Vec<Option<usize>> = sorted
            .iter()
            .map(|j| match j.kind {
                JointKind::Revolute => joint_names.iter().position(|n| *n == j.name),
                JointKind::Fixed => None,
            })
            .collect();
        let limits: Vec<[f64; 2]> = joint_names.iter().map(|n| sorted[pos[n.as_str()]].limits).collect();

        let mut fingertip_idx = Vec::with_capacity(fingertips.len());
        for f in &fingertips {
            let Some(&i) = pos.get(f.as_str()) else {
                return invalid(format!("fingertip {f:?} is not a link"));
            };
            if sorted.iter().any(|j| j.parent == *f) {
                return invalid(format!("fingertip {f:?} is not a leaf"));
            }
            fingertip_idx.push(i);
        }
        if !palm_keypoint.iter().all(|v| v.is_finite()) {
            return invalid("palm keypoint is not finite".into());
        }
        Ok(Self {
            joints: sorted,
            parent,
            q_index,
            joint_names,
            limits,
            fingertips,
            fingertip_idx,
            palm_keypoint,
        })
    }

    /// Parses and validates a chain file as a hand embodiment: exactly
    /// [`HAND_DOF`] revolute joints and four fingertips.
    pub fn from_json_str(s: &str) -> Result<Self, KinematicsError> {
        let file: ChainFile = serde_json::from_str(s)?;
        let chain = Self::new(file.joints, file.fingertips, Vector3::from(file.palm_keypoint))?;
        chain.require_hand()?;
        Ok(chain)
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = ChainFile {
            joints: self.joints.clone(),
            fingertips: self.fingertips.clone(),
            palm_keypoint: [self.palm_keypoint.x, self.palm_keypoint.y, self.palm_keypoint.z],
        };
        serde_json::to_string_pretty(&file).expect("chain serializes")
    }

    pub fn require_hand(&self) -> Result<(), KinematicsError> {
        if self.dof() != HAND_DOF {
            return Err(KinematicsError::InvalidChain(format!(
                "hand chain needs {HAND_DOF} revolute joints, found {}",
                self.dof()
            )));
        }
        if self.fingertips.len() != 4 {
            return Err(KinematicsError::InvalidChain(format!(
                "hand chain needs 4 fingertips, found {}",
                self.fingertips.len()
            )));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn limits(&self) -> &[[f64; 2]] {
        &self.limits
    }

    pub fn fingertips(&self) -> &[String] {
        &self.fingertips
    }

    pub fn palm_keypoint(&self) -> Vector3<f64> {
        self.palm_keypoint
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    fn check_len(&self, q: &JointVector) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Pose of every link in the palm frame.
    pub fn forward_kinematics(&self, q: &JointVector) -> Result<LinkPoses, KinematicsError> {
        self.check_len(q)?;
        let mut names = Vec::with_capacity(self.joints.len() + 1);
        let mut poses = Vec::with_capacity(self.joints.len() + 1);
        names.push(ROOT_LINK.to_string());
        poses.push(RigidTransform::identity());
        for (i, j) in self.joints.iter().enumerate() {
            let parent_pose = match self.parent[i] {
                Some(p) => poses[p + 1],
                None => RigidTransform::identity(),
            };
            let mut pose = parent_pose.compose(&j.origin);
            if let Some(qi) = self.q_index[i] {
                pose = pose.compose(&RigidTransform::from_rotation(rot_axis(&j.axis, q.0[qi])));
            }
            names.push(j.name.clone());
            poses.push(pose);
        }
        Ok(LinkPoses { names, poses })
    }

    /// Palm keypoint followed by fingertip link origins, in the palm frame.
    pub fn robot_keypoints(&self, q: &JointVector) -> Result<Vec<Vector3<f64>>, KinematicsError> {
        let fk = self.forward_kinematics(q)?;
        let mut out = Vec::with_capacity(1 + self.fingertip_idx.len());
        out.push(self.palm_keypoint);
        out.extend(self.fingertip_idx.iter().map(|&i| fk.poses[i + 1].translation));
        Ok(out)
    }

    /// Componentwise clamp into joint limits. Lengths other than `dof()`
    /// are clamped over the overlapping prefix.
    pub fn clamp(&self, q: &JointVector) -> JointVector {
        JointVector(
            q.0.iter()
                .zip(&self.limits)
                .map(|(v, [lo, hi])| v.clamp(*lo, *hi))
                .collect(),
        )
    }

    pub fn within_limits(&self, q: &JointVector, tol: f64) -> bool {
        q.len() == self.dof() && q.0.iter().zip(&self.limits).all(|(v, [lo, hi])| *v >= lo - tol && *v <= hi + tol)
    }

    /// Midpoint of each joint range.
    pub fn mid_configuration(&self) -> JointVector {
        JointVector(self.limits.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect())
    }

    /// Sum of origin offsets from the root to `link`; bounds the distance
    /// any descendant point can reach from the palm origin.
    pub fn reach(&self, link: &str) -> Option<f64> {
        let mut i = self.joints.iter().position(|j| j.name == link)?;
        let mut total = 0.0;
        loop {
            total += self.joints[i].origin.translation.norm();
            match self.parent[i] {
                Some(p) => i = p,
                None => return Some(total),
            }
        }
    }

    /// Names of the link and all its descendants.
    pub fn subtree(&self, link: &str) -> Vec<String> {
        let mut out = vec![link.to_string()];
        let mut k = 0;
        while k < out.len() {
            let cur = out[k].clone();
            out.extend(self.joints.iter().filter(|j| j.parent == cur).map(|j| j.name.clone()));
            k += 1;
        }
        out
    }

    /// Link names whose origins stand in for human finger keypoints
    /// (knuckle, middle, distal, tip) along the chain ending at `tip`.
    pub fn finger_links(&self, tip: &str) -> Vec<String> {
        let mut path = Vec::new();
        let mut i = self.joints.iter().position(|j| j.name == tip);
        while let Some(idx) = i {
            path.push(self.joints[idx].name.clone());
            i = self.parent[idx];
        }
        path.reverse();
        path
    }

    /// Representative 16-DOF, four-finger hand (thumb, index, middle,
    /// ring) with four revolute joints per finger. Palm faces `-z`,
    /// fingers extend along `+x`, the thumb sits on the `+y` side.
    pub fn default_hand() -> Self {
        let mut joints = Vec::new();
        let fingers = [("index", 0.035), ("middle", 0.0), ("ring", -0.035)];
        for (name, y) in fingers {
            let knuckle = RigidTransform::from_translation(Vector3::new(0.095, y, 0.0));
            push_finger(&mut joints, name, knuckle, [0.05, 0.035, 0.03], FINGER_LIMITS);
        }
        let thumb_base = RigidTransform::from_parts(rot_z(0.9), Vector3::new(0.025, 0.04, 0.0));
        push_finger(&mut joints, "thumb", thumb_base, [0.045, 0.035, 0.03], THUMB_LIMITS);
        let tips = ["thumb_tip", "index_tip", "middle_tip", "ring_tip"].map(String::from).to_vec();
        Self::new(joints, tips, Vector3::zeros()).expect("default hand is valid")
    }
}

const FINGER_LIMITS: [[f64; 2]; 4] = [[-0.35, 0.35], [-0.3, 1.4], [-0.2, 1.6], [-0.2, 1.2]];
const THUMB_LIMITS: [[f64; 2]; 4] = [[-0.4, 1.4], [-0.6, 0.6], [-0.3, 1.2], [-0.3, 1.3]];

/// Abduction (z) and flexion (y) at the knuckle, two more flexion joints,
/// and a fixed tip frame. Joint 0 for the thumb rolls about its own x axis.
fn push_finger(joints: &mut Vec<JointSpec>, finger: &str, base: RigidTransform, lengths: [f64; 3], limits: [[f64; 2]; 4]) {
    let name = |k: usize| format!("{finger}_{k}");
    let axis0 = if finger == "thumb" { Vector3::x() } else { Vector3::z() };
    let axis1 = if finger == "thumb" { Vector3::z() } else { Vector3::y() };
    let id = RigidTransform::identity();
    let along = |l: f64| RigidTransform::from_translation(Vector3::new(l, 0.0, 0.0));
    joints.push(JointSpec::revolute(&name(0), ROOT_LINK, base, axis0, limits[0]));
    joints.push(JointSpec::revolute(&name(1), &name(0), id, axis1, limits[1]));
    joints.push(JointSpec::revolute(&name(2), &name(1), along(lengths[0]), Vector3::y(), limits[2]));
    joints.push(JointSpec::revolute(&name(3), &name(2), along(lengths[1]), Vector3::y(), limits[3]));
    joints.push(JointSpec::fixed(&format!("{finger}_tip"), &name(3), along(lengths[2])));
}
