//! Serial-chain kinematics for a revolute arm: forward kinematics, the
//! geometric Jacobian, and a position-only damped-least-squares IK solver
//! used to simulate a person dragging the end effector in free-guiding mode.
//!
//! Chains are described by Denavit-Hartenberg parameters loaded from a
//! versioned TOML file (see [`KinematicChain::from_toml_str`]). The bundled
//! default is the Franka Emika Panda.

use std::fmt;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Matrix6xX, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chain-definition format version understood by this build.
pub const CHAIN_FORMAT_VERSION: u32 = 1;

const PANDA_TOML: &str = include_str!("../data/panda.toml");

/// A joint's rotation axis and its origin.
type JointAxis = (Vector3<f64>, Vector3<f64>);

/// Gain of the secondary task pulling the solution toward the seed inside
/// the Jacobian null space.
const NULL_SPACE_GAIN: f64 = 0.05;

/// Below this `det(J J^T)` (m^6) the null-space term is dropped.
const SINGULAR_DET: f64 = 1e-9;

/// Residual (m) at and above which the full configured damping applies.
const DAMPING_REFERENCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint {joint} value {value} outside limits [{min}, {max}]")]
    OutOfLimits {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid seed: {0}")]
    InvalidSeed(Box<ArmError>),
    #[error("target unreachable after {iterations} iterations (best residual {best_residual:.6} m)")]
    Unreachable {
        best_residual: f64,
        iterations: usize,
    },
    #[error("path is empty")]
    EmptyPath,
    #[error("path points {index} and {next} are {gap:.4} m apart (max 0.05 m)")]
    PathTooCoarse { index: usize, next: usize, gap: f64 },
    #[error("path point {index}: {source}")]
    PathPoint {
        index: usize,
        #[source]
        source: Box<ArmError>,
    },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid IK settings: {0}")]
    InvalidSettings(String),
}

/// How the four link parameters compose into a joint transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DhConvention {
    /// `Rz(theta) Tz(d) Tx(a) Rx(alpha)`; joint `i` turns about z of frame `i-1`.
    #[serde(rename = "standard-dh")]
    Standard,
    /// Craig's convention `Rx(alpha) Tx(a) Rz(theta) Tz(d)`; joint `i` turns about z of frame `i`.
    #[serde(rename = "modified-dh")]
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub link: LinkParams,
    pub limit: JointLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    convention: DhConvention,
    joints: Vec<Joint>,
    tool: Option<LinkParams>,
    base_height: f64,
    home: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    format_version: u32,
    convention: DhConvention,
    base_height: f64,
    home: Option<Vec<f64>>,
    joint: Vec<JointEntry>,
    tool: Option<LinkParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    a: f64,
    d: f64,
    alpha: f64,
    #[serde(default)]
    theta_offset: f64,
    min: f64,
    max: f64,
}

impl KinematicChain {
    /// Validates and builds a chain. `home` defaults to the midpoint of every
    /// limit interval when not given.
    pub fn new(
        convention: DhConvention,
        joints: Vec<Joint>,
        tool: Option<LinkParams>,
        base_height: f64,
        home: Option<Vec<f64>>,
    ) -> Result<Self, ArmError> {
        if joints.is_empty() {
            return Err(ArmError::InvalidChain("chain has no joints".into()));
        }
        if !base_height.is_finite() {
            return Err(ArmError::InvalidChain("base_height must be finite".into()));
        }
        let links = joints.iter().map(|j| &j.link).chain(tool.iter());
        for (i, l) in links.enumerate() {
            if ![l.a, l.d, l.alpha, l.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(ArmError::InvalidChain(format!("link {i} has non-finite parameters")));
            }
        }
        for (i, j) in joints.iter().enumerate() {
            let JointLimit { min, max } = j.limit;
            if !(min.is_finite() && max.is_finite() && min <= max) {
                return Err(ArmError::InvalidChain(format!(
                    "joint {i} limit [{min}, {max}] is empty or non-finite"
                )));
            }
        }
        let home =
            home.unwrap_or_else(|| joints.iter().map(|j| 0.5 * (j.limit.min + j.limit.max)).collect());
        let chain = KinematicChain {
            convention,
            joints,
            tool,
            base_height,
            home,
        };
        chain
            .check(&chain.home)
            .map_err(|e| ArmError::InvalidChain(format!("home pose: {e}")))?;
        Ok(chain)
    }

    pub fn from_toml_str(src: &str) -> Result<Self, ArmError> {
        let file: ChainFile =
            toml::from_str(src).map_err(|e| ArmError::InvalidChain(e.to_string()))?;
        if file.format_version != CHAIN_FORMAT_VERSION {
            return Err(ArmError::InvalidChain(format!(
                "unsupported chain format_version {} (expected {CHAIN_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let joints = file
            .joint
            .into_iter()
            .map(|j| Joint {
                link: LinkParams {
                    a: j.a,
                    d: j.d,
                    alpha: j.alpha,
                    theta_offset: j.theta_offset,
                },
                limit: JointLimit {
                    min: j.min,
                    max: j.max,
                },
            })
            .collect();
        KinematicChain::new(file.convention, joints, file.tool, file.base_height, file.home)
    }

    pub fn from_file(path: &Path) -> Result<Self, ArmError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ArmError::InvalidChain(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    /// The bundled Franka Emika Panda chain on a 0.61 m table.
    pub fn panda() -> Self {
        Self::from_toml_str(PANDA_TOML).expect("bundled chain definition is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn convention(&self) -> DhConvention {
        self.convention
    }

    pub fn tool(&self) -> Option<&LinkParams> {
        self.tool.as_ref()
    }

    pub fn base_height(&self) -> f64 {
        self.base_height
    }

    /// Same chain mounted at a different height.
    pub fn with_base_height(&self, base_height: f64) -> Self {
        KinematicChain {
            base_height,
            ..self.clone()
        }
    }

    /// Predefined start configuration.
    pub fn home(&self) -> JointVector {
        JointVector(self.home.clone())
    }

    fn check(&self, q: &[f64]) -> Result<(), ArmError> {
        if q.len() != self.dof() {
            return Err(ArmError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        for (i, (v, j)) in q.iter().zip(&self.joints).enumerate() {
            if !j.limit.contains(*v) {
                return Err(ArmError::OutOfLimits {
                    joint: i,
                    value: *v,
                    min: j.limit.min,
                    max: j.limit.max,
                });
            }
        }
        Ok(())
    }

    /// Builds a joint vector, rejecting wrong lengths and out-of-limit angles.
    pub fn joint_vector(&self, values: Vec<f64>) -> Result<JointVector, ArmError> {
        self.check(&values)?;
        Ok(JointVector(values))
    }

    /// Clamps every value into its limit interval.
    pub fn clamp(&self, values: &[f64]) -> Result<JointVector, ArmError> {
        if values.len() != self.dof() {
            return Err(ArmError::DimensionMismatch {
                expected: self.dof(),
                got: values.len(),
            });
        }
        Ok(JointVector(
            values
                .iter()
                .zip(&self.joints)
                .map(|(v, j)| j.limit.clamp(*v))
                .collect(),
        ))
    }

    fn base(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::new(0.0, 0.0, self.base_height), UnitQuaternion::identity())
    }

    fn link_transform(&self, link: &LinkParams, theta: f64) -> Isometry3<f64> {
        let theta = theta + link.theta_offset;
        let rz = Isometry3::rotation(Vector3::z() * theta);
        let tz = Isometry3::translation(0.0, 0.0, link.d);
        let tx = Isometry3::translation(link.a, 0.0, 0.0);
        let rx = Isometry3::rotation(Vector3::x() * link.alpha);
        match self.convention {
            DhConvention::Standard => rz * tz * tx * rx,
            DhConvention::Modified => rx * tx * rz * tz,
        }
    }

    /// Joint axes (unit, world frame), their origins, and the end-effector frame.
    fn frames(&self, q: &[f64]) -> (Vec<JointAxis>, Isometry3<f64>) {
        let mut t = self.base();
        let mut axes = Vec::with_capacity(q.len());
        for (joint, &theta) in self.joints.iter().zip(q) {
            let link = &joint.link;
            match self.convention {
                DhConvention::Standard => {
                    axes.push((t.rotation * Vector3::z(), t.translation.vector));
                    t *= self.link_transform(link, theta);
                }
                DhConvention::Modified => {
                    t = t
                        * Isometry3::rotation(Vector3::x() * link.alpha)
                        * Isometry3::translation(link.a, 0.0, 0.0);
                    axes.push((t.rotation * Vector3::z(), t.translation.vector));
                    t = t
                        * Isometry3::rotation(Vector3::z() * (theta + link.theta_offset))
                        * Isometry3::translation(0.0, 0.0, link.d);
                }
            }
        }
        if let Some(tool) = &self.tool {
            t *= self.link_transform(tool, 0.0);
        }
        (axes, t)
    }
}

impl Default for KinematicChain {
    fn default() -> Self {
        Self::panda()
    }
}

/// Joint angles in radians, validated against the chain that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector(Vec<f64>);

impl JointVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Largest per-joint absolute difference.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// End-effector pose in the world frame (robot base lifted by `base_height`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.position;
        write!(f, "({:.4}, {:.4}, {:.4})", p.x, p.y, p.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSettings {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_step: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        IkSettings {
            damping: 0.1,
            tolerance: 1e-4,
            max_iterations: 100,
            max_step: 0.2,
        }
    }
}

impl IkSettings {
    pub fn validate(&self) -> Result<(), ArmError> {
        let ok = self.damping > 0.0
            && self.tolerance > 0.0
            && self.max_iterations > 0
            && self.max_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ArmError::InvalidSettings(format!("{self:?}: all fields must be positive")))
        }
    }
}

pub fn forward_kinematics(chain: &KinematicChain, q: &JointVector) -> Result<Pose, ArmError> {
    if q.len() != chain.dof() {
        return Err(ArmError::DimensionMismatch {
            expected: chain.dof(),
            got: q.len(),
        });
    }
    let (_, t) = chain.frames(q.as_slice());
    Ok(Pose {
        position: t.translation.vector,
        orientation: t.rotation,
    })
}

/// Geometric Jacobian: rows 0..3 map joint rates to linear velocity, rows
/// 3..6 to angular velocity.
pub fn jacobian(chain: &KinematicChain, q: &JointVector) -> Result<Matrix6xX<f64>, ArmError> {
    if q.len() != chain.dof() {
        return Err(ArmError::DimensionMismatch {
            expected: chain.dof(),
            got: q.len(),
        });
    }
    let (axes, end) = chain.frames(q.as_slice());
    let p_end = end.translation.vector;
    let mut jac = Matrix6xX::zeros(chain.dof());
    for (j, (axis, origin)) in axes.iter().enumerate() {
        let lin = axis.cross(&(p_end - origin));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(axis);
    }
    Ok(jac)
}

/// Position-only IK by damped least squares, with a null-space pull toward
/// the seed and joint-limit clamping after every step.
pub fn solve_ik_position(
    chain: &KinematicChain,
    target: &Vector3<f64>,
    seed: &JointVector,
    settings: &IkSettings,
) -> Result<JointVector, ArmError> {
    settings.validate()?;
    chain
        .check(seed.as_slice())
        .map_err(|e| ArmError::InvalidSeed(Box::new(e)))?;

    let n = chain.dof();
    let lambda2 = settings.damping * settings.damping;
    let mut q = seed.as_slice().to_vec();
    let mut best_residual = f64::INFINITY;

    for _ in 0..settings.max_iterations {
        let (axes, end) = chain.frames(&q);
        let err = target - end.translation.vector;
        let residual = err.norm();
        if residual <= settings.tolerance {
            return Ok(JointVector(q));
        }
        best_residual = best_residual.min(residual);

        // 3 x n linear Jacobian, stored as columns.
        let cols: Vec<Vector3<f64>> = axes
            .iter()
            .map(|(axis, origin)| axis.cross(&(end.translation.vector - origin)))
            .collect();
        // Damping shrinks with the residual so the final approach is not
        // throttled; far from the target it equals the configured value.
        let lambda2 = lambda2 * (residual / DAMPING_REFERENCE).min(1.0);

        // Joints pinned at a limit and pushed outward are dropped from the
        // task and the step recomputed without them.
        let mut active = vec![true; n];
        let dq = loop {
            let dq = dls_step(&cols, &active, &err, lambda2, &q, seed.as_slice());
            let mut changed = false;
            for (j, joint) in chain.joints.iter().enumerate() {
                let pinned = (q[j] <= joint.limit.min && dq[j] < 0.0)
                    || (q[j] >= joint.limit.max && dq[j] > 0.0);
                if active[j] && pinned {
                    active[j] = false;
                    changed = true;
                }
            }
            if !changed || !active.iter().any(|a| *a) {
                break dq;
            }
        };
        let mut dq = dq;

        let largest = dq.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if largest > settings.max_step {
            let s = settings.max_step / largest;
            dq.iter_mut().for_each(|v| *v *= s);
        }
        for ((qj, dqj), joint) in q.iter_mut().zip(&dq).zip(&chain.joints) {
            *qj = joint.limit.clamp(*qj + dqj);
        }
    }

    let (_, end) = chain.frames(&q);
    let residual = (target - end.translation.vector).norm();
    if residual <= settings.tolerance {
        return Ok(JointVector(q));
    }
    best_residual = best_residual.min(residual);
    Err(ArmError::Unreachable {
        best_residual,
        iterations: settings.max_iterations,
    })
}

/// One damped-least-squares step restricted to `active` joints, plus the
/// seed pull projected with the exact (undamped) null-space projector
/// `I - J^T (J J^T)^-1 J` so it cannot leak into the task. The pull is
/// skipped near singular configurations.
fn dls_step(
    cols: &[Vector3<f64>],
    active: &[bool],
    err: &Vector3<f64>,
    lambda2: f64,
    q: &[f64],
    seed: &[f64],
) -> Vec<f64> {
    let n = cols.len();
    let jjt = cols
        .iter()
        .zip(active)
        .filter(|(_, a)| **a)
        .fold(Matrix3::zeros(), |acc, (c, _)| acc + c * c.transpose());
    let Some(damped_inv) = (jjt + Matrix3::identity() * lambda2).try_inverse() else {
        return vec![0.0; n];
    };
    let y = damped_inv * err;
    let mut dq: Vec<f64> = cols
        .iter()
        .zip(active)
        .map(|(c, a)| if *a { c.dot(&y) } else { 0.0 })
        .collect();

    if jjt.determinant() > SINGULAR_DET {
        if let Some(inv) = jjt.try_inverse() {
            let pull: Vec<f64> = (0..n)
                .map(|j| if active[j] { NULL_SPACE_GAIN * (seed[j] - q[j]) } else { 0.0 })
                .collect();
            let j_pull = cols
                .iter()
                .zip(&pull)
                .fold(Vector3::zeros(), |acc, (c, p)| acc + c * *p);
            let proj = inv * j_pull;
            for j in 0..n {
                if active[j] {
                    dq[j] += pull[j] - cols[j].dot(&proj);
                }
            }
        }
    }
    dq
}

/// Maximum spacing between consecutive path points accepted by [`follow_path`].
pub const MAX_PATH_GAP: f64 = 0.05;

/// Tracks a densified end-effector path, seeding each solve with the
/// previous solution.
pub fn follow_path(
    chain: &KinematicChain,
    path: &[Vector3<f64>],
    seed: &JointVector,
    settings: &IkSettings,
) -> Result<Vec<JointVector>, ArmError> {
    if path.is_empty() {
        return Err(ArmError::EmptyPath);
    }
    for (i, w) in path.windows(2).enumerate() {
        let gap = (w[1] - w[0]).norm();
        if gap > MAX_PATH_GAP {
            return Err(ArmError::PathTooCoarse {
                index: i,
                next: i + 1,
                gap,
            });
        }
    }
    let mut out = Vec::with_capacity(path.len());
    let mut prev = seed.clone();
    for (index, target) in path.iter().enumerate() {
        let q = solve_ik_position(chain, target, &prev, settings).map_err(|e| ArmError::PathPoint {
            index,
            source: Box::new(e),
        })?;
        out.push(q.clone());
        prev = q;
    }
    Ok(out)
}

/// Straight-line waypoints from `from` to `to` with spacing at most `step`,
/// excluding `from` and including `to`.
pub fn densify(from: &Vector3<f64>, to: &Vector3<f64>, step: f64) -> Vec<Vector3<f64>> {
    let dist = (to - from).norm();
    let n = ((dist / step).ceil() as usize).max(1);
    (1..=n)
        .map(|i| {
            if i == n {
                *to
            } else {
                from + (to - from) * (i as f64 / n as f64)
            }
        })
        .collect()
}
