//! Canonical positional motion representation.
//!
//! A motion is an `N x D` matrix whose columns are laid out as
//! `[pelvis world x, y, z | pelvis-relative offset of joint 1 | ... | joint J-1]`,
//! so `D = 3 + 3 (J - 1)`. The y axis points up and the ground plane is `y = 0`.

mod io;
mod skeleton;

pub use io::{
    read_anchors_json, read_pmg, read_trajectory_csv, read_world_joints_csv, write_anchors_json,
    write_pmg, write_trajectory_csv, PmgHeader, PMG_VERSION,
};
pub use skeleton::Skeleton;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_FPS: u32 = 20;

/// Number of leading feature columns holding the global pelvis position.
pub const PELVIS_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: u32,
    pub features: Array2<f64>,
}

impl MotionSequence {
    pub fn new(features: Array2<f64>, fps: u32) -> Result<Self> {
        let m = Self { fps, features };
        m.validate()?;
        Ok(m)
    }

    /// Wraps features without checking invariants.
    pub fn from_features_unchecked(features: Array2<f64>, fps: u32) -> Self {
        Self { fps, features }
    }

    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Checks finiteness, length and that the width has the `3 + 3k` layout.
    pub fn validate(&self) -> Result<()> {
        if self.frames() < 2 {
            return Err(Error::TooShort(self.frames()));
        }
        let d = self.feature_dim();
        if d < PELVIS_DIMS || d % 3 != 0 {
            return Err(Error::BadWidth {
                expected: PELVIS_DIMS + 3 * (d.saturating_sub(PELVIS_DIMS) / 3),
                got: d,
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but also checks the width against a skeleton.
    pub fn validate_for(&self, skeleton: &Skeleton) -> Result<()> {
        self.validate()?;
        if self.feature_dim() != skeleton.feature_dim() {
            return Err(Error::BadWidth {
                expected: skeleton.feature_dim(),
                got: self.feature_dim(),
            });
        }
        Ok(())
    }

    /// Builds a motion from world-space joint positions (`N x J x 3`, joint 0 is the pelvis).
    pub fn from_world_joints(joints: &Array3<f64>, fps: u32) -> Result<Self> {
        let (n, j, c) = joints.dim();
        if c != 3 || j == 0 {
            return Err(Error::Shape(format!("expected N x J x 3 joints, got {n}x{j}x{c}")));
        }
        let mut features = Array2::zeros((n, 3 * j));
        for f in 0..n {
            for k in 0..3 {
                let pelvis = joints[[f, 0, k]];
                features[[f, k]] = pelvis;
                for jj in 1..j {
                    features[[f, 3 * jj + k]] = joints[[f, jj, k]] - pelvis;
                }
            }
        }
        Self::new(features, fps)
    }

    /// Returns a copy with the pelvis columns replaced.
    pub fn with_trajectory(&self, trajectory: &Trajectory) -> Result<Self> {
        if trajectory.frames() != self.frames() {
            return Err(Error::Shape(format!(
                "trajectory has {} frames, motion has {}",
                trajectory.frames(),
                self.frames()
            )));
        }
        let mut features = self.features.clone();
        features
            .slice_mut(s![.., ..PELVIS_DIMS])
            .assign(&trajectory.positions);
        Ok(Self { fps: self.fps, features })
    }
}

/// Global pelvis position per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Array2<f64>,
}

impl Trajectory {
    pub fn new(positions: Array2<f64>) -> Result<Self> {
        if positions.ncols() != 3 {
            return Err(Error::Shape(format!(
                "trajectory must have 3 columns, got {}",
                positions.ncols()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { positions })
    }

    pub fn frames(&self) -> usize {
        self.positions.nrows()
    }
}

/// Displacement-free poses pinned at sorted frame indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    positions: Vec<usize>,
    #[serde(with = "matrix_rows")]
    poses: Array2<f64>,
}

impl AnchorSet {
    pub fn new(positions: Vec<usize>, poses: Array2<f64>) -> Result<Self> {
        if positions.len() != poses.nrows() {
            return Err(Error::InvalidAnchorPositions(format!(
                "{} positions but {} pose rows",
                positions.len(),
                poses.nrows()
            )));
        }
        if let Some(w) = positions.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidAnchorPositions(format!(
                "positions must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if poses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { positions, poses })
    }

    /// Builds a set from unordered `(position, pose)` pairs, sorting by position.
    pub fn from_pairs(pose_dim: usize, mut pairs: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        pairs.sort_by_key(|(p, _)| *p);
        let mut poses = Array2::zeros((pairs.len(), pose_dim));
        let mut positions = Vec::with_capacity(pairs.len());
        for (row, (p, pose)) in pairs.into_iter().enumerate() {
            if pose.len() != pose_dim {
                return Err(Error::Shape(format!(
                    "anchor pose has {} values, expected {pose_dim}",
                    pose.len()
                )));
            }
            positions.push(p);
            poses.row_mut(row).assign(&ndarray::Array1::from(pose));
        }
        Self::new(positions, poses)
    }

    pub fn empty(pose_dim: usize) -> Self {
        Self { positions: Vec::new(), poses: Array2::zeros((0, pose_dim)) }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn poses(&self) -> &Array2<f64> {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn pose_dim(&self) -> usize {
        self.poses.ncols()
    }

    /// Checks that every position addresses a frame of an `n`-frame sequence.
    pub fn check_range(&self, n: usize) -> Result<()> {
        match self.positions.last() {
            Some(&last) if last >= n => Err(Error::InvalidAnchorPositions(format!(
                "position {last} out of range for {n} frames"
            ))),
            _ => Ok(()),
        }
    }
}

pub fn extract_trajectory(motion: &MotionSequence) -> Trajectory {
    Trajectory {
        positions: motion.features.slice(s![.., ..PELVIS_DIMS]).to_owned(),
    }
}

/// Samples ground-truth poses (pelvis columns dropped) at the given frames.
pub fn gather_anchors(motion: &MotionSequence, positions: &[usize]) -> Result<AnchorSet> {
    if let Some(w) = positions.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidAnchorPositions(format!(
            "positions must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= motion.frames()) {
        return Err(Error::InvalidAnchorPositions(format!(
            "position {p} out of range for {} frames",
            motion.frames()
        )));
    }
    let rows: Vec<usize> = positions.to_vec();
    let poses = motion
        .features
        .slice(s![.., PELVIS_DIMS..])
        .select(Axis(0), &rows);
    AnchorSet::new(rows, poses)
}

/// World positions of every joint, `N x J x 3`.
pub fn joint_world_positions(motion: &MotionSequence, skeleton: &Skeleton) -> Result<Array3<f64>> {
    if motion.feature_dim() != skeleton.feature_dim() {
        return Err(Error::Shape(format!(
            "feature width {} does not match skeleton width {}",
            motion.feature_dim(),
            skeleton.feature_dim()
        )));
    }
    Ok(world_positions_from_features(motion.features.view(), skeleton.joint_count()))
}

pub(crate) fn world_positions_from_features(features: ArrayView2<f64>, joints: usize) -> Array3<f64> {
    let n = features.nrows();
    let mut out = Array3::zeros((n, joints, 3));
    for f in 0..n {
        for k in 0..3 {
            let pelvis = features[[f, k]];
            out[[f, 0, k]] = pelvis;
            for j in 1..joints {
                out[[f, j, k]] = pelvis + features[[f, 3 * j + k]];
            }
        }
    }
    out
}

/// Constant `D x 3J` matrix `A` such that `features · A` is the flattened world joint positions.
pub fn world_position_matrix(joints: usize) -> Array2<f64> {
    let d = 3 * joints;
    let mut a = Array2::zeros((d, d));
    for k in 0..3 {
        for j in 0..joints {
            a[[k, 3 * j + k]] = 1.0;
            if j > 0 {
                a[[3 * j + k, 3 * j + k]] = 1.0;
            }
        }
    }
    a
}

mod matrix_rows {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(serde::de::Error::custom("ragged pose rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let n = if width == 0 { 0 } else { flat.len() / width };
        Array2::from_shape_vec((n, width), flat).map_err(serde::de::Error::custom)
    }
}
