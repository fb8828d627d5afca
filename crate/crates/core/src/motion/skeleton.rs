use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kinematic tree with parent-relative rest bone vectors in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<[f64; 3]>,
    foot_joints: Vec<usize>,
}

// 22-joint HumanML3D topology.
const HUMANML3D_PARENTS: [Option<usize>; 22] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

const HUMANML3D_BONES: [[f64; 3]; 22] = [
    [0.0, 0.0, 0.0],
    [0.10, -0.05, 0.0],
    [-0.10, -0.05, 0.0],
    [0.0, 0.12, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, 0.05, 0.0],
    [0.0, -0.05, 0.12],
    [0.0, -0.05, 0.12],
    [0.0, 0.20, 0.0],
    [0.08, 0.12, 0.0],
    [-0.08, 0.12, 0.0],
    [0.0, 0.10, 0.03],
    [0.10, 0.02, 0.0],
    [-0.10, 0.02, 0.0],
    [0.0, -0.26, 0.0],
    [0.0, -0.26, 0.0],
    [0.0, -0.24, 0.0],
    [0.0, -0.24, 0.0],
];

impl Skeleton {
    pub fn new(
        parents: Vec<Option<usize>>,
        rest_offsets: Vec<[f64; 3]>,
        foot_joints: Vec<usize>,
    ) -> Result<Self> {
        let sk = Self { parents, rest_offsets, foot_joints };
        sk.check()?;
        Ok(sk)
    }

    /// The 22-joint layout with feet at joints 10 and 11.
    pub fn humanml3d() -> Self {
        Self {
            parents: HUMANML3D_PARENTS.to_vec(),
            rest_offsets: HUMANML3D_BONES.to_vec(),
            foot_joints: vec![10, 11],
        }
    }

    fn check(&self) -> Result<()> {
        let j = self.parents.len();
        if j == 0 || self.rest_offsets.len() != j {
            return Err(Error::InvalidSkeleton(format!(
                "{} parents but {} offsets",
                j,
                self.rest_offsets.len()
            )));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 || self.parents[0].is_some() {
            return Err(Error::InvalidSkeleton(format!(
                "expected exactly one root at joint 0, found {roots}"
            )));
        }
        for start in 0..j {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parents[cur] {
                if p >= j {
                    return Err(Error::InvalidSkeleton(format!("joint {cur} has parent {p}")));
                }
                cur = p;
                steps += 1;
                if steps > j {
                    return Err(Error::InvalidSkeleton(format!("cycle through joint {start}")));
                }
            }
        }
        if self.rest_offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSkeleton("non-finite rest offset".into()));
        }
        if let Some(&f) = self.foot_joints.iter().find(|&&f| f >= j) {
            return Err(Error::InvalidSkeleton(format!("foot joint {f} out of range")));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.joint_count()
    }

    /// Width of displacement-free anchor poses.
    pub fn anchor_dim(&self) -> usize {
        self.feature_dim() - 3
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn bone(&self, joint: usize) -> [f64; 3] {
        self.rest_offsets[joint]
    }

    pub fn foot_joints(&self) -> &[usize] {
        &self.foot_joints
    }

    /// Chain from the root down to `joint` (root first).
    pub fn chain(&self, joint: usize) -> Vec<usize> {
        let mut chain = vec![joint];
        let mut cur = joint;
        while let Some(p) = self.parents[cur] {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    /// Pelvis-relative rest position of every joint.
    pub fn rest_pose(&self) -> Vec<[f64; 3]> {
        (0..self.joint_count())
            .map(|j| {
                self.chain(j).iter().skip(1).fold([0.0; 3], |acc, &c| {
                    let b = self.rest_offsets[c];
                    [acc[0] + b[0], acc[1] + b[1], acc[2] + b[2]]
                })
            })
            .collect()
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::humanml3d()
    }
}
