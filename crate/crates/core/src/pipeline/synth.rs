//! Procedural motion dataset: a walking-like skeleton swinging its limbs while
//! its pelvis follows a random planar spline.

use nalgebra::{Rotation3, Unit, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::motion::{MotionSequence, Skeleton, DEFAULT_FPS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub count: usize,
    pub frames: usize,
    pub fps: u32,
    pub skeleton: Skeleton,
    pub control_points: usize,
    /// Half-width in metres of the square the spline control points are drawn from.
    pub extent: f64,
    /// Peak joint swing in radians; each joint scales it by a random factor in [0.3, 1].
    pub amplitude: f64,
    pub min_frequency: f64,
    pub max_frequency: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 512,
            frames: 64,
            fps: DEFAULT_FPS,
            skeleton: Skeleton::humanml3d(),
            control_points: 4,
            extent: 1.5,
            amplitude: 0.5,
            min_frequency: 0.5,
            max_frequency: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.frames == 0 || self.fps == 0 {
            return Err(Error::Config("data.count, data.frames and data.fps must be at least 1".into()));
        }
        if self.control_points < 2 {
            return Err(Error::Config("data.control_points must be at least 2".into()));
        }
        let reals = [self.extent, self.amplitude, self.min_frequency, self.max_frequency];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("data extent, amplitude and frequencies must be finite and >= 0".into()));
        }
        if self.min_frequency > self.max_frequency {
            return Err(Error::Config("data.min_frequency exceeds data.max_frequency".into()));
        }
        Ok(())
    }
}

fn catmull_rom(points: &[[f64; 2]], u: f64) -> [f64; 2] {
    let last = points.len() - 1;
    let seg = (u.floor() as usize).min(last - 1);
    let s = u - seg as f64;
    let at = |i: isize| points[i.clamp(0, last as isize) as usize];
    let (p0, p1, p2, p3) = (at(seg as isize - 1), at(seg as isize), at(seg as isize + 1), at(seg as isize + 2));
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = 0.5
            * (2.0 * p1[k]
                + (p2[k] - p0[k]) * s
                + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * s * s
                + (3.0 * p1[k] - p0[k] - 3.0 * p2[k] + p3[k]) * s * s * s);
    }
    out
}

struct Swing {
    axis: Unit<Vector3<f64>>,
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

fn sequence(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<MotionSequence> {
    let sk = &spec.skeleton;
    let joints = sk.joint_count();
    let n = spec.frames;
    let points: Vec<[f64; 2]> = (0..spec.control_points)
        .map(|_| [rng.random_range(-1.0..=1.0) * spec.extent, rng.random_range(-1.0..=1.0) * spec.extent])
        .collect();
    let swings: Vec<Swing> = (0..joints)
        .map(|_| Swing {
            axis: Unit::new_normalize(Vector3::new(1.0, 0.0, rng.random_range(-0.3..=0.3))),
            amplitude: spec.amplitude * rng.random_range(0.3..=1.0),
            frequency: rng.random_range(spec.min_frequency..=spec.max_frequency),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();

    let mut world = Array3::zeros((n, joints, 3));
    for f in 0..n {
        let time = f as f64 / spec.fps as f64;
        let mut rot = vec![Rotation3::identity(); joints];
        let mut pos = vec![Vector3::zeros(); joints];
        for j in 1..joints {
            let p = sk.parent(j).expect("only joint 0 is a root");
            let s = &swings[j];
            let angle = s.amplitude * (std::f64::consts::TAU * s.frequency * time + s.phase).sin();
            rot[j] = rot[p] * Rotation3::from_axis_angle(&s.axis, angle);
            let b = sk.bone(j);
            pos[j] = pos[p] + rot[j] * Vector3::new(b[0], b[1], b[2]);
        }
        let lowest = sk.foot_joints().iter().map(|&j| pos[j].y).fold(f64::INFINITY, f64::min);
        let height = if lowest.is_finite() { -lowest } else { 0.0 };
        let u = if n > 1 { (spec.control_points - 1) as f64 * f as f64 / (n - 1) as f64 } else { 0.0 };
        let [x, z] = catmull_rom(&points, u);
        for j in 0..joints {
            world[[f, j, 0]] = x + pos[j].x;
            world[[f, j, 1]] = height + pos[j].y;
            world[[f, j, 2]] = z + pos[j].z;
        }
    }
    MotionSequence::from_world_joints(&world, spec.fps)
}

/// Deterministic dataset; sequence `i` depends only on `(seed, i)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<MotionSequence>> {
    spec.validate()?;
    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            sequence(spec, &mut rng)
        })
        .collect()
}

/// Stacks equally shaped sequences row-wise, for inspection.
pub fn stack_features(set: &[MotionSequence]) -> Result<Array2<f64>> {
    let views: Vec<_> = set.iter().map(|m| m.features.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::joint_world_positions;

    fn small(count: usize) -> SyntheticSpec {
        SyntheticSpec { count, frames: 32, ..Default::default() }
    }

    #[test]
    fn valid_and_deterministic() {
        let spec = small(8);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        for m in &a {
            m.validate_for(&spec.skeleton).unwrap();
            assert_eq!(m.frames(), 32);
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn bone_lengths_preserved_and_feet_on_ground() {
        let spec = small(3);
        let sk = &spec.skeleton;
        for m in generate_synthetic(&spec).unwrap() {
            let w = joint_world_positions(&m, sk).unwrap();
            for f in 0..m.frames() {
                for j in 1..sk.joint_count() {
                    let p = sk.parent(j).unwrap();
                    let len: f64 = (0..3).map(|k| (w[[f, j, k]] - w[[f, p, k]]).powi(2)).sum::<f64>().sqrt();
                    let b = sk.bone(j);
                    let rest = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
                    assert!((len - rest).abs() < 1e-9);
                }
                let low = sk.foot_joints().iter().map(|&j| w[[f, j, 1]]).fold(f64::INFINITY, f64::min);
                assert!(low.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_amplitude_is_translated_rest_pose() {
        let spec = SyntheticSpec { amplitude: 0.0, ..small(2) };
        let rest = spec.skeleton.rest_pose();
        for m in generate_synthetic(&spec).unwrap() {
            for f in 0..m.frames() {
                for j in 1..22 {
                    for k in 0..3 {
                        assert!((m.features[[f, 3 * j + k]] - rest[j][k]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn spline_passes_through_control_points() {
        let pts = [[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]];
        assert_eq!(catmull_rom(&pts, 0.0), pts[0]);
        assert_eq!(catmull_rom(&pts, 1.0), pts[1]);
        let end = catmull_rom(&pts, 2.0);
        assert!((end[0] - 3.0).abs() < 1e-12 && (end[1] + 1.0).abs() < 1e-12);
    }
}
