//! Evaluation metrics: MPJPE, K-MPJPE, joint smoothness, diversity,
//! directional consistency and Fréchet distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::motion::{joint_world_positions, MotionSequence, Skeleton, Trajectory};
use crate::params::normal;
use crate::{Error, Result};

pub const DEFAULT_DIVERSITY_PAIRS: usize = 300;
pub const FID_FEATURE_DIM: usize = 32;
pub const DM_MIN_NORM: f64 = 1e-6;
const COV_REGULARISATION: f64 = 1e-6;

fn paired_positions(gen: &MotionSequence, gt: &MotionSequence, skeleton: &Skeleton) -> Result<(Array3<f64>, Array3<f64>)> {
    if gen.features.dim() != gt.features.dim() {
        return Err(Error::Shape(format!(
            "generated motion is {:?}, ground truth is {:?}",
            gen.features.dim(),
            gt.features.dim()
        )));
    }
    Ok((joint_world_positions(gen, skeleton)?, joint_world_positions(gt, skeleton)?))
}

fn mean_joint_distance(a: &Array3<f64>, b: &Array3<f64>, frames: &[usize]) -> f64 {
    let joints = a.dim().1;
    let mut total = 0.0;
    for &f in frames {
        for j in 0..joints {
            let d2: f64 = (0..3).map(|k| (a[[f, j, k]] - b[[f, j, k]]).powi(2)).sum();
            total += d2.sqrt();
        }
    }
    total / (frames.len() * joints) as f64
}

/// Mean per-joint position error in metres.
pub fn mpjpe(gen: &MotionSequence, gt: &MotionSequence, skeleton: &Skeleton) -> Result<f64> {
    let (a, b) = paired_positions(gen, gt, skeleton)?;
    let frames: Vec<usize> = (0..a.dim().0).collect();
    Ok(mean_joint_distance(&a, &b, &frames))
}

/// Mean per-joint position error over anchor frames only.
pub fn k_mpjpe(gen: &MotionSequence, gt: &MotionSequence, skeleton: &Skeleton, positions: &[usize]) -> Result<f64> {
    let (a, b) = paired_positions(gen, gt, skeleton)?;
    if positions.is_empty() {
        return Err(Error::Undefined("k_mpjpe needs at least one anchor frame".into()));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= a.dim().0) {
        return Err(Error::InvalidAnchorPositions(format!("position {p} out of range for {} frames", a.dim().0)));
    }
    Ok(mean_joint_distance(&a, &b, positions))
}

/// Mean norm of the second difference of joint positions (m/frame²).
pub fn joint_smoothness(gen: &MotionSequence, skeleton: &Skeleton) -> Result<f64> {
    let p = joint_world_positions(gen, skeleton)?;
    let (n, joints, _) = p.dim();
    if n < 3 {
        return Err(Error::TooShort(n));
    }
    let mut total = 0.0;
    for f in 1..n - 1 {
        for j in 0..joints {
            let acc: f64 = (0..3)
                .map(|k| (p[[f + 1, j, k]] - 2.0 * p[[f, j, k]] + p[[f - 1, j, k]]).powi(2))
                .sum();
            total += acc.sqrt();
        }
    }
    Ok(total / ((n - 2) * joints) as f64)
}

fn pooled(motion: &MotionSequence) -> Array1<f64> {
    motion.features.mean_axis(Axis(0)).expect("non-empty motion")
}

/// Mean distance between `pairs` random pairs of distinct, mean-pooled motions.
pub fn diversity<R: Rng + ?Sized>(set: &[MotionSequence], pairs: usize, rng: &mut R) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::Undefined(format!("diversity needs at least 2 motions, got {}", set.len())));
    }
    if pairs == 0 {
        return Err(Error::Config("diversity pairs must be at least 1".into()));
    }
    let width = set[0].feature_dim();
    if set.iter().any(|m| m.feature_dim() != width) {
        return Err(Error::Shape("motions in a diversity set must share a feature width".into()));
    }
    let feats: Vec<Array1<f64>> = set.iter().map(pooled).collect();
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..feats.len());
        let mut j = rng.random_range(0..feats.len() - 1);
        if j >= i {
            j += 1;
        }
        total += (&feats[i] - &feats[j]).mapv(|v| v * v).sum().sqrt();
    }
    Ok(total / pairs as f64)
}

/// Mean cosine between per-frame pelvis displacements of `gen` and `reference`.
pub fn directional_consistency(gen: &Trajectory, reference: &Trajectory) -> Result<f64> {
    if gen.frames() != reference.frames() {
        return Err(Error::Shape(format!(
            "trajectories have {} and {} frames",
            gen.frames(),
            reference.frames()
        )));
    }
    let (a, b) = (&gen.positions, &reference.positions);
    let mut total = 0.0;
    let mut count = 0usize;
    for f in 1..gen.frames() {
        let da = &a.row(f) - &a.row(f - 1);
        let db = &b.row(f) - &b.row(f - 1);
        let (na, nb) = (da.dot(&da).sqrt(), db.dot(&db).sqrt());
        if na > DM_MIN_NORM && nb > DM_MIN_NORM {
            total += (da.dot(&db) / (na * nb)).clamp(-1.0, 1.0);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Undefined("no frame has displacement above threshold in both trajectories".into()));
    }
    Ok(total / count as f64)
}

/// Fixed seeded projection of `[mean | std]`-pooled motion features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    projection: Array2<f64>,
}

impl FeatureExtractor {
    pub fn new(feature_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / ((2 * feature_dim) as f64).sqrt();
        Self { projection: normal(&mut rng, 2 * feature_dim, out_dim, std) }
    }

    pub fn standard(feature_dim: usize) -> Self {
        Self::new(feature_dim, FID_FEATURE_DIM, 0x5eed_f1d)
    }

    pub fn out_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn extract(&self, motion: &MotionSequence) -> Result<Array1<f64>> {
        let d = motion.feature_dim();
        if 2 * d != self.projection.nrows() {
            return Err(Error::Shape(format!("extractor expects width {}, got {d}", self.projection.nrows() / 2)));
        }
        let mean = pooled(motion);
        let std = motion.features.std_axis(Axis(0), 0.0);
        let mut x = Array1::zeros(2 * d);
        x.slice_mut(ndarray::s![..d]).assign(&mean);
        x.slice_mut(ndarray::s![d..]).assign(&std);
        Ok(x.dot(&self.projection))
    }

    pub fn extract_set(&self, set: &[MotionSequence]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((set.len(), self.out_dim()));
        for (i, m) in set.iter().enumerate() {
            out.row_mut(i).assign(&self.extract(m)?);
        }
        Ok(out)
    }
}

fn gaussian_fit(samples: &Array2<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, k) = samples.dim();
    if n < 2 {
        return Err(Error::Undefined(format!("Fréchet distance needs at least 2 samples per set, got {n}")));
    }
    if k == 0 || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mu = samples.mean_axis(Axis(0)).expect("n >= 2");
    let centred = samples - &mu;
    let cov = centred.t().dot(&centred) / (n - 1) as f64;
    let mut cov = DMatrix::from_fn(k, k, |i, j| cov[[i, j]]);
    if n < k + 1 {
        for i in 0..k {
            cov[(i, i)] += COV_REGULARISATION;
        }
    }
    Ok((DVector::from_iterator(k, mu.iter().copied()), cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})` of Gaussian fits to two sample sets.
pub fn frechet_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("feature sets have widths {} and {}", a.ncols(), b.ncols())));
    }
    let (mu1, s1) = gaussian_fit(a)?;
    let (mu2, s2) = gaussian_fit(b)?;
    let root1 = psd_sqrt(&s1);
    let inner = &root1 * &s2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = mu1 - mu2;
    Ok(diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross)
}

pub fn fid(gen: &[MotionSequence], real: &[MotionSequence], extractor: &FeatureExtractor) -> Result<f64> {
    frechet_distance(&extractor.extract_set(gen)?, &extractor.extract_set(real)?)
}

/// Mean with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn bootstrap_mean<R: Rng + ?Sized>(values: &[f64], resamples: usize, level: f64, rng: &mut R) -> Result<Estimate> {
    if values.is_empty() {
        return Err(Error::Undefined("no values to summarise".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if resamples == 0 || n == 1 {
        return Ok(Estimate { mean, ci_low: mean, ci_high: mean });
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(Estimate { mean, ci_low: at(tail), ci_high: at(1.0 - tail) })
}

/// All six metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpjpe: Estimate,
    pub k_mpjpe: Estimate,
    pub js: Estimate,
    pub dm: Estimate,
    pub diversity: f64,
    pub fid: f64,
    pub samples: usize,
    /// Items whose directional consistency was undefined (stationary pelvis).
    pub dm_skipped: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn is_finite(&self) -> bool {
        [self.mpjpe, self.k_mpjpe, self.js, self.dm]
            .iter()
            .all(|e| e.mean.is_finite() && e.ci_low.is_finite() && e.ci_high.is_finite())
            && self.diversity.is_finite()
            && self.fid.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_motion(rng: &mut ChaCha8Rng, n: usize) -> MotionSequence {
        MotionSequence::new(Array2::from_shape_fn((n, 66), |_| rng.random_range(-1.0..1.0)), 20).unwrap()
    }

    #[test]
    fn mpjpe_examples() {
        let sk = Skeleton::humanml3d();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_motion(&mut rng, 6);
        assert_eq!(mpjpe(&a, &a, &sk).unwrap(), 0.0);
        let mut b = a.clone();
        for f in 0..6 {
            b.features[[f, 0]] += 3.0;
            b.features[[f, 1]] += 4.0;
        }
        assert!((mpjpe(&a, &b, &sk).unwrap() - 5.0).abs() < 1e-12);
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(k_mpjpe(&a, &b, &sk, &all).unwrap(), mpjpe(&a, &b, &sk).unwrap());
        let short = random_motion(&mut rng, 5);
        assert!(matches!(mpjpe(&a, &short, &sk), Err(Error::Shape(_))));
        assert!(matches!(k_mpjpe(&a, &a, &sk, &[]), Err(Error::Undefined(_))));
    }

    #[test]
    fn smoothness_examples() {
        let sk = Skeleton::humanml3d();
        let mut m = Array2::zeros((3, 66));
        m[[2, 0]] = 1.0;
        let m = MotionSequence::new(m, 20).unwrap();
        assert!((joint_smoothness(&m, &sk).unwrap() - 1.0).abs() < 1e-12);
        let lin = MotionSequence::new(Array2::from_shape_fn((8, 66), |(f, c)| f as f64 * (c as f64 * 0.01)), 20).unwrap();
        assert!(joint_smoothness(&lin, &sk).unwrap().abs() < 1e-12);
        let two = MotionSequence::new(Array2::zeros((2, 66)), 20).unwrap();
        assert!(matches!(joint_smoothness(&two, &sk), Err(Error::TooShort(2))));
    }

    #[test]
    fn diversity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_motion(&mut rng, 4);
        assert_eq!(diversity(&[m.clone(), m.clone(), m.clone()], 50, &mut rng).unwrap(), 0.0);
        let a = MotionSequence::new(Array2::zeros((4, 6)), 20).unwrap();
        let mut bf = Array2::zeros((4, 6));
        bf.column_mut(4).fill(2.0);
        let b = MotionSequence::new(bf, 20).unwrap();
        assert!((diversity(&[a.clone(), b], 40, &mut rng).unwrap() - 2.0).abs() < 1e-12);
        assert!(diversity(&[a], 10, &mut rng).is_err());
    }

    #[test]
    fn directional_examples() {
        let t = Trajectory::new(Array2::from_shape_fn((5, 3), |(f, k)| if k == 0 { f as f64 } else { 0.0 })).unwrap();
        assert!((directional_consistency(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let back = Trajectory::new(-&t.positions).unwrap();
        assert!((directional_consistency(&back, &t).unwrap() + 1.0).abs() < 1e-12);
        let side = Trajectory::new(Array2::from_shape_fn((5, 3), |(f, k)| if k == 2 { f as f64 } else { 0.0 })).unwrap();
        assert!(directional_consistency(&side, &t).unwrap().abs() < 1e-12);
        let still = Trajectory::new(Array2::zeros((5, 3))).unwrap();
        assert!(matches!(directional_consistency(&still, &t), Err(Error::Undefined(_))));
    }

    #[test]
    fn frechet_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((60, 4), |_| rng.random_range(0.0..2.0));
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-9);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab > 0.0 && (ab - ba).abs() < 1e-9);
        let shifted = a.mapv(|v| v + 1.0);
        assert!((frechet_distance(&a, &shifted).unwrap() - 4.0).abs() < 1e-9);
        let one = array![[1.0, 2.0]];
        assert!(frechet_distance(&one, &one).is_err());
    }

    #[test]
    fn extractor_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_motion(&mut rng, 7);
        let a = FeatureExtractor::standard(66);
        let b = FeatureExtractor::standard(66);
        assert_eq!(a.extract(&m).unwrap(), b.extract(&m).unwrap());
        assert_eq!(a.out_dim(), 32);
    }

    #[test]
    fn bootstrap_contains_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let e = bootstrap_mean(&v, 500, 0.95, &mut rng).unwrap();
        assert!(e.ci_low <= e.mean && e.mean <= e.ci_high);
        assert!((e.mean - 19.5).abs() < 1e-12);
    }
}
