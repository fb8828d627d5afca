//! Conditional sampling and the anchor-density evaluation protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::sample_f_s;
use crate::denoiser::Denoiser;
use crate::diffusion::{sample, NoiseSchedule, SamplerConfig};
use crate::filter::{sample_anchors, FilterParams};
use crate::metrics::{
    bootstrap_mean, directional_consistency, diversity, fid, joint_smoothness, k_mpjpe, mpjpe, FeatureExtractor,
    MetricsReport, DEFAULT_DIVERSITY_PAIRS,
};
use crate::motion::{extract_trajectory, gather_anchors, AnchorSet, MotionSequence, Skeleton, Trajectory};
use crate::pipeline::Checkpoint;
use crate::{Error, Result};

/// Runs the diffusion sampler; either condition may be absent.
pub fn sample_motion(
    checkpoint: &Checkpoint,
    trajectory: Option<&Trajectory>,
    anchors: Option<&AnchorSet>,
    frames: Option<usize>,
    sampler: SamplerConfig,
    seed: u64,
) -> Result<MotionSequence> {
    let generator = ModelGenerator::new(checkpoint, sampler)?;
    generator.sample(trajectory, anchors, frames, seed)
}

/// A trained denoiser paired with its noise schedule and sampler settings.
#[derive(Debug, Clone)]
pub struct ModelGenerator {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub fps: u32,
    pub default_frames: usize,
}

impl ModelGenerator {
    pub fn new(checkpoint: &Checkpoint, sampler: SamplerConfig) -> Result<Self> {
        Ok(Self {
            denoiser: checkpoint.denoiser(),
            schedule: checkpoint.config.diffusion.schedule()?,
            sampler,
            fps: checkpoint.config.data.fps,
            default_frames: checkpoint.config.data.frames,
        })
    }

    pub fn sample(
        &self,
        trajectory: Option<&Trajectory>,
        anchors: Option<&AnchorSet>,
        frames: Option<usize>,
        seed: u64,
    ) -> Result<MotionSequence> {
        let n = match (trajectory, frames) {
            (Some(t), Some(f)) if t.frames() != f => {
                return Err(Error::Shape(format!("trajectory has {} frames but {f} were requested", t.frames())))
            }
            (Some(t), _) => t.frames(),
            (None, Some(f)) => f,
            (None, None) => self.default_frames,
        };
        if let Some(a) = anchors {
            a.check_range(n)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut predict = |x: &ndarray::Array2<f64>, t: f64| self.denoiser.predict(x, t, trajectory, anchors);
        let shape = (n, self.denoiser.config.feature_dim);
        let features = sample(&mut predict, shape, self.sampler, &self.schedule, &mut rng)?;
        MotionSequence::new(features, self.fps)
    }
}

/// One evaluation item as presented to a generator.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub ground_truth: &'a MotionSequence,
    pub trajectory: Option<&'a Trajectory>,
    pub anchors: Option<&'a AnchorSet>,
}

pub trait MotionGenerator: Sync {
    fn generate(&self, request: &GenerationRequest<'_>, seed: u64) -> Result<MotionSequence>;
}

impl MotionGenerator for ModelGenerator {
    fn generate(&self, request: &GenerationRequest<'_>, seed: u64) -> Result<MotionSequence> {
        self.sample(request.trajectory, request.anchors, Some(request.ground_truth.frames()), seed)
    }
}

/// Oracle that returns the ground truth unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl MotionGenerator for GroundTruth {
    fn generate(&self, request: &GenerationRequest<'_>, _seed: u64) -> Result<MotionSequence> {
        Ok(request.ground_truth.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub densities: Vec<usize>,
    /// Evaluate only the first `items` sequences; all when unset.
    pub items: Option<usize>,
    pub diversity_pairs: usize,
    pub bootstrap: usize,
    pub confidence: f64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            densities: vec![1, 3, 5, 7, 9],
            items: None,
            diversity_pairs: DEFAULT_DIVERSITY_PAIRS,
            bootstrap: 1000,
            confidence: 0.95,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.densities.is_empty() || self.densities.contains(&0) {
            return Err(Error::Config("eval.densities must be a non-empty list of positive counts".into()));
        }
        if self.items == Some(0) || self.diversity_pairs == 0 {
            return Err(Error::Config("eval.items and eval.diversity_pairs must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("eval.confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub f_n: usize,
    /// Items whose `f_s` had to be pinned below the floor of 4.
    pub clamped: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub densities: Vec<usize>,
    pub items: usize,
    pub seed: u64,
    pub results: Vec<DensityReport>,
}

impl EvaluationReport {
    pub fn for_density(&self, f_n: usize) -> Option<&DensityReport> {
        self.results.iter().find(|r| r.f_n == f_n)
    }
}

struct Prepared {
    positions: Vec<usize>,
    anchors: AnchorSet,
    trajectory: Trajectory,
    seed: u64,
}

/// Generates every test item at each anchor density and scores the result.
pub fn evaluate(
    generator: &dyn MotionGenerator,
    dataset: &[MotionSequence],
    skeleton: &Skeleton,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<EvaluationReport> {
    protocol.validate()?;
    let items = protocol.items.map_or(dataset.len(), |k| k.min(dataset.len()));
    let set = &dataset[..items];
    if set.len() < 2 {
        return Err(Error::Config(format!("evaluation needs at least 2 sequences, got {}", set.len())));
    }
    let extractor = FeatureExtractor::standard(skeleton.feature_dim());
    let mut results = Vec::with_capacity(protocol.densities.len());
    for &f_n in &protocol.densities {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(f_n as u64);
        let mut clamped = 0;
        let prepared = set
            .iter()
            .map(|gt| {
                gt.validate_for(skeleton)?;
                let n = gt.frames();
                let (f_s, pinned) = sample_f_s(n, f_n, &mut rng);
                clamped += usize::from(pinned);
                let positions = sample_anchors(&FilterParams::new(n, f_n, f_s)?, &mut rng)?;
                Ok(Prepared {
                    anchors: gather_anchors(gt, &positions)?,
                    trajectory: extract_trajectory(gt),
                    positions,
                    seed: rng.random(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let generated = set
            .par_iter()
            .zip(prepared.par_iter())
            .map(|(gt, p)| {
                let request = GenerationRequest {
                    ground_truth: gt,
                    trajectory: Some(&p.trajectory),
                    anchors: Some(&p.anchors),
                };
                let motion = generator.generate(&request, p.seed)?;
                if motion.features.dim() != gt.features.dim() {
                    return Err(Error::Shape("generator changed the motion shape".into()));
                }
                motion.validate()?;
                Ok(motion)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut per = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        let mut dm_skipped = 0;
        for ((gen, gt), p) in generated.iter().zip(set).zip(&prepared) {
            per[0].push(mpjpe(gen, gt, skeleton)?);
            per[1].push(k_mpjpe(gen, gt, skeleton, &p.positions)?);
            per[2].push(joint_smoothness(gen, skeleton)?);
            match directional_consistency(&extract_trajectory(gen), &p.trajectory) {
                Ok(v) => per[3].push(v),
                Err(Error::Undefined(_)) => dm_skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if per[3].is_empty() {
            return Err(Error::Undefined("directional consistency undefined for every item".into()));
        }
        let mut boot = ChaCha8Rng::seed_from_u64(seed ^ 0xb007);
        boot.set_stream(f_n as u64);
        let mut estimate = |v: &[f64]| bootstrap_mean(v, protocol.bootstrap, protocol.confidence, &mut boot);
        let metrics = MetricsReport {
            mpjpe: estimate(&per[0])?,
            k_mpjpe: estimate(&per[1])?,
            js: estimate(&per[2])?,
            dm: estimate(&per[3])?,
            diversity: diversity(&generated, protocol.diversity_pairs, &mut rng)?,
            fid: fid(&generated, set, &extractor)?,
            samples: generated.len(),
            dm_skipped,
            seed,
        };
        results.push(DensityReport { f_n, clamped, metrics });
    }
    Ok(EvaluationReport { densities: protocol.densities.clone(), items, seed, results })
}

/// Scores a checkpoint with its configured sampler.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &[MotionSequence],
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<EvaluationReport> {
    let generator = ModelGenerator::new(checkpoint, checkpoint.config.diffusion.sampler())?;
    evaluate(&generator, dataset, &checkpoint.config.data.skeleton, protocol, seed)
}
