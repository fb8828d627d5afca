//! Training loop: per-iteration anchor-density draws (curriculum or uniform),
//! forward diffusion, data prediction and the weighted objective.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::curriculum::{k_min_for_stage, sample_f_s, sample_iteration_params, stage_of_epoch, IterationParams, Redraw};
use crate::denoiser::{init_parameters, Network};
use crate::diffusion::{q_sample, standard_normal, NoiseSchedule};
use crate::filter::{sample_anchors, satisfies_gap};
use crate::motion::{extract_trajectory, gather_anchors, MotionSequence};
use crate::objectives::{
    adversarial_losses, anchor_loss, init_discriminator, joint_loss, l2_loss, physical_loss, total_loss,
    total_loss_var, LossComponents, DEFAULT_DISC_HIDDEN,
};
use crate::optim::Adam;
use crate::params::Parameters;
use crate::pipeline::Checkpoint;
use crate::tape::Graph;
use crate::{Error, Result};

const DISC_SEED_SALT: u64 = 0xd15c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` when the curriculum is off.
    pub stage: Option<usize>,
    pub k_min: Option<usize>,
    pub mean_loss: f64,
    pub components: LossComponents,
    pub disc_loss: Option<f64>,
    pub f_n_min: usize,
    pub f_n_max: usize,
    /// Draws whose `f_s` range fell below the floor and was pinned to its maximum.
    pub clamped_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub iteration_losses: Vec<f64>,
    pub f_n_draws: Vec<usize>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub discriminator: Parameters,
    pub log: TrainLog,
}

struct Job {
    index: usize,
    positions: Vec<usize>,
    t: usize,
    noise: ndarray::Array2<f64>,
    keep_trajectory: bool,
    keep_anchors: bool,
}

struct JobResult {
    gen: Parameters,
    disc: Option<Parameters>,
    components: LossComponents,
    disc_loss: f64,
}

fn run_job(
    job: &Job,
    x0: &MotionSequence,
    config: &TrainConfig,
    params: &Parameters,
    disc: &Parameters,
    schedule: &NoiseSchedule,
) -> Result<JobResult> {
    let net = Network::new(&config.network, params);
    let weights = config.loss.effective_weights();
    let skeleton = &config.data.skeleton;
    let x_t = q_sample(&x0.features, job.t, &job.noise, schedule)?;
    let trajectory = job.keep_trajectory.then(|| extract_trajectory(x0));
    let anchors = if job.keep_anchors { Some(gather_anchors(x0, &job.positions)?) } else { None };

    let mut g = Graph::new();
    let x = g.input(x_t);
    let target = g.input(x0.features.clone());
    let pred = net.predict(&mut g, x, job.t as f64, trajectory.as_ref(), anchors.as_ref())?;

    let l2 = l2_loss(&mut g, pred, target)?;
    let anchor = anchor_loss(&mut g, pred, target, &job.positions)?;
    let joint = joint_loss(&mut g, pred, target, skeleton)?;
    let phys = if weights.lambda5 > 0.0 {
        Some(physical_loss(&mut g, pred, skeleton, &config.phys, x0.fps as f64)?)
    } else {
        None
    };
    let adversarial = if config.loss.gan_active(job.t) {
        Some(adversarial_losses(&mut g, disc, &[target], &[pred])?)
    } else {
        None
    };
    let total = total_loss_var(&mut g, [Some(l2), Some(anchor), Some(joint), adversarial.map(|a| a.1), phys], &weights);

    let components = LossComponents {
        l2: g.scalar(l2),
        anchor: g.scalar(anchor),
        joint: g.scalar(joint),
        gan: adversarial.map_or(0.0, |a| g.scalar(a.1)),
        phys: phys.map_or(0.0, |p| g.scalar(p)),
    };
    let gen = params.collect_grads(&g.backward(total));
    let (disc_grads, disc_loss) = match adversarial {
        Some((l_d, _)) => (Some(disc.collect_grads(&g.backward(l_d))), g.scalar(l_d)),
        None => (None, 0.0),
    };
    Ok(JobResult { gen, disc: disc_grads, components, disc_loss })
}

fn draw_params(config: &TrainConfig, epoch: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<IterationParams> {
    let cur = &config.curriculum;
    if cur.enabled {
        let stage = stage_of_epoch(epoch, cur)?;
        sample_iteration_params(stage, cur.e_stage, n, cur.k_max, rng)
    } else {
        let f_n = rng.random_range(1..=cur.k_max.min(n));
        let (f_s, clamped) = sample_f_s(n, f_n, rng);
        Ok(IterationParams { f_n, f_s, stage: 0, clamped })
    }
}

pub fn train(dataset: &[MotionSequence], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, config, &mut |_| {})
}

/// Trains from scratch, calling `progress` after every epoch.
pub fn train_with_progress(
    dataset: &[MotionSequence],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = dataset.first().ok_or_else(|| Error::Config("training dataset is empty".into()))?;
    let n = first.frames();
    for m in dataset {
        m.validate_for(&config.data.skeleton)?;
        if m.frames() != n {
            return Err(Error::Shape(format!("sequences must share a length ({} vs {n})", m.frames())));
        }
    }
    if n > config.network.max_frames {
        return Err(Error::Config(format!("sequence length {n} exceeds network.max_frames")));
    }
    let schedule = config.diffusion.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_parameters(&config.network, config.seed)?;
    let hidden = config.loss.disc_hidden.unwrap_or(DEFAULT_DISC_HIDDEN);
    let mut disc = init_discriminator(config.network.feature_dim, hidden, config.seed ^ DISC_SEED_SALT);
    let mut opt = Adam::new(config.train.adam, &params);
    let mut disc_opt = Adam::new(config.train.adam, &disc);
    let weights = config.loss.effective_weights();
    let batch = config.train.batch_size.min(dataset.len());
    let per_epoch = config.iterations_per_epoch();
    let dropout = config.network.cond_dropout;
    let mut log = TrainLog::default();

    for epoch in 1..=config.curriculum.e_total {
        let stage = config.curriculum.enabled.then(|| stage_of_epoch(epoch, &config.curriculum)).transpose()?;
        let k_min = stage.map(|s| k_min_for_stage(s, config.curriculum.e_stage)).transpose()?;
        let mut epoch_draw = None;
        let mut sums = [0.0; 5];
        let (mut loss_sum, mut disc_sum, mut disc_count) = (0.0, 0.0, 0usize);
        let (mut f_n_min, mut f_n_max, mut clamped_draws) = (usize::MAX, 0, 0);

        for _ in 0..per_epoch {
            let draw = match (config.curriculum.redraw, epoch_draw) {
                (Redraw::Epoch, Some(d)) => d,
                _ => {
                    let d = draw_params(config, epoch, n, &mut rng)?;
                    epoch_draw = Some(d);
                    d
                }
            };
            f_n_min = f_n_min.min(draw.f_n);
            f_n_max = f_n_max.max(draw.f_n);
            clamped_draws += usize::from(draw.clamped);
            log.f_n_draws.push(draw.f_n);
            let fp = draw.filter_params(n)?;

            let picks = index::sample(&mut rng, dataset.len(), batch).into_vec();
            let jobs = picks
                .into_iter()
                .map(|index| {
                    let positions = sample_anchors(&fp, &mut rng)?;
                    debug_assert!(satisfies_gap(&positions, &fp));
                    Ok(Job {
                        index,
                        positions,
                        t: rng.random_range(1..=schedule.steps()),
                        noise: standard_normal(first.features.dim(), &mut rng),
                        keep_trajectory: !rng.random_bool(dropout),
                        keep_anchors: !rng.random_bool(dropout),
                    })
                })
                .collect::<Result<Vec<_>>>()?;

            let results = jobs
                .par_iter()
                .map(|job| run_job(job, &dataset[job.index], config, &params, &disc, &schedule))
                .collect::<Result<Vec<_>>>()?;

            let scale = 1.0 / results.len() as f64;
            let mut gen_grad = params.zeros_like();
            let mut disc_grad = disc.zeros_like();
            let mut disc_seen = 0usize;
            let mut comps = [0.0; 5];
            for r in &results {
                gen_grad.add_scaled(&r.gen, scale);
                if let Some(d) = &r.disc {
                    disc_grad.add_scaled(d, 1.0);
                    disc_seen += 1;
                    disc_sum += r.disc_loss;
                    disc_count += 1;
                }
                for (c, v) in comps.iter_mut().zip(r.components.as_array()) {
                    *c += v * scale;
                }
            }
            opt.step(&mut params, &gen_grad)?;
            if disc_seen > 0 {
                disc_grad.scale(1.0 / disc_seen as f64);
                disc_opt.step(&mut disc, &disc_grad)?;
            }
            let c = LossComponents { l2: comps[0], anchor: comps[1], joint: comps[2], gan: comps[3], phys: comps[4] };
            let total = total_loss(&c, &weights);
            if !total.is_finite() {
                return Err(Error::NonFinite);
            }
            log.iteration_losses.push(total);
            loss_sum += total;
            for (s, v) in sums.iter_mut().zip(comps) {
                *s += v;
            }
        }

        let k = per_epoch as f64;
        let record = EpochRecord {
            epoch,
            stage,
            k_min,
            mean_loss: loss_sum / k,
            components: LossComponents {
                l2: sums[0] / k,
                anchor: sums[1] / k,
                joint: sums[2] / k,
                gan: sums[3] / k,
                phys: sums[4] / k,
            },
            disc_loss: (disc_count > 0).then(|| disc_sum / disc_count as f64),
            f_n_min,
            f_n_max,
            clamped_draws,
        };
        progress(&record);
        log.epochs.push(record);
    }

    params.round_to_f32();
    disc.round_to_f32();
    Ok(TrainOutcome { checkpoint: Checkpoint { config: config.clone(), params }, discriminator: disc, log })
}
