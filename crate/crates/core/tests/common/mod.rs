#![allow(dead_code)]

use ndarray::Array2;
use promogen::config::TrainConfig;
use promogen::params::Parameters;
use promogen::pipeline::SyntheticSpec;
use promogen::tape::{Graph, Mat, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn scalar_of<F>(p: &Parameters, f: &F) -> f64
where
    F: Fn(&mut Graph, &Parameters) -> Var,
{
    let mut g = Graph::new();
    let v = f(&mut g, p);
    g.scalar(v)
}

/// Worst relative error (tensor-norm based) between reverse-mode and central-difference
/// gradients over `params`; tensors larger than `max_entries` are checked on a random subset.
pub fn gradient_error<F>(params: &Parameters, f: F, rng: &mut ChaCha8Rng, max_entries: usize) -> f64
where
    F: Fn(&mut Graph, &Parameters) -> Var,
{
    let mut g = Graph::new();
    let root = f(&mut g, params);
    assert_eq!(g.shape(root), (1, 1), "gradient checks need a scalar root");
    let grads = g.backward(root);
    let mut worst: f64 = 0.0;
    for (name, t) in params.iter() {
        let analytic = grads.param_or_zeros(name, t.dim());
        let (rows, cols) = t.dim();
        let total = rows * cols;
        let picks: Vec<usize> = if total <= max_entries {
            (0..total).collect()
        } else {
            rand::seq::index::sample(rng, total, max_entries).into_vec()
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for k in picks {
            let (i, j) = (k / cols, k % cols);
            let x = t[[i, j]];
            let h = FD_STEP * x.abs().max(1.0);
            let mut plus = params.clone();
            plus.get_mut(name).unwrap()[[i, j]] = x + h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap()[[i, j]] = x - h;
            let numeric = (scalar_of(&plus, &f) - scalar_of(&minus, &f)) / (2.0 * h);
            let a = analytic[[i, j]];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt()).max(1e-7);
        worst = worst.max(diff.sqrt() / scale);
    }
    worst
}

/// Reduces any output to a scalar through fixed random weights.
pub fn weighted_sum(g: &mut Graph, out: Var, rng: &mut ChaCha8Rng) -> Var {
    let (r, c) = g.shape(out);
    let w = rand_mat(rng, r, c);
    let m = g.mul_const(out, w);
    g.sum(m)
}

/// Desk-scale training setup shared by the end-to-end checks.
pub fn toy_config(seed: u64, curriculum: bool) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg.network.width = 32;
    cfg.network.blocks = 1;
    cfg.network.heads = 2;
    cfg.network.max_frames = 64;
    cfg.loss.disc_hidden = Some(32);
    cfg.train.batch_size = 8;
    cfg.train.iterations_per_epoch = Some(20);
    cfg.curriculum.enabled = curriculum;
    cfg.curriculum.e_total = 100;
    cfg.data = SyntheticSpec { count: 512, frames: 64, seed: 0, ..Default::default() };
    cfg
}

pub fn test_spec() -> SyntheticSpec {
    SyntheticSpec { count: 64, frames: 64, seed: 1, ..Default::default() }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
