//! Variance-preserving noise schedules, the closed-form forward process, and a
//! second-order multistep data-prediction ODE sampler working in log-SNR time.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Discrete schedule over `t = 1..=T`; index 0 is the clean data (`ᾱ_0 = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn build_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion.T must be at least 1".into()));
    }
    let t_max = steps as f64;
    let betas: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let v = ((t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos();
                v * v
            };
            (1..=steps)
                .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).clamp(0.0, MAX_BETA))
                .collect()
        }
        ScheduleKind::Linear => {
            let scale = 1000.0 / t_max;
            let (lo, hi) = (scale * 1e-4, (scale * 0.02).min(MAX_BETA));
            (1..=steps)
                .map(|t| {
                    if steps == 1 {
                        hi
                    } else {
                        lo + (hi - lo) * (t - 1) as f64 / (steps - 1) as f64
                    }
                })
                .collect()
        }
    };
    let mut alphas = vec![1.0];
    let mut alpha_bars = vec![1.0];
    for b in betas {
        let a = 1.0 - b;
        alphas.push(a);
        alpha_bars.push(alpha_bars.last().unwrap() * a);
    }
    Ok(NoiseSchedule { kind, alphas, alpha_bars })
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of training steps `T`.
    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Signal scale `a_t = sqrt(ᾱ_t)`.
    pub fn signal(&self, t: usize) -> f64 {
        self.alpha_bars[t].sqrt()
    }

    /// Noise scale `σ_t = sqrt(1 - ᾱ_t)`.
    pub fn noise(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t]).sqrt()
    }

    pub fn log_snr(&self, t: usize) -> f64 {
        (self.signal(t) / self.noise(t)).ln()
    }

    /// `ln ᾱ` at real-valued time, linear between integer steps.
    pub fn log_alpha_bar_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.steps() as f64);
        let lo = t.floor() as usize;
        if lo >= self.steps() {
            return self.alpha_bars[self.steps()].ln();
        }
        let frac = t - lo as f64;
        let (a, b) = (self.alpha_bars[lo].ln(), self.alpha_bars[lo + 1].ln());
        a + frac * (b - a)
    }

    pub fn alpha_bar_at(&self, t: f64) -> f64 {
        self.log_alpha_bar_at(t).exp()
    }

    pub fn signal_at(&self, t: f64) -> f64 {
        (0.5 * self.log_alpha_bar_at(t)).exp()
    }

    pub fn noise_at(&self, t: f64) -> f64 {
        (-self.log_alpha_bar_at(t).exp_m1()).sqrt()
    }

    /// Continuous-time `β(t) = -d ln ᾱ / dt` on the piecewise-linear interpolant.
    pub fn beta_at(&self, t: f64) -> f64 {
        let idx = (t.ceil() as usize).clamp(1, self.steps());
        -self.alphas[idx].ln()
    }

    /// Drift and squared diffusion of the forward SDE `dx = f x dt + g dW`.
    pub fn ode_coefficients(&self, t: f64) -> (f64, f64) {
        let beta = self.beta_at(t);
        (-0.5 * beta, beta)
    }
}

/// `x_t = a_t x0 + σ_t ε`.
pub fn q_sample(x0: &Array2<f64>, t: usize, noise: &Array2<f64>, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
    if x0.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "x0 is {:?} but noise is {:?}",
            x0.dim(),
            noise.dim()
        )));
    }
    if t == 0 || t > schedule.steps() {
        return Err(Error::Config(format!("timestep {t} outside 1..={}", schedule.steps())));
    }
    let (a, s) = (schedule.signal(t), schedule.noise(t));
    Ok(x0 * a + noise * s)
}

pub fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub order: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 25, order: 2 }
    }
}

/// `t_i = T (1 - i / K)` for `i = 0..=K`, ending on the clean index 0.
pub fn time_grid(schedule: &NoiseSchedule, steps: usize) -> Vec<f64> {
    uniform_grid(schedule.steps() as f64, 0.0, steps)
}

pub fn uniform_grid(start: f64, end: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| {
            if i == steps {
                end
            } else {
                start + (end - start) * i as f64 / steps as f64
            }
        })
        .collect()
}

/// Integrates the data-prediction probability-flow ODE over a decreasing grid.
///
/// With `λ = ln(a/σ)`, `h_i = λ_i - λ_{i-1}` and the previous prediction
/// `D_{i-1}`, the order-2 step uses `D = (1 + 1/(2r)) x̂0 - 1/(2r) D_{i-1}`
/// with `r = h_{i-1} / h_i`, and then
/// `x_i = (σ_i/σ_{i-1}) x_{i-1} - a_i (e^{-h_i} - 1) D`.
/// The first step, and any step landing on `σ = 0`, is first order.
pub fn integrate<F>(
    denoiser: &mut F,
    x_start: Array2<f64>,
    grid: &[f64],
    order: usize,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
{
    if !(1..=2).contains(&order) {
        return Err(Error::Config(format!("solver order must be 1 or 2, got {order}")));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("time grid must be strictly decreasing with >= 2 points".into()));
    }
    let shape = x_start.dim();
    let mut x = x_start;
    let mut prev: Option<(Array2<f64>, f64)> = None;
    for w in grid.windows(2) {
        let (s, t) = (w[0], w[1]);
        let pred = denoiser(&x, s)?;
        if pred.dim() != shape {
            return Err(Error::Shape(format!(
                "denoiser returned {:?}, expected {:?}",
                pred.dim(),
                shape
            )));
        }
        let (a_s, sig_s) = (schedule.signal_at(s), schedule.noise_at(s));
        let (a_t, sig_t) = (schedule.signal_at(t), schedule.noise_at(t));
        // e^{-h} = (σ_t a_s) / (a_t σ_s); zero when the step lands on clean data.
        let decay = if sig_t == 0.0 { 0.0 } else { (sig_t * a_s) / (a_t * sig_s) };
        let h = -decay.ln();
        let data = match (&prev, order) {
            (Some((d_prev, h_prev)), 2) if h.is_finite() && h_prev.is_finite() => {
                let r = h_prev / h;
                let c = 1.0 / (2.0 * r);
                &pred * (1.0 + c) - d_prev * c
            }
            _ => pred.clone(),
        };
        x = &x * (sig_t / sig_s) + &data * (a_t * (1.0 - decay));
        prev = Some((pred, h));
    }
    Ok(x)
}

/// Draws `x_T ~ N(0, I)` and integrates to `t = 0`.
pub fn sample<F, R>(
    denoiser: &mut F,
    shape: (usize, usize),
    config: SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
    R: Rng + ?Sized,
{
    if config.steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let x_start = standard_normal(shape, rng);
    let grid = time_grid(schedule, config.steps);
    integrate(denoiser, x_start, &grid, config.order, schedule)
}
