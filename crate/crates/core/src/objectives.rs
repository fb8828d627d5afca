//! Training objective: reconstruction, anchor, joint, adversarial and physical terms.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::motion::{world_position_matrix, Skeleton};
use crate::params::{init_linear, linear, Parameters};
use crate::tape::{Graph, Var};
use crate::{Error, Result};

const VERTICAL: usize = 1;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0, lambda4: 0.1, lambda5: 0.1 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.as_array().iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Config(format!("loss.lambda{} must be finite and >= 0, got {w}", i + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    #[default]
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

/// The `loss.*` configuration block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LossConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub gan: Switch,
    pub phys: Switch,
    /// Adversarial term only for timesteps `t <= gan_max_t`; every timestep when unset.
    pub gan_max_t: Option<usize>,
    pub disc_hidden: Option<usize>,
}

impl LossConfig {
    /// Weights with disabled terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.gan.is_on() {
            w.lambda4 = 0.0;
        }
        if !self.phys.is_on() {
            w.lambda5 = 0.0;
        }
        w
    }

    pub fn gan_active(&self, t: usize) -> bool {
        self.effective_weights().lambda4 > 0.0 && self.gan_max_t.is_none_or(|max| t <= max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalParams {
    pub ground: f64,
    pub contact_height: f64,
    /// Metres per second.
    pub contact_speed: f64,
    pub float_margin: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { ground: 0.0, contact_height: 0.05, contact_speed: 0.10, float_margin: 0.10 }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if !self.ground.is_finite() {
            return Err(Error::Config("phys.ground must be finite".into()));
        }
        for (name, v) in [
            ("contact_height", self.contact_height),
            ("contact_speed", self.contact_speed),
            ("float_margin", self.float_margin),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("phys.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar values of the five terms in `λ` order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub l2: f64,
    pub anchor: f64,
    pub joint: f64,
    pub gan: f64,
    pub phys: f64,
}

impl LossComponents {
    pub fn as_array(&self) -> [f64; 5] {
        [self.l2, self.anchor, self.joint, self.gan, self.phys]
    }
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.as_array().iter().zip(w.as_array()).map(|(c, w)| c * w).sum()
}

/// Graph version of [`total_loss`]; `None` terms contribute nothing.
pub fn total_loss_var(g: &mut Graph, terms: [Option<Var>; 5], w: &LossWeights) -> Var {
    let mut acc = g.scalar_input(0.0);
    for (term, weight) in terms.into_iter().zip(w.as_array()) {
        if let Some(t) = term {
            if weight != 0.0 {
                let s = g.scale(t, weight);
                acc = g.add(acc, s);
            }
        }
    }
    acc
}

fn same_shape(g: &Graph, a: Var, b: Var) -> Result<(usize, usize)> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::Shape(format!("prediction is {sa:?}, target is {sb:?}")));
    }
    Ok(sa)
}

pub fn l2_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, pred, target)?;
    let d = g.sub(pred, target);
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Squared error at anchor rows, pelvis columns excluded.
pub fn anchor_loss(g: &mut Graph, pred: Var, target: Var, positions: &[usize]) -> Result<Var> {
    let (n, d) = same_shape(g, pred, target)?;
    if let Some(&p) = positions.iter().find(|&&p| p >= n) {
        return Err(Error::InvalidAnchorPositions(format!("position {p} out of range for {n} frames")));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidAnchorPositions("positions must be strictly increasing".into()));
    }
    if positions.is_empty() || d <= 3 {
        return Ok(g.scalar_input(0.0));
    }
    let diff = g.sub(pred, target);
    let rows = g.gather_rows(diff, positions);
    let pose = g.slice_cols(rows, 3, d - 3);
    let sq = g.square(pose);
    Ok(g.mean(sq))
}

/// Mean squared Euclidean distance between world joint positions.
pub fn joint_loss(g: &mut Graph, pred: Var, target: Var, skeleton: &Skeleton) -> Result<Var> {
    let (n, d) = same_shape(g, pred, target)?;
    if d != skeleton.feature_dim() {
        return Err(Error::Shape(format!("feature width {d} does not match skeleton width {}", skeleton.feature_dim())));
    }
    let j = skeleton.joint_count();
    let diff = g.sub(pred, target);
    let world = g.matmul_const(diff, world_position_matrix(j));
    let sq = g.square(world);
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / (n * j) as f64))
}

/// `D x 3F` selection of foot world positions, feet in skeleton order.
fn foot_matrix(skeleton: &Skeleton) -> Array2<f64> {
    let world = world_position_matrix(skeleton.joint_count());
    let feet = skeleton.foot_joints();
    let mut m = Array2::zeros((skeleton.feature_dim(), 3 * feet.len()));
    for (i, &j) in feet.iter().enumerate() {
        for k in 0..3 {
            m.column_mut(3 * i + k).assign(&world.column(3 * j + k));
        }
    }
    m
}

/// Individual physical terms, each a `1 x 1` node.
#[derive(Debug, Clone, Copy)]
pub struct PhysicalTerms {
    pub slip: Var,
    pub float: Var,
    pub penetration: Var,
    pub total: Var,
}

pub fn physical_terms(g: &mut Graph, pred: Var, skeleton: &Skeleton, phys: &PhysicalParams, fps: f64) -> Result<PhysicalTerms> {
    let (n, d) = g.shape(pred);
    if d != skeleton.feature_dim() {
        return Err(Error::Shape(format!("feature width {d} does not match skeleton width {}", skeleton.feature_dim())));
    }
    let feet = skeleton.foot_joints().len();
    if feet == 0 {
        let zero = g.scalar_input(0.0);
        return Ok(PhysicalTerms { slip: zero, float: zero, penetration: zero, total: zero });
    }
    let foot = g.matmul_const(pred, foot_matrix(skeleton));
    let heights: Vec<Var> = (0..feet).map(|i| g.slice_cols(foot, 3 * i + VERTICAL, 1)).collect();
    let heights = if feet == 1 { heights[0] } else { g.concat_cols(&heights) };

    let slip = if n < 2 {
        g.scalar_input(0.0)
    } else {
        let steps = g.row_diff(foot);
        let mut total = g.scalar_input(0.0);
        let mut count = 0usize;
        for i in 0..feet {
            let dx = g.slice_cols(steps, 3 * i, 1);
            let dz = g.slice_cols(steps, 3 * i + 2, 1);
            let horiz = g.concat_cols(&[dx, dz]);
            let dist = g.row_norm(horiz, NORM_EPS);
            let speed = g.scale(dist, fps);
            let h = g.value(heights).column(i).to_owned();
            let s = g.value(speed).column(0).to_owned();
            let mask = Array2::from_shape_fn((n - 1, 1), |(f, _)| {
                let contact = h[f + 1] < phys.contact_height + phys.ground && s[f] < phys.contact_speed;
                if contact { 1.0 } else { 0.0 }
            });
            let c = mask.sum() as usize;
            if c > 0 {
                count += c;
                let masked = g.mul_const(speed, mask);
                let part = g.sum(masked);
                total = g.add(total, part);
            }
        }
        if count > 0 { g.scale(total, 1.0 / count as f64) } else { total }
    };

    let lowest = g.row_min(heights);
    let lifted = g.add_scalar(lowest, -(phys.ground + phys.float_margin));
    let lifted = g.relu(lifted);
    let float = g.mean(lifted);

    let below = g.scale(heights, -1.0);
    let below = g.add_scalar(below, phys.ground);
    let below = g.relu(below);
    let penetration = g.mean(below);

    let sum = g.add(slip, float);
    let total = g.add(sum, penetration);
    Ok(PhysicalTerms { slip, float, penetration, total })
}

/// Foot slip + float + ground penetration.
pub fn physical_loss(g: &mut Graph, pred: Var, skeleton: &Skeleton, phys: &PhysicalParams, fps: f64) -> Result<Var> {
    Ok(physical_terms(g, pred, skeleton, phys, fps)?.total)
}

pub const DEFAULT_DISC_HIDDEN: usize = 64;

/// Three-layer discriminator over `[mean_rows(x) | mean_rows((Δx)²)]`.
pub fn init_discriminator(feature_dim: usize, hidden: usize, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::new();
    init_linear(&mut p, &mut rng, "disc.l1", 2 * feature_dim, hidden, None);
    init_linear(&mut p, &mut rng, "disc.l2", hidden, hidden, None);
    init_linear(&mut p, &mut rng, "disc.l3", hidden, 1, None);
    p
}

pub fn discriminator_logit(g: &mut Graph, disc: &Parameters, motion: Var) -> Result<Var> {
    let (n, d) = g.shape(motion);
    let expected = disc.get("disc.l1.w")?.nrows();
    if 2 * d != expected {
        return Err(Error::Shape(format!("discriminator expects width {}, got {d}", expected / 2)));
    }
    if n < 2 {
        return Err(Error::TooShort(n));
    }
    let pooled = g.mean_rows(motion);
    let diff = g.row_diff(motion);
    let energy = g.square(diff);
    let energy = g.mean_rows(energy);
    let x = g.concat_cols(&[pooled, energy]);
    let h = linear(g, disc, "disc.l1", x);
    let h = g.silu(h);
    let h = linear(g, disc, "disc.l2", h);
    let h = g.silu(h);
    Ok(linear(g, disc, "disc.l3", h))
}

/// Non-saturating logistic losses `(L_D, L_G)` from discriminator logits.
pub fn logistic_losses(g: &mut Graph, real_logits: &[Var], fake_logits: &[Var]) -> Result<(Var, Var)> {
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(Error::Shape("adversarial losses need at least one real and one fake".into()));
    }
    let mean_of = |g: &mut Graph, logits: &[Var], sign: f64| {
        let mut acc = g.scalar_input(0.0);
        for &l in logits {
            let z = g.scale(l, sign);
            let sp = g.softplus(z);
            acc = g.add(acc, sp);
        }
        g.scale(acc, 1.0 / logits.len() as f64)
    };
    let real_term = mean_of(g, real_logits, -1.0);
    let fake_term = mean_of(g, fake_logits, 1.0);
    let sum = g.add(real_term, fake_term);
    let l_d = g.scale(sum, 0.5);
    let l_g = mean_of(g, fake_logits, -1.0);
    Ok((l_d, l_g))
}

/// Discriminator and generator losses for a batch.
///
/// `L_D` sees the fake batch through a detached copy, so generator parameters
/// receive gradient only from `L_G`.
pub fn adversarial_losses(g: &mut Graph, disc: &Parameters, real: &[Var], fake: &[Var]) -> Result<(Var, Var)> {
    for (&r, &f) in real.iter().zip(fake) {
        if g.shape(r).1 != g.shape(f).1 {
            return Err(Error::Shape("real and fake feature widths differ".into()));
        }
    }
    let real_logits = real.iter().map(|&r| discriminator_logit(g, disc, r)).collect::<Result<Vec<_>>>()?;
    let fake_d: Vec<Var> = fake.iter().map(|&f| g.detach(f)).collect();
    let fake_logits_d = fake_d.iter().map(|&f| discriminator_logit(g, disc, f)).collect::<Result<Vec<_>>>()?;
    let fake_logits = fake.iter().map(|&f| discriminator_logit(g, disc, f)).collect::<Result<Vec<_>>>()?;
    let (l_d, _) = logistic_losses(g, &real_logits, &fake_logits_d)?;
    let (_, l_g) = logistic_losses(g, &real_logits, &fake_logits)?;
    Ok((l_d, l_g))
}
