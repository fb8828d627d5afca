//! Five-stage conditional denoiser.
//!
//! ```text
//!   τ ──E_τ──► traj feats ─┐──────────────────────────────┐
//!                          ▼                              ▼
//!   x_t ──────────────► G (init) ──► M_init ──⊕──► R (refine) ──► D ──► x̂0
//!                                              ▲
//!   X_s ──E_k──► anchor feats ─────────────────┘
//! ```
//!
//! Every stage is a stack of transformer blocks over frames whose layer
//! normalisation is modulated per frame by the timestep embedding plus the
//! stage's condition features. Missing conditions are replaced by learned
//! null embeddings, so every combination of {trajectory, none} x {anchors, none}
//! is a valid input.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::motion::{AnchorSet, Trajectory, PELVIS_DIMS};
use crate::params::{init_linear, linear, normal, Parameters};
use crate::tape::{Graph, Mat, Var};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Which condition features drive the initial motion generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitCondition {
    #[default]
    Trajectory,
    Anchors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub feature_dim: usize,
    pub anchor_dim: usize,
    pub max_frames: usize,
    pub cond_dropout: f64,
    /// Per-frame pelvis displacement is multiplied by this before encoding (frames per second).
    pub velocity_scale: f64,
    #[serde(rename = "img_condition")]
    pub init_condition: InitCondition,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width: 64,
            blocks: 2,
            heads: 4,
            mlp_ratio: 2,
            feature_dim: 66,
            anchor_dim: 63,
            max_frames: 512,
            cond_dropout: 0.1,
            velocity_scale: 20.0,
            init_condition: InitCondition::Trajectory,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("blocks", self.blocks),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("feature_dim", self.feature_dim),
            ("anchor_dim", self.anchor_dim),
            ("max_frames", self.max_frames),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("network.{name} must be at least 1")));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "network.width ({}) must be divisible by network.heads ({})",
                self.width, self.heads
            )));
        }
        if self.width % 2 != 0 {
            return Err(Error::Config("network.width must be even".into()));
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            return Err(Error::Config("network.cond_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of real positions, one row per position.
pub fn sinusoidal(positions: impl IntoIterator<Item = f64>, width: usize) -> Mat {
    let positions: Vec<f64> = positions.into_iter().collect();
    let half = width / 2;
    Array2::from_shape_fn((positions.len(), width), |(i, c)| {
        let k = (c / 2) as f64;
        let freq = (-(10_000f64.ln()) * k / half as f64).exp();
        let arg = positions[i] * freq;
        if c % 2 == 0 { arg.sin() } else { arg.cos() }
    })
}

pub fn init_parameters(config: &NetworkConfig, seed: u64) -> Result<Parameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.width;
    let mut p = Parameters::new();

    init_linear(&mut p, &mut rng, "time.l1", d, d, None);
    init_linear(&mut p, &mut rng, "time.l2", d, d, None);

    init_linear(&mut p, &mut rng, "traj.l1", 2 * PELVIS_DIMS, d, None);
    init_linear(&mut p, &mut rng, "traj.l2", d, d, None);
    p.insert("traj.null", normal(&mut rng, 1, d, 0.1));

    init_linear(&mut p, &mut rng, "anchor.l1", config.anchor_dim, d, None);
    init_linear(&mut p, &mut rng, "anchor.l2", d, d, None);
    p.insert("anchor.null", normal(&mut rng, 1, d, 0.1));

    init_linear(&mut p, &mut rng, "gen.in", config.feature_dim, d, None);
    for b in 0..config.blocks {
        init_block(&mut p, &mut rng, &format!("gen.block{b}"), config);
    }

    init_linear(&mut p, &mut rng, "refine.in", 3 * d, d, None);
    for b in 0..config.blocks {
        init_block(&mut p, &mut rng, &format!("refine.block{b}"), config);
    }

    init_linear(&mut p, &mut rng, "dec", d, config.feature_dim, None);
    Ok(p)
}

fn init_block(p: &mut Parameters, rng: &mut ChaCha8Rng, name: &str, config: &NetworkConfig) {
    let d = config.width;
    init_linear(p, rng, &format!("{name}.mod"), d, 6 * d, Some(0.02));
    init_linear(p, rng, &format!("{name}.qkv"), d, 3 * d, None);
    init_linear(p, rng, &format!("{name}.proj"), d, d, None);
    init_linear(p, rng, &format!("{name}.fc1"), d, config.mlp_ratio * d, None);
    init_linear(p, rng, &format!("{name}.fc2"), config.mlp_ratio * d, d, None);
}

/// Network forward passes recorded on a caller-supplied [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    pub config: &'a NetworkConfig,
    pub params: &'a Parameters,
}

impl<'a> Network<'a> {
    pub fn new(config: &'a NetworkConfig, params: &'a Parameters) -> Self {
        Self { config, params }
    }

    fn frame_encoding(&self, frames: impl IntoIterator<Item = usize>) -> Mat {
        sinusoidal(frames.into_iter().map(|f| f as f64), self.config.width)
    }

    fn check_frames(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.config.max_frames {
            return Err(Error::Shape(format!(
                "{n} frames outside 1..={}",
                self.config.max_frames
            )));
        }
        Ok(())
    }

    /// Timestep embedding, `1 x d`.
    pub fn time_embedding(&self, g: &mut Graph, t: f64) -> Var {
        let e = g.input(sinusoidal([t], self.config.width));
        let h = linear(g, self.params, "time.l1", e);
        let h = g.silu(h);
        linear(g, self.params, "time.l2", h)
    }

    /// `E_τ`: per-frame latent of the trajectory and its frame-to-frame displacement,
    /// plus the frame encoding. `None` gives the null trajectory.
    pub fn encode_trajectory(&self, g: &mut Graph, trajectory: Option<&Trajectory>, n: usize) -> Result<Var> {
        self.check_frames(n)?;
        let pe = g.input(self.frame_encoding(0..n));
        let Some(traj) = trajectory else {
            let null = self.params.bind(g, "traj.null");
            let rows = g.broadcast_rows(null, n);
            return Ok(g.add(rows, pe));
        };
        if traj.frames() != n {
            return Err(Error::Shape(format!("trajectory has {} frames, expected {n}", traj.frames())));
        }
        let mut input = Array2::zeros((n, 2 * PELVIS_DIMS));
        for f in 0..n {
            for k in 0..PELVIS_DIMS {
                input[[f, k]] = traj.positions[[f, k]];
                if f > 0 {
                    input[[f, PELVIS_DIMS + k]] =
                        self.config.velocity_scale * (traj.positions[[f, k]] - traj.positions[[f - 1, k]]);
                }
            }
        }
        let x = g.input(input);
        let h = linear(g, self.params, "traj.l1", x);
        let h = g.silu(h);
        let h = linear(g, self.params, "traj.l2", h);
        Ok(g.add(h, pe))
    }

    /// `E_k`: dense `N x d` map with encoded poses at anchor frames and the
    /// learned null embedding elsewhere.
    pub fn encode_anchors(&self, g: &mut Graph, anchors: Option<&AnchorSet>, n: usize) -> Result<Var> {
        self.check_frames(n)?;
        let null = self.params.bind(g, "anchor.null");
        let anchors = match anchors {
            Some(a) if !a.is_empty() => a,
            _ => return Ok(g.broadcast_rows(null, n)),
        };
        anchors.check_range(n)?;
        if anchors.pose_dim() != self.config.anchor_dim {
            return Err(Error::Shape(format!(
                "anchor poses have width {}, expected {}",
                anchors.pose_dim(),
                self.config.anchor_dim
            )));
        }
        let positions = anchors.positions();
        let poses = g.input(anchors.poses().clone());
        let h = linear(g, self.params, "anchor.l1", poses);
        let h = g.silu(h);
        let h = linear(g, self.params, "anchor.l2", h);
        let pe = g.input(self.frame_encoding(positions.iter().copied()));
        let h = g.add(h, pe);
        let dense = g.scatter_rows(h, positions, n);
        let mut empty = Array2::ones((n, self.config.width));
        for &p in positions {
            empty.row_mut(p).fill(0.0);
        }
        let rows = g.broadcast_rows(null, n);
        let fill = g.mul_const(rows, empty);
        Ok(g.add(dense, fill))
    }

    fn attention(&self, g: &mut Graph, name: &str, x: Var) -> Var {
        let d = self.config.width;
        let heads = self.config.heads;
        let dh = d / heads;
        let qkv = linear(g, self.params, &format!("{name}.qkv"), x);
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let q = g.slice_cols(qkv, h * dh, dh);
                let k = g.slice_cols(qkv, d + h * dh, dh);
                let v = g.slice_cols(qkv, 2 * d + h * dh, dh);
                let scores = g.matmul_t(q, k);
                let scores = g.scale(scores, scale);
                let w = g.softmax_rows(scores);
                g.matmul(w, v)
            })
            .collect();
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        linear(g, self.params, &format!("{name}.proj"), joined)
    }

    fn modulate(&self, g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
        let n = g.layer_norm(x, LN_EPS);
        let s = g.add_scalar(scale, 1.0);
        let m = g.mul(n, s);
        g.add(m, shift)
    }

    /// One transformer block with per-frame adaptive normalisation driven by `cond`.
    fn block(&self, g: &mut Graph, name: &str, h: Var, cond: Var) -> Var {
        let d = self.config.width;
        let c = g.silu(cond);
        let m = linear(g, self.params, &format!("{name}.mod"), c);
        let part = |g: &mut Graph, i: usize| g.slice_cols(m, i * d, d);
        let (shift1, scale1, gate1) = (part(g, 0), part(g, 1), part(g, 2));
        let (shift2, scale2, gate2) = (part(g, 3), part(g, 4), part(g, 5));

        let a = self.modulate(g, h, shift1, scale1);
        let a = self.attention(g, name, a);
        let a = g.mul(gate1, a);
        let h = g.add(h, a);

        let f = self.modulate(g, h, shift2, scale2);
        let f = linear(g, self.params, &format!("{name}.fc1"), f);
        let f = g.silu(f);
        let f = linear(g, self.params, &format!("{name}.fc2"), f);
        let f = g.mul(gate2, f);
        g.add(h, f)
    }

    fn stack(&self, g: &mut Graph, prefix: &str, mut h: Var, cond: Var) -> Var {
        for b in 0..self.config.blocks {
            h = self.block(g, &format!("{prefix}.block{b}"), h, cond);
        }
        h
    }

    fn with_time(&self, g: &mut Graph, feats: Var, t_emb: Var) -> Var {
        let (n, _) = g.shape(feats);
        let t = g.broadcast_rows(t_emb, n);
        g.add(feats, t)
    }

    fn check_same(&self, g: &Graph, vars: &[(Var, &str)], shape: (usize, usize)) -> Result<()> {
        for (v, what) in vars {
            if g.shape(*v) != shape {
                return Err(Error::Shape(format!("{what} is {:?}, expected {shape:?}", g.shape(*v))));
            }
        }
        Ok(())
    }

    /// `G`: coarse motion prior from the noisy motion and one condition stream.
    pub fn initial_motion(&self, g: &mut Graph, x_t: Var, cond_feats: Var, t_emb: Var) -> Result<Var> {
        let (n, dx) = g.shape(x_t);
        if dx != self.config.feature_dim {
            return Err(Error::Shape(format!("x_t has width {dx}, expected {}", self.config.feature_dim)));
        }
        self.check_same(g, &[(cond_feats, "condition features")], (n, self.config.width))?;
        self.check_same(g, &[(t_emb, "timestep embedding")], (1, self.config.width))?;
        let h = linear(g, self.params, "gen.in", x_t);
        let h = g.add(h, cond_feats);
        let cond = self.with_time(g, cond_feats, t_emb);
        Ok(self.stack(g, "gen", h, cond))
    }

    /// `R`: refines `M_init ⊕ E_k(X_s) ⊕ E_τ(τ)`.
    pub fn refine(&self, g: &mut Graph, m_init: Var, anchor_feats: Var, traj_feats: Var, t_emb: Var) -> Result<Var> {
        let (n, _) = g.shape(m_init);
        let shape = (n, self.config.width);
        self.check_same(
            g,
            &[(m_init, "M_init"), (anchor_feats, "anchor features"), (traj_feats, "trajectory features")],
            shape,
        )?;
        self.check_same(g, &[(t_emb, "timestep embedding")], (1, self.config.width))?;
        let cat = g.concat_cols(&[m_init, anchor_feats, traj_feats]);
        let h = linear(g, self.params, "refine.in", cat);
        let both = g.add(anchor_feats, traj_feats);
        let cond = self.with_time(g, both, t_emb);
        Ok(self.stack(g, "refine", h, cond))
    }

    /// `D`: linear projection back to motion features.
    pub fn decode(&self, g: &mut Graph, refined: Var) -> Result<Var> {
        let (_, d) = g.shape(refined);
        if d != self.config.width {
            return Err(Error::Shape(format!("refined features have width {d}, expected {}", self.config.width)));
        }
        Ok(linear(g, self.params, "dec", refined))
    }

    /// Full data prediction `x̂0 = D(R(G(x_t, ·) ⊕ E_k ⊕ E_τ))`.
    pub fn predict(
        &self,
        g: &mut Graph,
        x_t: Var,
        t: f64,
        trajectory: Option<&Trajectory>,
        anchors: Option<&AnchorSet>,
    ) -> Result<Var> {
        let (n, _) = g.shape(x_t);
        let traj_feats = self.encode_trajectory(g, trajectory, n)?;
        let anchor_feats = self.encode_anchors(g, anchors, n)?;
        let t_emb = self.time_embedding(g, t);
        let init_cond = match self.config.init_condition {
            InitCondition::Trajectory => traj_feats,
            InitCondition::Anchors => anchor_feats,
        };
        let m_init = self.initial_motion(g, x_t, init_cond, t_emb)?;
        let refined = self.refine(g, m_init, anchor_feats, traj_feats, t_emb)?;
        self.decode(g, refined)
    }
}

/// Owned network for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: NetworkConfig,
    pub params: Parameters,
}

impl Denoiser {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let params = init_parameters(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn network(&self) -> Network<'_> {
        Network::new(&self.config, &self.params)
    }

    /// Evaluates `x̂0` without keeping the graph.
    pub fn predict(
        &self,
        x_t: &Mat,
        t: f64,
        trajectory: Option<&Trajectory>,
        anchors: Option<&AnchorSet>,
    ) -> Result<Mat> {
        let mut g = Graph::new();
        let x = g.input(x_t.clone());
        let out = self.network().predict(&mut g, x, t, trajectory, anchors)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny() -> NetworkConfig {
        NetworkConfig { width: 8, blocks: 1, heads: 2, feature_dim: 9, anchor_dim: 6, ..Default::default() }
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        assert!(NetworkConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(NetworkConfig { blocks: 0, ..Default::default() }.validate().is_err());
        assert!(NetworkConfig { cond_dropout: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn default_shapes() {
        let den = Denoiser::new(NetworkConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(&mut rng, 64, 66);
        let traj = Trajectory::new(rand_mat(&mut rng, 64, 3)).unwrap();
        let anchors = AnchorSet::new(vec![3, 40], rand_mat(&mut rng, 2, 63)).unwrap();
        let net = den.network();
        let mut g = Graph::new();
        let tf = net.encode_trajectory(&mut g, Some(&traj), 64).unwrap();
        assert_eq!(g.shape(tf), (64, 64));
        let out = den.predict(&x, 500.0, Some(&traj), Some(&anchors)).unwrap();
        assert_eq!(out.dim(), (64, 66));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_trajectory_with_zero_projection_is_frame_encoding() {
        let cfg = tiny();
        let mut p = init_parameters(&cfg, 3).unwrap();
        p.get_mut("traj.l2.w").unwrap().fill(0.0);
        p.get_mut("traj.l2.b").unwrap().fill(0.0);
        let net = Network::new(&cfg, &p);
        let mut g = Graph::new();
        let traj = Trajectory::new(Array2::zeros((5, 3))).unwrap();
        let out = net.encode_trajectory(&mut g, Some(&traj), 5).unwrap();
        assert_eq!(g.value(out), &sinusoidal((0..5).map(|f| f as f64), 8));
    }

    #[test]
    fn anchor_map_null_rows() {
        let cfg = tiny();
        let p = init_parameters(&cfg, 4).unwrap();
        let net = Network::new(&cfg, &p);
        let null = p.get("anchor.null").unwrap().row(0).to_owned();
        let mut g = Graph::new();
        let empty = net.encode_anchors(&mut g, Some(&AnchorSet::empty(6)), 5).unwrap();
        assert!(g.value(empty).rows().into_iter().all(|r| r == null));
        let none = net.encode_anchors(&mut g, None, 5).unwrap();
        assert_eq!(g.value(none), g.value(empty));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = AnchorSet::new((0..5).collect(), rand_mat(&mut rng, 5, 6)).unwrap();
        let dense = net.encode_anchors(&mut g, Some(&full), 5).unwrap();
        assert!(g.value(dense).rows().into_iter().all(|r| r != null));

        let bad = AnchorSet::new(vec![5], rand_mat(&mut rng, 1, 6)).unwrap();
        assert!(matches!(net.encode_anchors(&mut g, Some(&bad), 5), Err(Error::InvalidAnchorPositions(_))));
    }

    #[test]
    fn anchor_pair_order_is_irrelevant() {
        let cfg = tiny();
        let p = init_parameters(&cfg, 6).unwrap();
        let net = Network::new(&cfg, &p);
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![-1.0, 0.5, 0.0, 2.0, 1.0, -3.0];
        let x = AnchorSet::from_pairs(6, vec![(4, a.clone()), (1, b.clone())]).unwrap();
        let y = AnchorSet::from_pairs(6, vec![(1, b), (4, a)]).unwrap();
        let mut g = Graph::new();
        let ox = net.encode_anchors(&mut g, Some(&x), 6).unwrap();
        let oy = net.encode_anchors(&mut g, Some(&y), 6).unwrap();
        assert_eq!(g.value(ox), g.value(oy));
    }

    #[test]
    fn timestep_and_anchor_conditioning_are_live() {
        let cfg = tiny();
        let p = init_parameters(&cfg, 7).unwrap();
        let net = Network::new(&cfg, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        let x = g.input(rand_mat(&mut rng, 6, 9));
        let tf = net.encode_trajectory(&mut g, None, 6).unwrap();
        let t1 = net.time_embedding(&mut g, 10.0);
        let t2 = net.time_embedding(&mut g, 900.0);
        let a = net.initial_motion(&mut g, x, tf, t1).unwrap();
        let b = net.initial_motion(&mut g, x, tf, t2).unwrap();
        assert_ne!(g.value(a), g.value(b));

        let zeros = g.input(Array2::zeros((6, 8)));
        let nulls = net.encode_anchors(&mut g, None, 6).unwrap();
        let r1 = net.refine(&mut g, a, zeros, tf, t1).unwrap();
        let r2 = net.refine(&mut g, a, nulls, tf, t1).unwrap();
        assert_ne!(g.value(r1), g.value(r2));
        assert_eq!(g.shape(r1), (6, 8));
        assert!(net.refine(&mut g, a, x, tf, t1).is_err());
    }

    #[test]
    fn decode_is_linear() {
        let cfg = tiny();
        let mut p = init_parameters(&cfg, 9).unwrap();
        p.get_mut("dec.b").unwrap().fill(0.0);
        let net = Network::new(&cfg, &p);
        let mut g = Graph::new();
        let z = g.input(Array2::zeros((4, 8)));
        let out = net.decode(&mut g, z).unwrap();
        assert_eq!(g.value(out), &Array2::<f64>::zeros((4, 9)));
    }

    #[test]
    fn all_condition_combinations() {
        let cfg = tiny();
        let den = Denoiser { params: init_parameters(&cfg, 10).unwrap(), config: cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_mat(&mut rng, 7, 9);
        let traj = Trajectory::new(rand_mat(&mut rng, 7, 3)).unwrap();
        let anchors = AnchorSet::new(vec![0, 6], rand_mat(&mut rng, 2, 6)).unwrap();
        for tr in [None, Some(&traj)] {
            for an in [None, Some(&anchors)] {
                let out = den.predict(&x, 250.0, tr, an).unwrap();
                assert_eq!(out.dim(), (7, 9));
                assert!(out.iter().all(|v| v.is_finite()));
            }
        }
        let mut moved = anchors.poses().clone();
        moved[[1, 2]] += 0.1;
        let moved = AnchorSet::new(vec![0, 6], moved).unwrap();
        let a = den.predict(&x, 250.0, Some(&traj), Some(&anchors)).unwrap();
        let b = den.predict(&x, 250.0, Some(&traj), Some(&moved)).unwrap();
        assert!((&a - &b).iter().any(|v| v.abs() > 1e-9));
    }

    #[test]
    fn deterministic_initialisation() {
        let a = init_parameters(&tiny(), 42).unwrap();
        let b = init_parameters(&tiny(), 42).unwrap();
        let c = init_parameters(&tiny(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
