//! Uniform anchor placement under a minimum-gap constraint.
//!
//! Choosing `f_n` frames out of `N` with consecutive gaps of at least `f_s + 1`
//! is in bijection with choosing `f_n` "virtual" points out of
//! `T_total = R + f_n`, where `R = N - (f_n + (f_n - 1) f_s)` is the slack left
//! after the rigid spacing. Drawing the virtual points as a uniform combination
//! therefore draws a uniform valid placement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Sequence length `N`.
    pub n: usize,
    /// Temporal density: number of anchors.
    pub f_n: usize,
    /// Interval elasticity: minimum interval between anchors.
    pub f_s: usize,
}

impl FilterParams {
    pub fn new(n: usize, f_n: usize, f_s: usize) -> Result<Self> {
        if n == 0 || f_n == 0 {
            return Err(Error::Config(format!(
                "filter parameters need n >= 1 and f_n >= 1 (n={n}, f_n={f_n})"
            )));
        }
        Ok(Self { n, f_n, f_s })
    }

    /// Extra frames beyond the rigid minimum; negative when infeasible.
    pub fn slack(&self) -> i64 {
        self.n as i64 - (self.f_n as i64 + (self.f_n as i64 - 1) * self.f_s as i64)
    }

    pub fn is_feasible(&self) -> bool {
        self.slack() >= 0
    }

    /// Number of virtual sampling points, `R + f_n`.
    pub fn virtual_total(&self) -> Option<usize> {
        let r = self.slack();
        (r >= 0).then(|| r as usize + self.f_n)
    }
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc = C(n, i), so (i + 1) divides acc * (n - i); after removing the
        // common factor with acc the remainder divides (n - i).
        let g = gcd(acc, (i + 1) as u128);
        let d = (i + 1) as u128 / g;
        match (acc / g).checked_mul((n - i) as u128 / d) {
            Some(v) => acc = v,
            None => return u128::MAX,
        }
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Number of placements satisfying the constraint (0 when infeasible).
pub fn count_valid(params: &FilterParams) -> u128 {
    params
        .virtual_total()
        .map_or(0, |total| binomial(total, params.f_n))
}

/// Strictly increasing virtual points `1 <= p_1 < ... < p_{f_n} <= T_total`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualSelection {
    points: Vec<usize>,
    total: usize,
}

impl VirtualSelection {
    pub fn new(points: Vec<usize>, total: usize) -> Result<Self> {
        let increasing = points.windows(2).all(|w| w[0] < w[1]);
        let in_range = points.first().is_none_or(|&p| p >= 1) && points.last().is_none_or(|&p| p <= total);
        if points.is_empty() || !increasing || !in_range {
            return Err(Error::InvalidAnchorPositions(format!(
                "virtual points {points:?} are not an increasing subset of 1..={total}"
            )));
        }
        Ok(Self { points, total })
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Elastic increments `δ_0 = p_1 - 1`, `δ_i = p_{i+1} - p_i - 1` for `1 <= i < f_n`.
    /// The trailing slack `T_total - p_{f_n}` does not affect positions and is omitted.
    pub fn increments(&self) -> Vec<usize> {
        std::iter::once(self.points[0] - 1)
            .chain(self.points.windows(2).map(|w| w[1] - w[0] - 1))
            .collect()
    }

    pub fn trailing_slack(&self) -> usize {
        self.total - self.points[self.points.len() - 1]
    }
}

/// Maps virtual points to 0-based frame indices: `x_j = (p_j - 1) + (j - 1) f_s`.
///
/// This is the closed form `x_j = j + (j - 1) f_s + Σ_{i<j} δ_i` (1-based) with
/// the prefix sum of increments collapsed to `p_j - j`.
pub fn map_virtual(selection: &VirtualSelection, f_s: usize) -> Vec<usize> {
    selection
        .points
        .iter()
        .enumerate()
        .map(|(j, &p)| (p - 1) + j * f_s)
        .collect()
}

/// Same mapping evaluated through the increment recurrence
/// `x_1 = δ_0`, `x_j = x_{j-1} + f_s + δ_{j-1} + 1`.
pub fn map_virtual_recurrence(selection: &VirtualSelection, f_s: usize) -> Vec<usize> {
    let deltas = selection.increments();
    let mut out = Vec::with_capacity(deltas.len());
    let mut x = deltas[0];
    out.push(x);
    for &d in &deltas[1..] {
        x += f_s + d + 1;
        out.push(x);
    }
    out
}

/// Uniform `f_n`-combination of `1..=T_total` by partial Fisher–Yates.
pub fn sample_virtual<R: Rng + ?Sized>(params: &FilterParams, rng: &mut R) -> Result<VirtualSelection> {
    let total = params.virtual_total().ok_or(Error::Infeasible {
        n: params.n,
        f_n: params.f_n,
        f_s: params.f_s,
    })?;
    let mut pool: Vec<usize> = (1..=total).collect();
    for i in 0..params.f_n {
        let j = rng.random_range(i..total);
        pool.swap(i, j);
    }
    let mut points = pool[..params.f_n].to_vec();
    points.sort_unstable();
    VirtualSelection::new(points, total)
}

/// Draws a uniformly random valid anchor placement (0-based, sorted).
pub fn sample_anchors<R: Rng + ?Sized>(params: &FilterParams, rng: &mut R) -> Result<Vec<usize>> {
    let selection = sample_virtual(params, rng)?;
    let positions = map_virtual(&selection, params.f_s);
    debug_assert!(satisfies_gap(&positions, params));
    Ok(positions)
}

/// True when positions are increasing, in range and at least `f_s + 1` apart.
pub fn satisfies_gap(positions: &[usize], params: &FilterParams) -> bool {
    positions.len() == params.f_n
        && positions.last().is_some_and(|&p| p < params.n)
        && positions.windows(2).all(|w| w[1] >= w[0] + params.f_s + 1)
}
