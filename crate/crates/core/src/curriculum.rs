//! Sparse-anchor curriculum: the minimum anchor count decays linearly from 20
//! to 1 across training stages, and every iteration draws its own
//! `(f_n, f_s)` pair inside the current stage's range.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::filter::FilterParams;
use crate::{Error, Result};

pub const K_MIN_FIRST: usize = 20;
pub const K_MIN_LAST: usize = 1;
pub const DEFAULT_K_MAX: usize = 30;
pub const F_S_FLOOR: usize = 4;

/// How often `(f_n, f_s)` is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    #[default]
    Iteration,
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub enabled: bool,
    pub e_total: usize,
    pub e_stage: usize,
    pub k_max: usize,
    pub redraw: Redraw,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            e_total: 100,
            e_stage: 4,
            k_max: DEFAULT_K_MAX,
            redraw: Redraw::Iteration,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e_stage == 0 || self.k_max == 0 {
            return Err(Error::Config("e_stage and k_max must be at least 1".into()));
        }
        if self.e_total < self.e_stage {
            return Err(Error::Config(format!(
                "e_total ({}) must be at least e_stage ({})",
                self.e_total, self.e_stage
            )));
        }
        Ok(())
    }

    pub fn epochs_per_stage(&self) -> usize {
        self.e_total / self.e_stage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationParams {
    pub f_n: usize,
    pub f_s: usize,
    pub stage: usize,
    /// Set when the feasible `f_s` maximum fell below the floor of 4.
    pub clamped: bool,
}

impl IterationParams {
    pub fn filter_params(&self, n: usize) -> Result<FilterParams> {
        FilterParams::new(n, self.f_n, self.f_s)
    }
}

/// `⌊20 - 19 (s - 1) / (E_stage - 1)⌋` with the endpoints pinned to 20 and 1.
pub fn k_min_for_stage(stage: usize, e_stage: usize) -> Result<usize> {
    if stage == 0 || stage > e_stage {
        return Err(Error::InvalidStage { stage, stages: e_stage });
    }
    if stage == 1 {
        return Ok(K_MIN_FIRST);
    }
    if stage == e_stage {
        return Ok(K_MIN_LAST);
    }
    let span = (K_MIN_FIRST - K_MIN_LAST) * (stage - 1);
    let denom = e_stage - 1;
    // floor(20 - a/b) == 20 - ceil(a/b)
    Ok(K_MIN_FIRST - span.div_ceil(denom))
}

/// 1-based stage of a 1-based epoch; the last stage absorbs any remainder.
pub fn stage_of_epoch(epoch: usize, config: &CurriculumConfig) -> Result<usize> {
    config.validate()?;
    if epoch == 0 || epoch > config.e_total {
        return Err(Error::InvalidEpoch { epoch, total: config.e_total });
    }
    let per = config.epochs_per_stage();
    Ok(epoch.div_ceil(per).clamp(1, config.e_stage))
}

/// Largest `f_s` keeping `f_n` anchors feasible in `n` frames, capped by `⌊n / f_n⌋`.
pub fn f_s_upper(n: usize, f_n: usize) -> usize {
    let paper_bound = n / f_n;
    if f_n <= 1 {
        return paper_bound;
    }
    paper_bound.min((n - f_n) / (f_n - 1))
}

/// Draws `f_n ~ U[k_min, min(k_max, n)]` then `f_s ~ U[4, f_s_upper]`, degrading
/// to `f_s = f_s_upper` (flagged) when that bound is below 4.
pub fn sample_with_floor<R: Rng + ?Sized>(
    k_min: usize,
    n: usize,
    k_max: usize,
    stage: usize,
    rng: &mut R,
) -> Result<IterationParams> {
    if n == 0 || k_max == 0 {
        return Err(Error::Config("n and k_max must be at least 1".into()));
    }
    let hi = k_max.min(n);
    let lo = k_min.clamp(1, hi);
    let f_n = rng.random_range(lo..=hi);
    let upper = f_s_upper(n, f_n);
    let (f_s, clamped) = if upper < F_S_FLOOR {
        (upper, true)
    } else {
        (rng.random_range(F_S_FLOOR..=upper), false)
    };
    Ok(IterationParams { f_n, f_s, stage, clamped })
}

pub fn sample_iteration_params<R: Rng + ?Sized>(
    stage: usize,
    e_stage: usize,
    n: usize,
    k_max: usize,
    rng: &mut R,
) -> Result<IterationParams> {
    let k_min = k_min_for_stage(stage, e_stage)?;
    sample_with_floor(k_min, n, k_max, stage, rng)
}

/// `f_s` for a fixed anchor count, drawn by the same rule as training.
pub fn sample_f_s<R: Rng + ?Sized>(n: usize, f_n: usize, rng: &mut R) -> (usize, bool) {
    let upper = f_s_upper(n, f_n);
    if upper < F_S_FLOOR {
        (upper, true)
    } else {
        (rng.random_range(F_S_FLOOR..=upper), false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub first_epoch: usize,
    pub last_epoch: usize,
}

pub fn schedule_table(config: &CurriculumConfig) -> Result<Vec<StageRow>> {
    config.validate()?;
    let per = config.epochs_per_stage();
    (1..=config.e_stage)
        .map(|s| {
            Ok(StageRow {
                stage: s,
                k_min: k_min_for_stage(s, config.e_stage)?,
                k_max: config.k_max,
                first_epoch: (s - 1) * per + 1,
                last_epoch: if s == config.e_stage { config.e_total } else { s * per },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::count_valid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn formula(s: usize, e: usize) -> usize {
        (20.0 - 19.0 * (s as f64 - 1.0) / (e as f64 - 1.0)).floor() as usize
    }

    #[test]
    fn k_min_values() {
        assert_eq!(k_min_for_stage(1, 4).unwrap(), 20);
        assert_eq!(k_min_for_stage(3, 4).unwrap(), 7);
        let four: Vec<_> = (1..=4).map(|s| k_min_for_stage(s, 4).unwrap()).collect();
        assert_eq!(four, vec![20, 13, 7, 1]);
        let five: Vec<_> = (1..=5).map(|s| k_min_for_stage(s, 5).unwrap()).collect();
        assert_eq!(five, vec![20, 15, 10, 5, 1]);
        assert_eq!(k_min_for_stage(1, 1).unwrap(), 20);
        assert!(matches!(k_min_for_stage(0, 4), Err(Error::InvalidStage { .. })));
        assert!(matches!(k_min_for_stage(5, 4), Err(Error::InvalidStage { .. })));
    }

    #[test]
    fn integer_form_matches_float_formula() {
        for e in 2..=40 {
            for s in 1..=e {
                assert_eq!(k_min_for_stage(s, e).unwrap(), formula(s, e), "s={s} e={e}");
            }
        }
    }

    #[test]
    fn schedule_monotone_with_pinned_endpoints() {
        for e in 2..=60 {
            let ks: Vec<_> = (1..=e).map(|s| k_min_for_stage(s, e).unwrap()).collect();
            assert_eq!(ks[0], 20);
            assert_eq!(*ks.last().unwrap(), 1);
            assert!(ks.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn stages_of_epochs() {
        let c = CurriculumConfig::default();
        assert_eq!(stage_of_epoch(1, &c).unwrap(), 1);
        assert_eq!(stage_of_epoch(25, &c).unwrap(), 1);
        assert_eq!(stage_of_epoch(26, &c).unwrap(), 2);
        assert_eq!(stage_of_epoch(100, &c).unwrap(), 4);
        assert!(stage_of_epoch(0, &c).is_err());
        assert!(stage_of_epoch(101, &c).is_err());
        let uneven = CurriculumConfig { e_total: 10, e_stage: 4, ..Default::default() };
        let stages: Vec<_> = (1..=10).map(|e| stage_of_epoch(e, &uneven).unwrap()).collect();
        assert_eq!(stages, vec![1, 1, 2, 2, 3, 3, 4, 4, 4, 4]);
        let table = schedule_table(&uneven).unwrap();
        assert_eq!(table[3].first_epoch, 7);
        assert_eq!(table[3].last_epoch, 10);
    }

    #[test]
    fn f_s_bounds() {
        assert_eq!(f_s_upper(120, 10), 12);
        assert_eq!(f_s_upper(120, 30), 3);
        assert_eq!(f_s_upper(10, 1), 10);
    }

    #[test]
    fn clamped_draw_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_with_floor(30, 120, 30, 1, &mut rng).unwrap();
        assert_eq!((p.f_n, p.f_s, p.clamped), (30, 3, true));
        assert!(count_valid(&p.filter_params(120).unwrap()) > 0);
    }

    #[test]
    fn stage_three_draws_cover_expected_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..5000 {
            let p = sample_iteration_params(3, 4, 120, 30, &mut rng).unwrap();
            assert!((7..=30).contains(&p.f_n));
            if p.f_n == 10 {
                assert!((4..=12).contains(&p.f_s));
                seen.insert(p.f_s);
            }
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), (4..=12).collect::<Vec<_>>());
    }

    #[test]
    fn single_anchor_always_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..40 {
            let p = sample_with_floor(1, n, 1, 1, &mut rng).unwrap();
            assert_eq!(p.f_n, 1);
            assert!(count_valid(&p.filter_params(n).unwrap()) > 0);
        }
    }
}
