//! GP-UCB Bayesian optimization over a [`DomainGrid`].
//!
//! A seeded warm start observes a few distinct random grid points; after that
//! every step scans the whole grid for the maximum of `μ + √φ_t·σ`, observes
//! the objective there and updates the posterior. Objective values are
//! memoized per grid point, but a re-acquired point is still fed to the GP.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitscore::DomainGrid;
use crate::gp::{GpError, GpState, KernelSpec, Point, PosteriorCache};
use crate::solar_model::SurfaceOrientation;

pub const DEFAULT_WARM_START: usize = 10;

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("objective failed at ({azimuth_deg}, {tilt_deg}): {source}")]
    Objective {
        azimuth_deg: f64,
        tilt_deg: f64,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

/// Confidence-width schedule `2 ln(|Λ| t² π² / (6δ))`.
pub fn phi_t(t: usize, domain_size: usize, delta: f64) -> f64 {
    let t = t as f64;
    2.0 * (domain_size as f64 * t * t * PI * PI / (6.0 * delta)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionRule {
    /// Unconstrained UCB argmax; points may be re-acquired.
    #[default]
    Ucb,
    /// UCB argmax restricted to points not yet observed, while any remain.
    /// With a budget of `|Λ|` this visits the whole grid.
    UcbUnvisited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub budget: usize,
    pub warm_start_count: usize,
    pub delta: f64,
    pub grid: DomainGrid,
    pub rng_seed: u64,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub acquisition: AcquisitionRule,
}

impl BoConfig {
    pub fn new(grid: DomainGrid, budget: usize, delta: f64, rng_seed: u64) -> Self {
        Self {
            budget,
            warm_start_count: DEFAULT_WARM_START.min(budget.saturating_sub(1)).max(1),
            delta,
            grid,
            rng_seed,
            kernel: KernelSpec::default(),
            acquisition: AcquisitionRule::Ucb,
        }
    }

    pub fn validate(&self) -> Result<(), BoError> {
        let bad = |m: String| Err(BoError::Config(m));
        if self.warm_start_count < 1 {
            return bad("warm_start_count must be at least 1".into());
        }
        if self.warm_start_count >= self.budget {
            return bad(format!(
                "warm_start_count ({}) must be below the budget ({})",
                self.warm_start_count, self.budget
            ));
        }
        if self.warm_start_count > self.grid.len() {
            return bad("warm_start_count exceeds the grid size".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        self.kernel.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    WarmStart,
    Acquisition,
}

/// One observation of the loop. `prior_*` are the posterior moments at the
/// chosen point before its value was added.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    pub t: usize,
    pub phase: Phase,
    pub phi: f64,
    pub index: usize,
    pub azimuth_deg: f64,
    pub tilt_deg: f64,
    pub score: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
    /// Whether the value came from the memo table.
    pub reused: bool,
    pub regret: Option<f64>,
}

impl BoRecord {
    /// `|ℓ − μ_{t−1}| ≤ √φ_t σ_{t−1}` at the chosen point.
    pub fn within_confidence_band(&self) -> bool {
        (self.score - self.prior_mean).abs() <= self.phi.sqrt() * self.prior_sd
    }
}

#[derive(Debug, Clone)]
pub struct BoTrace {
    pub grid: DomainGrid,
    pub delta: f64,
    pub rng_seed: u64,
    pub records: Vec<BoRecord>,
    pub final_state: GpState,
    /// Posterior mean `μ_T` at every grid point.
    pub final_mean: Vec<f64>,
    /// Posterior variance `σ_T²` at every grid point.
    pub final_variance: Vec<f64>,
}

impl BoTrace {
    pub fn budget(&self) -> usize {
        self.records.len()
    }

    /// Best observed `(index, score)` after the first `t` records; the lowest
    /// grid index wins ties.
    pub fn incumbent_at(&self, t: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for r in self.records.iter().take(t) {
            best = match best {
                None => Some((r.index, r.score)),
                Some((i, s)) if r.score > s || (r.score == s && r.index < i) => {
                    Some((r.index, r.score))
                }
                b => b,
            };
        }
        best
    }

    pub fn incumbent(&self) -> (usize, f64) {
        self.incumbent_at(self.records.len())
            .expect("budget is at least 2")
    }

    /// Grid index maximizing `μ_T`.
    pub fn posterior_argmax(&self) -> usize {
        crate::fitscore::argmax(&self.final_mean)
    }

    /// Fills instantaneous regrets against a known optimum score.
    pub fn set_regret(&mut self, optimum: f64) {
        for r in &mut self.records {
            r.regret = Some(optimum - r.score);
        }
    }

    /// Number of records that landed on each grid index.
    pub fn visit_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grid.len()];
        for r in &self.records {
            counts[r.index] += 1;
        }
        counts
    }

    /// Fraction of records whose observed value fell inside the √φ_t band.
    pub fn coverage_fraction(&self) -> f64 {
        let inside = self
            .records
            .iter()
            .filter(|r| r.within_confidence_band())
            .count();
        inside as f64 / self.records.len() as f64
    }

    /// CSV of per-iteration records.
    pub fn write_records<W: Write>(
        &self,
        mut out: W,
        comment: Option<&str>,
    ) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(
            out,
            "t,phase,phi,azimuth_deg,tilt_deg,score,prior_mean,prior_sd,reused,incumbent_score,regret"
        )?;
        let mut best = f64::NEG_INFINITY;
        for r in &self.records {
            best = best.max(r.score);
            let phase = match r.phase {
                Phase::WarmStart => "warm_start",
                Phase::Acquisition => "acquisition",
            };
            let regret = r.regret.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                phase,
                r.phi,
                r.azimuth_deg,
                r.tilt_deg,
                r.score,
                r.prior_mean,
                r.prior_sd,
                r.reused,
                best,
                regret
            )?;
        }
        Ok(())
    }

    /// CSV `azimuth_deg,tilt_deg,samples` with the visit count of every cell.
    pub fn write_visit_counts<W: Write>(
        &self,
        mut out: W,
        comment: Option<&str>,
    ) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "azimuth_deg,tilt_deg,samples")?;
        for (i, n) in self.visit_counts().iter().enumerate() {
            let p = self.grid.point(i);
            writeln!(out, "{},{},{}", p.azimuth_deg, p.tilt_deg, n)?;
        }
        Ok(())
    }
}

fn as_point(p: SurfaceOrientation) -> Point {
    [p.azimuth_deg, p.tilt_deg]
}

/// Exhaustive UCB argmax over the grid using [`GpState::posterior`]; ties go
/// to the lowest (azimuth, tilt).
pub fn acquire(state: &GpState, grid: &DomainGrid, phi: f64) -> usize {
    let root = phi.sqrt();
    let ucb: Vec<f64> = grid
        .points()
        .map(|p| {
            let (m, v) = state.posterior(&as_point(p));
            m + root * v.sqrt()
        })
        .collect();
    crate::fitscore::argmax(&ucb)
}

fn acquire_cached(cache: &PosteriorCache, phi: f64, skip: Option<&[bool]>) -> usize {
    let root = phi.sqrt();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..cache.len() {
        if skip.is_some_and(|s| s[i]) {
            continue;
        }
        let u = cache.mean(i) + root * cache.variance(i).sqrt();
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((i, u));
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

/// Runs GP-UCB for `config.budget` observations. The objective receives grid
/// points and is called at most once per distinct point.
pub fn run_bo<F, E>(mut objective: F, config: &BoConfig) -> Result<BoTrace, BoError>
where
    F: FnMut(SurfaceOrientation) -> Result<f64, E>,
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    config.validate()?;
    let grid = &config.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let warm = rand::seq::index::sample(&mut rng, grid.len(), config.warm_start_count).into_vec();

    let mut state = GpState::new(config.kernel)?;
    let mut cache = PosteriorCache::new(grid.points().map(as_point).collect());
    let mut memo: HashMap<usize, f64> = HashMap::new();
    let mut visited = vec![false; grid.len()];
    let mut n_visited = 0;
    let mut records = Vec::with_capacity(config.budget);

    for t in 1..=config.budget {
        let phi = phi_t(t, grid.len(), config.delta);
        cache.sync(&state);
        let (phase, index) = if t <= warm.len() {
            (Phase::WarmStart, warm[t - 1])
        } else {
            let skip = match config.acquisition {
                AcquisitionRule::UcbUnvisited if n_visited < grid.len() => Some(visited.as_slice()),
                _ => None,
            };
            (Phase::Acquisition, acquire_cached(&cache, phi, skip))
        };
        let point = grid.point(index);
        let (score, reused) = match memo.get(&index) {
            Some(s) => (*s, true),
            None => {
                let s = objective(point).map_err(|e| BoError::Objective {
                    azimuth_deg: point.azimuth_deg,
                    tilt_deg: point.tilt_deg,
                    source: e.into(),
                })?;
                memo.insert(index, s);
                (s, false)
            }
        };
        if !visited[index] {
            visited[index] = true;
            n_visited += 1;
        }
        records.push(BoRecord {
            t,
            phase,
            phi,
            index,
            azimuth_deg: point.azimuth_deg,
            tilt_deg: point.tilt_deg,
            score,
            prior_mean: cache.mean(index),
            prior_sd: cache.variance(index).sqrt(),
            reused,
            regret: None,
        });
        state.observe(as_point(point), score)?;
    }

    cache.sync(&state);
    Ok(BoTrace {
        grid: grid.clone(),
        delta: config.delta,
        rng_seed: config.rng_seed,
        final_mean: cache.means().to_vec(),
        final_variance: cache.variances(),
        final_state: state,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn phi_values() {
        // 2·ln(32400·π²/0.6)
        let v = phi_t(1, 32400, 0.1);
        assert!((v - 26.3745).abs() < 0.01, "{v}");
        assert!((phi_t(1, 6, PI * PI / 6.0) - 2.0 * 6f64.ln()).abs() < 1e-12);
        for t in 1..100 {
            assert!(phi_t(t + 1, 100, 0.05) > phi_t(t, 100, 0.05));
        }
    }

    fn small_grid() -> DomainGrid {
        DomainGrid::regular(90.0, 30.0).unwrap()
    }

    #[test]
    fn empty_state_acquires_first_point() {
        let gp = GpState::new(KernelSpec::default()).unwrap();
        assert_eq!(acquire(&gp, &small_grid(), 10.0), 0);
    }

    #[test]
    fn exploration_beats_observed_point() {
        let grid = DomainGrid::new(vec![0.0, 180.0], vec![0.0]).unwrap();
        let gp = GpState::new(KernelSpec::default())
            .unwrap()
            .update([0.0, 0.0], 0.0)
            .unwrap();
        assert_eq!(acquire(&gp, &grid, 4.0), 1);
    }

    #[test]
    fn acquisition_matches_brute_force_ucb() {
        let grid =
            DomainGrid::new(vec![0.0, 40.0, 200.0, 320.0], vec![0.0, 15.0, 30.0, 60.0]).unwrap();
        assert_eq!(grid.len(), 16);
        let spec = KernelSpec::default();
        let obs = [
            ([40.0, 15.0], -0.2),
            ([200.0, 30.0], -0.05),
            ([320.0, 0.0], -0.6),
        ];
        let mut gp = GpState::new(spec).unwrap();
        for (p, y) in obs {
            gp.observe(p, y).unwrap();
        }
        let phi = phi_t(4, 16, 0.1);

        // independent UCB via the explicit inverse of the 3×3 covariance
        let k = |a: &Point, b: &Point| spec.eval(a, b);
        let n = obs.len();
        let mut m = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = k(&obs[i].0, &obs[j].0) + if i == j { spec.jitter } else { 0.0 };
            }
            m[i][n + i] = 1.0;
        }
        for c in 0..n {
            let p = m[c][c];
            for x in m[c].iter_mut() {
                *x /= p;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let row_c = m[c].clone();
                    for (x, y) in m[r].iter_mut().zip(row_c) {
                        *x -= f * y;
                    }
                }
            }
        }
        let inv: Vec<Vec<f64>> = m.iter().map(|r| r[n..].to_vec()).collect();
        let mut best = (f64::NEG_INFINITY, 0);
        let mut cache = PosteriorCache::new(grid.points().map(as_point).collect());
        cache.sync(&gp);
        for (idx, p) in grid.points().enumerate() {
            let q = as_point(p);
            let kq: Vec<f64> = obs.iter().map(|(o, _)| k(&q, o)).collect();
            let alpha: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| inv[i][j] * obs[j].1).sum())
                .collect();
            let mean: f64 = kq.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let quad: f64 = (0..n)
                .map(|i| (0..n).map(|j| kq[i] * inv[i][j] * kq[j]).sum::<f64>())
                .sum();
            let ucb = mean + phi.sqrt() * (1.0 - quad).max(0.0).sqrt();
            let (gm, gv) = gp.posterior(&q);
            assert!((gm - mean).abs() < 1e-9);
            assert!((gv - (1.0 - quad).max(0.0)).abs() < 1e-9);
            assert!((cache.mean(idx) - mean).abs() < 1e-9);
            if ucb > best.0 {
                best = (ucb, idx);
            }
        }
        assert_eq!(acquire(&gp, &grid, phi), best.1);
        assert_eq!(acquire_cached(&cache, phi, None), best.1);
    }

    fn bowl(p: SurfaceOrientation) -> Result<f64, Infallible> {
        let daz = (p.azimuth_deg - 200.0)
            .abs()
            .min(360.0 - (p.azimuth_deg - 200.0).abs());
        Ok(-(daz / 100.0).powi(2) - ((p.tilt_deg - 30.0) / 40.0).powi(2))
    }

    #[test]
    fn deterministic_given_seed() {
        let grid = DomainGrid::regular(20.0, 10.0).unwrap();
        let cfg = BoConfig::new(grid, 30, 0.1, 42);
        let a = run_bo(bowl, &cfg).unwrap();
        let b = run_bo(bowl, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_mean, b.final_mean);
        let c = run_bo(
            bowl,
            &BoConfig {
                rng_seed: 43,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn trace_invariants() {
        let grid = DomainGrid::regular(20.0, 10.0).unwrap();
        let cfg = BoConfig::new(grid.clone(), 40, 0.1, 7);
        let mut calls = 0;
        let mut trace = run_bo(
            |p| {
                calls += 1;
                bowl(p)
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(trace.records.len(), 40);
        let distinct = trace.visit_counts().iter().filter(|c| **c > 0).count();
        assert_eq!(calls, distinct);
        let warm: Vec<_> = trace
            .records
            .iter()
            .filter(|r| r.phase == Phase::WarmStart)
            .collect();
        assert_eq!(warm.len(), DEFAULT_WARM_START);
        let mut last = f64::NEG_INFINITY;
        for t in 1..=40 {
            let (_, s) = trace.incumbent_at(t).unwrap();
            assert!(s >= last);
            last = s;
        }
        let best = (0..grid.len())
            .map(|i| bowl(grid.point(i)).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        trace.set_regret(best);
        assert!(trace.records.iter().all(|r| r.regret.unwrap() >= 0.0));
        assert!(trace.records.iter().all(|r| r.index < grid.len()));
        let max_obs = trace
            .records
            .iter()
            .map(|r| r.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(trace.incumbent().1, max_obs);
    }

    #[test]
    fn exhaustive_coverage_matches_grid_argmax() {
        let grid = DomainGrid::regular(45.0, 30.0).unwrap();
        let mut cfg = BoConfig::new(grid.clone(), grid.len(), 0.1, 3);
        cfg.acquisition = AcquisitionRule::UcbUnvisited;
        let trace = run_bo(bowl, &cfg).unwrap();
        assert!(trace.visit_counts().iter().all(|c| *c == 1));
        let scores: Vec<f64> = grid.points().map(|p| bowl(p).unwrap()).collect();
        assert_eq!(trace.incumbent().0, crate::fitscore::argmax(&scores));
    }

    #[test]
    fn bad_configs_rejected() {
        let grid = small_grid();
        let mut cfg = BoConfig::new(grid, 10, 0.1, 1);
        cfg.warm_start_count = 10;
        assert!(matches!(run_bo(bowl, &cfg), Err(BoError::Config(_))));
        cfg.warm_start_count = 2;
        cfg.delta = 1.0;
        assert!(matches!(run_bo(bowl, &cfg), Err(BoError::Config(_))));
    }

    #[test]
    fn objective_errors_propagate() {
        let cfg = BoConfig::new(small_grid(), 5, 0.1, 1);
        let r = run_bo(|_| Err::<f64, _>(std::io::Error::other("boom")), &cfg);
        assert!(matches!(r, Err(BoError::Objective { .. })));
    }
}
