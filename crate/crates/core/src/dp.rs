//! (ε, δ)-differentially private release of an orientation via the
//! exponential mechanism over the final GP posterior mean.
//!
//! The score is `μ_T(λ)`. With probability at least `1 − δ` its sensitivity
//! between neighboring generation profiles is at most
//! `Δ = 2(√φ̄_{T+1} + √ν)`, where `φ̄ = 2 ln(|Λ| T² π² / (2δ))` and
//! `ν = ln(6|Λ|/δ)`. Outcomes are drawn with probability proportional to
//! `exp(ε μ_T(λ) / (2Δ)) π(λ)`.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bo::{phi_t, BoTrace};
use crate::fitscore::DomainGrid;
use crate::solar_model::SurfaceOrientation;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),
    #[error("prior weights must be nonnegative and not all zero")]
    DegeneratePrior,
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("scores differ by {observed} which exceeds the sensitivity {sensitivity}")]
    SensitivityViolated { observed: f64, sensitivity: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trace has |Λ| = {trace_domain}, T = {trace_budget}; parameters expect |Λ| = {domain}, T = {budget}")]
    TraceMismatch {
        trace_domain: usize,
        trace_budget: usize,
        domain: usize,
        budget: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta: f64,
    pub domain_size: usize,
    pub budget: usize,
}

impl DpParams {
    pub fn new(
        epsilon: f64,
        delta: f64,
        domain_size: usize,
        budget: usize,
    ) -> Result<Self, DpError> {
        let p = Self {
            epsilon,
            delta,
            domain_size,
            budget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.epsilon >= 0.0) || self.epsilon.is_infinite() {
            return Err(DpError::InvalidParams(format!(
                "epsilon = {} must be finite and >= 0",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DpError::InvalidParams(format!(
                "delta = {} must lie in (0, 1)",
                self.delta
            )));
        }
        if self.domain_size < 2 {
            return Err(DpError::InvalidParams(
                "domain needs at least two points".into(),
            ));
        }
        if self.budget < 1 {
            return Err(DpError::InvalidParams("budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub phi_bar: f64,
    pub nu: f64,
    pub bound: f64,
}

/// High-probability sensitivity bound of `μ_T`. `φ̄_{T+1}` is evaluated with
/// `T²`, matching the bound's derivation from `φ_{t+1}` at `t = T`.
pub fn sensitivity_bound(params: &DpParams) -> SensitivityBound {
    let n = params.domain_size as f64;
    let t = params.budget as f64;
    let phi_bar = 2.0 * (n * t * t * PI * PI / (2.0 * params.delta)).ln();
    let nu = (6.0 * n / params.delta).ln();
    SensitivityBound {
        phi_bar,
        nu,
        bound: 2.0 * (phi_bar.sqrt() + nu.sqrt()),
    }
}

/// Which denominator scales `ε μ_T` in the release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleForm {
    /// `2Δ` with Δ from [`sensitivity_bound`].
    #[default]
    TwiceSensitivity,
    /// `2(2√φ_{T+1} + c)` with `c = √(2 ln(2|Λ|/δ))`, kept for comparison.
    PhiPlusC,
}

/// Denominator of the exponent for a release with these parameters.
pub fn mechanism_denominator(params: &DpParams, form: ScaleForm) -> f64 {
    match form {
        ScaleForm::TwiceSensitivity => 2.0 * sensitivity_bound(params).bound,
        ScaleForm::PhiPlusC => {
            let phi = phi_t(params.budget + 1, params.domain_size, params.delta);
            let c = (2.0 * (2.0 * params.domain_size as f64 / params.delta).ln()).sqrt();
            2.0 * (2.0 * phi.sqrt() + c)
        }
    }
}

/// Unnormalized log-weights `ε·score/denominator + ln π`; `-∞` off the
/// prior's support.
pub fn log_weights(
    scores: &[f64],
    epsilon: f64,
    denominator: f64,
    prior: Option<&[f64]>,
) -> Result<Vec<f64>, DpError> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(DpError::NonFiniteScore(i));
    }
    if !(denominator > 0.0) {
        return Err(DpError::InvalidParams(
            "sensitivity must be positive".into(),
        ));
    }
    if let Some(p) = prior {
        if p.len() != scores.len() {
            return Err(DpError::LengthMismatch(scores.len(), p.len()));
        }
        if p.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || p.iter().all(|w| *w == 0.0) {
            return Err(DpError::DegeneratePrior);
        }
    }
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let base = if epsilon == 0.0 {
                0.0
            } else {
                epsilon * s / denominator
            };
            match prior {
                Some(p) if p[i] == 0.0 => f64::NEG_INFINITY,
                Some(p) => base + p[i].ln(),
                None => base,
            }
        })
        .collect())
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized probabilities from log-weights, stabilized by the maximum.
pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Inverse-CDF sampler over a fixed discrete distribution.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl CategoricalSampler {
    pub fn new(probabilities: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf: Vec<f64> = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = probabilities.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        Self { cdf, last_positive }
    }

    pub fn from_log_weights(log_w: &[f64]) -> Self {
        Self::new(&softmax(log_w))
    }

    /// Maps one uniform draw in [0, 1) to an outcome.
    pub fn index_for(&self, u: f64) -> usize {
        let target = u * self.cdf[self.cdf.len() - 1];
        self.cdf
            .partition_point(|c| *c <= target)
            .min(self.last_positive)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index_for(rng.random::<f64>())
    }
}

/// Draws one index with probability ∝ `exp(ε·score/(2Δ))·π`. The prior
/// defaults to uniform.
pub fn exponential_mechanism(
    scores: &[f64],
    epsilon: f64,
    sensitivity: f64,
    prior: Option<&[f64]>,
    seed: u64,
) -> Result<usize, DpError> {
    let lw = log_weights(scores, epsilon, 2.0 * sensitivity, prior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(CategoricalSampler::from_log_weights(&lw).sample(&mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRelease {
    pub index: usize,
    pub point: SurfaceOrientation,
    pub params: DpParams,
    pub bound: SensitivityBound,
    pub form: ScaleForm,
    pub denominator: f64,
    pub log_weights: Vec<f64>,
    pub rng_seed: u64,
}

impl DpRelease {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.log_weights)
    }
}

/// Final posterior mean over a grid, as produced by a BO run of `budget`
/// observations. This is all the release needs from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSurface {
    pub grid: DomainGrid,
    pub budget: usize,
    pub mean: Vec<f64>,
}

impl MeanSurface {
    pub fn new(grid: DomainGrid, budget: usize, mean: Vec<f64>) -> Result<Self, DpError> {
        if mean.len() != grid.len() {
            return Err(DpError::LengthMismatch(grid.len(), mean.len()));
        }
        Ok(Self { grid, budget, mean })
    }

    pub fn from_trace(trace: &BoTrace) -> Self {
        Self {
            grid: trace.grid.clone(),
            budget: trace.budget(),
            mean: trace.final_mean.clone(),
        }
    }

    fn check(&self, params: &DpParams) -> Result<(), DpError> {
        params.validate()?;
        if self.grid.len() != params.domain_size || self.budget != params.budget {
            return Err(DpError::TraceMismatch {
                trace_domain: self.grid.len(),
                trace_budget: self.budget,
                domain: params.domain_size,
                budget: params.budget,
            });
        }
        Ok(())
    }

    /// Log-weights of the release distribution over the grid.
    pub fn log_weights(&self, params: &DpParams, form: ScaleForm) -> Result<Vec<f64>, DpError> {
        self.check(params)?;
        log_weights(
            &self.mean,
            params.epsilon,
            mechanism_denominator(params, form),
            None,
        )
    }

    pub fn release(
        &self,
        params: &DpParams,
        seed: u64,
        form: ScaleForm,
    ) -> Result<DpRelease, DpError> {
        let lw = self.log_weights(params, form)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let index = CategoricalSampler::from_log_weights(&lw).sample(&mut rng);
        Ok(DpRelease {
            index,
            point: self.grid.point(index),
            params: *params,
            bound: sensitivity_bound(params),
            form,
            denominator: mechanism_denominator(params, form),
            log_weights: lw,
            rng_seed: seed,
        })
    }

    /// `n` independent releases from one seeded stream.
    pub fn samples(
        &self,
        params: &DpParams,
        form: ScaleForm,
        n: usize,
        seed: u64,
    ) -> Result<Vec<usize>, DpError> {
        let lw = self.log_weights(params, form)?;
        let sampler = CategoricalSampler::from_log_weights(&lw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
    }
}

pub fn release_log_weights(
    trace: &BoTrace,
    params: &DpParams,
    form: ScaleForm,
) -> Result<Vec<f64>, DpError> {
    MeanSurface::from_trace(trace).log_weights(params, form)
}

pub fn dp_release(
    trace: &BoTrace,
    params: &DpParams,
    seed: u64,
    form: ScaleForm,
) -> Result<DpRelease, DpError> {
    MeanSurface::from_trace(trace).release(params, seed, form)
}

pub fn release_samples(
    trace: &BoTrace,
    params: &DpParams,
    form: ScaleForm,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>, DpError> {
    MeanSurface::from_trace(trace).samples(params, form, n, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// Compares the exact output distributions of the mechanism on two score
/// vectors whose sup-difference is at most `sensitivity`.
pub fn dp_ratio_audit(
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    sensitivity: f64,
) -> Result<AuditReport, DpError> {
    dp_ratio_audit_with_denominator(a, b, epsilon, sensitivity, 2.0 * sensitivity)
}

/// As [`dp_ratio_audit`] but with an arbitrary exponent denominator.
pub fn dp_ratio_audit_with_denominator(
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    sensitivity: f64,
    denominator: f64,
) -> Result<AuditReport, DpError> {
    if a.len() != b.len() {
        return Err(DpError::LengthMismatch(a.len(), b.len()));
    }
    let observed = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if observed > sensitivity {
        return Err(DpError::SensitivityViolated {
            observed,
            sensitivity,
        });
    }
    let la = log_weights(a, epsilon, denominator, None)?;
    let lb = log_weights(b, epsilon, denominator, None)?;
    let (za, zb) = (log_sum_exp(&la), log_sum_exp(&lb));
    let max_log_ratio = la
        .iter()
        .zip(&lb)
        .map(|(x, y)| ((x - za) - (y - zb)).abs())
        .fold(0.0, f64::max);
    let max_ratio = max_log_ratio.exp();
    let bound = epsilon.exp();
    Ok(AuditReport {
        max_ratio,
        bound,
        within_bound: max_ratio <= bound * (1.0 + 1e-12),
    })
}

/// CSV `azimuth_deg,tilt_deg,log_weight`.
pub fn write_log_weights<W: Write>(
    mut out: W,
    grid: &DomainGrid,
    log_w: &[f64],
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "azimuth_deg,tilt_deg,log_weight")?;
    for (i, w) in log_w.iter().enumerate() {
        let p = grid.point(i);
        writeln!(out, "{},{},{}", p.azimuth_deg, p.tilt_deg, w)?;
    }
    Ok(())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Empirical distribution of sampled indices.
pub fn histogram(samples: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    for s in samples {
        h[*s] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

// ---------------------------------------------------------------------------
// Utility of releases

pub const AZIMUTH_WIDTH: f64 = 360.0;
pub const TILT_WIDTH: f64 = 90.0;

/// Signed smallest difference `a − b` on the circle, in (−180, 180].
pub fn circular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Circular mean of angles in degrees, in [0, 360). Returns 0 for a zero
/// resultant.
pub fn circular_mean_deg(angles: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for a in angles {
        let r = a.to_radians();
        s += r.sin();
        c += r.cos();
    }
    if s == 0.0 && c == 0.0 {
        return 0.0;
    }
    let m = s.atan2(c).to_degrees().rem_euclid(360.0);
    if m >= 360.0 {
        0.0
    } else {
        m
    }
}

/// Mean release: circular mean azimuth, arithmetic mean tilt.
pub fn mean_release(points: &[SurfaceOrientation]) -> SurfaceOrientation {
    let tilt = points.iter().map(|p| p.tilt_deg).sum::<f64>() / points.len() as f64;
    SurfaceOrientation::new(
        circular_mean_deg(points.iter().map(|p| p.azimuth_deg)),
        tilt,
    )
}

/// Mean of the release distribution itself: probability-weighted circular
/// mean azimuth and arithmetic mean tilt.
pub fn expected_release(grid: &DomainGrid, probabilities: &[f64]) -> SurfaceOrientation {
    let (mut s, mut c, mut tilt) = (0.0, 0.0, 0.0);
    for (i, p) in probabilities.iter().enumerate() {
        let g = grid.point(i);
        let r = g.azimuth_deg.to_radians();
        s += p * r.sin();
        c += p * r.cos();
        tilt += p * g.tilt_deg;
    }
    let az = if s == 0.0 && c == 0.0 {
        0.0
    } else {
        s.atan2(c).to_degrees().rem_euclid(360.0)
    };
    SurfaceOrientation::new(if az >= 360.0 { 0.0 } else { az }, tilt)
}

/// Root mean square of the per-coordinate errors, each normalized by its
/// domain width (360° azimuth on the circle, 90° tilt).
pub fn normalized_rmse(estimate: SurfaceOrientation, reference: SurfaceOrientation) -> f64 {
    let ea = circular_difference(estimate.azimuth_deg, reference.azimuth_deg) / AZIMUTH_WIDTH;
    let et = (estimate.tilt_deg - reference.tilt_deg) / TILT_WIDTH;
    ((ea * ea + et * et) / 2.0).sqrt()
}

/// Normalized RMSE of the mean release, with a standard error: the RMS of
/// the per-coordinate standard errors of the mean release, which bounds the
/// error of the RMSE itself. The azimuth term is the delta-method error of a
/// circular mean, `√((1 − mean cos 2(θ − θ̄)) / (2 n R̄²))`, which grows as the
/// mean resultant length `R̄` shrinks.
pub fn mean_release_error(
    points: &[SurfaceOrientation],
    reference: SurfaceOrientation,
) -> (f64, f64) {
    let mean = mean_release(points);
    let n = points.len() as f64;
    let (mut s, mut c, mut c2) = (0.0, 0.0, 0.0);
    for p in points {
        let r = p.azimuth_deg.to_radians();
        s += r.sin();
        c += r.cos();
        c2 += (2.0 * (p.azimuth_deg - mean.azimuth_deg).to_radians()).cos();
    }
    let r_bar = (s * s + c * c).sqrt() / n;
    let half_circle = 0.5;
    let se_az = if r_bar > 0.0 {
        let rad = ((1.0 - c2 / n).max(0.0) / (2.0 * n * r_bar * r_bar)).sqrt();
        (rad.to_degrees() / AZIMUTH_WIDTH).min(half_circle)
    } else {
        half_circle
    };
    let tm = points.iter().map(|p| p.tilt_deg).sum::<f64>() / n;
    let tv = points
        .iter()
        .map(|p| (p.tilt_deg - tm).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    let se_tilt = (tv / n).sqrt() / TILT_WIDTH;
    let se = ((se_az * se_az + se_tilt * se_tilt) / 2.0).sqrt();
    (normalized_rmse(mean, reference), se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn sensitivity_reference_values() {
        let p = DpParams::new(0.1, 0.1, 32400, 100).unwrap();
        let b = sensitivity_bound(&p);
        let phi_bar = 2.0 * (32400.0 * 100.0f64.powi(2) * PI * PI / 0.2).ln();
        let nu = (6.0 * 32400.0 / 0.1f64).ln();
        assert!((b.phi_bar - phi_bar).abs() < 1e-12);
        assert!((b.nu - nu).abs() < 1e-12);
        assert!((b.bound - 2.0 * (phi_bar.sqrt() + nu.sqrt())).abs() < 1e-12);
        // frozen from an independent evaluation (python math.log)
        assert!((b.phi_bar - 46.99030).abs() < 1e-4, "{}", b.phi_bar);
        assert!((b.nu - 14.48026).abs() < 1e-4, "{}", b.nu);
        assert!((b.bound - 21.32048).abs() < 1e-4, "{}", b.bound);
    }

    #[test]
    fn sensitivity_monotonicity() {
        let b = |n, t, d| sensitivity_bound(&DpParams::new(1.0, d, n, t).unwrap()).bound;
        assert!(b(1000, 50, 0.01) > b(1000, 50, 0.1));
        assert!(b(1000, 50, 0.1) > b(1000, 50, 0.5));
        assert!(b(2000, 50, 0.1) > b(1000, 50, 0.1));
        assert!(b(1000, 60, 0.1) > b(1000, 50, 0.1));
    }

    #[test]
    fn epsilon_zero_is_uniform() {
        let lw = log_weights(&[-3.0, 0.0, -1.0, -7.0], 0.0, 1.0, None).unwrap();
        assert!(softmax(&lw).iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_point_worked_example() {
        // ε = 2, Δ = 1 ⇒ exponent = score
        let lw = log_weights(&[0.0, -1.0], 2.0, 2.0, None).unwrap();
        let p = softmax(&lw);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!((p[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn dominant_score_always_drawn() {
        let mut scores = vec![0.0; 20];
        scores[13] = 1000.0;
        let lw = log_weights(&scores, 1.0, 2.0, None).unwrap();
        let s = CategoricalSampler::from_log_weights(&lw);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| s.sample(&mut rng) == 13));
    }

    #[test]
    fn prior_support_respected() {
        let prior = [0.0, 1.0, 0.0, 1.0];
        for seed in 0..200 {
            let i =
                exponential_mechanism(&[5.0, 0.0, 5.0, 0.0], 1.0, 1.0, Some(&prior), seed).unwrap();
            assert!(i == 1 || i == 3);
        }
        assert_eq!(
            exponential_mechanism(&[0.0, 1.0], 1.0, 1.0, Some(&[0.0, 0.0]), 0),
            Err(DpError::DegeneratePrior)
        );
        assert_eq!(
            exponential_mechanism(&[0.0, f64::NAN], 1.0, 1.0, None, 0),
            Err(DpError::NonFiniteScore(1))
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let scores: Vec<f64> = (0..50).map(|i| -(i as f64) * 0.1).collect();
        let a = exponential_mechanism(&scores, 1.0, 1.0, None, 77).unwrap();
        let b = exponential_mechanism(&scores, 1.0, 1.0, None, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_edges() {
        let s = CategoricalSampler::new(&[0.0, 0.5, 0.0, 0.5, 0.0]);
        assert_eq!(s.index_for(0.0), 1);
        assert_eq!(s.index_for(0.4999), 1);
        assert_eq!(s.index_for(0.5), 3);
        assert_eq!(s.index_for(0.999_999_999), 3);
    }

    #[test]
    fn audit_identical_and_shifted() {
        let a = [-0.3, -1.0, 0.0, -2.0];
        let r = dp_ratio_audit(&a, &a, 1.0, 0.5).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.4).collect();
        let r = dp_ratio_audit(&a, &shifted, 1.0, 0.5).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-12);
        assert!(matches!(
            dp_ratio_audit(&a, &shifted, 1.0, 0.3),
            Err(DpError::SensitivityViolated { .. })
        ));
    }

    #[test]
    fn audit_adversarial_pair() {
        let delta = 0.7;
        let a = [0.0, 0.0, -1.0, -0.5, 0.2];
        let mut b = a;
        b[0] += delta;
        b[1] -= delta;
        let r = dp_ratio_audit(&a, &b, 1.0, delta).unwrap();
        assert!(r.within_bound);
        assert!(r.max_ratio <= std::f64::consts::E * (1.0 + 1e-12));
        // analytic: the ratio at outcome 1 is e^{ε/2}·(Z_b/Z_a)
        let za: f64 = a.iter().map(|s| (s / (2.0 * delta)).exp()).sum();
        let zb: f64 = b.iter().map(|s| (s / (2.0 * delta)).exp()).sum();
        let pa1 = (a[1] / (2.0 * delta)).exp() / za;
        let pb1 = (b[1] / (2.0 * delta)).exp() / zb;
        assert!(r.max_ratio >= pa1 / pb1 - 1e-12);
        // halving the denominator breaks the guarantee
        let loose = dp_ratio_audit_with_denominator(&a, &b, 1.0, delta, delta).unwrap();
        assert!(!loose.within_bound, "{loose:?}");
    }

    #[test]
    fn circular_helpers() {
        assert_eq!(circular_difference(350.0, 10.0), -20.0);
        assert_eq!(circular_difference(10.0, 350.0), 20.0);
        assert!(
            (circular_mean_deg([350.0, 10.0]) - 0.0).abs() < 1e-9
                || (circular_mean_deg([350.0, 10.0]) - 360.0).abs() < 1e-9
        );
        assert!((circular_mean_deg([260.0, 280.0]) - 270.0).abs() < 1e-9);
        let p = SurfaceOrientation::new(270.0, 18.0);
        assert_eq!(normalized_rmse(p, p), 0.0);
        let q = SurfaceOrientation::new(90.0, 18.0);
        assert!((normalized_rmse(q, p) - (0.25f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    fn surface(mean: Vec<f64>) -> MeanSurface {
        let grid = DomainGrid::regular(90.0, 45.0).unwrap();
        MeanSurface::new(grid, 20, mean).unwrap()
    }

    #[test]
    fn constant_mean_releases_uniformly() {
        let s = surface(vec![-0.4; 12]);
        let p = DpParams::new(1.0, 0.1, 12, 20).unwrap();
        let probs = softmax(&s.log_weights(&p, ScaleForm::TwiceSensitivity).unwrap());
        assert!(probs.iter().all(|q| (q - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn huge_epsilon_releases_argmax() {
        let mean: Vec<f64> = (0..12)
            .map(|i| -((i as f64) - 7.0).powi(2) * 0.01)
            .collect();
        let s = surface(mean);
        let p = DpParams::new(1e6, 0.1, 12, 20).unwrap();
        let draws = s
            .samples(&p, ScaleForm::TwiceSensitivity, 10_000, 3)
            .unwrap();
        assert!(draws.iter().all(|i| *i == 7));
        let r = s.release(&p, 3, ScaleForm::TwiceSensitivity).unwrap();
        assert_eq!(r.index, 7);
        assert_eq!(r.point, s.grid.point(7));
        assert!(r.log_weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn release_rejects_mismatched_run() {
        let s = surface(vec![0.0; 12]);
        let p = DpParams::new(1.0, 0.1, 12, 21).unwrap();
        assert!(matches!(
            s.release(&p, 0, ScaleForm::TwiceSensitivity),
            Err(DpError::TraceMismatch { .. })
        ));
        assert!(
            MeanSurface::new(DomainGrid::regular(90.0, 45.0).unwrap(), 20, vec![0.0; 3]).is_err()
        );
    }

    #[test]
    fn literal_form_denominator() {
        let p = DpParams::new(1.0, 0.1, 2232, 100).unwrap();
        let phi = 2.0 * (2232.0 * 101.0f64.powi(2) * PI * PI / 0.6).ln();
        let c = (2.0 * (2.0 * 2232.0 / 0.1f64).ln()).sqrt();
        let d = mechanism_denominator(&p, ScaleForm::PhiPlusC);
        assert!((d - 2.0 * (2.0 * phi.sqrt() + c)).abs() < 1e-12);
        assert!(
            (mechanism_denominator(&p, ScaleForm::TwiceSensitivity)
                - 2.0 * sensitivity_bound(&p).bound)
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn expected_release_of_point_mass() {
        let grid = DomainGrid::regular(90.0, 45.0).unwrap();
        let mut p = vec![0.0; grid.len()];
        p[7] = 1.0;
        assert_eq!(expected_release(&grid, &p), grid.point(7));
        // two opposite azimuths at equal weight cancel; tilt still averages
        let mut q = vec![0.0; grid.len()];
        q[grid.index_of(SurfaceOrientation::new(90.0, 0.0)).unwrap()] = 0.5;
        q[grid.index_of(SurfaceOrientation::new(270.0, 90.0)).unwrap()] = 0.5;
        assert!((expected_release(&grid, &q).tilt_deg - 45.0).abs() < 1e-12);
    }

    #[test]
    fn release_error_standard_error_tracks_spread() {
        let r = SurfaceOrientation::new(270.0, 18.0);
        let tight: Vec<_> = (0..1000)
            .map(|i| SurfaceOrientation::new(265.0 + (i % 11) as f64, 18.0))
            .collect();
        let (e, se) = mean_release_error(&tight, r);
        assert!(e < 1e-3 && se < 1e-3, "{e} {se}");
        // 36 equally spaced azimuths: the mean direction is undetermined
        let ring: Vec<_> = (0..3600)
            .map(|i| SurfaceOrientation::new((i % 36) as f64 * 10.0, 18.0))
            .collect();
        let (_, se) = mean_release_error(&ring, r);
        assert!(se > 0.3, "{se}");
        // Monte Carlo check of the azimuth term on a von Mises-like spread
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<SurfaceOrientation> {
            (0..400)
                .map(|_| {
                    SurfaceOrientation::new(
                        (270.0 + rng.random_range(-120.0..120.0f64)).rem_euclid(360.0),
                        18.0,
                    )
                })
                .collect()
        };
        let errs: Vec<f64> = (0..400)
            .map(|_| {
                circular_difference(mean_release(&draw(&mut rng)).azimuth_deg, 270.0)
                    / AZIMUTH_WIDTH
            })
            .collect();
        let mc = (errs.iter().map(|x| x * x).sum::<f64>() / errs.len() as f64).sqrt();
        let (_, se) = mean_release_error(&draw(&mut rng), r);
        // tilt is constant, so se = se_az / √2
        let se_az = se * 2f64.sqrt();
        assert!((se_az / mc - 1.0).abs() < 0.15, "{se_az} vs {mc}");
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(scores in proptest::collection::vec(-50.0..50.0f64, 2..200),
                                    eps in 0.0..20.0f64, sens in 0.01..10.0f64) {
            let p = softmax(&log_weights(&scores, eps, 2.0 * sens, None).unwrap());
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn shift_invariance(scores in proptest::collection::vec(-5.0..5.0f64, 2..50), c in -100.0..100.0f64, eps in 0.0..5.0f64) {
            let p = softmax(&log_weights(&scores, eps, 2.0, None).unwrap());
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let q = softmax(&log_weights(&shifted, eps, 2.0, None).unwrap());
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn ratio_bounded_for_any_neighbors(a in proptest::collection::vec(-3.0..3.0f64, 2..40),
                                            seed in 0u64..1000, eps in 0.01..10.0f64, sens in 0.01..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|x| x + sens * rng.random_range(-1.0..=1.0)).collect();
            let r = dp_ratio_audit(&a, &b, eps, sens).unwrap();
            prop_assert!(r.within_bound, "{:?}", r);
        }

        #[test]
        fn larger_delta_concentrates_release(n in 2usize..5000, t in 1usize..300) {
            let small = sensitivity_bound(&DpParams::new(1.0, 0.01, n, t).unwrap()).bound;
            let large = sensitivity_bound(&DpParams::new(1.0, 0.1, n, t).unwrap()).bound;
            prop_assert!(large < small);
        }
    }
}
