//! Fit-score objective over the discretized orientation domain and the
//! exhaustive grid-search oracle.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::IrradianceRecord;
use crate::preprocess::{normalize_day, DayGroup, NormalizedDay};
use crate::solar_model::{Attenuation, SurfaceOrientation};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("length mismatch: prototype has {prototype} samples, candidate {candidate}")]
    LengthMismatch { prototype: usize, candidate: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("group {0} has no prototype selected")]
    MissingPrototype(String),
}

/// Cross product of azimuth and tilt values. Points are indexed
/// azimuth-major, so index order is lexicographic (azimuth, tilt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    azimuth_values: Vec<f64>,
    tilt_values: Vec<f64>,
}

impl DomainGrid {
    pub fn new(azimuth_values: Vec<f64>, tilt_values: Vec<f64>) -> Result<Self, FitError> {
        let bad = |m: &str| Err(FitError::InvalidGrid(m.to_string()));
        if azimuth_values.is_empty() || tilt_values.is_empty() {
            return bad("empty axis");
        }
        if !azimuth_values.windows(2).all(|w| w[0] < w[1])
            || !tilt_values.windows(2).all(|w| w[0] < w[1])
        {
            return bad("axis values must be strictly ascending");
        }
        if !azimuth_values.iter().all(|a| (0.0..360.0).contains(a)) {
            return bad("azimuth values must lie in [0, 360)");
        }
        if !tilt_values.iter().all(|t| (0.0..=90.0).contains(t)) {
            return bad("tilt values must lie in [0, 90]");
        }
        if azimuth_values.len() * tilt_values.len() < 2 {
            return bad("grid needs at least two points");
        }
        Ok(Self {
            azimuth_values,
            tilt_values,
        })
    }

    /// Azimuths `0, step, …` below 360 and tilts `0, step, …` up to 90.
    pub fn regular(azimuth_step: f64, tilt_step: f64) -> Result<Self, FitError> {
        if !(azimuth_step > 0.0) || !(tilt_step > 0.0) {
            return Err(FitError::InvalidGrid("steps must be positive".into()));
        }
        let az: Vec<f64> = (0..)
            .map(|i| i as f64 * azimuth_step)
            .take_while(|a| *a < 360.0 - 1e-9)
            .collect();
        let tilt: Vec<f64> = (0..)
            .map(|i| i as f64 * tilt_step)
            .take_while(|t| *t <= 90.0 + 1e-9)
            .map(|t: f64| t.min(90.0))
            .collect();
        Self::new(az, tilt)
    }

    pub fn azimuth_values(&self) -> &[f64] {
        &self.azimuth_values
    }

    pub fn tilt_values(&self) -> &[f64] {
        &self.tilt_values
    }

    pub fn len(&self) -> usize {
        self.azimuth_values.len() * self.tilt_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> SurfaceOrientation {
        let nt = self.tilt_values.len();
        SurfaceOrientation::new(
            self.azimuth_values[index / nt],
            self.tilt_values[index % nt],
        )
    }

    pub fn points(&self) -> impl Iterator<Item = SurfaceOrientation> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Index of an exact grid point.
    pub fn index_of(&self, p: SurfaceOrientation) -> Option<usize> {
        let a = self
            .azimuth_values
            .iter()
            .position(|v| *v == p.azimuth_deg)?;
        let t = self.tilt_values.iter().position(|v| *v == p.tilt_deg)?;
        Some(a * self.tilt_values.len() + t)
    }

    /// Index of the grid point nearest to `p` (circular in azimuth).
    pub fn nearest(&self, p: SurfaceOrientation) -> usize {
        let closest = |vals: &[f64], x: f64, circular: bool| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, v) in vals.iter().enumerate() {
                let mut d = (v - x).abs();
                if circular {
                    d = d.min(360.0 - d);
                }
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        };
        closest(&self.azimuth_values, p.azimuth_deg, true) * self.tilt_values.len()
            + closest(&self.tilt_values, p.tilt_deg, false)
    }
}

/// Transposition settings used when turning irradiance into candidate profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub albedo: f64,
    pub attenuation: Attenuation,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            albedo: 0.2,
            attenuation: Attenuation::Step,
        }
    }
}

/// Normalized plane-of-array irradiance a panel with orientation `lambda`
/// would have received over the given day.
pub fn candidate_profile(
    lambda: SurfaceOrientation,
    day_irradiance: &[IrradianceRecord],
    options: &ModelOptions,
) -> NormalizedDay {
    let poa: Vec<f64> = day_irradiance
        .iter()
        .map(|r| r.poa(lambda, options.albedo, options.attenuation))
        .collect();
    normalize_day(&poa)
}

/// Negative mean squared distance between a prototype and a candidate.
pub fn group_score(prototype: &[f64], candidate: &[f64]) -> Result<f64, FitError> {
    if prototype.len() != candidate.len() {
        return Err(FitError::LengthMismatch {
            prototype: prototype.len(),
            candidate: candidate.len(),
        });
    }
    let sq: f64 = prototype
        .iter()
        .zip(candidate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.0 - sq / prototype.len() as f64)
}

/// The objective: prototypes of every group plus the aligned irradiance.
#[derive(Debug, Clone, PartialEq)]
pub struct FitObjective {
    groups: Vec<PreparedGroup>,
    options: ModelOptions,
}

#[derive(Debug, Clone, PartialEq)]
struct PreparedGroup {
    group_id: String,
    prototype: Vec<f64>,
    irradiance: Vec<IrradianceRecord>,
}

impl FitObjective {
    pub fn new(groups: &[DayGroup], options: ModelOptions) -> Result<Self, FitError> {
        let groups = groups
            .iter()
            .map(|g| {
                if g.prototypical_day.is_none() {
                    return Err(FitError::MissingPrototype(g.group_id.clone()));
                }
                if g.prototype_profile.len() != g.prototype_irradiance.len() {
                    return Err(FitError::LengthMismatch {
                        prototype: g.prototype_profile.len(),
                        candidate: g.prototype_irradiance.len(),
                    });
                }
                Ok(PreparedGroup {
                    group_id: g.group_id.clone(),
                    prototype: g.prototype_profile.clone(),
                    irradiance: g.prototype_irradiance.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { groups, options })
    }

    pub fn group_ids(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.group_id.as_str())
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn per_group(&self, lambda: SurfaceOrientation) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| {
                let cand = candidate_profile(lambda, &g.irradiance, &self.options);
                group_score(&g.prototype, &cand.values).expect("lengths checked at construction")
            })
            .collect()
    }

    /// Sum of group scores.
    pub fn fit_score(&self, lambda: SurfaceOrientation) -> f64 {
        self.per_group(lambda).iter().sum()
    }
}

pub fn fit_score(
    lambda: SurfaceOrientation,
    groups: &[DayGroup],
    options: &ModelOptions,
) -> Result<f64, FitError> {
    Ok(FitObjective::new(groups, *options)?.fit_score(lambda))
}

/// Exhaustively evaluated scores over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FitScoreTable {
    pub grid: DomainGrid,
    pub group_ids: Vec<String>,
    /// `per_group_scores[point][group]`.
    pub per_group_scores: Vec<Vec<f64>>,
    pub total_scores: Vec<f64>,
    pub argmax: usize,
}

impl FitScoreTable {
    pub fn best(&self) -> (SurfaceOrientation, f64) {
        (self.grid.point(self.argmax), self.total_scores[self.argmax])
    }

    /// CSV `azimuth_deg,tilt_deg,fit_score`.
    pub fn write_surface<W: Write>(
        &self,
        mut out: W,
        comment: Option<&str>,
    ) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "azimuth_deg,tilt_deg,fit_score")?;
        for (i, s) in self.total_scores.iter().enumerate() {
            let p = self.grid.point(i);
            writeln!(out, "{},{},{}", p.azimuth_deg, p.tilt_deg, s)?;
        }
        Ok(())
    }
}

/// Index of the maximum; the lowest index wins ties, which on a
/// [`DomainGrid`] means lowest azimuth, then lowest tilt.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn grid_search(grid: &DomainGrid, objective: &FitObjective) -> FitScoreTable {
    let per_group_scores: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| objective.per_group(grid.point(i)))
        .collect();
    let total_scores: Vec<f64> = per_group_scores.iter().map(|g| g.iter().sum()).collect();
    FitScoreTable {
        grid: grid.clone(),
        group_ids: objective.group_ids().map(String::from).collect(),
        argmax: argmax(&total_scores),
        per_group_scores,
        total_scores,
    }
}
