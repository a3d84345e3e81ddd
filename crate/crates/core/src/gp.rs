//! Zero-mean Gaussian-process regression with an RBF kernel on
//! (azimuth, tilt) pairs.
//!
//! Observations are treated as exact; the diagonal jitter only keeps the
//! Cholesky factor of `K + jitter·I` well defined. The factor is extended one
//! row per observation. If an extension breaks down numerically the jitter
//! doubles and the whole factor is rebuilt.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// A point of the domain: `[azimuth_deg, tilt_deg]`.
pub type Point = [f64; 2];

pub const DEFAULT_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("covariance factorization failed with jitter {jitter:e}")]
    FactorizationFailure { jitter: f64 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Per-dimension lengthscales, degrees: `[azimuth, tilt]`.
    pub lengthscales: [f64; 2],
    pub jitter: f64,
    /// Measure azimuth differences as the chord between the two directions
    /// on a circle of circumference 360°, which keeps the kernel positive
    /// definite for any lengthscale.
    pub periodic_azimuth: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            lengthscales: [30.0, 10.0],
            jitter: DEFAULT_JITTER,
            periodic_azimuth: true,
        }
    }
}

impl KernelSpec {
    /// `exp(-‖λ - λ'‖²)` on raw degrees.
    pub fn unit() -> Self {
        Self {
            lengthscales: [1.0, 1.0],
            jitter: DEFAULT_JITTER,
            periodic_azimuth: false,
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite()) {
            return Err(GpError::InvalidKernel(
                "lengthscales must be positive".into(),
            ));
        }
        if !(self.jitter > 0.0 && self.jitter <= MAX_JITTER) {
            return Err(GpError::InvalidKernel(format!(
                "jitter must be in (0, {MAX_JITTER}]"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &Point, b: &Point) -> f64 {
        let daz = if self.periodic_azimuth {
            azimuth_chord(a[0] - b[0])
        } else {
            a[0] - b[0]
        };
        let u = daz / self.lengthscales[0];
        let v = (a[1] - b[1]) / self.lengthscales[1];
        (-(u * u + v * v)).exp()
    }
}

/// Chord length, in degrees of arc at small separations, between two
/// azimuths `d` degrees apart.
pub fn azimuth_chord(d: f64) -> f64 {
    360.0 / PI * (d.to_radians() / 2.0).sin().abs()
}

pub fn kernel(a: &Point, b: &Point, spec: &KernelSpec) -> f64 {
    spec.eval(a, b)
}

/// Observed points, values and the Cholesky factor of their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpState {
    kernel: KernelSpec,
    points: Vec<Point>,
    values: Vec<f64>,
    /// Lower-triangular rows; row `i` holds `i + 1` entries.
    chol: Vec<Vec<f64>>,
    /// `L⁻¹ y`, so that `μ(x) = (L⁻¹ k_x) · w`.
    whitened: Vec<f64>,
    jitter: f64,
    /// Bumped on every full refactorization.
    epoch: u64,
}

impl GpState {
    pub fn new(kernel: KernelSpec) -> Result<Self, GpError> {
        kernel.validate()?;
        Ok(Self {
            jitter: kernel.jitter,
            kernel,
            points: Vec::new(),
            values: Vec::new(),
            chol: Vec::new(),
            whitened: Vec::new(),
            epoch: 0,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Jitter currently on the diagonal (may exceed the configured one).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Returns a new state with the observation appended.
    pub fn update(&self, point: Point, value: f64) -> Result<GpState, GpError> {
        let mut next = self.clone();
        next.observe(point, value)?;
        Ok(next)
    }

    /// Appends an observation in place.
    pub fn observe(&mut self, point: Point, value: f64) -> Result<(), GpError> {
        self.points.push(point);
        self.values.push(value);
        if !self.extend_factor() {
            self.refactor()?;
        }
        Ok(())
    }

    fn cross(&self, x: &Point) -> Vec<f64> {
        self.points.iter().map(|p| self.kernel.eval(x, p)).collect()
    }

    fn forward_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rhs.len());
        for (i, row) in self.chol.iter().enumerate().take(rhs.len()) {
            let s: f64 = row[..i].iter().zip(&out).map(|(l, v)| l * v).sum();
            out.push((rhs[i] - s) / row[i]);
        }
        out
    }

    /// Extends the factor by the last appended point. Returns false when the
    /// new pivot falls below half the jitter, which exact arithmetic rules out.
    fn extend_factor(&mut self) -> bool {
        let n = self.points.len() - 1;
        let x = self.points[n];
        let k: Vec<f64> = self.points[..n]
            .iter()
            .map(|p| self.kernel.eval(&x, p))
            .collect();
        let mut row = self.forward_solve(&k);
        let d2 = 1.0 + self.jitter - row.iter().map(|l| l * l).sum::<f64>();
        if !(d2 >= 0.5 * self.jitter) || !d2.is_finite() {
            return false;
        }
        let d = d2.sqrt();
        let s: f64 = row.iter().zip(&self.whitened).map(|(l, w)| l * w).sum();
        self.whitened.push((self.values[n] - s) / d);
        row.push(d);
        self.chol.push(row);
        true
    }

    fn try_factor(&self, jitter: f64) -> Option<Vec<Vec<f64>>> {
        let n = self.points.len();
        let mut l: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![0.0; i + 1];
            for j in 0..=i {
                let kij = self.kernel.eval(&self.points[i], &self.points[j])
                    + if i == j { jitter } else { 0.0 };
                let lj = if j == i { &row } else { &l[j] };
                let s: f64 = (0..j).map(|m| row[m] * lj[m]).sum();
                if i == j {
                    let d2 = kij - s;
                    if !(d2 >= 0.5 * jitter) || !d2.is_finite() {
                        return None;
                    }
                    row[j] = d2.sqrt();
                } else {
                    row[j] = (kij - s) / l[j][j];
                }
            }
            l.push(row);
        }
        Some(l)
    }

    /// Full factorization, doubling the jitter until it succeeds or exceeds
    /// [`MAX_JITTER`].
    fn refactor(&mut self) -> Result<(), GpError> {
        let mut jitter = self.jitter * 2.0;
        loop {
            if jitter > MAX_JITTER {
                self.points.pop();
                self.values.pop();
                return Err(GpError::FactorizationFailure { jitter });
            }
            if let Some(l) = self.try_factor(jitter) {
                self.chol = l;
                self.jitter = jitter;
                self.epoch += 1;
                self.whitened = self.forward_solve(&self.values);
                return Ok(());
            }
            jitter *= 2.0;
        }
    }

    /// Posterior mean and variance at `x`. The empty state returns the prior
    /// `(0, 1)`.
    pub fn posterior(&self, x: &Point) -> (f64, f64) {
        if self.points.is_empty() {
            return (0.0, 1.0);
        }
        let v = self.forward_solve(&self.cross(x));
        let mean = v.iter().zip(&self.whitened).map(|(a, b)| a * b).sum();
        let var = 1.0 - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var.max(0.0))
    }

    /// Cholesky row `i` and the whitened target entry `i`.
    fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.chol[i], self.whitened[i])
    }
}

pub fn posterior(state: &GpState, x: &Point) -> (f64, f64) {
    state.posterior(x)
}

/// Posterior mean and variance over a fixed candidate set, kept in sync with
/// a growing [`GpState`] at O(n) cost per candidate and observation.
#[derive(Debug, Clone)]
pub struct PosteriorCache {
    candidates: Vec<Point>,
    /// Per candidate: `L⁻¹ k_x`.
    whitened_cross: Vec<Vec<f64>>,
    mean: Vec<f64>,
    explained: Vec<f64>,
    synced: usize,
    epoch: u64,
}

impl PosteriorCache {
    pub fn new(candidates: Vec<Point>) -> Self {
        let m = candidates.len();
        Self {
            candidates,
            whitened_cross: vec![Vec::new(); m],
            mean: vec![0.0; m],
            explained: vec![0.0; m],
            synced: 0,
            epoch: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Brings the cache up to date with every observation in `state`.
    pub fn sync(&mut self, state: &GpState) {
        if state.epoch() != self.epoch || state.len() < self.synced {
            self.whitened_cross.iter_mut().for_each(Vec::clear);
            self.mean.iter_mut().for_each(|m| *m = 0.0);
            self.explained.iter_mut().for_each(|e| *e = 0.0);
            self.synced = 0;
            self.epoch = state.epoch();
        }
        let from = self.synced;
        let to = state.len();
        if from == to {
            return;
        }
        let kernel = *state.kernel();
        let points = state.points();
        self.candidates
            .par_iter()
            .zip(self.whitened_cross.par_iter_mut())
            .zip(self.mean.par_iter_mut().zip(self.explained.par_iter_mut()))
            .for_each(|((x, v), (mean, explained))| {
                for i in from..to {
                    let (row, w) = state.row(i);
                    let s: f64 = row[..i].iter().zip(v.iter()).map(|(l, a)| l * a).sum();
                    let vi = (kernel.eval(x, &points[i]) - s) / row[i];
                    v.push(vi);
                    *mean += vi * w;
                    *explained += vi * vi;
                }
            });
        self.synced = to;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    pub fn variance(&self, i: usize) -> f64 {
        (1.0 - self.explained[i]).max(0.0)
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.variance(i)).collect()
    }
}
