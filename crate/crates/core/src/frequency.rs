//! Transfer function, frequency response and the string-stability criterion.
//!
//! For an [`ErrorModel`] the adjacent-error transfer function is
//! `H(s) = (b1 s + b0) / (s² + a1 s + a0)`. Squaring `|H(iω)| < 1` and
//! clearing the (positive) denominator modulus gives the equivalent quartic
//! condition
//!
//! ```text
//! Q(ω²) = ω⁴ + (a1² − b1² − 2 a0) ω² + (a0² − b0²) > 0
//! ```
//!
//! which is what [`StabilityConstraint`] encodes. For constant-spacing
//! unidirectional control it reduces to `ω² > 2k/m`.

use std::io::{self, Write};

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::model::ErrorModel;
use crate::par::{self, Execution};

/// Denominator moduli below this are treated as poles.
pub const SINGULARITY_EPS: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrequencyError {
    #[error("transfer function is singular at omega = {0}")]
    Singular(f64),
    #[error("omega must be positive, got {0}")]
    NonPositiveOmega(f64),
    #[error("omega must be finite, got {0}")]
    NonFiniteOmega(f64),
    #[error("invalid sweep range: {0}")]
    BadRange(String),
}

/// `H(s) = (b1 s + b0) / (s² + a1 s + a0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferFunction {
    pub b0: f64,
    pub b1: f64,
    pub a0: f64,
    pub a1: f64,
}

impl TransferFunction {
    #[inline]
    pub fn numerator(&self, s: Complex64) -> Complex64 {
        s * self.b1 + self.b0
    }

    #[inline]
    pub fn denominator(&self, s: Complex64) -> Complex64 {
        (s + self.a1) * s + self.a0
    }

    /// `H(s)`; no singularity check.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.numerator(s) / self.denominator(s)
    }

    /// DC gain `b0 / a0`.
    pub fn dc_gain(&self) -> f64 {
        self.b0 / self.a0
    }
}

impl std::fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}s + {}) / (s^2 + {}s + {})", self.b1, self.b0, self.a1, self.a0)
    }
}

pub fn transfer_function(model: &ErrorModel) -> TransferFunction {
    TransferFunction { b0: model.b0, b1: model.b1, a0: model.a0, a1: model.a1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyResponse {
    pub omega: f64,
    pub value: Complex64,
    pub magnitude: f64,
}

/// Evaluates `H(iω)`.
///
/// The magnitude is taken as `|num| / |den|` rather than `|num / den|` so that
/// matched moduli (the stability boundary) give exactly `1.0`.
pub fn frequency_response(tf: &TransferFunction, omega: f64) -> Result<FrequencyResponse, FrequencyError> {
    if !omega.is_finite() {
        return Err(FrequencyError::NonFiniteOmega(omega));
    }
    let s = Complex64::new(0.0, omega);
    let num = tf.numerator(s);
    let den = tf.denominator(s);
    let den_mod = den.norm();
    if !(den_mod >= SINGULARITY_EPS) {
        return Err(FrequencyError::Singular(omega));
    }
    Ok(FrequencyResponse { omega, value: num / den, magnitude: num.norm() / den_mod })
}

/// Pointwise string stability: `|H(iω)| < 1`, strict.
pub fn is_stable_at(model: &ErrorModel, omega: f64) -> Result<bool, FrequencyError> {
    if omega.is_nan() || omega <= 0.0 {
        return Err(FrequencyError::NonPositiveOmega(omega));
    }
    let r = frequency_response(&transfer_function(model), omega)?;
    Ok(r.magnitude < 1.0)
}

/// `Q(u) = u² + alpha·u + beta` with `u = ω²`; stable exactly where `Q > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityConstraint {
    pub alpha: f64,
    pub beta: f64,
}

impl StabilityConstraint {
    /// Horner form `u·(u + alpha) + beta`. When `beta = 0` and
    /// `alpha = -2a0` the sign is exactly that of `u - 2a0`.
    #[inline]
    pub fn q(&self, u: f64) -> f64 {
        u * (u + self.alpha) + self.beta
    }

    /// `0 < ω ∧ Q(ω²) > 0`.
    #[inline]
    pub fn holds(&self, omega: f64) -> bool {
        omega > 0.0 && self.q(omega * omega) > 0.0
    }

    /// Open ω-intervals on which the constraint holds; the last upper bound is infinite.
    pub fn stable_intervals(&self) -> Vec<(f64, f64)> {
        let mut edges = vec![0.0];
        edges.extend(critical_frequencies(self));
        edges.push(f64::INFINITY);
        edges
            .windows(2)
            .filter(|w| {
                let probe = if w[1].is_finite() { 0.5 * (w[0] + w[1]) } else { w[0] + 1.0 };
                self.holds(probe)
            })
            .map(|w| (w[0], w[1]))
            .collect()
    }

    /// Open ω-intervals (ω > 0) on which the constraint fails.
    pub fn unstable_intervals(&self) -> Vec<(f64, f64)> {
        let mut edges = vec![0.0];
        edges.extend(critical_frequencies(self));
        edges.push(f64::INFINITY);
        edges
            .windows(2)
            .filter(|w| {
                let probe = if w[1].is_finite() { 0.5 * (w[0] + w[1]) } else { w[0] + 1.0 };
                !self.holds(probe)
            })
            .map(|w| (w[0], w[1]))
            .collect()
    }
}

pub fn stability_constraint(model: &ErrorModel) -> StabilityConstraint {
    let ErrorModel { a0, a1, b0, b1 } = *model;
    StabilityConstraint { alpha: a1 * a1 - b1 * b1 - 2.0 * a0, beta: a0 * a0 - b0 * b0 }
}

/// Positive ω with `Q(ω²) = 0`, ascending and deduplicated.
pub fn critical_frequencies(constraint: &StabilityConstraint) -> Vec<f64> {
    let StabilityConstraint { alpha, beta } = *constraint;
    let disc = alpha * alpha - 4.0 * beta;
    if !(disc >= 0.0) {
        return Vec::new();
    }
    // q = -(alpha + sign(alpha)·√disc)/2 avoids cancellation; roots are q and beta/q.
    let sq = disc.sqrt();
    let q = -0.5 * (alpha + alpha.signum() * sq);
    let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q, beta / q) };
    let mut roots: Vec<f64> = [r1, r2].into_iter().filter(|u| *u > 0.0 && u.is_finite()).map(f64::sqrt).collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup();
    roots
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridScale {
    #[default]
    Log,
    Linear,
}

/// `points` frequencies spanning `[min, max]` inclusive.
pub fn frequency_grid(min: f64, max: f64, points: usize, scale: GridScale) -> Result<Vec<f64>, FrequencyError> {
    if !(min > 0.0) || !min.is_finite() || !max.is_finite() {
        return Err(FrequencyError::BadRange(format!("need 0 < omega-min, finite bounds (got {min}, {max})")));
    }
    if !(max > min) {
        return Err(FrequencyError::BadRange(format!("omega-max {max} must exceed omega-min {min}")));
    }
    if points < 2 {
        return Err(FrequencyError::BadRange(format!("need at least 2 points, got {points}")));
    }
    let last = (points - 1) as f64;
    let grid = match scale {
        GridScale::Log => {
            // base 10 keeps decade points exact
            let (lo, hi) = (min.log10(), max.log10());
            (0..points).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / last)).collect::<Vec<_>>()
        }
        GridScale::Linear => (0..points).map(|i| min + (max - min) * i as f64 / last).collect(),
    };
    // pin the endpoints exactly
    let mut grid = grid;
    grid[0] = min;
    grid[points - 1] = max;
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub omega: f64,
    pub re: f64,
    pub im: f64,
    pub magnitude: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub points: usize,
    pub stable_points: usize,
    pub stable_fraction: f64,
    pub critical_frequencies: Vec<f64>,
}

/// Evaluates the frequency response on every grid point. Points are
/// independent, so [`Execution::Parallel`] splits them across workers; output
/// order always matches `grid`.
pub fn sweep(model: &ErrorModel, grid: &[f64], exec: Execution) -> Result<Vec<SweepPoint>, FrequencyError> {
    let tf = transfer_function(model);
    par::map(exec, grid, |&omega| {
        frequency_response(&tf, omega).map(|r| SweepPoint {
            omega,
            re: r.value.re,
            im: r.value.im,
            magnitude: r.magnitude,
            stable: omega > 0.0 && r.magnitude < 1.0,
        })
    })
    .into_iter()
    .collect()
}

pub fn summarize(model: &ErrorModel, points: &[SweepPoint]) -> SweepSummary {
    let stable_points = points.iter().filter(|p| p.stable).count();
    SweepSummary {
        points: points.len(),
        stable_points,
        stable_fraction: if points.is_empty() { 0.0 } else { stable_points as f64 / points.len() as f64 },
        critical_frequencies: critical_frequencies(&stability_constraint(model)),
    }
}

pub const SWEEP_CSV_HEADER: &str = "omega,re,im,magnitude,stable";

pub fn write_sweep_csv<W: Write>(mut out: W, points: &[SweepPoint]) -> io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{},{},{},{},{}", p.omega, p.re, p.im, p.magnitude, p.stable)?;
    }
    out.flush()
}
