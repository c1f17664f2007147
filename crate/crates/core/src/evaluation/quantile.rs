//! Quantile pseudo-`R²` of fields against an index.
//!
//! For one regressor the check-loss minimizer is a line through two
//! observations. Short series (`T <= 12`) are solved by enumerating every
//! pair; longer ones by vertex descent: starting from a line through the
//! null-model quantile, the line is rotated about each observation it passes
//! through, each rotation being an exact weighted-quantile line search, until
//! no rotation lowers the loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::IndexSeries;
use crate::panel::YieldPanel;

pub const DEFAULT_TAU: f64 = 0.3;

/// Largest `T` solved by pair enumeration.
pub const ENUMERATION_MAX_T: usize = 12;

/// Check loss `ρ_τ(u) = u (τ - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

fn line_loss(y: &[f64], f: &[f64], a: f64, b: f64, tau: f64) -> f64 {
    y.iter()
        .zip(f)
        .map(|(yk, fk)| check_loss(yk - a - b * fk, tau))
        .sum()
}

/// A fitted quantile line `q_τ(y | f) = intercept + slope f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub loss: f64,
}

/// Quantile fit of one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    /// `V(f, τ)`
    pub v_model: f64,
    /// `V(1, τ)`
    pub v_null: f64,
    pub pseudo_r2: f64,
    pub line: LineFit,
}

/// Intercept-only fit: the loss is minimized at an order statistic.
pub fn null_fit(y: &[f64], tau: f64) -> (f64, f64) {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = sorted.len();
    let k = ((tau * t as f64).ceil() as usize).clamp(1, t);
    let mut best = (f64::NAN, f64::INFINITY);
    for idx in [k - 1, k.min(t - 1)] {
        let c = sorted[idx];
        let v: f64 = y.iter().map(|yk| check_loss(yk - c, tau)).sum();
        if v < best.1 {
            best = (c, v);
        }
    }
    best
}

/// Exact fit by trying the line through every pair with distinct `f`.
pub fn fit_enumerate(y: &[f64], f: &[f64], tau: f64) -> Option<LineFit> {
    let t = y.len();
    let mut best: Option<LineFit> = None;
    for i in 0..t {
        for j in (i + 1)..t {
            if f[j] == f[i] {
                continue;
            }
            let slope = (y[j] - y[i]) / (f[j] - f[i]);
            let intercept = y[i] - slope * f[i];
            let loss = line_loss(y, f, intercept, slope, tau);
            if best.is_none_or(|b| loss < b.loss) {
                best = Some(LineFit {
                    intercept,
                    slope,
                    loss,
                });
            }
        }
    }
    best
}

/// Best line through observation `p`: minimizes `Σ_j |d_j| ρ_{τ_j}(s_j - b)`
/// over slopes `b`, with `s_j` the slope from `p` to `j`.
fn rotate_about(y: &[f64], f: &[f64], p: usize, tau: f64) -> Option<LineFit> {
    let mut knots: Vec<(f64, f64, f64)> = Vec::with_capacity(y.len());
    for j in 0..y.len() {
        let d = f[j] - f[p];
        if j == p || d == 0.0 {
            continue;
        }
        let s = (y[j] - y[p]) / d;
        let tau_j = if d > 0.0 { tau } else { 1.0 - tau };
        knots.push((s, d.abs(), tau_j));
    }
    if knots.is_empty() {
        return None;
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    // right derivative just above knot k: -Σ w τ_j + Σ_{j <= k} w_j
    let mut deriv: f64 = -knots.iter().map(|(_, w, tj)| w * tj).sum::<f64>();
    let mut slope = knots[knots.len() - 1].0;
    for &(s, w, _) in &knots {
        deriv += w;
        if deriv >= 0.0 {
            slope = s;
            break;
        }
    }
    let intercept = y[p] - slope * f[p];
    Some(LineFit {
        intercept,
        slope,
        loss: line_loss(y, f, intercept, slope, tau),
    })
}

/// Exact fit by vertex descent; suited to any `T`.
pub fn fit_descent(y: &[f64], f: &[f64], tau: f64) -> Option<LineFit> {
    let t = y.len();
    let (c, _) = null_fit(y, tau);
    let start = y.iter().position(|v| *v == c)?;
    let mut current = rotate_about(y, f, start, tau)?;
    let scale = y.iter().chain(f).fold(1.0f64, |m, v| m.max(v.abs()));
    let max_iter = 50 * t + 100;
    for _ in 0..max_iter {
        let on_line = 1e-10 * scale * (1.0 + current.slope.abs());
        let mut improved = false;
        for k in 0..t {
            let r = y[k] - current.intercept - current.slope * f[k];
            if r.abs() > on_line {
                continue;
            }
            if let Some(cand) = rotate_about(y, f, k, tau) {
                if cand.loss < current.loss - 1e-13 * (1.0 + current.loss) {
                    current = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            return Some(current);
        }
    }
    None
}

/// Quantile regression of `y` on `(1, f)` and its pseudo-`R²`.
pub fn quantile_fit(y: &[f64], f: &[f64], tau: f64) -> Result<QuantileFit> {
    quantile_fit_named(y, f, tau, "")
}

fn quantile_fit_named(y: &[f64], f: &[f64], tau: f64, field: &str) -> Result<QuantileFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must be in (0,1), got {tau}")));
    }
    if y.len() != f.len() || y.len() < 2 {
        return Err(Error::Dimension(format!(
            "quantile fit needs matching series of length >= 2 ({} vs {})",
            y.len(),
            f.len()
        )));
    }
    let (_, v_null) = null_fit(y, tau);
    let line = if y.len() <= ENUMERATION_MAX_T {
        fit_enumerate(y, f, tau)
    } else {
        fit_descent(y, f, tau)
    };
    let line = line.ok_or_else(|| Error::Numeric {
        field: field.to_string(),
        message: "quantile regression did not converge".into(),
    })?;
    let v_model = line.loss.min(v_null);
    let pseudo_r2 = if v_null > 0.0 {
        (1.0 - v_model / v_null).clamp(0.0, 1.0)
    } else {
        f64::NAN
    };
    Ok(QuantileFit {
        tau,
        v_model,
        v_null,
        pseudo_r2,
        line,
    })
}

/// Aggregates of per-field quantile fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub tau: f64,
    /// `None` for fields with `V(1, τ) = 0`.
    pub per_field: Vec<Option<QuantileFit>>,
    /// `(1/N) Σ (1 - V_i(f,τ)/V_i(1,τ))`
    pub r2q_bar: f64,
    /// `1 - Σ V_i(f,τ) / Σ V_i(1,τ)`
    pub r2q_pooled: f64,
    pub n_excluded: usize,
}

/// Per-field quantile pseudo-`R²` against `index`, averaged over the zone.
pub fn quantile_r2_bar(panel: &YieldPanel, index: &IndexSeries, tau: f64) -> Result<QuantileSummary> {
    if index.values.len() != panel.n_periods() {
        return Err(Error::Dimension(format!(
            "index has {} periods, panel has {}",
            index.values.len(),
            panel.n_periods()
        )));
    }
    if index.is_degenerate() {
        return Err(Error::DegenerateIndex("index is constant over time".into()));
    }
    let per_field: Vec<Option<QuantileFit>> = (0..panel.n_fields())
        .into_par_iter()
        .map(|i| {
            let fit = quantile_fit_named(
                panel.series(i),
                &index.values,
                tau,
                &panel.fields()[i].field_id,
            )?;
            Ok((fit.v_null > 0.0).then_some(fit))
        })
        .collect::<Result<_>>()?;
    let used: Vec<&QuantileFit> = per_field.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::DegenerateZone("no field has quantile variation".into()));
    }
    let r2q_bar = used.iter().map(|q| q.pseudo_r2).sum::<f64>() / used.len() as f64;
    let (vm, vn) = used
        .iter()
        .fold((0.0, 0.0), |(a, b), q| (a + q.v_model, b + q.v_null));
    Ok(QuantileSummary {
        tau,
        n_excluded: per_field.len() - used.len(),
        per_field,
        r2q_bar,
        r2q_pooled: 1.0 - vm / vn,
    })
}
