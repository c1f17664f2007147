//! Measurement-error regressions of predicted on ground-truth yields,
//! `b_it = α + γ a_it + ε_it`.
//!
//! Pooled mode fits one regression over all cells. Temporal mode averages
//! per-unit regressions over time and spatial mode per-period regressions
//! across units. The `γ = 1` test uses HC1 standard errors; in the averaged
//! modes it runs on the matching fixed-effects (group-demeaned) regression.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::panel::YieldPanel;
use crate::stats::{mean, pearson};

/// Minimum observations for a per-group regression.
pub const MIN_OBS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    Pooled,
    Temporal,
    Spatial,
}

impl MeasurementMode {
    pub const ALL: [MeasurementMode; 3] = [
        MeasurementMode::Pooled,
        MeasurementMode::Temporal,
        MeasurementMode::Spatial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementMode::Pooled => "pooled",
            MeasurementMode::Temporal => "temporal",
            MeasurementMode::Spatial => "spatial",
        }
    }
}

impl fmt::Display for MeasurementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasurementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pooled" => Ok(MeasurementMode::Pooled),
            "temporal" => Ok(MeasurementMode::Temporal),
            "spatial" => Ok(MeasurementMode::Spatial),
            _ => Err(Error::InvalidArgument(format!(
                "unknown measurement mode `{s}` (pooled, temporal, spatial)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementErrorFit {
    pub mode: MeasurementMode,
    /// `ρ`, or the mean of per-group correlations.
    pub rho: f64,
    /// `γ`, or the mean of per-group slopes.
    pub gamma: f64,
    /// Pooled intercept; mean of per-group intercepts otherwise.
    pub alpha: f64,
    pub p_gamma_eq_1: f64,
    /// Slope and robust standard error of the regression behind the test.
    pub test_gamma: f64,
    pub test_se: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    /// Units or periods left out for too few observations or no variation.
    pub dropped: Vec<String>,
}

struct Slope {
    gamma: f64,
    se: f64,
    dof: usize,
}

/// Within-group OLS slope with an HC1 standard error.
fn within_slope(groups: &[(Vec<f64>, Vec<f64>)]) -> Result<Slope> {
    let mut xd = Vec::new();
    let mut yd = Vec::new();
    for (x, y) in groups {
        let (mx, my) = (mean(x).unwrap_or(0.0), mean(y).unwrap_or(0.0));
        xd.extend(x.iter().map(|v| v - mx));
        yd.extend(y.iter().map(|v| v - my));
    }
    let n = xd.len();
    let k = groups.len() + 1;
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {k} parameters"
        )));
    }
    let sxx: f64 = xd.iter().map(|v| v * v).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData(
            "ground-truth values have no variation".into(),
        ));
    }
    let gamma = xd.iter().zip(&yd).map(|(x, y)| x * y).sum::<f64>() / sxx;
    let meat: f64 = xd
        .iter()
        .zip(&yd)
        .map(|(x, y)| {
            let e = y - gamma * x;
            x * x * e * e
        })
        .sum();
    let var = n as f64 / (n - k) as f64 * meat / (sxx * sxx);
    Ok(Slope {
        gamma,
        se: var.sqrt(),
        dof: n - k,
    })
}

fn p_value_gamma_eq_1(s: &Slope) -> f64 {
    let diff = s.gamma - 1.0;
    if !(s.se > 0.0) {
        return if diff.abs() <= 1e-12 * (1.0 + s.gamma.abs()) {
            1.0
        } else {
            0.0
        };
    }
    let t = diff.abs() / s.se;
    let dist = StudentsT::new(0.0, 1.0, s.dof as f64).expect("positive dof");
    (2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0)
}

/// Aligns `b` to the field and period order of `a`.
fn align(a: &YieldPanel, b: &YieldPanel) -> Result<Vec<f64>> {
    if a.n_fields() != b.n_fields() || a.n_periods() != b.n_periods() {
        return Err(Error::Dimension(format!(
            "panels differ in shape: {}x{} vs {}x{}",
            a.n_fields(),
            a.n_periods(),
            b.n_fields(),
            b.n_periods()
        )));
    }
    let cols: Vec<usize> = a
        .periods()
        .iter()
        .map(|p| {
            b.periods().iter().position(|q| q == p).ok_or_else(|| {
                Error::Dimension(format!("period `{p}` missing from predicted panel"))
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(a.values().len());
    for meta in a.fields() {
        let j = b.field_index(&meta.field_id).ok_or_else(|| {
            Error::Dimension(format!(
                "field `{}` missing from predicted panel",
                meta.field_id
            ))
        })?;
        let row = b.series(j);
        out.extend(cols.iter().map(|&c| row[c]));
    }
    Ok(out)
}

/// Fits the measurement-error regression of `predicted` on `truth`.
pub fn measurement_error_fit(
    truth: &YieldPanel,
    predicted: &YieldPanel,
    mode: MeasurementMode,
) -> Result<MeasurementErrorFit> {
    let b = align(truth, predicted)?;
    let a = truth.values();
    let (n, t) = (truth.n_fields(), truth.n_periods());

    let mut labelled: Vec<(String, Vec<f64>, Vec<f64>)> = match mode {
        MeasurementMode::Pooled => vec![("all".into(), a.to_vec(), b.clone())],
        MeasurementMode::Temporal => (0..n)
            .map(|i| {
                (
                    truth.fields()[i].field_id.clone(),
                    a[i * t..(i + 1) * t].to_vec(),
                    b[i * t..(i + 1) * t].to_vec(),
                )
            })
            .collect(),
        MeasurementMode::Spatial => (0..t)
            .map(|k| {
                (
                    truth.periods()[k].clone(),
                    (0..n).map(|i| a[i * t + k]).collect(),
                    (0..n).map(|i| b[i * t + k]).collect(),
                )
            })
            .collect(),
    };

    let mut dropped = Vec::new();
    labelled.retain(|(label, x, _)| {
        let keep = x.len() >= MIN_OBS && x.iter().any(|v| *v != x[0]);
        if !keep {
            dropped.push(label.clone());
        }
        keep
    });
    if labelled.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no {mode} regression has {MIN_OBS} or more varying observations"
        )));
    }

    let mut rhos = Vec::with_capacity(labelled.len());
    let mut gammas = Vec::with_capacity(labelled.len());
    let mut alphas = Vec::with_capacity(labelled.len());
    for (_, x, y) in &labelled {
        let s = within_slope(&[(x.clone(), y.clone())])?;
        let alpha = mean(y).unwrap_or(0.0) - s.gamma * mean(x).unwrap_or(0.0);
        // constant predictions carry no correlation
        rhos.push(pearson(x, y).unwrap_or(0.0));
        gammas.push(s.gamma);
        alphas.push(alpha);
    }
    let groups: Vec<(Vec<f64>, Vec<f64>)> =
        labelled.iter().map(|(_, x, y)| (x.clone(), y.clone())).collect();
    let test = within_slope(&groups)?;

    Ok(MeasurementErrorFit {
        mode,
        rho: mean(&rhos).unwrap_or(f64::NAN),
        gamma: mean(&gammas).unwrap_or(f64::NAN),
        alpha: mean(&alphas).unwrap_or(f64::NAN),
        p_gamma_eq_1: p_value_gamma_eq_1(&test),
        test_gamma: test.gamma,
        test_se: test.se,
        n_obs: groups.iter().map(|(x, _)| x.len()).sum(),
        n_groups: groups.len(),
        dropped,
    })
}
