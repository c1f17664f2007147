//! Basis-risk decomposition.
//!
//! Each field is regressed on the index over time, `y_it = α_i + β_i f_t + ε_it`,
//! and basis risk is `1 - R²_i`. Aggregated over a zone, the unweighted mean
//! `R̄²` is maximized by `w* = D^-1/2 v₁(C)` and attains the top-eigenvalue
//! share of the correlation matrix; the variance-weighted `R̿²` is maximized by
//! the first principal component `v₁(Σ)`. The optimum gives the zonal risk,
//! and the gap to any other index is its design risk.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::{IndexSeries, IndexSource};
use crate::moments::{
    center_into, panel_eigen, CenteredPanel, Denominator, EigenSummary, MomentSummary, Target,
};
use crate::panel::YieldPanel;

/// OLS fit of one field on an index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRegression {
    pub alpha: f64,
    pub beta: f64,
    /// 0 for degenerate (constant) fields.
    pub r2: f64,
    pub sst: f64,
    pub ssr: f64,
    /// `sqrt(SSR / (T - 2))`, 0 when `T = 2`.
    pub resid_sd: f64,
    pub degenerate: bool,
}

/// Origin of an output-based weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    ZoneMean,
    SubsampleMean,
    OptimalAvg,
    OptimalTotal,
    Custom,
}

impl WeightKind {
    pub fn label(self) -> &'static str {
        match self {
            WeightKind::ZoneMean => "zone_mean",
            WeightKind::SubsampleMean => "subsample_mean",
            WeightKind::OptimalAvg => "optimal_avg",
            WeightKind::OptimalTotal => "optimal_total",
            WeightKind::Custom => "custom",
        }
    }
}

/// Field weights `w` of an output-based index `f = Y w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexWeights {
    pub weights: Vec<f64>,
    pub kind: WeightKind,
}

impl IndexWeights {
    pub fn zone_mean(n: usize) -> Self {
        IndexWeights {
            weights: vec![1.0 / n as f64; n],
            kind: WeightKind::ZoneMean,
        }
    }

    /// Equal weights `1/m` on `members`, 0 elsewhere.
    pub fn subsample(n: usize, members: &[usize]) -> Self {
        let mut weights = vec![0.0; n];
        let w = 1.0 / members.len() as f64;
        for &i in members {
            weights[i] = w;
        }
        IndexWeights {
            weights,
            kind: WeightKind::SubsampleMean,
        }
    }

    pub fn custom(weights: Vec<f64>) -> Self {
        IndexWeights {
            weights,
            kind: WeightKind::Custom,
        }
    }

    /// Weights rescaled to sum to one, for presentation only. `None` when the
    /// raw weights sum to (numerically) zero.
    pub fn sum_to_one(&self) -> Option<Vec<f64>> {
        let s: f64 = self.weights.iter().sum();
        let l1: f64 = self.weights.iter().map(|w| w.abs()).sum();
        (s.abs() > 1e-12 * l1).then(|| self.weights.iter().map(|w| w / s).collect())
    }

    /// The index series `f_t = Σ_i w_i y_it`.
    pub fn apply(&self, panel: &YieldPanel) -> Result<IndexSeries> {
        if self.weights.len() != panel.n_fields() {
            return Err(Error::Dimension(format!(
                "{} weights for {} fields",
                self.weights.len(),
                panel.n_fields()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite index weight".into()));
        }
        let mut f = vec![0.0; panel.n_periods()];
        for (w, row) in self.weights.iter().zip(panel.rows()) {
            if *w != 0.0 {
                for (acc, y) in f.iter_mut().zip(row) {
                    *acc += w * y;
                }
            }
        }
        Ok(IndexSeries::new(f, self.kind.label(), IndexSource::OutputBased))
    }
}

/// Zone aggregation of per-field `R²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    /// Unweighted mean `R̄²`; optimum from the correlation matrix.
    #[default]
    Avg,
    /// Variance-weighted `R̿² = 1 - ΣSSR/ΣSST`; optimum from the covariance matrix.
    Total,
}

impl Metric {
    pub fn target(self) -> Target {
        match self {
            Metric::Avg => Target::Correlation,
            Metric::Total => Target::Covariance,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Metric::Avg),
            "total" => Ok(Metric::Total),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric `{other}` (expected avg|total)"
            ))),
        }
    }
}

/// Zonal / design / total basis risk of one index in one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub index_kind: String,
    pub metric: Metric,
    /// `R̄²(f)` over non-degenerate fields.
    pub r2_bar: f64,
    /// `R̿²(f)`.
    pub r2_total: f64,
    /// Covariant risk of the optimal index under `metric`.
    pub r2_bar_opt: f64,
    pub zonal_risk: f64,
    pub design_risk: f64,
    /// `zonal_risk + design_risk`.
    pub total_risk: f64,
    /// `None` for degenerate fields.
    pub per_field_r2: Vec<Option<f64>>,
    pub n_degenerate: usize,
}

impl RiskDecomposition {
    /// `R̄²(f)` or `R̿²(f)` depending on the metric.
    pub fn covariant(&self) -> f64 {
        match self.metric {
            Metric::Avg => self.r2_bar,
            Metric::Total => self.r2_total,
        }
    }
}

/// Anything that can serve as an index for [`decompose`].
#[derive(Debug, Clone, PartialEq)]
pub enum IndexSpec {
    Series(IndexSeries),
    Weights(IndexWeights),
}

impl From<IndexSeries> for IndexSpec {
    fn from(s: IndexSeries) -> Self {
        IndexSpec::Series(s)
    }
}

impl From<IndexWeights> for IndexSpec {
    fn from(w: IndexWeights) -> Self {
        IndexSpec::Weights(w)
    }
}

pub(crate) fn regress_centered(centered: &CenteredPanel, index: &[f64]) -> Result<Vec<FieldRegression>> {
    let t = centered.t;
    if index.len() != t {
        return Err(Error::Dimension(format!(
            "index has {} periods, panel has {t}",
            index.len()
        )));
    }
    if index.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateIndex("index has non-finite values".into()));
    }
    let mut fdev = Vec::with_capacity(t);
    let (fmean, sff, fdeg) = center_into(index, &mut fdev);
    if fdeg {
        return Err(Error::DegenerateIndex("index is constant over time".into()));
    }
    let dof = t.saturating_sub(2);
    let regs = (0..centered.n)
        .into_par_iter()
        .map(|i| {
            let dy = centered.row(i);
            let sst = centered.sst[i];
            let sxy: f64 = dy.iter().zip(&fdev).map(|(a, b)| a * b).sum();
            let beta = sxy / sff;
            let alpha = centered.means[i] - beta * fmean;
            let ssr: f64 = dy
                .iter()
                .zip(&fdev)
                .map(|(a, b)| {
                    let e = a - beta * b;
                    e * e
                })
                .sum::<f64>()
                .min(sst);
            let degenerate = centered.degenerate[i];
            let r2 = if degenerate {
                0.0
            } else {
                (sxy * sxy / (sst * sff)).clamp(0.0, 1.0)
            };
            let resid_sd = if dof > 0 {
                (ssr / dof as f64).sqrt()
            } else {
                0.0
            };
            FieldRegression {
                alpha,
                beta,
                r2,
                sst,
                ssr,
                resid_sd,
                degenerate,
            }
        })
        .collect();
    Ok(regs)
}

/// Per-field OLS of yields on `index`.
pub fn regress_fields(panel: &YieldPanel, index: &IndexSeries) -> Result<Vec<FieldRegression>> {
    regress_centered(&CenteredPanel::new(panel), &index.values)
}

/// `R̄²`: mean `R²` over non-degenerate fields.
pub fn r2_bar(regs: &[FieldRegression]) -> Result<f64> {
    let (sum, count) = regs
        .iter()
        .filter(|r| !r.degenerate)
        .fold((0.0, 0usize), |(s, c), r| (s + r.r2, c + 1));
    if count == 0 {
        return Err(Error::DegenerateZone("every field has constant yields".into()));
    }
    Ok(sum / count as f64)
}

/// `R̿² = 1 - ΣSSR/ΣSST` over non-degenerate fields.
pub fn r2_total(regs: &[FieldRegression]) -> Result<f64> {
    let (ssr, sst) = regs
        .iter()
        .filter(|r| !r.degenerate)
        .fold((0.0, 0.0), |(a, b), r| (a + r.ssr, b + r.sst));
    if !(sst > 0.0) {
        return Err(Error::DegenerateZone("every field has constant yields".into()));
    }
    Ok(1.0 - ssr / sst)
}

/// Slopes of every field on the zone mean, `N Σ1 / 1'Σ1`.
pub fn beta_vector(moments: &MomentSummary) -> Result<Vec<f64>> {
    let n = moments.n;
    let row_sums: Vec<f64> = moments.sigma.row_iter().map(|r| r.sum()).collect();
    let total: f64 = row_sums.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateZone(format!(
            "1'Σ1 = {total}; the zone mean does not vary"
        )));
    }
    Ok(row_sums.iter().map(|s| n as f64 * s / total).collect())
}

fn sigma_w(moments: &MomentSummary, weights: &IndexWeights) -> Result<(DVector<f64>, f64)> {
    if weights.weights.len() != moments.n {
        return Err(Error::Dimension(format!(
            "{} weights for {} fields",
            weights.weights.len(),
            moments.n
        )));
    }
    let w = DVector::from_column_slice(&weights.weights);
    let sw = &moments.sigma * &w;
    let q = w.dot(&sw);
    if !(q > 0.0) {
        return Err(Error::DegenerateIndex(format!("w'Σw = {q}")));
    }
    Ok((sw, q))
}

/// `D^-1/2 Σw (w'Σw)^-1 w'Σ D^-1/2`. The diagonal holds each field's `R²`
/// against `f = Yw`; off-diagonal entries have no direct interpretation.
/// Rows and columns of degenerate fields are 0.
pub fn r2_matrix(moments: &MomentSummary, weights: &IndexWeights) -> Result<DMatrix<f64>> {
    let (sw, q) = sigma_w(moments, weights)?;
    let scaled: Vec<f64> = (0..moments.n)
        .map(|i| {
            if moments.degenerate[i] {
                0.0
            } else {
                sw[i] / moments.var_diag[i].sqrt()
            }
        })
        .collect();
    Ok(DMatrix::from_fn(moments.n, moments.n, |i, j| scaled[i] * scaled[j] / q))
}

/// Diagonal of [`r2_matrix`] without forming the `N × N` matrix.
pub fn r2_diag(moments: &MomentSummary, weights: &IndexWeights) -> Result<Vec<f64>> {
    let (sw, q) = sigma_w(moments, weights)?;
    Ok((0..moments.n)
        .map(|i| {
            if moments.degenerate[i] {
                0.0
            } else {
                sw[i] * sw[i] / (q * moments.var_diag[i])
            }
        })
        .collect())
}

fn scale_by_inv_sd(v: &[f64], var: impl Fn(usize) -> f64, degenerate: &[bool]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, x)| if degenerate[i] { 0.0 } else { x / var(i).sqrt() })
        .collect()
}

/// `w* = D^-1/2 v₁(C)`, maximizing `R̄²(Yw)`.
pub fn optimal_weights_avg(moments: &MomentSummary) -> Result<IndexWeights> {
    if moments.n_effective() == 0 {
        return Err(Error::DegenerateZone("every field has constant yields".into()));
    }
    let eig = moments.eigen(Target::Correlation)?;
    Ok(IndexWeights {
        weights: scale_by_inv_sd(
            &eig.first_eigenvector,
            |i| moments.var_diag[i],
            &moments.degenerate,
        ),
        kind: WeightKind::OptimalAvg,
    })
}

/// `w** = v₁(Σ)`, maximizing `R̿²(Yw)` (minimizing `Σ SSR_i`).
pub fn optimal_weights_total(moments: &MomentSummary) -> Result<IndexWeights> {
    let eig = moments.eigen(Target::Covariance)?;
    Ok(IndexWeights {
        weights: eig.first_eigenvector,
        kind: WeightKind::OptimalTotal,
    })
}

/// Optimal index weights together with the eigen statistics that bound the
/// attainable covariant risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalIndex {
    pub weights: IndexWeights,
    pub eigen: EigenSummary,
}

impl OptimalIndex {
    /// `λ₁ / Σλ`: the highest `R̄²` (or `R̿²`) any index can reach.
    pub fn bound(&self) -> f64 {
        self.eigen.top_share
    }
}

/// Optimal index of a panel, computed through the `T × T` Gram matrix when
/// the zone has more fields than periods.
pub fn optimal_index(panel: &YieldPanel, metric: Metric, denom: Denominator) -> Result<OptimalIndex> {
    let centered = CenteredPanel::new(panel);
    optimal_from_centered(&centered, metric, denom)
}

pub(crate) fn optimal_from_centered(
    centered: &CenteredPanel,
    metric: Metric,
    denom: Denominator,
) -> Result<OptimalIndex> {
    if centered.n_degenerate() == centered.n {
        return Err(Error::DegenerateZone("every field has constant yields".into()));
    }
    let eigen = crate::moments::top_eigen_factor(&centered.factor(metric.target(), denom))?;
    let weights = match metric {
        Metric::Avg => {
            let div = denom.divisor(centered.t);
            IndexWeights {
                weights: scale_by_inv_sd(
                    &eigen.first_eigenvector,
                    |i| centered.sst[i] / div,
                    &centered.degenerate,
                ),
                kind: WeightKind::OptimalAvg,
            }
        }
        Metric::Total => IndexWeights {
            weights: eigen.first_eigenvector.clone(),
            kind: WeightKind::OptimalTotal,
        },
    };
    Ok(OptimalIndex { weights, eigen })
}

/// Covariant-risk bound `λ₁/Σλ` of a zone under `metric`.
pub fn zone_bound(panel: &YieldPanel, metric: Metric, denom: Denominator) -> Result<f64> {
    Ok(panel_eigen(panel, metric.target(), denom)?.top_share)
}

/// Splits the basis risk of `index` into zonal and design risk.
pub fn decompose(
    panel: &YieldPanel,
    index: &IndexSpec,
    metric: Metric,
    denom: Denominator,
) -> Result<RiskDecomposition> {
    let centered = CenteredPanel::new(panel);
    let series = match index {
        IndexSpec::Series(s) => s.clone(),
        IndexSpec::Weights(w) => w.apply(panel)?,
    };
    let regs = regress_centered(&centered, &series.values)?;
    let r2_bar = r2_bar(&regs)?;
    let r2_total = r2_total(&regs)?;
    let opt = optimal_from_centered(&centered, metric, denom)?;
    Ok(assemble(series.kind, metric, &regs, r2_bar, r2_total, opt.bound()))
}

fn assemble(
    index_kind: String,
    metric: Metric,
    regs: &[FieldRegression],
    r2_bar: f64,
    r2_total: f64,
    r2_bar_opt: f64,
) -> RiskDecomposition {
    let covariant = match metric {
        Metric::Avg => r2_bar,
        Metric::Total => r2_total,
    };
    let zonal_risk = 1.0 - r2_bar_opt;
    let design_risk = r2_bar_opt - covariant;
    RiskDecomposition {
        index_kind,
        metric,
        r2_bar,
        r2_total,
        r2_bar_opt,
        zonal_risk,
        design_risk,
        total_risk: zonal_risk + design_risk,
        per_field_r2: regs
            .iter()
            .map(|r| (!r.degenerate).then_some(r.r2))
            .collect(),
        n_degenerate: regs.iter().filter(|r| r.degenerate).count(),
    }
}

/// `R̄²` of an index series over a panel.
pub fn index_r2_bar(panel: &YieldPanel, index: &IndexSeries) -> Result<f64> {
    r2_bar(&regress_fields(panel, index)?)
}
