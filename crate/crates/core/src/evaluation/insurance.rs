//! Area-yield insurance and its expected-utility evaluation.
//!
//! Indemnities pay `I_t = max(λ ȳ.. − ȳ.t, 0)` against the zone mean, the
//! premium is fair (`π = mean I_t`) and insured yields are `y_it + I_t − π`.
//! Farmers have CRRA utility; lotteries are compared by certainty equivalent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::YieldPanel;

pub const DEFAULT_TRIGGER: f64 = 0.9;
pub const DEFAULT_CRRA: f64 = 1.5;

/// Upper end of the individual-trigger bracket for farm-equivalent coverage.
pub const COVERAGE_BRACKET_MAX: f64 = 1.5;
const COVERAGE_GRID_STEPS: usize = 1500;
const CE_TOLERANCE: f64 = 1e-8;

/// Indemnity schedule of an index scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsuranceScheme {
    pub trigger: f64,
    /// Time mean of the insured series, `ȳ..`.
    pub mean_level: f64,
    pub indemnities: Vec<f64>,
    /// Fair premium, the mean indemnity.
    pub premium: f64,
    pub never_pays: bool,
}

impl InsuranceScheme {
    /// `y_t + I_t − π`.
    pub fn insured(&self, yields: &[f64]) -> Vec<f64> {
        yields
            .iter()
            .zip(&self.indemnities)
            .map(|(y, i)| y + i - self.premium)
            .collect()
    }
}

fn schedule(series: &[f64], trigger: f64) -> InsuranceScheme {
    let mean_level = series.iter().sum::<f64>() / series.len() as f64;
    let strike = trigger * mean_level;
    let indemnities: Vec<f64> = series.iter().map(|y| (strike - y).max(0.0)).collect();
    let premium = indemnities.iter().sum::<f64>() / indemnities.len() as f64;
    InsuranceScheme {
        trigger,
        mean_level,
        never_pays: indemnities.iter().all(|i| *i == 0.0),
        indemnities,
        premium,
    }
}

/// Scheme insuring the zone-mean series at `trigger`.
pub fn build_scheme(zone_means: &[f64], trigger: f64) -> Result<InsuranceScheme> {
    if zone_means.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "scheme needs at least 2 periods, got {}",
            zone_means.len()
        )));
    }
    if !(trigger > 0.0 && trigger <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "trigger must be in (0, 1], got {trigger}"
        )));
    }
    if zone_means.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("zone means must be finite".into()));
    }
    Ok(schedule(zone_means, trigger))
}

/// Iso-elastic utility `y^(1−θ)/(1−θ)`, `ln y` at `θ = 1`.
pub fn crra_utility(y: f64, theta: f64) -> f64 {
    if theta == 1.0 {
        y.ln()
    } else {
        y.powf(1.0 - theta) / (1.0 - theta)
    }
}

/// Inverse of [`crra_utility`].
pub fn crra_inverse(u: f64, theta: f64) -> f64 {
    if theta == 1.0 {
        u.exp()
    } else {
        ((1.0 - theta) * u).powf(1.0 / (1.0 - theta))
    }
}

/// Certainty equivalent `u⁻¹(mean u(y))`; every outcome must be positive.
pub fn certainty_equivalent(lottery: &[f64], theta: f64) -> Result<f64> {
    if lottery.is_empty() {
        return Err(Error::InsufficientData("empty lottery".into()));
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "risk aversion must be finite and nonnegative, got {theta}"
        )));
    }
    if let Some(bad) = lottery.iter().find(|y| !(**y > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "CRRA utility undefined at nonpositive outcome {bad}"
        )));
    }
    let n = lottery.len() as f64;
    let ce = if theta == 1.0 {
        (lottery.iter().map(|y| y.ln()).sum::<f64>() / n).exp()
    } else {
        let e = 1.0 - theta;
        (lottery.iter().map(|y| y.powf(e)).sum::<f64>() / n).powf(1.0 / e)
    };
    Ok(ce)
}

/// Where the farm-equivalent search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Saturation {
    None,
    /// Index insurance is worth no more than no insurance.
    Lower,
    /// Index insurance beats every individual trigger in the bracket.
    Upper,
}

/// Individual-insurance trigger equivalent to the index scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub level: f64,
    pub saturation: Saturation,
    /// Whether the CE gap was monotone on the pre-scan grid.
    pub monotone: bool,
}

/// Highest individual trigger `λ_ind` whose fair individual insurance gives
/// the field the same certainty equivalent as the index scheme.
pub fn farm_equivalent_coverage(
    field_yields: &[f64],
    scheme: &InsuranceScheme,
    crra_coef: f64,
) -> Result<Coverage> {
    if field_yields.len() != scheme.indemnities.len() {
        return Err(Error::Dimension(format!(
            "{} yields for a {}-period scheme",
            field_yields.len(),
            scheme.indemnities.len()
        )));
    }
    let mean = field_yields.iter().sum::<f64>() / field_yields.len() as f64;
    if field_yields.iter().all(|y| *y == field_yields[0]) {
        return Err(Error::InvalidArgument(
            "farm-equivalent coverage needs a field with positive variance".into(),
        ));
    }
    let target = certainty_equivalent(&scheme.insured(field_yields), crra_coef)?;
    let gap = |lambda: f64| -> Result<f64> {
        let individual = schedule_with_mean(field_yields, mean, lambda);
        Ok(certainty_equivalent(&individual.insured(field_yields), crra_coef)? - target)
    };

    let grid: Vec<f64> = (0..=COVERAGE_GRID_STEPS)
        .map(|k| COVERAGE_BRACKET_MAX * k as f64 / COVERAGE_GRID_STEPS as f64)
        .collect();
    let gaps = grid.iter().map(|&l| gap(l)).collect::<Result<Vec<f64>>>()?;
    let monotone = gaps.windows(2).all(|w| w[1] >= w[0] - 1e-12);

    if gaps[0] >= 0.0 {
        return Ok(Coverage {
            level: 0.0,
            saturation: Saturation::Lower,
            monotone,
        });
    }
    let last = gaps.len() - 1;
    if gaps[last] < 0.0 && gaps.iter().all(|g| *g < 0.0) {
        return Ok(Coverage {
            level: COVERAGE_BRACKET_MAX,
            saturation: Saturation::Upper,
            monotone,
        });
    }
    // largest bracket containing a sign change (or an exact root)
    let k = (0..last)
        .rev()
        .find(|&k| gaps[k + 1] == 0.0 || (gaps[k] < 0.0) != (gaps[k + 1] < 0.0))
        .expect("gaps change sign");
    if gaps[k + 1] == 0.0 {
        return Ok(Coverage {
            level: grid[k + 1],
            saturation: Saturation::None,
            monotone,
        });
    }
    let (mut lo, mut hi) = (grid[k], grid[k + 1]);
    let lo_negative = gaps[k] < 0.0;
    let mut level = 0.5 * (lo + hi);
    for _ in 0..200 {
        level = 0.5 * (lo + hi);
        let g = gap(level)?;
        if g.abs() < CE_TOLERANCE || hi - lo < 1e-15 {
            break;
        }
        if (g < 0.0) == lo_negative {
            lo = level;
        } else {
            hi = level;
        }
    }
    Ok(Coverage {
        level,
        saturation: Saturation::None,
        monotone,
    })
}

fn schedule_with_mean(series: &[f64], mean_level: f64, trigger: f64) -> InsuranceScheme {
    let strike = trigger * mean_level;
    let indemnities: Vec<f64> = series.iter().map(|y| (strike - y).max(0.0)).collect();
    let premium = indemnities.iter().sum::<f64>() / indemnities.len() as f64;
    InsuranceScheme {
        trigger,
        mean_level,
        never_pays: indemnities.iter().all(|i| *i == 0.0),
        indemnities,
        premium,
    }
}

/// Utility outcome for one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldUtility {
    pub field_id: String,
    pub ce_uninsured: f64,
    pub ce_insured: f64,
    /// `None` when the field has no variance.
    pub farm_equiv: Option<Coverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityEvaluation {
    pub crra_coef: f64,
    pub fields: Vec<FieldUtility>,
    /// Fields with a nonpositive insured or uninsured yield.
    pub excluded: Vec<String>,
}

impl UtilityEvaluation {
    /// Mean farm-equivalent coverage over fields where it is defined.
    pub fn farm_equiv_mean(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .fields
            .iter()
            .filter_map(|f| f.farm_equiv.map(|c| c.level))
            .collect();
        crate::stats::mean(&v)
    }
}

/// Certainty equivalents with and without the scheme, and farm-equivalent
/// coverage, for every field of the zone.
pub fn evaluate_eu(
    panel: &YieldPanel,
    scheme: &InsuranceScheme,
    crra_coef: f64,
) -> Result<UtilityEvaluation> {
    if scheme.indemnities.len() != panel.n_periods() {
        return Err(Error::Dimension(format!(
            "scheme has {} periods, panel has {}",
            scheme.indemnities.len(),
            panel.n_periods()
        )));
    }
    let results: Vec<Result<Option<FieldUtility>>> = (0..panel.n_fields())
        .into_par_iter()
        .map(|i| {
            let y = panel.series(i);
            let insured = scheme.insured(y);
            if y.iter().chain(&insured).any(|v| !(*v > 0.0)) {
                return Ok(None);
            }
            let ce_uninsured = certainty_equivalent(y, crra_coef)?;
            let ce_insured = certainty_equivalent(&insured, crra_coef)?;
            let farm_equiv = if y.iter().all(|v| *v == y[0]) {
                None
            } else {
                Some(farm_equivalent_coverage(y, scheme, crra_coef)?)
            };
            Ok(Some(FieldUtility {
                field_id: panel.fields()[i].field_id.clone(),
                ce_uninsured,
                ce_insured,
                farm_equiv,
            }))
        })
        .collect();
    let mut fields = Vec::new();
    let mut excluded = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r? {
            Some(f) => fields.push(f),
            None => excluded.push(panel.fields()[i].field_id.clone()),
        }
    }
    Ok(UtilityEvaluation {
        crra_coef,
        fields,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_arithmetic() {
        let s = build_scheme(&[10.0, 10.0, 10.0, 6.0], 0.9).unwrap();
        assert_eq!(s.mean_level, 9.0);
        assert_eq!(&s.indemnities[..3], &[0.0, 0.0, 0.0]);
        assert!((s.indemnities[3] - 2.1).abs() < 1e-12);
        assert!((s.premium - 0.525).abs() < 1e-12);
        assert!(!s.never_pays);
    }

    #[test]
    fn flat_means_never_pay() {
        let s = build_scheme(&[5.0; 4], 0.9).unwrap();
        assert!(s.never_pays);
        assert_eq!(s.premium, 0.0);
        let s1 = build_scheme(&[5.0; 4], 1.0).unwrap();
        assert!(s1.never_pays);
    }

    #[test]
    fn full_trigger_pays_below_average_years() {
        let s = build_scheme(&[8.0, 7.0, 6.0, 5.0], 1.0).unwrap();
        assert_eq!(s.indemnities, vec![0.0, 0.0, 0.5, 1.5]);
    }

    #[test]
    fn trigger_validation() {
        assert!(build_scheme(&[1.0, 2.0], 0.0).is_err());
        assert!(build_scheme(&[1.0, 2.0], 1.2).is_err());
        assert!(build_scheme(&[1.0], 0.9).is_err());
    }

    #[test]
    fn ce_of_constant_is_constant() {
        for theta in [0.0, 0.5, 1.0, 1.5, 3.0] {
            let ce = certainty_equivalent(&[2.5; 5], theta).unwrap();
            assert!((ce - 2.5).abs() < 1e-12, "theta {theta}: {ce}");
        }
    }

    #[test]
    fn ce_rejects_nonpositive() {
        assert!(certainty_equivalent(&[1.0, 0.0], 1.5).is_err());
    }

    #[test]
    fn utility_inverse_round_trip() {
        for theta in [0.5, 1.0, 1.5, 2.0] {
            let u = crra_utility(3.7, theta);
            assert!((crra_inverse(u, theta) - 3.7).abs() < 1e-12);
        }
    }

    #[test]
    fn never_paying_scheme_leaves_ce_unchanged() {
        let panel = YieldPanel::from_rows(&[vec![5.0, 6.0, 5.5], vec![4.0, 4.5, 5.0]]).unwrap();
        let scheme = build_scheme(&[4.5, 5.25, 5.25], 0.5).unwrap();
        assert!(scheme.never_pays);
        let eval = evaluate_eu(&panel, &scheme, 1.5).unwrap();
        for f in &eval.fields {
            assert_eq!(f.ce_insured, f.ce_uninsured);
            let cov = f.farm_equiv.unwrap();
            assert_eq!(cov.saturation, Saturation::Lower);
            assert_eq!(cov.level, 0.0);
        }
    }
}
