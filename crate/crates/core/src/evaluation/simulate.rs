//! Long-horizon yield simulation from fitted field regressions.
//!
//! Zone means are drawn `ŷ_t ~ N(μ, s)` with the sample moments of the
//! observed zone mean, then fields `ŷ_it ~ N(α_i + β_i ŷ_t, σ_i)` using each
//! field's regression on the zone mean. Field draws are truncated at zero by
//! resampling.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::regress_fields;
use crate::error::{Error, Result};
use crate::indices::zone_mean_index;
use crate::panel::YieldPanel;
use crate::rng::stream;
use crate::stats::{mean, sample_sd};

pub const DEFAULT_HORIZON: usize = 30;

/// Truncation share above which a warning is logged.
pub const TRUNCATION_WARN_RATE: f64 = 0.05;

const MAX_RESAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub field_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub horizon: usize,
    pub seed: u64,
    pub zone_mean_mu: f64,
    pub zone_mean_sd: f64,
    pub fields: Vec<FieldParams>,
}

impl SimulationConfig {
    /// Fits the zone-mean distribution and per-field regressions on `panel`.
    pub fn fit(panel: &YieldPanel, horizon: usize, seed: u64) -> Result<Self> {
        let index = zone_mean_index(panel);
        let mu = mean(&index.values).expect("panel has periods");
        let sd = sample_sd(&index.values).unwrap_or(0.0);
        if !(sd > 0.0) {
            return Err(Error::DegenerateZone(
                "zone mean has zero standard deviation".into(),
            ));
        }
        let regs = regress_fields(panel, &index)?;
        let fields = panel
            .fields()
            .iter()
            .zip(&regs)
            .map(|(meta, r)| FieldParams {
                field_id: meta.field_id.clone(),
                alpha: r.alpha,
                beta: r.beta,
                sigma: r.resid_sd,
            })
            .collect();
        let config = SimulationConfig {
            horizon,
            seed,
            zone_mean_mu: mu,
            zone_mean_sd: sd,
            fields,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        if !(self.zone_mean_sd > 0.0 && self.zone_mean_sd.is_finite()) {
            return Err(Error::DegenerateZone(format!(
                "zone mean sd must be positive, got {}",
                self.zone_mean_sd
            )));
        }
        if let Some(f) = self
            .fields
            .iter()
            .find(|f| !(f.sigma >= 0.0 && f.sigma.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "field `{}` has invalid residual sd {}",
                f.field_id, f.sigma
            )));
        }
        if self.fields.is_empty() {
            return Err(Error::InsufficientData("no fields to simulate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: YieldPanel,
    /// Simulated zone means.
    pub zone_means: Vec<f64>,
    /// Share of field draws that fell below zero and were resampled.
    pub truncation_rate: f64,
}

fn period_labels(horizon: usize) -> Vec<String> {
    let width = horizon.to_string().len().max(4);
    (1..=horizon).map(|k| format!("s{k:0width$}")).collect()
}

/// Simulates `config.horizon` periods for the fields of `panel`.
///
/// Zone means use stream 0 of `config.seed`; field `i` uses stream `i + 1`.
pub fn simulate_yields(panel: &YieldPanel, config: &SimulationConfig) -> Result<Simulation> {
    config.validate()?;
    if config.fields.len() != panel.n_fields() {
        return Err(Error::Dimension(format!(
            "config has {} fields, panel has {}",
            config.fields.len(),
            panel.n_fields()
        )));
    }
    let horizon = config.horizon;
    let zone_dist = Normal::new(config.zone_mean_mu, config.zone_mean_sd)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream(config.seed, 0);
    let zone_means: Vec<f64> = (0..horizon).map(|_| zone_dist.sample(&mut rng)).collect();

    let rows: Vec<(Vec<f64>, usize)> = config
        .fields
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = stream(config.seed, i as u64 + 1);
            let noise = Normal::new(0.0, p.sigma).expect("sigma validated");
            let mut truncated = 0;
            let row = zone_means
                .iter()
                .map(|z| {
                    let center = p.alpha + p.beta * z;
                    let mut draw = center + noise.sample(&mut rng);
                    if draw < 0.0 {
                        truncated += 1;
                        draw = (0..MAX_RESAMPLES)
                            .map(|_| center + noise.sample(&mut rng))
                            .find(|v| *v >= 0.0)
                            .unwrap_or(0.0);
                    }
                    draw
                })
                .collect();
            (row, truncated)
        })
        .collect();

    let n_truncated: usize = rows.iter().map(|(_, k)| k).sum();
    let truncation_rate = n_truncated as f64 / (horizon * rows.len()) as f64;
    if truncation_rate > TRUNCATION_WARN_RATE {
        log::warn!(
            "{:.1}% of simulated yields were below zero and truncated",
            100.0 * truncation_rate
        );
    }
    let values: Vec<f64> = rows.into_iter().flat_map(|(r, _)| r).collect();
    let panel = YieldPanel::new(panel.fields().to_vec(), period_labels(horizon), values)?;
    Ok(Simulation {
        panel,
        zone_means,
        truncation_rate,
    })
}
