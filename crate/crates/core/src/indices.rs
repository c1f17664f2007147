//! Candidate indices and their scoring: zone means, random subsample means,
//! external (input-based) series, the subsample-mean experiment and the
//! per-index design-risk report.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{optimal_from_centered, r2_bar, regress_centered, Metric};
use crate::error::{Error, Result};
use crate::moments::{center_into, CenteredPanel, Denominator};
use crate::panel::{ExternalTable, SeasonWindow, YieldPanel};
use crate::rng;
use crate::stats;

/// Whether an index is built from yields or from an external variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexSource {
    OutputBased,
    InputBased,
}

/// A zone-level index, one value per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub values: Vec<f64>,
    pub kind: String,
    pub source: IndexSource,
}

impl IndexSeries {
    pub fn new(values: Vec<f64>, kind: impl Into<String>, source: IndexSource) -> Self {
        IndexSeries {
            values,
            kind: kind.into(),
            source,
        }
    }

    /// Constant (or non-finite) series cannot be regressed on.
    pub fn is_degenerate(&self) -> bool {
        if self.values.iter().any(|v| !v.is_finite()) {
            return true;
        }
        let mut scratch = Vec::with_capacity(self.values.len());
        center_into(&self.values, &mut scratch).2
    }
}

fn mean_of_rows(panel: &YieldPanel, members: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut f = vec![0.0; panel.n_periods()];
    let mut m = 0usize;
    for i in members {
        for (acc, y) in f.iter_mut().zip(panel.series(i)) {
            *acc += y;
        }
        m += 1;
    }
    f.iter_mut().for_each(|v| *v /= m as f64);
    f
}

/// Unweighted mean across fields per period.
pub fn zone_mean_index(panel: &YieldPanel) -> IndexSeries {
    IndexSeries::new(
        mean_of_rows(panel, 0..panel.n_fields()),
        "zone_mean",
        IndexSource::OutputBased,
    )
}

fn subsample_members(n: usize, size: usize, rng: &mut rng::StreamRng) -> Vec<usize> {
    let mut members = sample(rng, n, size).into_vec();
    members.sort_unstable();
    members
}

/// Mean over `size` fields drawn without replacement.
pub fn subsample_mean_index(panel: &YieldPanel, size: usize, seed: u64) -> Result<IndexSeries> {
    check_size(panel, size)?;
    let members = subsample_members(panel.n_fields(), size, &mut rng::stream(seed, 0));
    Ok(IndexSeries::new(
        mean_of_rows(panel, members.into_iter()),
        "subsample_mean",
        IndexSource::OutputBased,
    ))
}

fn check_size(panel: &YieldPanel, size: usize) -> Result<()> {
    if size == 0 || size > panel.n_fields() {
        return Err(Error::InvalidArgument(format!(
            "subsample size {size} outside 1..={}",
            panel.n_fields()
        )));
    }
    Ok(())
}

/// One replication of the subsample experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub size: usize,
    pub replication: usize,
    pub r2_bar: f64,
}

/// `R̄²` of random subsample means, with the zone-mean and optimal reference lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    pub zone_mean_r2_bar: f64,
    pub optimal_r2_bar: f64,
}

impl ExperimentTable {
    /// Share of replications of `size` whose `R̄²` beats the zone mean.
    pub fn share_above_zone_mean(&self, size: usize) -> Option<f64> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.size == size).collect();
        (!rows.is_empty()).then(|| {
            rows.iter()
                .filter(|r| r.r2_bar > self.zone_mean_r2_bar)
                .count() as f64
                / rows.len() as f64
        })
    }
}

/// For each size and replication, `R̄²` of a random subsample mean.
///
/// Replication `r` of the `k`-th size draws from stream `(k, r)` of `seed`, so
/// results do not depend on scheduling.
pub fn subsample_experiment(
    panel: &YieldPanel,
    sizes: &[usize],
    replications: usize,
    seed: u64,
) -> Result<ExperimentTable> {
    for &m in sizes {
        check_size(panel, m)?;
    }
    let centered = CenteredPanel::new(panel);
    let zone_mean = zone_mean_index(panel);
    let zone_mean_r2_bar = r2_bar(&regress_centered(&centered, &zone_mean.values)?)?;
    let optimal_r2_bar =
        optimal_from_centered(&centered, Metric::Avg, Denominator::Unbiased)?.bound();

    let jobs: Vec<(usize, usize)> = (0..sizes.len())
        .flat_map(|k| (0..replications).map(move |r| (k, r)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, r)| {
            let size = sizes[k];
            let mut stream = rng::stream(seed, rng::pair_stream(k as u32, r as u32));
            let members = subsample_members(panel.n_fields(), size, &mut stream);
            let f = mean_of_rows(panel, members.into_iter());
            let r2 = r2_bar(&regress_centered(&centered, &f)?)?;
            Ok(ExperimentRow {
                size,
                replication: r,
                r2_bar: r2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentTable {
        rows,
        zone_mean_r2_bar,
        optimal_r2_bar,
    })
}

/// `R̄²` of one index in one zone, next to the zone's optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneScore {
    pub zone_id: String,
    pub n_fields: usize,
    pub r2_bar: f64,
    pub r2_bar_opt: f64,
}

/// Cross-zone summary of one candidate index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRiskRow {
    pub index: String,
    pub zone_count: usize,
    /// Mean over scored zones of `R̄²(f)`.
    pub mean_r2_bar: f64,
    /// Mean over the same zones of `R̄²(f*)`.
    pub mean_r2_bar_opt: f64,
    /// Pearson correlation across zones of `R̄²_z(f)` with `R̄²_z(f*)`.
    pub cor_with_opt: Option<f64>,
    pub zones: Vec<ZoneScore>,
    /// Zones without a usable series, with the reason.
    pub excluded: Vec<(String, String)>,
}

/// Design-risk rows, the optimal index first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRiskReport {
    pub rows: Vec<DesignRiskRow>,
    /// Zones dropped from every row because no optimum exists (all fields constant).
    pub skipped_zones: Vec<String>,
}

/// Per-zone inputs prepared once and shared by every scored index.
pub struct ZoneSet {
    zones: Vec<PreparedZone>,
    skipped: Vec<String>,
}

struct PreparedZone {
    id: String,
    panel: YieldPanel,
    centered: CenteredPanel,
    r2_bar_opt: f64,
}

impl ZoneSet {
    pub fn new(zones: Vec<(String, YieldPanel)>, denom: Denominator) -> Result<Self> {
        let prepared: Vec<(String, Result<PreparedZone>)> = zones
            .into_par_iter()
            .map(|(id, panel)| {
                let centered = CenteredPanel::new(&panel);
                let res = optimal_from_centered(&centered, Metric::Avg, denom).map(|o| {
                    PreparedZone {
                        id: id.clone(),
                        panel,
                        centered,
                        r2_bar_opt: o.bound(),
                    }
                });
                (id, res)
            })
            .collect();
        let mut set = ZoneSet {
            zones: Vec::new(),
            skipped: Vec::new(),
        };
        for (id, res) in prepared {
            match res {
                Ok(z) => set.zones.push(z),
                Err(Error::DegenerateZone(_)) => set.skipped.push(id),
                Err(e) => return Err(e),
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn zone_ids(&self) -> impl Iterator<Item = &str> {
        self.zones.iter().map(|z| z.id.as_str())
    }

    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    /// Scores an index built per zone by `build`; `Ok(None)` marks the zone as
    /// lacking a series.
    fn score_with<F>(&self, name: &str, build: F) -> Result<DesignRiskRow>
    where
        F: Fn(&str, &YieldPanel) -> Result<Option<Vec<f64>>> + Sync,
    {
        let scored: Vec<Result<std::result::Result<ZoneScore, (String, String)>>> = self
            .zones
            .par_iter()
            .map(|z| {
                let Some(series) = build(&z.id, &z.panel)? else {
                    return Ok(Err((z.id.clone(), "no series for zone".to_string())));
                };
                match regress_centered(&z.centered, &series) {
                    Ok(regs) => Ok(Ok(ZoneScore {
                        zone_id: z.id.clone(),
                        n_fields: z.panel.n_fields(),
                        r2_bar: r2_bar(&regs)?,
                        r2_bar_opt: z.r2_bar_opt,
                    })),
                    Err(Error::DegenerateIndex(msg)) => Ok(Err((z.id.clone(), msg))),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut zones = Vec::new();
        let mut excluded = Vec::new();
        for s in scored {
            match s? {
                Ok(z) => zones.push(z),
                Err(x) => excluded.push(x),
            }
        }
        let fx: Vec<f64> = zones.iter().map(|z| z.r2_bar).collect();
        let opt: Vec<f64> = zones.iter().map(|z| z.r2_bar_opt).collect();
        Ok(DesignRiskRow {
            index: name.to_string(),
            zone_count: zones.len(),
            mean_r2_bar: stats::mean(&fx).unwrap_or(f64::NAN),
            mean_r2_bar_opt: stats::mean(&opt).unwrap_or(f64::NAN),
            cor_with_opt: stats::pearson(&fx, &opt),
            zones,
            excluded,
        })
    }

    /// Row for the optimal index itself (`R̄²(f) = R̄²(f*)` in every zone).
    pub fn score_optimal(&self) -> DesignRiskRow {
        let zones: Vec<ZoneScore> = self
            .zones
            .iter()
            .map(|z| ZoneScore {
                zone_id: z.id.clone(),
                n_fields: z.panel.n_fields(),
                r2_bar: z.r2_bar_opt,
                r2_bar_opt: z.r2_bar_opt,
            })
            .collect();
        let opt: Vec<f64> = zones.iter().map(|z| z.r2_bar_opt).collect();
        let mean = stats::mean(&opt).unwrap_or(f64::NAN);
        DesignRiskRow {
            index: "optimal".into(),
            zone_count: zones.len(),
            mean_r2_bar: mean,
            mean_r2_bar_opt: mean,
            cor_with_opt: None,
            zones,
            excluded: Vec::new(),
        }
    }

    pub fn score_zone_mean(&self) -> Result<DesignRiskRow> {
        self.score_with("zone_mean", |_, panel| Ok(Some(zone_mean_index(panel).values)))
    }

    pub fn score_external(
        &self,
        name: &str,
        table: &ExternalTable,
        window: &SeasonWindow,
    ) -> Result<DesignRiskRow> {
        self.score_with(name, |zone, panel| {
            Ok(table.series(zone, panel.periods(), window).map(|s| s.values))
        })
    }
}

/// Scores an external index over zones; zones without a series are listed in
/// `excluded` and left out of the aggregates.
pub fn score_external(
    zones: Vec<(String, YieldPanel)>,
    name: &str,
    table: &ExternalTable,
    window: &SeasonWindow,
    denom: Denominator,
) -> Result<DesignRiskRow> {
    ZoneSet::new(zones, denom)?.score_external(name, table, window)
}

/// Full design-risk table: optimal, zone mean, then each external index.
pub fn design_report(
    zones: Vec<(String, YieldPanel)>,
    externals: &[(String, ExternalTable)],
    window: &SeasonWindow,
    denom: Denominator,
) -> Result<DesignRiskReport> {
    let set = ZoneSet::new(zones, denom)?;
    if set.is_empty() {
        return Err(Error::DegenerateZone("no zone has a defined optimum".into()));
    }
    let mut rows = vec![set.score_optimal(), set.score_zone_mean()?];
    for (name, table) in externals {
        rows.push(set.score_external(name, table, window)?);
    }
    Ok(DesignRiskReport {
        rows,
        skipped_zones: set.skipped().to_vec(),
    })
}
