//! Zonal risk across administrative levels and circular neighborhoods.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{zone_bound, Metric};
use crate::error::{Error, Result};
use crate::moments::Denominator;
use crate::panel::{SpatialIndex, YieldPanel, ZoneLevel};
use crate::stats;

/// Default minimum neighborhood size for radius rows.
pub const DEFAULT_MIN_FIELDS: usize = 10;

/// Zonal risk of one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalRiskRow {
    pub level: ZoneLevel,
    pub zone_id: String,
    pub n_fields: usize,
    pub r2_bar_opt: f64,
    pub zonal_risk: f64,
    pub area_km2: Option<f64>,
}

/// Unweighted averages of the zone rows of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: ZoneLevel,
    pub n_units: usize,
    pub n_fields_avg: f64,
    pub r2_bar_opt: f64,
    pub zonal_risk: f64,
    pub area_km2_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalSweep {
    pub rows: Vec<ZonalRiskRow>,
    pub summaries: Vec<LevelSummary>,
    /// `(level, zone)` pairs without variation, left out of the summaries.
    pub skipped: Vec<(ZoneLevel, String)>,
}

/// Zone areas read from `level,zone_id,area_km2`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZoneAreas(BTreeMap<(ZoneLevel, String), f64>);

impl ZoneAreas {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut rdr = csv::Reader::from_reader(file);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (lc, zc, ac) = (col("level")?, col("zone_id")?, col("area_km2")?);
        let mut out = ZoneAreas::default();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            let level: ZoneLevel = rec.get(lc).unwrap_or("").parse()?;
            let raw = rec.get(ac).unwrap_or("");
            let area = raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: "area_km2".into(),
                value: raw.to_string(),
            })?;
            out.insert(level, rec.get(zc).unwrap_or("").trim(), area);
        }
        Ok(out)
    }

    pub fn insert(&mut self, level: ZoneLevel, zone: &str, area_km2: f64) {
        self.0.insert((level, zone.to_string()), area_km2);
    }

    pub fn get(&self, level: ZoneLevel, zone: &str) -> Option<f64> {
        self.0.get(&(level, zone.to_string())).copied()
    }
}

/// `λ₁/Σλ` for every zone of every requested level; `L0` is the whole panel.
pub fn zonal_sweep(
    panel: &YieldPanel,
    levels: &[ZoneLevel],
    areas: Option<&ZoneAreas>,
    metric: Metric,
    denom: Denominator,
) -> Result<ZonalSweep> {
    let mut jobs = Vec::new();
    for &level in levels {
        for (zone, idx) in panel.zones(level)? {
            jobs.push((level, zone, idx));
        }
    }
    let results: Vec<(ZoneLevel, String, usize, Result<f64>)> = jobs
        .into_par_iter()
        .map(|(level, zone, idx)| {
            let n = idx.len();
            let bound = panel
                .select(&idx)
                .and_then(|sub| zone_bound(&sub, metric, denom));
            (level, zone, n, bound)
        })
        .collect();

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (level, zone_id, n_fields, bound) in results {
        match bound {
            Ok(r2) => rows.push(ZonalRiskRow {
                area_km2: areas.and_then(|a| a.get(level, &zone_id)),
                level,
                zone_id,
                n_fields,
                r2_bar_opt: r2,
                zonal_risk: 1.0 - r2,
            }),
            Err(Error::DegenerateZone(_)) => skipped.push((level, zone_id)),
            Err(e) => return Err(e),
        }
    }

    let summaries = levels
        .iter()
        .filter_map(|&level| {
            let sel: Vec<&ZonalRiskRow> = rows.iter().filter(|r| r.level == level).collect();
            if sel.is_empty() {
                return None;
            }
            let k = sel.len() as f64;
            let areas: Vec<f64> = sel.iter().filter_map(|r| r.area_km2).collect();
            Some(LevelSummary {
                level,
                n_units: sel.len(),
                n_fields_avg: sel.iter().map(|r| r.n_fields as f64).sum::<f64>() / k,
                r2_bar_opt: sel.iter().map(|r| r.r2_bar_opt).sum::<f64>() / k,
                zonal_risk: sel.iter().map(|r| r.zonal_risk).sum::<f64>() / k,
                area_km2_avg: (areas.len() == sel.len()).then(|| stats::mean(&areas)).flatten(),
            })
        })
        .collect();
    Ok(ZonalSweep {
        rows,
        summaries,
        skipped,
    })
}

/// Zonal covariant risk of one field's circular neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusRow {
    pub field_id: String,
    pub radius: f64,
    pub exclusion: f64,
    pub n_fields: usize,
    /// `None` when the neighborhood has fewer than `min_fields` fields or no variation.
    pub r2_bar_opt: Option<f64>,
}

/// Mean over centers of the neighborhood `R̄²(f*)` at one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub radius: f64,
    pub exclusion: f64,
    pub n_centers: usize,
    pub n_skipped: usize,
    pub mean_r2_bar_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSweep {
    /// Ordered by `(field_id, radius, exclusion)`.
    pub rows: Vec<RadiusRow>,
    /// Ordered by `(exclusion, radius)`.
    pub curve: Vec<CurvePoint>,
}

/// Neighborhood zonal risk around every field for each radius, once without
/// exclusion and once excluding fields closer than `exclusion` meters.
pub fn radius_sweep(
    panel: &YieldPanel,
    radii: &[f64],
    exclusion: f64,
    min_fields: usize,
) -> Result<RadiusSweep> {
    if radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidArgument("radii must be finite and nonnegative".into()));
    }
    if !(exclusion.is_finite() && exclusion >= 0.0) {
        return Err(Error::InvalidArgument("exclusion must be finite and nonnegative".into()));
    }
    let index = SpatialIndex::new(panel)?;
    let mut exclusions = vec![0.0];
    if exclusion > 0.0 {
        exclusions.push(exclusion);
    }
    let mut radii_sorted = radii.to_vec();
    radii_sorted.sort_by(f64::total_cmp);
    radii_sorted.dedup();

    let mut centers: Vec<usize> = (0..panel.n_fields()).collect();
    centers.sort_by(|&a, &b| panel.fields()[a].field_id.cmp(&panel.fields()[b].field_id));

    let per_center: Vec<Result<Vec<RadiusRow>>> = centers
        .par_iter()
        .map(|&c| {
            let mut rows = Vec::with_capacity(radii_sorted.len() * exclusions.len());
            for &radius in &radii_sorted {
                for &excl in &exclusions {
                    let idx = index.neighbors(c, radius, excl)?;
                    let r2 = if idx.len() < min_fields.max(1) {
                        None
                    } else {
                        match zone_bound(&panel.select(&idx)?, Metric::Avg, Denominator::Unbiased) {
                            Ok(v) => Some(v),
                            Err(Error::DegenerateZone(_)) => None,
                            Err(e) => return Err(e),
                        }
                    };
                    rows.push(RadiusRow {
                        field_id: panel.fields()[c].field_id.clone(),
                        radius,
                        exclusion: excl,
                        n_fields: idx.len(),
                        r2_bar_opt: r2,
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_center {
        rows.extend(r?);
    }

    let mut curve = Vec::new();
    for &excl in &exclusions {
        for &radius in &radii_sorted {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.radius == radius && r.exclusion == excl)
                .filter_map(|r| r.r2_bar_opt)
                .collect();
            curve.push(CurvePoint {
                radius,
                exclusion: excl,
                n_centers: vals.len(),
                n_skipped: centers.len() - vals.len(),
                mean_r2_bar_opt: stats::mean(&vals),
            });
        }
    }
    Ok(RadiusSweep { rows, curve })
}
