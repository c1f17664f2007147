//! Subcommand implementations. Each returns a table plus the input files it read.

use std::collections::BTreeSet;
use std::path::PathBuf;

use basisrisk::evaluation::{
    build_scheme, evaluate_eu, measurement_error_fit, quantile_r2_bar, simulate_yields,
    Saturation, SimulationConfig,
};
use basisrisk::{
    design_report, index_r2_bar, load_panel, radius_sweep, rng, subsample_experiment,
    write_panel, zonal_sweep, zone_mean_index, Error, ExternalTable, FilterPolicy,
    MeasurementMode, Schema, SeasonWindow, YieldPanel, ZoneAreas, ZoneLevel,
};
use log::warn;
use rand::RngCore;
use rayon::prelude::*;

use crate::output::{Cell, Format, Table};
use crate::{
    CliError, DesignArgs, EuArgs, ExperimentArgs, MeasureArgs, PanelArgs, QuantileArgs,
    RadiusArgs, SimulateArgs, ZonalArgs,
};

pub struct Outcome {
    pub table: Table,
    pub inputs: Vec<PathBuf>,
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn schema(columns: &[(String, String)]) -> Result<Schema, CliError> {
    let mut s = Schema::default();
    for (k, v) in columns {
        s.set(k, v)?;
    }
    Ok(s)
}

fn load(path: &PathBuf, columns: &[(String, String)], policy: FilterPolicy) -> Result<YieldPanel, CliError> {
    let (panel, report) = load_panel(path, &schema(columns)?, policy)?;
    if !report.dropped_fields.is_empty() {
        warn!(
            "{}: dropped {} incomplete field(s)",
            path.display(),
            report.dropped_fields.len()
        );
    }
    Ok(panel)
}

fn load_args(args: &PanelArgs) -> Result<YieldPanel, CliError> {
    let policy = if args.drop_incomplete {
        FilterPolicy::DropIncompleteFields
    } else {
        FilterPolicy::Reject
    };
    load(&args.yields, &args.columns, policy)
}

fn split_zones(panel: &YieldPanel, level: ZoneLevel) -> Result<Vec<(String, YieldPanel)>, CliError> {
    panel
        .zones(level)?
        .into_iter()
        .map(|(id, idx)| Ok((id, panel.select(&idx)?)))
        .collect()
}

pub fn zonal(a: &ZonalArgs) -> Result<Outcome, CliError> {
    let panel = load_args(&a.panel)?;
    let levels: Vec<ZoneLevel> = match &a.levels {
        Some(l) => l.clone(),
        None => [ZoneLevel::L0, ZoneLevel::L1, ZoneLevel::L2, ZoneLevel::L3]
            .into_iter()
            .filter(|&l| panel.has_level(l))
            .collect(),
    };
    let areas = a.areas.as_ref().map(ZoneAreas::load).transpose()?;
    let sweep = zonal_sweep(
        &panel,
        &levels,
        areas.as_ref(),
        a.metric.into(),
        a.panel.denominator.into(),
    )?;
    for (level, zone) in &sweep.skipped {
        warn!("{} zone {zone}: no yield variation, skipped", level.as_str());
    }
    for s in &sweep.summaries {
        eprintln!(
            "{}: {} unit(s), optimal R² {}, zonal risk {}",
            s.level.as_str(),
            s.n_units,
            pct(s.r2_bar_opt),
            pct(s.zonal_risk)
        );
    }

    let with_area = areas.is_some();
    let table = if a.per_zone {
        let mut headers = vec!["level", "zone_id", "n_fields", "r2_bar_opt", "zonal_risk"];
        if with_area {
            headers.push("area_km2");
        }
        let mut t = Table::new(&headers);
        for r in &sweep.rows {
            let mut row: Vec<Cell> = vec![
                r.level.as_str().into(),
                r.zone_id.clone().into(),
                r.n_fields.into(),
                r.r2_bar_opt.into(),
                r.zonal_risk.into(),
            ];
            if with_area {
                row.push(r.area_km2.into());
            }
            t.push(row);
        }
        t
    } else {
        let mut headers = vec!["level", "n_units", "n_fields_avg", "r2_bar_opt", "zonal_risk"];
        if with_area {
            headers.push("area_km2_avg");
        }
        let mut t = Table::new(&headers);
        for s in &sweep.summaries {
            let mut row: Vec<Cell> = vec![
                s.level.as_str().into(),
                s.n_units.into(),
                s.n_fields_avg.into(),
                s.r2_bar_opt.into(),
                s.zonal_risk.into(),
            ];
            if with_area {
                row.push(s.area_km2_avg.into());
            }
            t.push(row);
        }
        t
    };
    let mut inputs = vec![a.panel.yields.clone()];
    inputs.extend(a.areas.clone());
    Ok(Outcome { table, inputs })
}

pub fn design(a: &DesignArgs) -> Result<Outcome, CliError> {
    let panel = load_args(&a.panel)?;
    let zones = split_zones(&panel, a.zones.level)?;
    let known: BTreeSet<&str> = zones.iter().map(|(id, _)| id.as_str()).collect();
    let mut inputs = vec![a.panel.yields.clone()];
    let mut externals = Vec::new();
    for (name, path) in &a.externals {
        let table = ExternalTable::load(path)?;
        let unknown: Vec<&str> = table.zone_ids().filter(|z| !known.contains(z)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Input(format!(
                "{path}: zone ids not found at level {}: {}",
                a.zones.level.as_str(),
                unknown.join(", ")
            )));
        }
        inputs.push(PathBuf::from(path));
        externals.push((name.clone(), table));
    }
    let window = SeasonWindow {
        agg: a.agg.into(),
        subperiods: a.subperiods.as_ref().map(|s| s.iter().cloned().collect()),
    };
    let report = design_report(zones, &externals, &window, a.panel.denominator.into())?;
    if !report.skipped_zones.is_empty() {
        warn!(
            "{} zone(s) without yield variation skipped: {}",
            report.skipped_zones.len(),
            report.skipped_zones.join(", ")
        );
    }
    let mut t = Table::new(&["index", "n_zones", "mean_r2_bar", "cor_with_opt"]);
    for r in &report.rows {
        for (zone, why) in &r.excluded {
            warn!("index {}: zone {zone} excluded ({why})", r.index);
        }
        eprintln!(
            "{}: mean R² {} over {} zone(s), design risk {}",
            r.index,
            pct(r.mean_r2_bar),
            r.zone_count,
            pct(r.mean_r2_bar_opt - r.mean_r2_bar)
        );
        t.push(vec![
            r.index.clone().into(),
            r.zone_count.into(),
            r.mean_r2_bar.into(),
            r.cor_with_opt.into(),
        ]);
    }
    Ok(Outcome { table: t, inputs })
}

pub fn radius(a: &RadiusArgs) -> Result<Outcome, CliError> {
    let panel = load_args(&a.panel)?;
    let sweep = radius_sweep(&panel, &a.radii, a.exclusion, a.min_fields)?;
    for p in &sweep.curve {
        if let Some(m) = p.mean_r2_bar_opt {
            eprintln!(
                "radius {} m (exclusion {} m): zonal risk {} over {} center(s)",
                p.radius,
                p.exclusion,
                pct(1.0 - m),
                p.n_centers
            );
        }
    }
    let table = if a.curve {
        let mut t = Table::new(&["radius", "exclusion", "n_centers", "n_skipped", "mean_r2_bar_opt"]);
        for p in &sweep.curve {
            t.push(vec![
                p.radius.into(),
                p.exclusion.into(),
                p.n_centers.into(),
                p.n_skipped.into(),
                p.mean_r2_bar_opt.into(),
            ]);
        }
        t
    } else {
        let mut t = Table::new(&["field_id", "radius", "exclusion", "n_fields", "r2_bar_opt"]);
        for r in &sweep.rows {
            t.push(vec![
                r.field_id.clone().into(),
                r.radius.into(),
                r.exclusion.into(),
                r.n_fields.into(),
                r.r2_bar_opt.into(),
            ]);
        }
        t
    };
    Ok(Outcome {
        table,
        inputs: vec![a.panel.yields.clone()],
    })
}

pub fn experiment(a: &ExperimentArgs) -> Result<Outcome, CliError> {
    let panel = load_args(&a.panel)?;
    let exp = subsample_experiment(&panel, &a.sizes, a.replications, a.common.seed)?;
    eprintln!(
        "zone mean R² {}, optimal R² {}",
        pct(exp.zone_mean_r2_bar),
        pct(exp.optimal_r2_bar)
    );
    for &m in &a.sizes {
        if let Some(share) = exp.share_above_zone_mean(m) {
            eprintln!("size {m}: {} of replications beat the zone mean", pct(share));
        }
    }
    let mut t = Table::new(&["kind", "size", "replication", "r2_bar"]);
    for r in &exp.rows {
        t.push(vec![
            "subsample".into(),
            r.size.into(),
            r.replication.into(),
            r.r2_bar.into(),
        ]);
    }
    t.push(vec!["zone_mean".into(), panel.n_fields().into(), Cell::Empty, exp.zone_mean_r2_bar.into()]);
    t.push(vec!["optimal".into(), Cell::Empty, Cell::Empty, exp.optimal_r2_bar.into()]);
    Ok(Outcome {
        table: t,
        inputs: vec![a.panel.yields.clone()],
    })
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let mut panel = load_args(&a.panel)?;
    if let (Some(level), Some(zone)) = (a.level, &a.zone) {
        panel = panel.subset_by_zone(level, zone)?;
    }
    let config = SimulationConfig::fit(&panel, a.horizon, a.common.seed)?;
    let sim = simulate_yields(&panel, &config)?;
    eprintln!(
        "simulated {} field(s) over {} period(s), truncation rate {}",
        sim.panel.n_fields(),
        sim.panel.n_periods(),
        pct(sim.truncation_rate)
    );
    let table = panel_table(&sim.panel, a.common.format)?;
    Ok(Outcome {
        table,
        inputs: vec![a.panel.yields.clone()],
    })
}

/// Long-format table of a panel; the CSV form matches `write_panel` exactly.
fn panel_table(panel: &YieldPanel, format: Format) -> Result<Table, CliError> {
    let mut buf = Vec::new();
    write_panel(panel, &mut buf)?;
    let mut rdr = csv::Reader::from_reader(&buf[..]);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let yield_col = headers.iter().position(|h| h == "yield");
    let mut t = Table::owned(headers);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Runtime(e.to_string()))?;
        t.push(
            rec.iter()
                .enumerate()
                .map(|(k, v)| match (format, Some(k) == yield_col, v.parse::<f64>()) {
                    (Format::Json, true, Ok(x)) => Cell::Num(x),
                    _ if v.is_empty() => Cell::Empty,
                    _ => Cell::Str(v.to_string()),
                })
                .collect(),
        );
    }
    Ok(t)
}

pub fn eu(a: &EuArgs) -> Result<Outcome, CliError> {
    let panel = load_args(&a.panel)?;
    let zones = split_zones(&panel, a.zones.level)?;
    let results: Vec<(String, Result<ZoneEu, Error>)> = zones
        .into_par_iter()
        .enumerate()
        .map(|(k, (id, zp))| {
            let seed = rng::stream(a.common.seed, k as u64).next_u64();
            let res = (|| {
                let zp = if a.simulate {
                    let config = SimulationConfig::fit(&zp, a.horizon, seed)?;
                    simulate_yields(&zp, &config)?.panel
                } else {
                    zp
                };
                let index = zone_mean_index(&zp);
                let r2 = index_r2_bar(&zp, &index)?;
                let q = quantile_r2_bar(&zp, &index, a.tau)?;
                let scheme = build_scheme(&index.values, a.trigger)?;
                let eval = evaluate_eu(&zp, &scheme, a.crra)?;
                Ok(ZoneEu {
                    r2_bar: r2,
                    r2q_bar: q.r2q_bar,
                    eval,
                })
            })();
            (id, res)
        })
        .collect();

    let mut zone_table = Table::new(&["zone_id", "r2_bar", "r2q_bar", "farm_equiv_mean"]);
    let mut field_table = Table::new(&[
        "zone_id",
        "field_id",
        "ce_uninsured",
        "ce_insured",
        "farm_equiv",
        "saturation",
    ]);
    for (id, res) in results {
        let z = match res {
            Ok(z) => z,
            Err(e @ (Error::DegenerateZone(_) | Error::DegenerateIndex(_))) => {
                warn!("zone {id} skipped: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if !z.eval.excluded.is_empty() {
            warn!(
                "zone {id}: {} field(s) with nonpositive yields excluded",
                z.eval.excluded.len()
            );
        }
        let fe = z.eval.farm_equiv_mean();
        eprintln!(
            "zone {id}: R² {}, quantile R² {}, farm-equivalent coverage {}",
            pct(z.r2_bar),
            pct(z.r2q_bar),
            fe.map_or("n/a".into(), pct)
        );
        zone_table.push(vec![
            id.clone().into(),
            z.r2_bar.into(),
            z.r2q_bar.into(),
            fe.into(),
        ]);
        for f in &z.eval.fields {
            let sat = f.farm_equiv.map(|c| match c.saturation {
                Saturation::None => "none",
                Saturation::Lower => "lower",
                Saturation::Upper => "upper",
            });
            field_table.push(vec![
                id.clone().into(),
                f.field_id.clone().into(),
                f.ce_uninsured.into(),
                f.ce_insured.into(),
                f.farm_equiv.map(|c| c.level).into(),
                sat.into(),
            ]);
        }
    }
    Ok(Outcome {
        table: if a.per_field { field_table } else { zone_table },
        inputs: vec![a.panel.yields.clone()],
    })
}

struct ZoneEu {
    r2_bar: f64,
    r2q_bar: f64,
    eval: basisrisk::evaluation::UtilityEvaluation,
}

pub fn quantile(a: &QuantileArgs) -> Result<Outcome, CliError> {
    let panel = load_args(&a.panel)?;
    let zones = split_zones(&panel, a.zones.level)?;
    let results: Vec<(String, usize, Result<(f64, f64, f64), Error>)> = zones
        .par_iter()
        .map(|(id, zp)| {
            let index = zone_mean_index(zp);
            let res = index_r2_bar(zp, &index).and_then(|r2| {
                let q = quantile_r2_bar(zp, &index, a.tau)?;
                Ok((r2, q.r2q_bar, q.r2q_pooled))
            });
            (id.clone(), zp.n_fields(), res)
        })
        .collect();
    let mut headers = vec!["zone_id", "n_fields", "r2_bar", "r2q_bar"];
    if a.pooled {
        headers.push("r2q_pooled");
    }
    let mut t = Table::new(&headers);
    for (id, n, res) in results {
        let (r2, r2q, pooled) = match res {
            Ok(v) => v,
            Err(e @ (Error::DegenerateZone(_) | Error::DegenerateIndex(_))) => {
                warn!("zone {id} skipped: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        eprintln!("zone {id}: R² {}, quantile R² {}", pct(r2), pct(r2q));
        let mut row: Vec<Cell> = vec![id.into(), n.into(), r2.into(), r2q.into()];
        if a.pooled {
            row.push(pooled.into());
        }
        t.push(row);
    }
    Ok(Outcome {
        table: t,
        inputs: vec![a.panel.yields.clone()],
    })
}

pub fn measure(a: &MeasureArgs) -> Result<Outcome, CliError> {
    let truth = load(&a.truth, &a.columns, FilterPolicy::Reject)?;
    let predicted = load(&a.predicted, &a.columns, FilterPolicy::Reject)?;
    let modes: Vec<MeasurementMode> = match &a.modes {
        Some(m) => m.iter().map(|&x| x.into()).collect(),
        None => MeasurementMode::ALL.to_vec(),
    };
    let mut t = Table::new(&["mode", "cor", "gamma", "p_gamma_eq_1"]);
    for mode in modes {
        let fit = measurement_error_fit(&truth, &predicted, mode)?;
        if !fit.dropped.is_empty() {
            warn!("{mode}: {} group(s) dropped", fit.dropped.len());
        }
        eprintln!(
            "{mode}: cor {:.3}, gamma {:.3}, p(gamma = 1) {:.3}",
            fit.rho, fit.gamma, fit.p_gamma_eq_1
        );
        t.push(vec![
            mode.as_str().into(),
            fit.rho.into(),
            fit.gamma.into(),
            fit.p_gamma_eq_1.into(),
        ]);
    }
    Ok(Outcome {
        table: t,
        inputs: vec![a.truth.clone(), a.predicted.clone()],
    })
}
