//! Field-level yield panels: data model, CSV ingestion/export, zone subsets and
//! great-circle neighborhoods.
//!
//! A panel is a balanced `N × T` matrix of yields (fields in rows, periods in
//! columns) together with per-field metadata. Values are stored row-major so a
//! field's time series is a contiguous slice.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by [`haversine_m`], in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Zone identifier used for the single national zone at [`ZoneLevel::L0`].
pub const L0_ZONE: &str = "all";

/// Administrative nesting level. `L0` is the whole panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ZoneLevel {
    L0,
    L1,
    L2,
    L3,
}

impl ZoneLevel {
    pub const ALL: [ZoneLevel; 4] = [ZoneLevel::L0, ZoneLevel::L1, ZoneLevel::L2, ZoneLevel::L3];

    pub fn as_str(self) -> &'static str {
        match self {
            ZoneLevel::L0 => "L0",
            ZoneLevel::L1 => "L1",
            ZoneLevel::L2 => "L2",
            ZoneLevel::L3 => "L3",
        }
    }
}

impl fmt::Display for ZoneLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZoneLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L0" => Ok(ZoneLevel::L0),
            "L1" => Ok(ZoneLevel::L1),
            "L2" => Ok(ZoneLevel::L2),
            "L3" => Ok(ZoneLevel::L3),
            other => Err(Error::InvalidArgument(format!("unknown zone level `{other}`"))),
        }
    }
}

/// Per-field metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub field_id: String,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
    pub zone_l1: Option<String>,
    pub zone_l2: Option<String>,
    pub zone_l3: Option<String>,
}

impl FieldMeta {
    pub fn new(field_id: impl Into<String>) -> Self {
        FieldMeta {
            field_id: field_id.into(),
            lon: None,
            lat: None,
            zone_l1: None,
            zone_l2: None,
            zone_l3: None,
        }
    }

    pub fn with_coords(mut self, lon: f64, lat: f64) -> Self {
        self.lon = Some(lon);
        self.lat = Some(lat);
        self
    }

    pub fn with_zone(mut self, level: ZoneLevel, zone: impl Into<String>) -> Self {
        let zone = Some(zone.into());
        match level {
            ZoneLevel::L0 => {}
            ZoneLevel::L1 => self.zone_l1 = zone,
            ZoneLevel::L2 => self.zone_l2 = zone,
            ZoneLevel::L3 => self.zone_l3 = zone,
        }
        self
    }

    /// Zone label at `level`; `L0` always yields [`L0_ZONE`].
    pub fn zone(&self, level: ZoneLevel) -> Option<&str> {
        match level {
            ZoneLevel::L0 => Some(L0_ZONE),
            ZoneLevel::L1 => self.zone_l1.as_deref(),
            ZoneLevel::L2 => self.zone_l2.as_deref(),
            ZoneLevel::L3 => self.zone_l3.as_deref(),
        }
    }

    pub fn coords(&self) -> Option<(f64, f64)> {
        Some((self.lon?, self.lat?))
    }
}

/// Balanced panel of yields, `N` fields by `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldPanel {
    fields: Vec<FieldMeta>,
    periods: Vec<String>,
    values: Vec<f64>,
}

impl YieldPanel {
    /// Builds a panel from row-major values (`values[i * T + t]`).
    pub fn new(fields: Vec<FieldMeta>, periods: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = fields.len();
        let t = periods.len();
        if n == 0 {
            return Err(Error::InvalidPanel("panel has no fields".into()));
        }
        if t < 2 {
            return Err(Error::InvalidPanel(format!(
                "panel needs at least 2 periods, got {t}"
            )));
        }
        if values.len() != n * t {
            return Err(Error::Dimension(format!(
                "expected {} values for {n} fields x {t} periods, got {}",
                n * t,
                values.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for f in &fields {
            if !seen.insert(f.field_id.as_str()) {
                return Err(Error::InvalidPanel(format!(
                    "duplicate field_id `{}`",
                    f.field_id
                )));
            }
        }
        let mut seen_periods = BTreeSet::new();
        for p in &periods {
            if !seen_periods.insert(p.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate period `{p}`")));
            }
        }
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidPanel(format!(
                    "non-finite yield for field `{}` period `{}`",
                    fields[k / t].field_id,
                    periods[k % t]
                )));
            }
            if *v < 0.0 {
                return Err(Error::InvalidPanel(format!(
                    "negative yield {v} for field `{}` period `{}`",
                    fields[k / t].field_id,
                    periods[k % t]
                )));
            }
        }
        check_nesting(&fields)?;
        Ok(YieldPanel {
            fields,
            periods,
            values,
        })
    }

    /// Builds a panel from per-field series with generated ids `f0, f1, ...`
    /// and periods `p0, p1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Dimension("rows have different lengths".into()));
        }
        let width = rows.len().saturating_sub(1).to_string().len();
        let fields = (0..rows.len())
            .map(|i| FieldMeta::new(format!("f{i:0width$}")))
            .collect();
        let pwidth = t.saturating_sub(1).to_string().len();
        let periods = (0..t).map(|s| format!("p{s:0pwidth$}")).collect();
        YieldPanel::new(fields, periods, rows.concat())
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn fields(&self) -> &[FieldMeta] {
        &self.fields
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Time series of field `i`.
    pub fn series(&self, i: usize) -> &[f64] {
        let t = self.n_periods();
        &self.values[i * t..(i + 1) * t]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_periods())
    }

    pub fn field_index(&self, field_id: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.field_id == field_id)
    }

    /// `N × T` matrix copy of the values.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_fields(), self.n_periods(), &self.values)
    }

    /// Sub-panel with the given fields (in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<YieldPanel> {
        if indices.is_empty() {
            return Err(Error::InvalidPanel("selection is empty".into()));
        }
        let t = self.n_periods();
        let mut fields = Vec::with_capacity(indices.len());
        let mut values = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            fields.push(self.fields[i].clone());
            values.extend_from_slice(self.series(i));
        }
        Ok(YieldPanel {
            fields,
            periods: self.periods.clone(),
            values,
        })
    }

    /// True if every field carries a label at `level`.
    pub fn has_level(&self, level: ZoneLevel) -> bool {
        self.fields.iter().all(|f| f.zone(level).is_some())
    }

    /// Field indices grouped by zone label at `level`, ordered by label.
    pub fn zones(&self, level: ZoneLevel) -> Result<BTreeMap<String, Vec<usize>>> {
        if !self.has_level(level) {
            return Err(Error::Metadata(format!(
                "level {level} is not populated for every field"
            )));
        }
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, f) in self.fields.iter().enumerate() {
            let z = f.zone(level).expect("checked above");
            out.entry(z.to_string()).or_default().push(i);
        }
        Ok(out)
    }

    /// Fields whose label at `level` equals `zone_id`.
    pub fn subset_by_zone(&self, level: ZoneLevel, zone_id: &str) -> Result<YieldPanel> {
        let zones = self.zones(level)?;
        match zones.get(zone_id) {
            Some(idx) => self.select(idx),
            None => Err(Error::ZoneNotFound {
                level: level.to_string(),
                zone: zone_id.to_string(),
            }),
        }
    }

    /// Fields at great-circle distance `d` from `center` with
    /// `exclusion < d <= radius`, plus the center itself.
    pub fn neighborhood(&self, center: &str, radius_m: f64, exclusion_m: f64) -> Result<YieldPanel> {
        let c = self
            .field_index(center)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown field `{center}`")))?;
        let index = SpatialIndex::new(self)?;
        let idx = index.neighbors(c, radius_m, exclusion_m)?;
        self.select(&idx)
    }
}

fn check_nesting(fields: &[FieldMeta]) -> Result<()> {
    let mut l3_to_l2: HashMap<&str, Option<&str>> = HashMap::new();
    let mut l2_to_l1: HashMap<&str, Option<&str>> = HashMap::new();
    for f in fields {
        if let Some(l3) = f.zone_l3.as_deref() {
            let parent = f.zone_l2.as_deref();
            if let Some(prev) = l3_to_l2.insert(l3, parent) {
                if prev.is_some() && parent.is_some() && prev != parent {
                    return Err(Error::Metadata(format!(
                        "zone_l3 `{l3}` maps to both `{}` and `{}` at L2",
                        prev.unwrap_or_default(),
                        parent.unwrap_or_default()
                    )));
                }
            }
        }
        if let Some(l2) = f.zone_l2.as_deref() {
            let parent = f.zone_l1.as_deref();
            if let Some(prev) = l2_to_l1.insert(l2, parent) {
                if prev.is_some() && parent.is_some() && prev != parent {
                    return Err(Error::Metadata(format!(
                        "zone_l2 `{l2}` maps to both `{}` and `{}` at L1",
                        prev.unwrap_or_default(),
                        parent.unwrap_or_default()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Great-circle distance in meters between two `(lon, lat)` points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Latitude-sorted lookup for radius queries over a panel's fields.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    coords: Vec<(f64, f64)>,
    // (lat, field index), sorted by lat
    by_lat: Vec<(f64, usize)>,
}

impl SpatialIndex {
    pub fn new(panel: &YieldPanel) -> Result<Self> {
        let coords = panel
            .fields()
            .iter()
            .map(|f| {
                f.coords().ok_or_else(|| {
                    Error::Metadata(format!("field `{}` has no coordinates", f.field_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut by_lat: Vec<(f64, usize)> =
            coords.iter().enumerate().map(|(i, c)| (c.1, i)).collect();
        by_lat.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(SpatialIndex { coords, by_lat })
    }

    /// Indices (ascending) of fields with `exclusion < d <= radius` from
    /// `center`, always including `center`.
    pub fn neighbors(&self, center: usize, radius_m: f64, exclusion_m: f64) -> Result<Vec<usize>> {
        if !(radius_m >= 0.0) || !(exclusion_m >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radius ({radius_m}) and exclusion ({exclusion_m}) must be nonnegative"
            )));
        }
        let c = self.coords[center];
        // |dlat| <= d / R on a sphere
        let band = (radius_m / EARTH_RADIUS_M).to_degrees();
        let lo = self.by_lat.partition_point(|&(lat, _)| lat < c.1 - band);
        let mut out = vec![center];
        for &(lat, j) in &self.by_lat[lo..] {
            if lat > c.1 + band {
                break;
            }
            if j == center {
                continue;
            }
            let d = haversine_m(c, self.coords[j]);
            if d > exclusion_m && d <= radius_m {
                out.push(j);
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Column names for the yield CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub field_id: String,
    pub period: String,
    pub yield_col: String,
    pub lon: String,
    pub lat: String,
    pub zone_l1: String,
    pub zone_l2: String,
    pub zone_l3: String,
    /// Optional numeric column giving the period order; lexicographic otherwise.
    pub period_order: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            field_id: "field_id".into(),
            period: "period".into(),
            yield_col: "yield".into(),
            lon: "lon".into(),
            lat: "lat".into(),
            zone_l1: "zone_l1".into(),
            zone_l2: "zone_l2".into(),
            zone_l3: "zone_l3".into(),
            period_order: "period_order".into(),
        }
    }
}

impl Schema {
    /// Overrides one column name by its logical key (`yield`, `period`, ...).
    pub fn set(&mut self, key: &str, column: &str) -> Result<()> {
        let slot = match key {
            "field_id" => &mut self.field_id,
            "period" => &mut self.period,
            "yield" => &mut self.yield_col,
            "lon" => &mut self.lon,
            "lat" => &mut self.lat,
            "zone_l1" => &mut self.zone_l1,
            "zone_l2" => &mut self.zone_l2,
            "zone_l3" => &mut self.zone_l3,
            "period_order" => &mut self.period_order,
            other => {
                return Err(Error::InvalidArgument(format!("unknown schema key `{other}`")))
            }
        };
        *slot = column.to_string();
        Ok(())
    }
}

/// What to do with fields that miss a value in some period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterPolicy {
    #[default]
    Reject,
    DropIncompleteFields,
}

/// Side information from [`load_panel`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_fields: Vec<String>,
}

/// Reads a long-format yield CSV from a file.
pub fn load_panel(
    path: impl AsRef<Path>,
    schema: &Schema,
    policy: FilterPolicy,
) -> Result<(YieldPanel, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_panel(file, schema, policy)
}

struct Columns {
    field_id: usize,
    period: usize,
    yield_col: usize,
    lon: Option<usize>,
    lat: Option<usize>,
    zones: [Option<usize>; 3],
    period_order: Option<usize>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn parse_f64(value: &str, row: usize, column: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn optional(record: &csv::StringRecord, col: Option<usize>) -> Option<&str> {
    col.and_then(|c| record.get(c))
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Reads a long-format yield CSV from any reader.
pub fn read_panel<R: Read>(
    reader: R,
    schema: &Schema,
    policy: FilterPolicy,
) -> Result<(YieldPanel, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let required = |name: &str| {
        column_index(&headers, name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let cols = Columns {
        field_id: required(&schema.field_id)?,
        period: required(&schema.period)?,
        yield_col: required(&schema.yield_col)?,
        lon: column_index(&headers, &schema.lon),
        lat: column_index(&headers, &schema.lat),
        zones: [
            column_index(&headers, &schema.zone_l1),
            column_index(&headers, &schema.zone_l2),
            column_index(&headers, &schema.zone_l3),
        ],
        period_order: column_index(&headers, &schema.period_order),
    };

    let mut field_order: Vec<FieldMeta> = Vec::new();
    let mut field_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<BTreeMap<String, f64>> = Vec::new();
    let mut period_rank: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut report = LoadReport::default();

    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        report.rows_read += 1;
        let field_id = record.get(cols.field_id).unwrap_or("").trim().to_string();
        let period = record.get(cols.period).unwrap_or("").trim().to_string();
        if field_id.is_empty() {
            return Err(Error::Parse {
                row,
                column: schema.field_id.clone(),
                value: String::new(),
            });
        }
        if period.is_empty() {
            return Err(Error::Parse {
                row,
                column: schema.period.clone(),
                value: String::new(),
            });
        }
        let raw_yield = record.get(cols.yield_col).unwrap_or("");
        let value = if raw_yield.trim().is_empty() {
            None
        } else {
            Some(parse_f64(raw_yield, row, &schema.yield_col)?)
        };

        let lon = optional(&record, cols.lon)
            .map(|v| parse_f64(v, row, &schema.lon))
            .transpose()?;
        let lat = optional(&record, cols.lat)
            .map(|v| parse_f64(v, row, &schema.lat))
            .transpose()?;
        let meta = FieldMeta {
            field_id: field_id.clone(),
            lon,
            lat,
            zone_l1: optional(&record, cols.zones[0]).map(str::to_string),
            zone_l2: optional(&record, cols.zones[1]).map(str::to_string),
            zone_l3: optional(&record, cols.zones[2]).map(str::to_string),
        };

        let rank = optional(&record, cols.period_order)
            .map(|v| parse_f64(v, row, &schema.period_order))
            .transpose()?;
        match period_rank.get(&period) {
            Some(prev) if *prev != rank => {
                return Err(Error::Parse {
                    row,
                    column: schema.period_order.clone(),
                    value: format!("inconsistent order for period `{period}`"),
                })
            }
            Some(_) => {}
            None => {
                period_rank.insert(period.clone(), rank);
            }
        }

        let pos = match field_pos.get(&field_id) {
            Some(&p) => {
                if field_order[p] != meta {
                    return Err(Error::Metadata(format!(
                        "field `{field_id}` has inconsistent metadata (row {row})"
                    )));
                }
                p
            }
            None => {
                field_pos.insert(field_id.clone(), field_order.len());
                field_order.push(meta);
                cells.push(BTreeMap::new());
                field_order.len() - 1
            }
        };
        if let Some(v) = value {
            if cells[pos].insert(period.clone(), v).is_some() {
                return Err(Error::InvalidPanel(format!(
                    "duplicate cell for field `{field_id}` period `{period}` (row {row})"
                )));
            }
        }
    }

    let mut periods: Vec<String> = period_rank.keys().cloned().collect();
    if cols.period_order.is_some() {
        if let Some(missing) = period_rank.iter().find(|(_, r)| r.is_none()) {
            return Err(Error::Metadata(format!(
                "period `{}` has no order value",
                missing.0
            )));
        }
        periods.sort_by(|a, b| {
            let ra = period_rank[a].expect("checked");
            let rb = period_rank[b].expect("checked");
            ra.total_cmp(&rb).then_with(|| a.cmp(b))
        });
    }

    let mut fields = Vec::new();
    let mut values = Vec::new();
    for (meta, row) in field_order.into_iter().zip(cells) {
        if row.len() == periods.len() {
            values.extend(periods.iter().map(|p| row[p]));
            fields.push(meta);
        } else {
            match policy {
                FilterPolicy::Reject => {
                    let missing: Vec<&str> = periods
                        .iter()
                        .filter(|p| !row.contains_key(*p))
                        .map(String::as_str)
                        .collect();
                    return Err(Error::Unbalanced(format!(
                        "field `{}` has no value for period(s) {}",
                        meta.field_id,
                        missing.join(", ")
                    )));
                }
                FilterPolicy::DropIncompleteFields => report.dropped_fields.push(meta.field_id),
            }
        }
    }
    if fields.is_empty() {
        return Err(Error::InvalidPanel("no complete fields remain".into()));
    }
    Ok((YieldPanel::new(fields, periods, values)?, report))
}

/// Writes a panel in the long CSV layout accepted by [`read_panel`].
/// Optional columns are emitted only when some field carries them.
pub fn write_panel<W: Write>(panel: &YieldPanel, writer: W) -> Result<()> {
    let fields = panel.fields();
    let has_coords = fields.iter().any(|f| f.lon.is_some() || f.lat.is_some());
    let has_zone = [
        fields.iter().any(|f| f.zone_l1.is_some()),
        fields.iter().any(|f| f.zone_l2.is_some()),
        fields.iter().any(|f| f.zone_l3.is_some()),
    ];
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["field_id", "period", "yield"];
    if has_coords {
        header.extend(["lon", "lat"]);
    }
    for (present, name) in has_zone.iter().zip(["zone_l1", "zone_l2", "zone_l3"]) {
        if *present {
            header.push(name);
        }
    }
    wtr.write_record(&header)?;
    let opt_num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, f) in fields.iter().enumerate() {
        for (p, y) in panel.periods().iter().zip(panel.series(i)) {
            let mut rec = vec![f.field_id.clone(), p.clone(), y.to_string()];
            if has_coords {
                rec.push(opt_num(f.lon));
                rec.push(opt_num(f.lat));
            }
            for (present, z) in has_zone.iter().zip([&f.zone_l1, &f.zone_l2, &f.zone_l3]) {
                if *present {
                    rec.push(z.clone().unwrap_or_default());
                }
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Per-zone external (input-based) index series aligned to panel periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSeries {
    pub zone_id: String,
    pub periods: Vec<String>,
    pub values: Vec<f64>,
}

/// How sub-period observations are combined into one value per period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TemporalAgg {
    #[default]
    Mean,
    Sum,
}

impl FromStr for TemporalAgg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(TemporalAgg::Mean),
            "sum" => Ok(TemporalAgg::Sum),
            other => Err(Error::InvalidArgument(format!(
                "unknown temporal aggregation `{other}` (expected mean|sum)"
            ))),
        }
    }
}

/// Growing-season window: which sub-periods enter the aggregate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeasonWindow {
    pub agg: TemporalAgg,
    /// `None` keeps every sub-period.
    pub subperiods: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq)]
struct ExternalRecord {
    period: String,
    subperiod: Option<String>,
    value: f64,
}

/// Raw contents of an external-index CSV (`zone_id,period,value[,subperiod]`).
///
/// Several rows may share a `(zone_id, period)` pair (e.g. monthly values);
/// they are reduced by [`ExternalTable::series`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalTable {
    records: BTreeMap<String, Vec<ExternalRecord>>,
}

impl ExternalTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(file)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            column_index(&headers, name).ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let zone_c = col("zone_id")?;
        let period_c = col("period")?;
        let value_c = col("value")?;
        let sub_c = column_index(&headers, "subperiod");
        let mut table = ExternalTable::default();
        for record in rdr.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            let zone = record.get(zone_c).unwrap_or("").trim().to_string();
            let period = record.get(period_c).unwrap_or("").trim().to_string();
            let value = parse_f64(record.get(value_c).unwrap_or(""), row, "value")?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: "value".into(),
                    value: value.to_string(),
                });
            }
            table.records.entry(zone).or_default().push(ExternalRecord {
                period,
                subperiod: optional(&record, sub_c).map(str::to_string),
                value,
            });
        }
        Ok(table)
    }

    /// Builds a table from one value per `(zone, period)`.
    pub fn from_series(series: &[ExternalSeries]) -> Self {
        let mut table = ExternalTable::default();
        for s in series {
            let recs = table.records.entry(s.zone_id.clone()).or_default();
            for (p, v) in s.periods.iter().zip(&s.values) {
                recs.push(ExternalRecord {
                    period: p.clone(),
                    subperiod: None,
                    value: *v,
                });
            }
        }
        table
    }

    pub fn zone_ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    /// Aggregated series for `zone` over `periods`, or `None` when the zone is
    /// absent or some period has no observation inside the window.
    pub fn series(
        &self,
        zone: &str,
        periods: &[String],
        window: &SeasonWindow,
    ) -> Option<ExternalSeries> {
        let recs = self.records.get(zone)?;
        let mut values = Vec::with_capacity(periods.len());
        for p in periods {
            let selected: Vec<f64> = recs
                .iter()
                .filter(|r| &r.period == p)
                .filter(|r| match (&window.subperiods, &r.subperiod) {
                    (Some(set), Some(sub)) => set.contains(sub),
                    _ => true,
                })
                .map(|r| r.value)
                .collect();
            if selected.is_empty() {
                return None;
            }
            let sum: f64 = selected.iter().sum();
            values.push(match window.agg {
                TemporalAgg::Sum => sum,
                TemporalAgg::Mean => sum / selected.len() as f64,
            });
        }
        Some(ExternalSeries {
            zone_id: zone.to_string(),
            periods: periods.to_vec(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_panel(text: &str, policy: FilterPolicy) -> Result<(YieldPanel, LoadReport)> {
        read_panel(text.as_bytes(), &Schema::default(), policy)
    }

    #[test]
    fn loads_complete_panel() {
        let text = "field_id,period,yield\n\
            a,2016,1\na,2017,2\na,2018,3\na,2019,4\n\
            b,2016,2\nb,2017,2\nb,2018,5\nb,2019,1\n\
            c,2016,0\nc,2017,1\nc,2018,1\nc,2019,2\n";
        let (panel, report) = csv_panel(text, FilterPolicy::Reject).unwrap();
        assert_eq!(panel.n_fields(), 3);
        assert_eq!(panel.n_periods(), 4);
        assert_eq!(panel.series(1), &[2.0, 2.0, 5.0, 1.0]);
        assert!(report.dropped_fields.is_empty());
    }

    #[test]
    fn drops_incomplete_field() {
        let text = "field_id,period,yield\n\
            a,2016,1\na,2017,2\na,2019,4\n\
            b,2016,2\nb,2017,2\nb,2018,5\nb,2019,1\n\
            c,2016,0\nc,2017,1\nc,2018,1\nc,2019,2\n";
        let err = csv_panel(text, FilterPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::Unbalanced(_)), "{err}");
        let (panel, report) = csv_panel(text, FilterPolicy::DropIncompleteFields).unwrap();
        assert_eq!(panel.n_fields(), 2);
        assert!(panel.field_index("a").is_none());
        assert_eq!(report.dropped_fields, vec!["a".to_string()]);
    }

    #[test]
    fn parse_error_names_row() {
        let text = "field_id,period,yield\na,2016,1\na,2017,abc\n";
        match csv_panel(text, FilterPolicy::Reject).unwrap_err() {
            Error::Parse { row, column, value } => {
                assert_eq!(row, 3);
                assert_eq!(column, "yield");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = csv_panel("field_id,year,yield\na,1,1\n", FilterPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "period"));
    }

    #[test]
    fn negative_yield_rejected() {
        let err =
            csv_panel("field_id,period,yield\na,1,1\na,2,-1\n", FilterPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::InvalidPanel(_)));
    }

    #[test]
    fn period_order_column() {
        let text = "field_id,period,yield,period_order\n\
            a,late,3,2\na,early,1,1\n";
        let (panel, _) = csv_panel(text, FilterPolicy::Reject).unwrap();
        assert_eq!(panel.periods(), &["early".to_string(), "late".to_string()]);
        assert_eq!(panel.series(0), &[1.0, 3.0]);
    }

    #[test]
    fn inconsistent_nesting_rejected() {
        let fields = vec![
            FieldMeta::new("a").with_zone(ZoneLevel::L2, "s1").with_zone(ZoneLevel::L3, "w1"),
            FieldMeta::new("b").with_zone(ZoneLevel::L2, "s2").with_zone(ZoneLevel::L3, "w1"),
        ];
        let err = YieldPanel::new(fields, vec!["1".into(), "2".into()], vec![1.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Metadata(_)));
    }

    fn zoned_panel() -> YieldPanel {
        let fields = vec![
            FieldMeta::new("a").with_zone(ZoneLevel::L3, "w1"),
            FieldMeta::new("b").with_zone(ZoneLevel::L3, "w2"),
            FieldMeta::new("c").with_zone(ZoneLevel::L3, "w1"),
        ];
        YieldPanel::new(
            fields,
            vec!["1".into(), "2".into()],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap()
    }

    #[test]
    fn subset_by_ward() {
        let p = zoned_panel();
        let w1 = p.subset_by_zone(ZoneLevel::L3, "w1").unwrap();
        let ids: Vec<&str> = w1.fields().iter().map(|f| f.field_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(w1.series(1), &[5.0, 6.0]);
        let w2 = p.subset_by_zone(ZoneLevel::L3, "w2").unwrap();
        assert_eq!(w2.n_fields(), 1);
    }

    #[test]
    fn subset_errors() {
        let p = zoned_panel();
        assert!(matches!(
            p.subset_by_zone(ZoneLevel::L1, "x").unwrap_err(),
            Error::Metadata(_)
        ));
        assert!(matches!(
            p.subset_by_zone(ZoneLevel::L3, "nope").unwrap_err(),
            Error::ZoneNotFound { .. }
        ));
        let all = p.subset_by_zone(ZoneLevel::L0, L0_ZONE).unwrap();
        assert_eq!(all, p);
    }

    /// Points due north of (lon 37, lat 0) at the given distances.
    fn north_of_equator(dists: &[f64]) -> YieldPanel {
        let fields = dists
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let lat = (d / EARTH_RADIUS_M).to_degrees();
                FieldMeta::new(format!("f{i}")).with_coords(37.0, lat)
            })
            .collect();
        let values = (0..dists.len()).flat_map(|i| [i as f64, 1.0 + i as f64 * 2.0]).collect();
        YieldPanel::new(fields, vec!["1".into(), "2".into()], values).unwrap()
    }

    #[test]
    fn haversine_along_meridian() {
        // arc length along a meridian is R * dlat exactly
        let d = haversine_m((37.0, 0.0), (37.0, (300.0 / EARTH_RADIUS_M).to_degrees()));
        assert!((d - 300.0).abs() < 1e-6, "{d}");
        let quarter = haversine_m((0.0, 0.0), (90.0, 0.0));
        assert!((quarter - EARTH_RADIUS_M * std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn neighborhood_collinear_fixture() {
        let p = north_of_equator(&[0.0, 100.0, 300.0]);
        let n = p.neighborhood("f0", 200.0, 50.0).unwrap();
        let ids: Vec<&str> = n.fields().iter().map(|f| f.field_id.as_str()).collect();
        assert_eq!(ids, ["f0", "f1"]);
    }

    #[test]
    fn neighborhood_boundaries() {
        let p = north_of_equator(&[0.0, 100.0, 300.0]);
        assert_eq!(p.neighborhood("f0", 50_000.0, 0.0).unwrap(), p);
        let only = p.neighborhood("f0", 10.0, 0.0).unwrap();
        assert_eq!(only.n_fields(), 1);
        let excluded = p.neighborhood("f0", 200.0, 500.0).unwrap();
        assert_eq!(excluded.n_fields(), 1);
    }

    #[test]
    fn neighborhood_needs_coordinates() {
        let p = zoned_panel();
        assert!(matches!(
            p.neighborhood("a", 100.0, 0.0).unwrap_err(),
            Error::Metadata(_)
        ));
    }

    #[test]
    fn external_window_aggregation() {
        let text = "zone_id,period,value,subperiod\n\
            w1,2016,1,01\nw1,2016,3,02\nw1,2016,100,09\n\
            w1,2017,5,01\nw1,2017,7,02\n";
        let table = ExternalTable::read(text.as_bytes()).unwrap();
        let periods = vec!["2016".to_string(), "2017".to_string()];
        let window = SeasonWindow {
            agg: TemporalAgg::Mean,
            subperiods: Some(["01".to_string(), "02".to_string()].into()),
        };
        let s = table.series("w1", &periods, &window).unwrap();
        assert_eq!(s.values, vec![2.0, 6.0]);
        let sum = SeasonWindow {
            agg: TemporalAgg::Sum,
            subperiods: None,
        };
        assert_eq!(table.series("w1", &periods, &sum).unwrap().values, vec![104.0, 12.0]);
        assert!(table.series("w2", &periods, &window).is_none());
        let missing = vec!["2016".to_string(), "2018".to_string()];
        assert!(table.series("w1", &missing, &window).is_none());
    }
}
