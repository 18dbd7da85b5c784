//! Delimited-text readers and writers for site data and station panels.

use std::fmt::Write as _;

use isocov::gp_core::SpatialDataset;
use nalgebra::DMatrix;

use crate::Failure;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_f64(rec: &csv::StringRecord, i: usize, what: &str) -> Result<f64, Failure> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Failure::usage(format!("line {}: {what} {raw:?} is not a finite number", line_of(rec))))
}

/// Reads `site_id,x,y,rep_1,...,rep_r`.
pub fn read_dataset(text: &str) -> Result<SpatialDataset, Failure> {
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| Failure::usage(format!("reading header: {e}")))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[..3] != ["site_id", "x", "y"] {
        return Err(Failure::usage("data header must start with site_id,x,y followed by replicate columns"));
    }
    let r = cols.len() - 3;
    let mut labels = Vec::new();
    let mut coords = Vec::new();
    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::usage(format!("malformed row: {e}")))?;
        if rec.len() != cols.len() {
            return Err(Failure::usage(format!(
                "line {}: expected {} fields, found {}",
                line_of(&rec),
                cols.len(),
                rec.len()
            )));
        }
        labels.push(rec[0].to_string());
        coords.push(parse_f64(&rec, 1, "x")?);
        coords.push(parse_f64(&rec, 2, "y")?);
        for j in 0..r {
            obs.push(parse_f64(&rec, 3 + j, cols[3 + j])?);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Failure::usage("data file has no sites"));
    }
    let coords = DMatrix::from_row_slice(n, 2, &coords);
    // rows are sites in the file, replicates in the dataset
    let obs = DMatrix::from_row_slice(n, r, &obs).transpose();
    Ok(SpatialDataset::new(coords, obs, Some(labels))?)
}

pub fn write_dataset(data: &SpatialDataset) -> String {
    let mut out = String::from("site_id,x,y");
    for j in 1..=data.n_replicates() {
        let _ = write!(out, ",rep_{j}");
    }
    out.push('\n');
    for i in 0..data.n_sites() {
        let label = data.labels.as_ref().map_or_else(|| format!("s{}", i + 1), |l| l[i].clone());
        let _ = write!(out, "{label},{},{}", data.coords[(i, 0)], data.coords[(i, 1)]);
        for j in 0..data.n_replicates() {
            let _ = write!(out, ",{}", data.obs[(j, i)]);
        }
        out.push('\n');
    }
    out
}

/// A station-by-year panel; missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub stations: Vec<String>,
    pub lon: Vec<f64>,
    pub lat: Vec<f64>,
    pub years: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Reads `station,lon,lat,year_<YYYY>,...`.
pub fn read_panel(text: &str) -> Result<Panel, Failure> {
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| Failure::usage(format!("reading header: {e}")))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[..3] != ["station", "lon", "lat"] {
        return Err(Failure::usage("panel header must start with station,lon,lat followed by year_<YYYY> columns"));
    }
    let mut years = Vec::new();
    for c in &cols[3..] {
        let y = c
            .strip_prefix("year_")
            .filter(|y| !y.is_empty() && y.chars().all(|ch| ch.is_ascii_digit()))
            .ok_or_else(|| Failure::usage(format!("panel column {c:?} is not of the form year_<YYYY>")))?;
        years.push(y.to_string());
    }
    let mut p = Panel {
        stations: Vec::new(),
        lon: Vec::new(),
        lat: Vec::new(),
        years,
        values: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::usage(format!("malformed row: {e}")))?;
        if rec.len() != cols.len() {
            return Err(Failure::usage(format!(
                "line {}: expected {} fields, found {}",
                line_of(&rec),
                cols.len(),
                rec.len()
            )));
        }
        let lon = parse_f64(&rec, 1, "lon")?;
        let lat = parse_f64(&rec, 2, "lat")?;
        if !(-180.0..=360.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Failure::usage(format!("line {}: coordinates out of range", line_of(&rec))));
        }
        let mut row = Vec::with_capacity(cols.len() - 3);
        for j in 3..cols.len() {
            row.push(if rec[j].is_empty() { None } else { Some(parse_f64(&rec, j, cols[j])?) });
        }
        p.stations.push(rec[0].to_string());
        p.lon.push(lon);
        p.lat.push(lat);
        p.values.push(row);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Projection {
    pub kind: &'static str,
    pub lon0: f64,
    pub lat0: f64,
    pub radius_km: f64,
}

/// Equirectangular projection about the centroid of the given points, in kilometres.
pub fn project_equirectangular(lon: &[f64], lat: &[f64]) -> (DMatrix<f64>, Projection) {
    let n = lon.len();
    let lon0 = lon.iter().sum::<f64>() / n as f64;
    let lat0 = lat.iter().sum::<f64>() / n as f64;
    let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    let c = lat0.to_radians().cos();
    let coords = DMatrix::from_fn(n, 2, |i, j| if j == 0 { k * c * (lon[i] - lon0) } else { k * (lat[i] - lat0) });
    (
        coords,
        Projection {
            kind: "equirectangular",
            lon0,
            lat0,
            radius_km: EARTH_RADIUS_KM,
        },
    )
}
