//! File formats: dataset CSV, grid JSON, surfaces, chains, traces and PGM
//! heatmaps.
//!
//! Numbers are written with 17 significant digits so that values round-trip
//! exactly. Every output starts with a `#` comment naming the configuration
//! hash and the seed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FitReport;
use crate::field::{LatentField, Params};
use crate::grid::{GridSpec, Point, SpatialGrid};
use crate::point_process::PreferentialDataset;
use crate::predictor::Chain;

pub const DATASET_HEADER: [&str; 3] = ["x", "y_coord", "response"];

/// Provenance line written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHeader {
    pub config_hash: String,
    pub seed: u64,
}

impl OutputHeader {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        OutputHeader {
            config_hash: config_hash.into(),
            seed,
        }
    }

    fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# config_hash={} seed={}", self.config_hash, self.seed)?;
        Ok(())
    }
}

/// Round-trip float formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn schema(line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        line: line as usize,
        message: message.into(),
    }
}

/// Reads raw locations and responses; `#` lines are comments.
pub fn read_observations(reader: impl Read) -> Result<(Vec<Point>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| schema(e.position().map(|p| p.line()).unwrap_or(1), e.to_string()))?
        .clone();
    let line0 = rdr.position().line();
    let names: Vec<&str> = headers.iter().collect();
    if names != DATASET_HEADER {
        return Err(schema(
            line0.max(1),
            format!("expected header x,y_coord,response, found {}", names.join(",")),
        ));
    }
    let mut locs = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| -> Result<f64> {
            let raw = rec.get(k).ok_or_else(|| schema(line, "missing column"))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| schema(line, format!("column {} is not a number: '{raw}'", DATASET_HEADER[k])))?;
            if !v.is_finite() {
                return Err(schema(line, format!("column {} is not finite", DATASET_HEADER[k])));
            }
            Ok(v)
        };
        locs.push([field(0)?, field(1)?]);
        y.push(field(2)?);
    }
    Ok((locs, y))
}

pub fn read_dataset(reader: impl Read, grid: &SpatialGrid) -> Result<PreferentialDataset> {
    let (locs, y) = read_observations(reader)?;
    PreferentialDataset::new(locs, y, grid)
}

pub fn read_dataset_file(path: &Path, grid: &SpatialGrid) -> Result<PreferentialDataset> {
    read_dataset(fs::File::open(path)?, grid)
}

pub fn write_dataset(w: &mut impl Write, data: &PreferentialDataset, header: &OutputHeader) -> Result<()> {
    header.write(w)?;
    writeln!(w, "{}", DATASET_HEADER.join(","))?;
    for (p, y) in data.locations().iter().zip(data.y()) {
        writeln!(w, "{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(*y))?;
    }
    Ok(())
}

/// Surface on the grid: `index,x,y,s`.
pub fn write_field(w: &mut impl Write, grid: &SpatialGrid, values: &[f64], header: &OutputHeader) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::Dimension("surface does not match the grid".into()));
    }
    header.write(w)?;
    writeln!(w, "index,x,y,s")?;
    for (j, (c, v)) in grid.centroids().iter().zip(values).enumerate() {
        writeln!(w, "{j},{},{},{}", fmt_f64(c[0]), fmt_f64(c[1]), fmt_f64(*v))?;
    }
    Ok(())
}

/// Reads the `s` column of a surface written by [`write_field`].
pub fn read_field(reader: impl Read) -> Result<LatentField> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| schema(0, e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "s")
        .ok_or_else(|| schema(1, "surface file has no 's' column"))?;
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let raw = rec.get(col).ok_or_else(|| schema(line, "missing column s"))?;
        values.push(
            raw.parse()
                .map_err(|_| schema(line, format!("not a number: '{raw}'")))?,
        );
    }
    LatentField::new(values).map_err(|e| schema(0, e.to_string()))
}

pub fn write_chain(w: &mut impl Write, chain: &Chain, header: &OutputHeader) -> Result<()> {
    header.write(w)?;
    writeln!(w, "sweep,logdensity,acceptance")?;
    for (k, (ld, acc)) in chain.log_density.iter().zip(&chain.sweep_acceptance).enumerate() {
        writeln!(w, "{},{},{}", k + 1, fmt_f64(*ld), fmt_f64(*acc))?;
    }
    Ok(())
}

pub fn write_trace(w: &mut impl Write, report: &FitReport, header: &OutputHeader) -> Result<()> {
    header.write(w)?;
    writeln!(w, "iteration,mu,tau2,sigma2,phi,beta,objective_proxy")?;
    for t in &report.trace {
        let p = &t.theta;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            t.iteration,
            fmt_f64(p.mu),
            fmt_f64(p.tau2),
            fmt_f64(p.sigma2),
            fmt_f64(p.phi),
            fmt_f64(p.beta),
            fmt_f64(t.objective)
        )?;
    }
    Ok(())
}

/// Value range written next to a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapScale {
    pub min: f64,
    pub max: f64,
}

/// Binary greyscale PGM: `min → 0`, `max → 255`, north at the top.
pub fn write_pgm(w: &mut impl Write, grid: &SpatialGrid, values: &[f64]) -> Result<HeatmapScale> {
    if values.len() != grid.len() {
        return Err(Error::Dimension("surface does not match the grid".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut image = vec![0u8; nx * ny];
    for (j, v) in values.iter().enumerate() {
        let (row, col) = grid.row_col(j);
        let level = if span > 0.0 {
            ((v - min) / span * 255.0).round()
        } else {
            0.0
        };
        image[(ny - 1 - row) * nx + col] = level.clamp(0.0, 255.0) as u8;
    }
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    w.write_all(&image)?;
    Ok(HeatmapScale { min, max })
}

/// Writes `<stem>.pgm` and `<stem>.json` with the scale.
pub fn write_heatmap(stem: &Path, grid: &SpatialGrid, values: &[f64]) -> Result<HeatmapScale> {
    let mut f = fs::File::create(stem.with_extension("pgm"))?;
    let scale = write_pgm(&mut f, grid, values)?;
    fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&scale)?)?;
    Ok(scale)
}

pub fn read_grid_spec(path: &Path) -> Result<GridSpec> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Parameters from either a bare parameter object or a fit report.
pub fn read_params(bytes: &[u8]) -> Result<(Params, bool)> {
    if let Ok(report) = serde_json::from_slice::<FitReport>(bytes) {
        return Ok((report.theta_hat, report.beta_estimated));
    }
    let theta: Params = serde_json::from_slice(bytes)?;
    theta.validate()?;
    Ok((theta, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> OutputHeader {
        OutputHeader::new("abc123", 7)
    }

    #[test]
    fn dataset_round_trip() {
        let grid = SpatialGrid::unit_square(4, 4).unwrap();
        let data = PreferentialDataset::new(
            vec![[0.1, 0.2], [0.3333333333333333, 0.9]],
            vec![1.0 / 3.0, -2.5e-7],
            &grid,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data, &header()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config_hash=abc123 seed=7\nx,y_coord,response\n"));
        let back = read_dataset(&buf[..], &grid).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let grid = SpatialGrid::unit_square(2, 2).unwrap();
        let bad = "# comment\nx,y_coord,response\n0.1,0.2,3\n0.5,oops,1\n";
        match read_dataset(bad.as_bytes(), &grid).unwrap_err() {
            Error::Schema { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
        let wrong = "x,y,response\n0.1,0.2,3\n";
        assert!(matches!(
            read_dataset(wrong.as_bytes(), &grid),
            Err(Error::Schema { .. })
        ));
        let short = "x,y_coord,response\n0.1,0.2\n";
        assert!(matches!(
            read_dataset(short.as_bytes(), &grid),
            Err(Error::Schema { .. })
        ));
        let outside = "x,y_coord,response\n1.5,0.2,3\n";
        assert!(matches!(
            read_dataset(outside.as_bytes(), &grid),
            Err(Error::OutOfRegion { .. })
        ));
    }

    #[test]
    fn field_round_trip() {
        let grid = SpatialGrid::unit_square(3, 2).unwrap();
        let values: Vec<f64> = (0..6).map(|j| (j as f64).sqrt() - 1.0).collect();
        let mut buf = Vec::new();
        write_field(&mut buf, &grid, &values, &header()).unwrap();
        assert_eq!(read_field(&buf[..]).unwrap().values(), &values[..]);
    }

    #[test]
    fn pgm_scaling() {
        let grid = SpatialGrid::unit_square(2, 2).unwrap();
        let mut buf = Vec::new();
        let scale = write_pgm(&mut buf, &grid, &[0.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(scale, HeatmapScale { min: 0.0, max: 4.0 });
        let body = &buf[buf.len() - 4..];
        // Top image row is the northern grid row (cells 2, 3).
        assert_eq!(body, &[128, 255, 0, 64]);
        assert!(buf.starts_with(b"P5\n2 2\n255\n"));
    }

    #[test]
    fn params_from_either_form() {
        let theta = Params::STUDY_TRUTH;
        let (p, b) = read_params(serde_json::to_string(&theta).unwrap().as_bytes()).unwrap();
        assert_eq!((p, b), (theta, true));
    }
}
