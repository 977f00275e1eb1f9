use std::fmt::Write as _;
use std::path::Path;

use super::EpeMap;
use crate::error::{Error, Result};

/// CSV with header `gx,gy,epe,n`, one row per location in row-major order.
pub fn heatmap_csv(map: &EpeMap) -> String {
    let mut out = String::from("gx,gy,epe,n\n");
    for (i, v) in map.values.iter().enumerate() {
        let l = map.location(i);
        let _ = writeln!(out, "{},{},{},{}", l.gx, l.gy, v, map.samples);
    }
    out
}

/// Binary greyscale image, darker = lower value. A constant map renders all white.
pub fn heatmap_pgm(map: &EpeMap) -> Vec<u8> {
    let min = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", map.nx, map.ny).into_bytes();
    out.extend(map.values.iter().map(|&v| {
        if max > min {
            (255.0 * (v - min) / (max - min)).round() as u8
        } else {
            255
        }
    }));
    out
}

pub fn parse_heatmap_csv(text: &str) -> Result<EpeMap> {
    let mut lines = text.lines();
    if lines.next() != Some("gx,gy,epe,n") {
        return Err(Error::Format("heatmap CSV header must be gx,gy,epe,n".into()));
    }
    let bad = |line: &str| Error::Format(format!("bad heatmap row: {line}"));
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(line));
        }
        let gx: usize = f[0].parse().map_err(|_| bad(line))?;
        let gy: usize = f[1].parse().map_err(|_| bad(line))?;
        let v: f64 = f[2].parse().map_err(|_| bad(line))?;
        let n: usize = f[3].parse().map_err(|_| bad(line))?;
        rows.push((gx, gy, v, n));
    }
    let nx = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let ny = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if rows.len() != nx * ny {
        return Err(Error::Format("heatmap CSV does not cover a full grid".into()));
    }
    let mut values = vec![f64::NAN; nx * ny];
    for &(gx, gy, v, _) in &rows {
        values[gy * nx + gx] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Format("heatmap CSV repeats a location".into()));
    }
    Ok(EpeMap {
        nx,
        ny,
        values,
        samples: rows.first().map_or(0, |r| r.3),
        history_len: 0,
    })
}

/// Writes the CSV and PGM renderings.
pub fn export_heatmap(map: &EpeMap, csv: &Path, pgm: &Path) -> Result<()> {
    std::fs::write(csv, heatmap_csv(map))?;
    std::fs::write(pgm, heatmap_pgm(map))?;
    Ok(())
}
