//! Grid CSVs, JSON reports and the plain-text floorplan dump.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::model::{BlockKind, BlockModule, Die, Floorplan, TsvIsland, TsvKind, VoltageLevel};
use crate::scalar::Scalar;

/// `nx` comma-separated columns per line, `ny` lines, first line is `y = 0`.
pub fn grid_to_csv<T: Scalar>(grid: &Grid2D<T>) -> String {
    let mut out = String::with_capacity(grid.len() * 14);
    for y in 0..grid.ny() {
        for x in 0..grid.nx() {
            if x > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.6e}", grid.get(x, y).as_f64()));
        }
        out.push('\n');
    }
    out
}

pub fn grid_from_csv<T: Scalar>(text: &str, pitch: (f64, f64)) -> Result<Grid2D<T>> {
    let mut values = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<T> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map(T::of).map_err(|e| Error::parse(no + 1, e.to_string())))
            .collect::<Result<_>>()?;
        match nx {
            None => nx = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::parse(no + 1, format!("expected {n} columns, found {}", row.len())));
            }
            _ => {}
        }
        values.extend(row);
        ny += 1;
    }
    Grid2D::from_values(nx.unwrap_or(0), ny, pitch, values)
}

pub fn write_grid_csv<T: Scalar>(grid: &Grid2D<T>, path: &Path) -> Result<()> {
    fs::write(path, grid_to_csv(grid))?;
    Ok(())
}

pub fn read_grid_csv<T: Scalar>(path: &Path, pitch: (f64, f64)) -> Result<Grid2D<T>> {
    grid_from_csv(&fs::read_to_string(path)?, pitch)
}

pub fn write_report_json<R: Serialize>(report: &R, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Floorplan dump: `@outline W H`, then `name die x y w h voltage power` per
/// block, then `@tsv signal|dummy x y count` per island. Nets are not kept.
pub fn floorplan_to_dump(fp: &Floorplan) -> String {
    let mut out = format!("@outline {} {}\n", fp.outline.0, fp.outline.1);
    for b in &fp.blocks {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            b.id,
            b.die.number(),
            b.pos.0,
            b.pos.1,
            b.dims.0,
            b.dims.1,
            b.voltage.volts(),
            b.nominal_power
        ));
    }
    for t in &fp.tsvs {
        let kind = match t.kind {
            TsvKind::Signal => "signal",
            TsvKind::Dummy => "dummy",
        };
        out.push_str(&format!("@tsv {kind} {} {} {}\n", t.center.0, t.center.1, t.count));
    }
    out
}

/// Reads a dump back; blocks come back as hard blocks of the dumped size.
pub fn floorplan_from_dump(text: &str) -> Result<Floorplan> {
    let mut fp: Option<Floorplan> = None;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(line_no, format!("bad number `{s}`")));
        match tok[0] {
            "@outline" => {
                if tok.len() != 3 || fp.is_some() {
                    return Err(Error::parse(line_no, "expected a single `@outline W H`"));
                }
                fp = Some(Floorplan::new((num(tok[1])?, num(tok[2])?)));
            }
            "@tsv" => {
                let fp = fp.as_mut().ok_or_else(|| Error::parse(line_no, "`@outline` must come first"))?;
                if tok.len() != 5 {
                    return Err(Error::parse(line_no, "expected `@tsv kind x y count`"));
                }
                let kind = match tok[1] {
                    "signal" => TsvKind::Signal,
                    "dummy" => TsvKind::Dummy,
                    k => return Err(Error::parse(line_no, format!("unknown TSV kind `{k}`"))),
                };
                let count: usize =
                    tok[4].parse().ok().filter(|c| *c >= 1).ok_or_else(|| Error::parse(line_no, "bad TSV count"))?;
                fp.tsvs.push(TsvIsland { center: (num(tok[2])?, num(tok[3])?), count, kind });
            }
            _ => {
                let fp = fp.as_mut().ok_or_else(|| Error::parse(line_no, "`@outline` must come first"))?;
                if tok.len() != 8 {
                    return Err(Error::parse(line_no, "expected `name die x y w h voltage power`"));
                }
                let die = tok[1]
                    .parse::<u8>()
                    .ok()
                    .and_then(|d| Die::from_number(d).ok())
                    .ok_or_else(|| Error::parse(line_no, format!("bad die `{}`", tok[1])))?;
                let (w, h) = (num(tok[4])?, num(tok[5])?);
                if !(w > 0.0 && h > 0.0) {
                    return Err(Error::parse(line_no, "block dims must be positive"));
                }
                let voltage = VoltageLevel::from_volts(num(tok[6])?).map_err(|e| Error::parse(line_no, e.to_string()))?;
                let power = num(tok[7])?;
                if !(power >= 0.0) {
                    return Err(Error::parse(line_no, "block power must be >= 0"));
                }
                fp.blocks.push(BlockModule {
                    id: tok[0].to_string(),
                    kind: BlockKind::Hard,
                    area: w * h,
                    aspect_limits: (w / h, w / h),
                    pos: (num(tok[2])?, num(tok[3])?),
                    dims: (w, h),
                    die,
                    nominal_power: power,
                    voltage,
                });
            }
        }
    }
    fp.ok_or_else(|| Error::parse(0, "missing `@outline`"))
}
