//! CSV serialization of densities: header `x[,y],density`, one row per node, row-major.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{Axis, Grid};
use crate::model_space::GridDensity;

/// Writes node values (left-continuous at jumps) of any field under the given value column.
pub fn write_field_csv(field: &Field, value_col: &str, path: impl AsRef<Path>) -> Result<()> {
    let grid = field.grid();
    let mut w = csv::Writer::from_path(path)?;
    if grid.dim() == 1 {
        w.write_record(["x", value_col])?;
    } else {
        w.write_record(["x", "y", value_col])?;
    }
    for (i, v) in field.node_values().into_iter().enumerate() {
        let p = grid.point(i);
        let mut row: Vec<String> = p[..grid.dim()].iter().map(|c| format!("{c:.17e}")).collect();
        row.push(format!("{v:.17e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_density_csv(p: &GridDensity, path: impl AsRef<Path>) -> Result<()> {
    write_field_csv(p.field(), "density", path)
}

fn axis_from_coords(mut c: Vec<f64>) -> Result<Axis> {
    c.sort_by(f64::total_cmp);
    c.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    let n = c.len();
    if n < 3 {
        return Err(Error::InvalidGrid(format!("only {n} distinct coordinates")));
    }
    let axis = Axis::uniform(c[0], c[n - 1], n)?;
    for (a, b) in axis.nodes().iter().zip(&c) {
        if (a - b).abs() > 1e-9 * axis.step().max(1e-300) * n as f64 {
            return Err(Error::InvalidGrid(format!("coordinates are not uniformly spaced near {b}")));
        }
    }
    Ok(axis)
}

/// Reads a density written by [`write_density_csv`] (or any CSV of that shape).
pub fn read_density_csv(path: impl AsRef<Path>) -> Result<GridDensity> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let cols = r.headers()?.len();
    if !(cols == 2 || cols == 3) {
        return Err(Error::Parse(format!("expected x[,y],density columns, found {cols}")));
    }
    let dim = cols - 1;
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = [0.0; 3];
        for (k, slot) in row.iter_mut().enumerate().take(cols) {
            *slot = rec[k]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("'{}' in {}: {e}", &rec[k], path.as_ref().display())))?;
        }
        rows.push(row);
    }
    let ax = axis_from_coords(rows.iter().map(|r| r[0]).collect())?;
    let grid = if dim == 1 {
        Grid::new(vec![ax])?
    } else {
        let ay = axis_from_coords(rows.iter().map(|r| r[1]).collect())?;
        Grid::new(vec![ax, ay])?
    };
    if rows.len() != grid.len() {
        return Err(Error::InvalidGrid(format!("{} rows for a grid of {} nodes", rows.len(), grid.len())));
    }
    let mut values = vec![f64::NAN; grid.len()];
    for r in &rows {
        let idx = locate(&grid, &r[..dim])?;
        values[idx] = r[dim];
    }
    GridDensity::from_values(Arc::new(grid), values)
}

fn locate(grid: &Grid, x: &[f64]) -> Result<usize> {
    let mut idx = 0;
    for (a, ax) in grid.axes().iter().enumerate() {
        let i = ((x[a] - ax.lo()) / ax.step()).round() as usize;
        idx = idx * ax.len() + i.min(ax.len() - 1);
    }
    Ok(idx)
}
