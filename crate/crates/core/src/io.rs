//! CSV formats for cell fields and tabulated velocities.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretize::{CellField, VelocityField};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Serialize, Deserialize)]
struct CellRow {
    cell_id: usize,
    value: f64,
}

/// Writes `cell_id,value` rows.
pub fn write_cell_field(path: &Path, field: &CellField) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for (cell_id, &value) in field.values.iter().enumerate() {
        w.serialize(CellRow { cell_id, value }).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `cell_id,value` rows in any order; every id in `0..n` must appear
/// exactly once. With `n_cells = None` the largest id fixes `n`.
pub fn read_cell_field(path: &Path, n_cells: Option<usize>) -> Result<CellField> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut rows = Vec::new();
    for (line, row) in r.deserialize::<CellRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))?;
        if !row.value.is_finite() {
            return Err(Error::parse(path, format!("cell {} holds {}", row.cell_id, row.value)));
        }
        rows.push(row);
    }
    let n = n_cells.unwrap_or_else(|| rows.iter().map(|r| r.cell_id + 1).max().unwrap_or(0));
    let mut values = vec![f64::NAN; n];
    for row in &rows {
        let slot = values
            .get_mut(row.cell_id)
            .ok_or_else(|| Error::parse(path, format!("cell id {} out of range 0..{n}", row.cell_id)))?;
        if !slot.is_nan() {
            return Err(Error::parse(path, format!("cell id {} appears twice", row.cell_id)));
        }
        *slot = row.value;
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::parse(path, format!("cell id {i} is missing")));
    }
    Ok(CellField::new(values, 0.0))
}

#[derive(Deserialize)]
struct VelocityRow {
    t: f64,
    x: f64,
    y: f64,
    ux: f64,
    uy: f64,
}

/// Velocity sampled on a tensor grid at one or more times. Bilinear in space,
/// linear in time between sample times, constant beyond the first and last.
/// Points outside the grid take the value at the nearest grid point.
#[derive(Debug, Clone)]
pub struct TabulatedVelocity {
    times: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// `values[ti][j * xs.len() + i]`.
    values: Vec<Vec<Point2>>,
    bound: f64,
}

fn distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl TabulatedVelocity {
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let rows = r
            .deserialize::<VelocityRow>()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        if rows.iter().any(|r| ![r.t, r.x, r.y, r.ux, r.uy].iter().all(|v| v.is_finite())) {
            return Err(Error::parse(path, "non-finite sample"));
        }
        let times = distinct(rows.iter().map(|r| r.t).collect());
        let xs = distinct(rows.iter().map(|r| r.x).collect());
        let ys = distinct(rows.iter().map(|r| r.y).collect());
        if xs.len() < 2 || ys.len() < 2 {
            return Err(Error::parse(path, "need at least two distinct x and y coordinates"));
        }
        let per = xs.len() * ys.len();
        if rows.len() != per * times.len() {
            return Err(Error::parse(
                path,
                format!(
                    "{} rows do not fill a {}x{} grid at {} times",
                    rows.len(),
                    xs.len(),
                    ys.len(),
                    times.len()
                ),
            ));
        }
        let mut values = vec![vec![Point2::new(f64::NAN, f64::NAN); per]; times.len()];
        let find = |v: &[f64], x: f64| v.binary_search_by(|p| p.total_cmp(&x)).unwrap();
        for r in &rows {
            let slot = &mut values[find(&times, r.t)][find(&ys, r.y) * xs.len() + find(&xs, r.x)];
            if !slot.x.is_nan() {
                return Err(Error::parse(path, format!("duplicate sample at t={} x={} y={}", r.t, r.x, r.y)));
            }
            *slot = Point2::new(r.ux, r.uy);
        }
        let bound = values.iter().flatten().map(|u| u.norm()).fold(0.0, f64::max);
        Ok(Self {
            times,
            xs,
            ys,
            values,
            bound,
        })
    }

    /// Cell of `v` containing `x` and the fractional offset, clamped to the grid.
    fn bracket(v: &[f64], x: f64) -> (usize, f64) {
        let x = x.clamp(v[0], v[v.len() - 1]);
        let i = v.partition_point(|&p| p <= x).clamp(1, v.len() - 1) - 1;
        (i, (x - v[i]) / (v[i + 1] - v[i]))
    }

    fn at_level(&self, ti: usize, p: Point2) -> Point2 {
        let (i, s) = Self::bracket(&self.xs, p.x);
        let (j, r) = Self::bracket(&self.ys, p.y);
        let nx = self.xs.len();
        let g = &self.values[ti];
        let lower = g[j * nx + i] * (1.0 - s) + g[j * nx + i + 1] * s;
        let upper = g[(j + 1) * nx + i] * (1.0 - s) + g[(j + 1) * nx + i + 1] * s;
        lower * (1.0 - r) + upper * r
    }
}

impl VelocityField for TabulatedVelocity {
    fn velocity(&self, t: f64, x: Point2) -> Point2 {
        if self.times.len() == 1 || t <= self.times[0] {
            return self.at_level(0, x);
        }
        let last = self.times.len() - 1;
        if t >= self.times[last] {
            return self.at_level(last, x);
        }
        let (k, w) = Self::bracket(&self.times, t);
        self.at_level(k, x) * (1.0 - w) + self.at_level(k + 1, x) * w
    }

    fn sup_norm(&self) -> f64 {
        self.bound
    }

    fn is_steady(&self) -> bool {
        self.times.len() == 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn cell_field_round_trip() {
        let f = CellField::new(vec![0.1, 2.5e-17, -3.0, 1.0 / 3.0], 0.0);
        let out = tempfile::NamedTempFile::new().unwrap();
        write_cell_field(out.path(), &f).unwrap();
        let text = std::fs::read_to_string(out.path()).unwrap();
        assert!(text.starts_with("cell_id,value\n"));
        assert_eq!(read_cell_field(out.path(), Some(4)).unwrap().values, f.values);
    }

    #[test]
    fn cell_field_rows_may_come_in_any_order() {
        let f = file("cell_id,value\n1,2\n0,1\n");
        assert_eq!(read_cell_field(f.path(), None).unwrap().values, vec![1.0, 2.0]);
    }

    #[test]
    fn cell_field_gaps_and_repeats_rejected() {
        for text in ["cell_id,value\n0,1\n0,2\n", "cell_id,value\n0,1\n2,1\n", "cell_id,value\n0,x\n", "cell_id,value\n0,NaN\n"] {
            assert!(matches!(read_cell_field(file(text).path(), None), Err(Error::Parse { .. })), "{text}");
        }
        assert!(read_cell_field(file("cell_id,value\n0,1\n").path(), Some(2)).is_err());
    }

    #[test]
    fn bilinear_samples_reproduce_bilinear_fields() {
        // u = (1 + 2x + 3y + 4xy, -x) sampled on an uneven grid at two times.
        let mut text = String::from("t,x,y,ux,uy\n");
        for t in [0.0, 1.0] {
            for y in [0.0, 0.3, 1.0] {
                for x in [0.0, 0.5, 0.75, 1.0] {
                    let s = 1.0 + t;
                    text += &format!("{t},{x},{y},{},{}\n", s * (1.0 + 2.0 * x + 3.0 * y + 4.0 * x * y), -s * x);
                }
            }
        }
        let u = TabulatedVelocity::from_csv(file(&text).path()).unwrap();
        assert!(!u.is_steady());
        let p = Point2::new(0.61, 0.42);
        let v = u.velocity(0.25, p);
        let s = 1.25;
        assert!((v.x - s * (1.0 + 2.0 * p.x + 3.0 * p.y + 4.0 * p.x * p.y)).abs() < 1e-12);
        assert!((v.y + s * p.x).abs() < 1e-12);
        // Clamped outside.
        assert_eq!(u.velocity(5.0, Point2::new(2.0, -1.0)), u.velocity(1.0, Point2::new(1.0, 0.0)));
        assert!(u.sup_norm() >= v.norm());
    }

    #[test]
    fn ragged_velocity_tables_rejected() {
        let text = "t,x,y,ux,uy\n0,0,0,1,1\n0,1,0,1,1\n0,0,1,1,1\n";
        assert!(matches!(TabulatedVelocity::from_csv(file(text).path()), Err(Error::Parse { .. })));
    }
}
