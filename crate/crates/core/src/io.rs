//! CSV node tables and JSON specs on disk.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::chart::Lattice;
use crate::error::{IsoflowError, Result};
use crate::moser::{DensityField, DiffeoGrid};

/// A numeric table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            // shortest round-trip formatting keeps the files deterministic
            w.write_record(r.iter().map(|v| format!("{v:?}")))?;
        }
        let bytes = w.into_inner().map_err(|e| IsoflowError::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| IsoflowError::Parse(format!("row {}: {e}", line + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != header.len() {
                return Err(IsoflowError::Parse(format!("row {} has {} fields, header has {}", line + 1, row.len(), header.len())));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Indices of the columns `prefix0, prefix1, ...` in order.
    fn indexed(&self, prefix: &str) -> Vec<usize> {
        (0..).map_while(|i| self.column(&format!("{prefix}{i}"))).collect()
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| IsoflowError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IsoflowError::Parse(format!("{}: {e}", path.display())))
}

/// Columns `x0.., y0.., det`.
pub fn diffeo_table(grid: &DiffeoGrid) -> Table {
    let d = grid.nodes.first().map_or(0, |n| n.len());
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.extend((0..d).map(|i| format!("y{i}")));
    header.push("det".into());
    let mut t = Table { header, rows: Vec::with_capacity(grid.nodes.len()) };
    for ((x, y), det) in grid.nodes.iter().zip(&grid.map).zip(&grid.jacobian_det) {
        let mut row = x.clone();
        row.extend_from_slice(y);
        row.push(*det);
        t.rows.push(row);
    }
    t
}

pub fn diffeo_from_table(t: &Table) -> Result<DiffeoGrid> {
    let xs = t.indexed("x");
    let ys = t.indexed("y");
    let det = t.column("det").ok_or_else(|| IsoflowError::Parse("diffeo table needs a `det` column".into()))?;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(IsoflowError::Parse("diffeo table needs matching x0.. and y0.. columns".into()));
    }
    let pick = |row: &[f64], cols: &[usize]| cols.iter().map(|&c| row[c]).collect::<Vec<f64>>();
    Ok(DiffeoGrid {
        nodes: t.rows.iter().map(|r| pick(r, &xs)).collect(),
        map: t.rows.iter().map(|r| pick(r, &ys)).collect(),
        jacobian_det: t.rows.iter().map(|r| r[det]).collect(),
    })
}

/// Columns `x0.., value`, rows in lattice order.
pub fn density_table(d: &DensityField) -> Table {
    let lat = &d.lattice;
    let mut header: Vec<String> = (0..lat.dim()).map(|i| format!("x{i}")).collect();
    header.push("value".into());
    let mut t = Table { header, rows: Vec::with_capacity(lat.len()) };
    for k in 0..lat.len() {
        let mut row = lat.point(&lat.multi(k));
        row.push(d.values[k]);
        t.rows.push(row);
    }
    t
}

/// Rebuild a box lattice from the distinct coordinates of each column;
/// rows may come in any order.
pub fn density_from_table(t: &Table, collar: f64, periodic: bool) -> Result<DensityField> {
    let xs = t.indexed("x");
    let v = t.column("value").ok_or_else(|| IsoflowError::Parse("density table needs a `value` column".into()))?;
    if xs.is_empty() {
        return Err(IsoflowError::Parse("density table needs x0.. columns".into()));
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for &c in &xs {
        let mut vals: Vec<f64> = t.rows.iter().map(|r| r[c]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        if vals.len() < 2 {
            return Err(IsoflowError::Parse(format!("column x{} has fewer than two distinct values", axes.len())));
        }
        let spacing = (vals[vals.len() - 1] - vals[0]) / (vals.len() - 1) as f64;
        if vals.windows(2).any(|w| ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing.abs().max(1.0)) {
            return Err(IsoflowError::Parse(format!("column x{} is not uniformly spaced", axes.len())));
        }
        axes.push(vals);
    }
    let counts: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let lattice = if periodic {
        let lo: Vec<f64> = axes.iter().map(|a| a[0]).collect();
        if lo.iter().any(|v| v.abs() > 1e-12) {
            return Err(IsoflowError::Parse("periodic density tables start at the origin".into()));
        }
        Lattice { origin: lo, spacing: axes.iter().map(|a| a[1] - a[0]).collect(), counts: counts.clone(), periodic: true }
    } else {
        let lo: Vec<f64> = axes.iter().map(|a| a[0]).collect();
        let hi: Vec<f64> = axes.iter().map(|a| a[a.len() - 1]).collect();
        Lattice::spanning(&lo, &hi, &counts)?
    };
    if t.rows.len() != lattice.len() {
        return Err(IsoflowError::Parse(format!("density table has {} rows for a {:?} lattice", t.rows.len(), counts)));
    }
    let mut values = vec![f64::NAN; lattice.len()];
    for r in &t.rows {
        let idx: Vec<usize> = xs
            .iter()
            .zip(&axes)
            .map(|(&c, a)| a.partition_point(|v| *v < r[c] - 1e-12 * (1.0 + r[c].abs())))
            .collect();
        values[lattice.flat(&idx)] = r[v];
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(IsoflowError::Parse("density table has duplicate or missing nodes".into()));
    }
    DensityField::from_values(lattice, values, collar)
}
