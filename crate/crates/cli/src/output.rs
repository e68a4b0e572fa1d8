//! CSV writers. Floats are printed with 17 significant digits so every
//! f64 round-trips exactly and replotting is lossless.

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use std::fmt::Write as _;
use std::path::Path;

/// One CSV cell.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    UInt(u64),
    Float(f64),
    Str(String),
    Empty,
}

pub fn float_repr(x: f64) -> String {
    format!("{x:.16e}")
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::UInt(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Float(v) => {
                let _ = write!(out, "{}", float_repr(*v));
            }
            Cell::Str(s) => {
                let _ = write!(out, "{s}");
            }
            Cell::Empty => {}
        }
    }
}

pub fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<Cell>>,
) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        let mut first = true;
        for cell in &row {
            if !first {
                text.push(',');
            }
            first = false;
            cell.render(&mut text);
        }
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Column names for a flattened row-major matrix, e.g. `xi_0_1`.
pub fn matrix_columns(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            names.push(format!("{prefix}_{r}_{c}"));
        }
    }
    names
}

/// Flatten a matrix row-major into float cells.
pub fn matrix_cells(m: &DMatrix<f64>) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            cells.push(Cell::Float(m[(r, c)]));
        }
    }
    cells
}
