use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use twinbeam::io::{write_grid_csv, write_json, write_pgm, PgmScale};
use twinbeam::Result;

use crate::Format;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Serialize)]
struct Resolved<'a, T> {
    command: &'a str,
    format: Format,
    config: &'a T,
}

/// Archives the configuration actually used, defaults filled in.
pub fn write_resolved<T: Serialize>(out: &Path, command: &str, format: Format, config: &T) -> Result<()> {
    write_json(
        &out.join(RESOLVED_CONFIG),
        &Resolved {
            command,
            format,
            config,
        },
    )
}

/// Writes `<stem>.csv` and/or `<stem>.pgm` according to `format`.
pub fn grid(out: &Path, stem: &str, grid: &Array2<f64>, format: Format) -> Result<()> {
    grid_scaled(out, stem, grid, PgmScale::of(grid), format)
}

pub fn grid_scaled(out: &Path, stem: &str, grid: &Array2<f64>, scale: PgmScale, format: Format) -> Result<()> {
    if format.csv() {
        write_grid_csv(&out.join(format!("{stem}.csv")), grid)?;
    }
    if format.pgm() {
        write_pgm(&out.join(format!("{stem}.pgm")), grid, scale, true)?;
    }
    Ok(())
}

/// Mean and standard error of `xs`; the error is 0 for fewer than two values.
pub fn mean_se(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.into_iter().collect();
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
