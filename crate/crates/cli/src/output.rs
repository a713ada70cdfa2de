use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use splitvie::dataset::{write_vsf, VsfArray};
use splitvie::{Complex64, Grid2D};

pub const SCHEMA_VERSION: u32 = 1;

/// Prints `body` with schema fields added and optionally writes it to `path`.
pub fn emit(kind: &str, mut body: Value, path: Option<&Path>) -> Result<()> {
    if let Value::Object(map) = &mut body {
        map.insert("schema".into(), json!(format!("splitvie.{kind}")));
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    let text = serde_json::to_string_pretty(&body)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(e.into()),
        _ => {}
    }
    if let Some(p) = path {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn write_grid(dir: &Path, name: &str, grid: &Grid2D, values: &[Complex64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let array = VsfArray { rank: 2, dims: [grid.ny, grid.nx], data: values.to_vec() };
    write_vsf(&dir.join(format!("{name}.vsf")), &array).with_context(|| format!("writing {name}.vsf"))
}

pub fn write_vector(dir: &Path, name: &str, values: &[Complex64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_vsf(&dir.join(format!("{name}.vsf")), &VsfArray::vector(values.to_vec()))
        .with_context(|| format!("writing {name}.vsf"))
}

/// Binary PGM of `|values|` scaled to the maximum, top row = largest `y`.
pub fn write_heatmap(path: &Path, grid: &Grid2D, values: &[Complex64]) -> Result<()> {
    let max = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut bytes = format!("P5\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for j in (0..grid.ny).rev() {
        for i in 0..grid.nx {
            let v = values[grid.index(i, j)].norm();
            let level = if max > 0.0 { (255.0 * v / max).round() } else { 0.0 };
            bytes.push(level as u8);
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
