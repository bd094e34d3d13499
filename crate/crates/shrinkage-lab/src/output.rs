//! CSV result rows and the JSON metadata sidecar.
//!
//! CSV bodies are deterministic for a fixed (config, seed): rows are
//! assembled in sweep order, floats are printed at 17 significant digits,
//! and anything wall-clock related lives only in the metadata file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Fixed leading column order of every result CSV.
pub const CSV_COLUMNS: [&str; 9] = [
    "tag", "d", "beta_norm", "density", "estimate", "se", "n", "seed", "error",
];

/// One output record. `extra` carries experiment-specific trailing columns
/// (the `astar-surface` grid coordinates).
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub tag: String,
    pub d: usize,
    pub beta_norm: f64,
    pub density: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub n: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub extra: Vec<(&'static str, f64)>,
}

impl ResultRow {
    pub fn new(
        tag: &str,
        d: usize,
        beta_norm: f64,
        density: &str,
        estimate: f64,
        se: f64,
        n: usize,
        seed: u64,
    ) -> Self {
        Self {
            tag: tag.to_string(),
            d,
            beta_norm,
            density: density.to_string(),
            estimate: Some(estimate),
            se: Some(se),
            n,
            seed,
            error: None,
            extra: Vec::new(),
        }
    }

    /// Error row for an aborted sweep point; keeps the sweep analyzable.
    pub fn error_row(tag: &str, d: usize, beta_norm: f64, density: &str, seed: u64, err: &str) -> Self {
        Self {
            tag: tag.to_string(),
            d,
            beta_norm,
            density: density.to_string(),
            estimate: None,
            se: None,
            n: 0,
            seed,
            error: Some(err.to_string()),
            extra: Vec::new(),
        }
    }

    pub fn with_extra(mut self, name: &'static str, value: f64) -> Self {
        self.extra.push((name, value));
        self
    }
}

/// `{:.16e}` gives 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Renders the rows as one CSV document. All rows must share the same set of
/// extra columns.
pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut header: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    if let Some(first) = rows.first() {
        for (name, _) in &first.extra {
            header.push(name.to_string());
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let mut fields = vec![
            csv_quote(&row.tag),
            row.d.to_string(),
            fmt_float(row.beta_norm),
            csv_quote(&row.density),
            row.estimate.map(fmt_float).unwrap_or_default(),
            row.se.map(fmt_float).unwrap_or_default(),
            row.n.to_string(),
            row.seed.to_string(),
            csv_quote(row.error.as_deref().unwrap_or("")),
        ];
        for (_, value) in &row.extra {
            fields.push(fmt_float(*value));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Metadata sidecar written next to each CSV.
#[derive(Debug, Serialize)]
pub struct Metadata {
    pub library_version: &'static str,
    pub experiment: String,
    pub master_seed: u64,
    pub workers: usize,
    /// Echo of the fully resolved configuration, defaults included.
    pub resolved_config: serde_json::Value,
    /// Open-question defaults and conventions actually used in this run.
    pub notes: Vec<String>,
    pub wall_time_seconds: f64,
    pub finished_at_unix: u64,
}

pub struct OutputPaths {
    pub csv: PathBuf,
    pub metadata: PathBuf,
}

pub fn output_paths(dir: &Path, tag: &str, suffix: Option<&str>) -> OutputPaths {
    let stem = match suffix {
        Some(s) => format!("{tag}_{s}"),
        None => tag.to_string(),
    };
    OutputPaths {
        csv: dir.join(format!("{stem}.csv")),
        metadata: dir.join(format!("{stem}_metadata.json")),
    }
}

pub fn write_outputs(
    dir: &Path,
    tag: &str,
    rows: &[ResultRow],
    metadata: &Metadata,
) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let paths = output_paths(dir, tag, None);
    let mut f = fs::File::create(&paths.csv)?;
    f.write_all(render_csv(rows).as_bytes())?;
    let mut m = fs::File::create(&paths.metadata)?;
    m.write_all(serde_json::to_string_pretty(metadata)?.as_bytes())?;
    m.write_all(b"\n")?;
    Ok(paths.csv)
}

pub fn write_named_csv(dir: &Path, name: &str, body: &str) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(body.as_bytes())?;
    Ok(path)
}
