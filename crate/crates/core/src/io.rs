//! On-disk formats: trajectory CSV with a JSON sidecar, plain numeric CSV
//! matrices, and atomic file replacement.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::Trajectory;
use crate::train::Dataset;

/// Sidecar metadata stored next to every trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub system: String,
    pub n: usize,
}

/// `run.csv` → `run.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Renders a header plus rows as CSV text. Floats use the shortest
/// round-trip representation.
pub fn csv_string<'a, I>(header: &[String], rows: I) -> Result<String>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let write_err = |e: csv::Error| Error::Config(format!("csv encoding failed: {e}"));
    if !header.is_empty() {
        w.write_record(header).map_err(write_err)?;
    }
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(write_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim()).map(|j| format!("x{j}")));
    let rows: Vec<Vec<f64>> = traj
        .rows()
        .enumerate()
        .map(|(k, x)| {
            let mut r = Vec::with_capacity(x.len() + 1);
            r.push(k as f64 * traj.dt());
            r.extend_from_slice(x);
            r
        })
        .collect();
    let text = csv_string(&header, rows.iter().map(Vec::as_slice))?;
    write_atomic(path, text.as_bytes())?;
    write_json(
        &sidecar_path(path),
        &TrajectoryMeta {
            dt: traj.dt(),
            system: traj.system().to_string(),
            n: traj.len(),
        },
    )
}

/// Reads a numeric CSV. With `has_header` the first record is skipped.
/// Every error names the 1-based line of the offending record.
pub fn read_matrix(path: &Path, has_header: bool) -> Result<(Vec<f64>, usize, usize)> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_err(
                    line,
                    format!("expected {w} fields, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok((data, rows, width.unwrap_or(0)))
}

pub fn write_matrix(path: &Path, data: &[f64], cols: usize) -> Result<()> {
    let text = csv_string(&[], data.chunks(cols.max(1)))?;
    write_atomic(path, text.as_bytes())
}

/// Writes feature/target pairs as CSV with header `x1..xM,y1..yM`.
pub fn write_pairs(path: &Path, data: &Dataset) -> Result<()> {
    let mut header: Vec<String> = (1..=data.dim).map(|j| format!("x{j}")).collect();
    header.extend((1..=data.dim).map(|j| format!("y{j}")));
    let rows: Vec<Vec<f64>> = (0..data.len())
        .map(|i| [data.feature(i), data.target(i)].concat())
        .collect();
    let text = csv_string(&header, rows.iter().map(Vec::as_slice))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_pairs(path: &Path) -> Result<Dataset> {
    let (data, rows, width) = read_matrix(path, true)?;
    if rows == 0 {
        return Err(Error::InsufficientData(format!("{} contains no pairs", path.display())));
    }
    if width < 2 || width % 2 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("a pairs file needs an even number of columns, found {width}"),
        });
    }
    let dim = width / 2;
    let mut features = Vec::with_capacity(rows * dim);
    let mut targets = Vec::with_capacity(rows * dim);
    for r in data.chunks_exact(width) {
        features.extend_from_slice(&r[..dim]);
        targets.extend_from_slice(&r[dim..]);
    }
    Dataset::new(features, targets, dim)
}

/// True when the CSV header starts with a `t` column, i.e. the file is a
/// trajectory rather than a pairs file.
pub fn is_trajectory_file(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    Ok(first.split(',').next().map(str::trim) == Some("t"))
}

/// Loads a trajectory written by [`write_trajectory`], validating it
/// against the sidecar.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let meta_path = sidecar_path(path);
    if !meta_path.exists() {
        return Err(Error::Parse {
            path: meta_path,
            line: 0,
            msg: "missing sidecar metadata with dt".into(),
        });
    }
    let meta: serde_json::Value = read_json(&meta_path)?;
    let dt = meta
        .get("dt")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Error::Parse {
            path: meta_path.clone(),
            line: 0,
            msg: "metadata has no numeric \"dt\"".into(),
        })?;
    let system = meta
        .get("system")
        .and_then(serde_json::Value::as_str)
        .unwrap_or("external")
        .to_string();

    let (data, rows, width) = read_matrix(path, true)?;
    if rows == 0 {
        return Err(Error::InsufficientData(format!(
            "{} contains no snapshots",
            path.display()
        )));
    }
    if width < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected a time column followed by at least one state column".into(),
        });
    }
    if let Some(n) = meta.get("n").and_then(serde_json::Value::as_u64) {
        if n as usize != rows {
            return Err(Error::Parse {
                path: meta_path,
                line: 0,
                msg: format!("metadata declares n = {n} but the file has {rows} rows"),
            });
        }
    }
    let states: Vec<f64> = data
        .chunks_exact(width)
        .flat_map(|r| r[1..].iter().copied())
        .collect();
    Trajectory::new(states, width - 1, dt, system)
}
