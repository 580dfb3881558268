//! Persistence: snapshot and profile CSV, run metadata JSON and the
//! content hash of a profile expansion.
//!
//! Floats are written with 17 significant digits so that every value
//! round-trips bit for bit; lines end with `'\n'`.

use crate::evolution::{SnapshotRecord, SNAPSHOT_COLUMNS};
use crate::profile::ProfileExpansion;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
}

/// Library version written next to every output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// 17 significant digits in scientific notation.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Render a numeric table as CSV.
pub fn table_csv(header: &[String], rows: &[Vec<f64>]) -> Result<String, IoError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(IoError::Malformed(format!(
                "row of length {} under {} columns",
                r.len(),
                header.len()
            )));
        }
        w.write_record(r.iter().map(|&x| format_f64(x)))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| IoError::Malformed(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| IoError::Malformed(e.to_string()))
}

/// Parse a numeric CSV table with a header row.
pub fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| IoError::Malformed(format!("row {}: {f:?}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Snapshot CSV with the fixed column order of [`SNAPSHOT_COLUMNS`].
pub fn snapshots_csv(records: &[SnapshotRecord]) -> Result<String, IoError> {
    let header: Vec<String> = SNAPSHOT_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.row().to_vec()).collect();
    table_csv(&header, &rows)
}

/// Inverse of [`snapshots_csv`]; columns are matched by name.
pub fn parse_snapshots(text: &str) -> Result<Vec<SnapshotRecord>, IoError> {
    let (header, rows) = parse_table(text)?;
    let index: Vec<usize> = SNAPSHOT_COLUMNS
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| IoError::Malformed(format!("missing column {c}")))
        })
        .collect::<Result<_, _>>()?;
    rows.iter()
        .map(|r| {
            let v: Vec<f64> = index
                .iter()
                .map(|&i| r.get(i).copied().unwrap_or(f64::NAN))
                .collect();
            Ok(SnapshotRecord {
                t: v[0],
                s: v[1],
                mass: v[2],
                energy: v[3],
                grad_norm: v[4],
                sup_norm: v[5],
                vertex_abs: v[6],
                b: v[7],
                lambda: v[8],
                theta: v[9],
                h_l2: v[10],
                h_h1: v[11],
                yh_l2: v[12],
                mod_norm: v[13],
            })
        })
        .collect()
}

/// Canonical text of an expansion: parameters, grid, `α_{j,k}` and the
/// profile table.
pub fn profile_canonical_bytes(exp: &ProfileExpansion) -> Result<Vec<u8>, IoError> {
    let mut out = format!(
        "kappa {}\ngamma {}\ngrid {} {} {}\n",
        exp.kappa,
        format_f64(exp.gamma),
        exp.grid.n_edges,
        format_f64(exp.grid.l_max),
        exp.grid.n_points
    );
    for a in &exp.alphas {
        out.push_str(&format!("alpha {} {} {}\n", a.j, a.k, format_f64(a.value)));
    }
    let (header, rows) = exp.export_columns();
    out.push_str(&table_csv(&header, &rows)?);
    Ok(out.into_bytes())
}

/// Git-style blob hash: SHA-256 of `"blob {len}\0"` followed by the content.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn profile_hash(exp: &ProfileExpansion) -> Result<String, IoError> {
    Ok(blob_hash(&profile_canonical_bytes(exp)?))
}

/// Metadata written next to every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub profile_hash: Option<String>,
}

/// An output directory; files are written whole.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self, IoError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|source| IoError::File {
            path: root.clone(),
            source,
        })?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, IoError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|source| IoError::File {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, IoError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// `config.json` with the resolved configuration, version and profile hash.
    pub fn write_metadata<T: Serialize>(
        &self,
        command: &str,
        config: &T,
        profile: Option<&ProfileExpansion>,
    ) -> Result<RunMetadata, IoError> {
        let meta = RunMetadata {
            command: command.to_string(),
            version: VERSION.to_string(),
            config: serde_json::to_value(config)?,
            profile_hash: profile.map(profile_hash).transpose()?,
        };
        self.write_json("config.json", &meta)?;
        Ok(meta)
    }
}
