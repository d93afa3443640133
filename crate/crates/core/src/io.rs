//! On-disk formats: the binary CIR tensor container, commented CSV tables and
//! atomic file writes.
//!
//! Tensor container layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "GBSMCIR1"
//! offset 8   u64       header length H in bytes
//! offset 16  H bytes   UTF-8 JSON header (see TensorHeader)
//! offset 16+H          payload: interleaved (re, im) f32 pairs, index order
//!                      (rx, tx, tap, time) with time fastest
//! ```
//!
//! CSV files start with `# key: value` comment lines (always including
//! `schema_version`), followed by one column-name row and the data rows.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::stats::{Estimator, StatSeries};

pub const TENSOR_MAGIC: &[u8; 8] = b"GBSMCIR1";
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dims: [usize; 4],
    pub order: [String; 4],
    pub dtype: String,
    /// 1-based antenna indices along the first two axes.
    pub rx_antennas: Vec<usize>,
    pub tx_antennas: Vec<usize>,
    /// Absolute tap delays, seconds.
    pub delays: Vec<f64>,
    pub time_start: f64,
    pub time_step: f64,
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    pub config_hash: Option<String>,
}

impl TensorHeader {
    pub fn for_realization(r: &ChannelRealization, config_hash: Option<String>) -> Self {
        Self {
            dims: r.shape(),
            order: ["rx", "tx", "tap", "time"].map(String::from),
            dtype: "complex64".into(),
            rx_antennas: r.selection.rx.clone(),
            tx_antennas: r.selection.tx.clone(),
            delays: r.delays.clone(),
            time_start: r.grid.start,
            time_step: r.grid.step,
            seed: r.provenance.map(|p| p.0),
            stream: r.provenance.map(|p| p.1),
            config_hash,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Encodes a realization as a tensor container.
pub fn encode_tensor(r: &ChannelRealization, config_hash: Option<String>) -> Result<Vec<u8>> {
    let header = TensorHeader::for_realization(r, config_hash);
    let json = serde_json::to_vec(&header).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * r.gains().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for g in r.gains() {
        out.extend_from_slice(&(g.re as f32).to_le_bytes());
        out.extend_from_slice(&(g.im as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_tensor(path: &Path, r: &ChannelRealization, config_hash: Option<String>) -> Result<()> {
    atomic_write(path, &encode_tensor(r, config_hash)?)
}

pub fn read_tensor(path: &Path) -> Result<(TensorHeader, Vec<Complex32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<(TensorHeader, Vec<Complex32>), String> {
    if bytes.len() < 16 || &bytes[..8] != TENSOR_MAGIC {
        return Err("bad magic".into());
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or("truncated header")?;
    let header: TensorHeader = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    if header.dtype != "complex64" {
        return Err(format!("unsupported dtype {}", header.dtype));
    }
    let payload = &bytes[16 + hlen..];
    if payload.len() != 8 * header.num_elements() {
        return Err(format!(
            "payload has {} bytes, dims {:?} need {}",
            payload.len(),
            header.dims,
            8 * header.num_elements()
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
            )
        })
        .collect();
    Ok((header, data))
}

/// Writes `bytes` to a temporary sibling file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    res.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// A CSV table with `# key: value` metadata lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("schema_version".into(), CSV_SCHEMA_VERSION.to_string());
        meta.insert("kind".into(), kind.into());
        Self {
            meta,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        // schema_version first so readers can bail early
        if let Some(v) = self.meta.get("schema_version") {
            s.push_str(&format!("# schema_version: {v}\n"));
        }
        for (k, v) in self.meta.iter().filter(|(k, _)| *k != "schema_version") {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut t = CsvTable::default();
        let mut lines = text.lines();
        for line in lines.by_ref() {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once(':').ok_or_else(|| format!("bad meta line {line:?}"))?;
                t.meta.insert(k.trim().into(), v.trim().into());
            } else {
                t.columns = line.split(',').map(String::from).collect();
                break;
            }
        }
        if t.columns.is_empty() {
            return Err("missing column row".into());
        }
        for line in lines.filter(|l| !l.is_empty()) {
            let row: Vec<String> = line.split(',').map(String::from).collect();
            if row.len() != t.columns.len() {
                return Err(format!("row {line:?} has {} fields, expected {}", row.len(), t.columns.len()));
            }
            t.rows.push(row);
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.render().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Shortest round-trip decimal form; identical inputs give identical text.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn estimator_label(e: &Estimator) -> (&'static str, usize) {
    match e {
        Estimator::Analytic => ("analytic", 0),
        Estimator::MonteCarlo { samples } => ("monte-carlo", *samples),
    }
}

/// Appends a series to a table with columns `[extra..., axis, re, im, abs, se]`.
pub fn push_series(table: &mut CsvTable, extra: &[String], series: &StatSeries) {
    for (i, (x, v)) in series.grid.iter().zip(&series.values).enumerate() {
        let mut row = extra.to_vec();
        row.extend([fmt_f64(*x), fmt_f64(v.re), fmt_f64(v.im), fmt_f64(v.norm())]);
        row.push(series.std_err.as_ref().map_or(String::new(), |se| fmt_f64(se[i])));
        table.push(row);
    }
}

pub fn complex_cells(v: Complex64) -> [String; 3] {
    [fmt_f64(v.re), fmt_f64(v.im), fmt_f64(v.norm())]
}

/// Record of one CLI invocation, enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    /// Effective configuration as TOML, including any command-line overrides.
    pub config: String,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Numerical(e.to_string()))?;
        atomic_write(path, &json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
