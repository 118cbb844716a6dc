//! On-disk artifacts: trace containers, heatmaps and JSON reports.
//!
//! A trace container is a binary `.emtr` file plus a JSON sidecar:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMTR"
//! 4       4     version (u32 LE)
//! 8       8     trace_count (u64 LE)
//! 16      4     samples_per_trace (u32 LE)
//! 20      ...   samples, f32 LE, row-major (trace by trace)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::crypto::{from_hex16, to_hex};
use crate::error::{Error, Result};
use crate::trace::{Cell, Trace};

pub const MAGIC: &[u8; 4] = b"EMTR";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u32,
    pub trace_count: u64,
    pub samples_per_trace: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub trace_count: usize,
    pub samples_per_trace: usize,
    pub key: String,
    pub plaintexts: Vec<String>,
    pub cell: Cell,
    pub backend: String,
    pub seed: u64,
}

/// Serializes the samples of a batch into container bytes.
pub fn encode_container(traces: &[Trace]) -> Result<Vec<u8>> {
    let len = traces.first().map_or(0, Trace::len);
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Container("traces differ in length".into()));
    }
    let spt = u32::try_from(len).map_err(|_| Error::Container("trace too long".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + traces.len() * len * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(traces.len() as u64).to_le_bytes());
    out.extend_from_slice(&spt.to_le_bytes());
    for t in traces {
        for v in &t.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses container bytes into the header and one sample row per trace.
pub fn decode_container(bytes: &[u8]) -> Result<(ContainerHeader, Vec<Vec<f32>>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Container(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let header = ContainerHeader {
        version: u32_at(4),
        trace_count: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        samples_per_trace: u32_at(16),
    };
    if header.version != VERSION {
        return Err(Error::Container(format!("unsupported version {}", header.version)));
    }
    let spt = header.samples_per_trace as usize;
    let expected = (header.trace_count as u128) * (spt as u128) * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u128 != expected {
        return Err(Error::Container(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let rows = if spt == 0 {
        vec![Vec::new(); header.trace_count as usize]
    } else {
        payload
            .chunks_exact(spt * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect()
    };
    Ok((header, rows))
}

fn sidecar_path(container: &Path) -> PathBuf {
    container.with_extension("json")
}

/// Writes `<path>` (binary) and `<path minus extension>.json` (sidecar).
/// All traces must share one key and one cell.
pub fn write_container(path: &Path, traces: &[Trace], backend: &str, seed: u64) -> Result<()> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Container("refusing to write an empty container".into()))?;
    if traces.iter().any(|t| t.key != first.key || t.cell != first.cell) {
        return Err(Error::Container("traces must share key and cell".into()));
    }
    let sidecar = Sidecar {
        trace_count: traces.len(),
        samples_per_trace: first.len(),
        key: to_hex(&first.key),
        plaintexts: traces.iter().map(|t| to_hex(&t.plaintext)).collect(),
        cell: first.cell,
        backend: backend.to_string(),
        seed,
    };
    fs::write(path, encode_container(traces)?)?;
    write_json(&sidecar_path(path), &sidecar)
}

/// Reads a container and its sidecar back into traces.
pub fn read_container(path: &Path) -> Result<(Vec<Trace>, Sidecar)> {
    let (header, rows) = decode_container(&fs::read(path)?)?;
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    if sidecar.trace_count as u64 != header.trace_count
        || sidecar.samples_per_trace != header.samples_per_trace as usize
        || sidecar.plaintexts.len() != sidecar.trace_count
    {
        return Err(Error::Container("sidecar counts disagree with the header".into()));
    }
    let key = from_hex16(&sidecar.key)?;
    let traces = rows
        .into_iter()
        .zip(&sidecar.plaintexts)
        .map(|(samples, pt)| {
            Ok(Trace {
                samples,
                plaintext: from_hex16(pt)?,
                key,
                cell: sidecar.cell,
            })
        })
        .collect::<Result<_>>()?;
    Ok((traces, sidecar))
}

/// `n` rows of `n` comma-separated values; row `j` is grid `y = j`.
/// Values use the shortest exact representation so the file round-trips.
pub fn heatmap_csv(values: &[f64], n: usize) -> Result<String> {
    if values.len() != n * n || n == 0 {
        return Err(Error::invalid(format!("{} values do not form a {n}x{n} grid", values.len())));
    }
    let mut out = String::new();
    for row in values.chunks(n) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out += &line.join(",");
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_heatmap_csv(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut values = Vec::new();
    let mut n = None;
    for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, v)| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    source_name: "heatmap".into(),
                    line: line_no + 1,
                    column: col + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if *n.get_or_insert(row.len()) != row.len() {
            return Err(Error::Parse {
                source_name: "heatmap".into(),
                line: line_no + 1,
                column: 1,
                message: "ragged row".into(),
            });
        }
        values.extend(row);
    }
    let n = n.unwrap_or(0);
    if n == 0 || values.len() != n * n {
        return Err(Error::invalid("heatmap is not square"));
    }
    Ok((values, n))
}

/// Binary 16-bit PGM; `p = round(65535 (v - min) / (max - min))`, with the
/// bounds recorded in a comment line so values can be approximately recovered.
pub fn heatmap_pgm(values: &[f64], n: usize) -> Result<Vec<u8>> {
    if values.len() != n * n || n == 0 {
        return Err(Error::invalid(format!("{} values do not form a {n}x{n} grid", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PGM heatmaps need finite values"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = format!("P5\n# min={min:e} max={max:e} value=min+(max-min)*p/65535\n{n} {n}\n65535\n").into_bytes();
    for &v in values {
        let p = if span > 0.0 { ((v - min) / span * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&p.to_be_bytes());
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// One CSV per trajectory: `traces,k00,...,kff`.
pub fn trajectory_csv(t: &crate::attack::CorrelationTrajectory) -> String {
    let mut out = String::from("traces");
    for k in 0..256 {
        out += &format!(",k{k:02x}");
    }
    out.push('\n');
    for (c, row) in t.checkpoints.iter().zip(&t.rho) {
        out += &c.to_string();
        for v in row {
            out += &format!(",{v}");
        }
        out.push('\n');
    }
    out
}
