//! File formats shared by the toolkit: JSONL with a provenance header line,
//! provenance-stamped CSV, and JSON checkpoint containers.
//!
//! Every output file carries `{tool_version, config_hash, seed}` so a result
//! can always be traced back to the exact configuration that produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance stamp embedded in every output artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Provenance,
}

/// Write records as JSON Lines with a leading `{"header": ...}` line.
pub fn write_jsonl<T, I>(path: &Path, provenance: &Provenance, records: I) -> Result<()>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &HeaderLine {
            header: provenance.clone(),
        },
    )?;
    w.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a JSONL file, skipping a leading header line when present.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && serde_json::from_str::<HeaderLine>(&line).is_ok() {
            continue;
        }
        let rec: T = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Read the provenance header of a JSONL file, if it has one.
pub fn read_jsonl_header(path: &Path) -> Result<Option<Provenance>> {
    let reader = BufReader::new(File::open(path)?);
    match reader.lines().next() {
        Some(line) => Ok(serde_json::from_str::<HeaderLine>(&line?)
            .ok()
            .map(|h| h.header)),
        None => Ok(None),
    }
}

/// Write a CSV with a provenance comment line, a column-name row, then rows.
pub fn write_csv(
    path: &Path,
    provenance: &Provenance,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# tool_version={} config_hash={} seed={}",
        provenance.tool_version, provenance.config_hash, provenance.seed
    )?;
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Save a checkpoint-style value as pretty JSON.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}
