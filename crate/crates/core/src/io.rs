//! File helpers shared by the pipeline and the command-line front end.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dynamics::TrajectoryDataset;
use crate::reach::ProjectedInterval;
use crate::Result;

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_dataset(path: &Path, data: &TrajectoryDataset) -> Result<()> {
    ensure_parent(path)?;
    data.write_csv(BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    TrajectoryDataset::read_csv(BufReader::new(File::open(path)?))
}

/// CSV rows `step,lower,upper`.
pub fn write_projection_csv(path: &Path, rows: &[ProjectedInterval]) -> Result<()> {
    ensure_parent(path)?;
    let mut wr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    wr.write_record(["step", "lower", "upper"])?;
    for r in rows {
        wr.write_record([
            r.step.to_string(),
            format!("{:?}", r.lower),
            format!("{:?}", r.upper),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_projection_csv(path: &Path) -> Result<Vec<ProjectedInterval>> {
    let mut rd = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}
