//! On-disk dataset format.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic   b"ADPV"
//! version u16
//! n_tx    u32
//! n_sub   u32
//! count   u64
//! records count x { H as f32 re/im interleaved row-major, x f32, y f32 }
//! ```
//!
//! A JSON sidecar at `<path>.json` carries the generating
//! [`ScenarioConfig`] and seed so splits and reruns are reproducible.
//! Values are stored at 32-bit precision; in memory everything is f64.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, ScenarioConfig};
use crate::cmat::CMat;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"ADPV";
pub const DATASET_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;

/// Sidecar metadata written next to the binary dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub n_samples: u64,
}

/// Path of the JSON sidecar for a dataset file.
pub fn sidecar_path(dataset_path: &Path) -> PathBuf {
    let mut s = dataset_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Serializes samples (which must share one shape) plus the sidecar.
pub fn write_dataset(
    path: &Path,
    samples: &[ChannelSample],
    sidecar: &DatasetSidecar,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Domain("refusing to write an empty dataset".into()));
    }
    let n_tx = samples[0].h.rows();
    let n_sub = samples[0].h.cols();
    for (i, s) in samples.iter().enumerate() {
        if s.h.rows() != n_tx || s.h.cols() != n_sub {
            return Err(Error::Format(format!(
                "sample {i} has shape {}x{}, expected {n_tx}x{n_sub}",
                s.h.rows(),
                s.h.cols()
            )));
        }
    }

    let mut buf = Vec::with_capacity(HEADER_LEN + samples.len() * (n_tx * n_sub * 8 + 8));
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n_tx as u32).to_le_bytes());
    buf.extend_from_slice(&(n_sub as u32).to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        for z in s.h.data() {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(s.position.0 as f32).to_le_bytes());
        buf.extend_from_slice(&(s.position.1 as f32).to_le_bytes());
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;

    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::Format(format!("sidecar serialization: {e}")))?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(side.clone(), e))?;
    Ok(())
}

/// Reads a dataset back, validating magic, version, and the declared
/// record count against the file size.
pub fn read_dataset(path: &Path) -> Result<(Vec<ChannelSample>, Option<DatasetSidecar>)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;

    if buf.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{}: file too short for a dataset header",
            path.display()
        )));
    }
    if buf[0..4] != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            &buf[0..4],
            DATASET_MAGIC
        )));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported dataset version {version}",
            path.display()
        )));
    }
    let n_tx = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let n_sub = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(buf[14..22].try_into().unwrap()) as usize;
    let record_len = n_tx * n_sub * 8 + 8;
    let expect_len = HEADER_LEN + count * record_len;
    if buf.len() != expect_len {
        return Err(Error::Format(format!(
            "{}: declared {count} records imply {expect_len} bytes, file has {}",
            path.display(),
            buf.len()
        )));
    }

    let sidecar = read_sidecar(path)?;
    let scenario_id = sidecar
        .as_ref()
        .map(|s| s.scenario.scenario_id.clone())
        .unwrap_or_default();

    let mut samples = Vec::with_capacity(count);
    let mut off = HEADER_LEN;
    let f32_at = |off: usize| -> f64 {
        f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64
    };
    for _ in 0..count {
        let mut data = Vec::with_capacity(n_tx * n_sub);
        for k in 0..n_tx * n_sub {
            let re = f32_at(off + 8 * k);
            let im = f32_at(off + 8 * k + 4);
            data.push(Complex64::new(re, im));
        }
        off += n_tx * n_sub * 8;
        let x = f32_at(off);
        let y = f32_at(off + 4);
        off += 8;
        samples.push(ChannelSample {
            h: CMat::from_data(n_tx, n_sub, data)?,
            position: (x, y),
            scenario_id: scenario_id.clone(),
        });
    }
    Ok((samples, sidecar))
}

fn read_sidecar(path: &Path) -> Result<Option<DatasetSidecar>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(side.clone(), e))?;
    let sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    Ok(Some(sidecar))
}
