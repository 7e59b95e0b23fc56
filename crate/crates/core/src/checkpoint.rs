//! Model checkpoint container.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic    b"ADPC"
//! version  u16
//! 3 x JSON section { len u32, bytes }:   VitConfig, TrainConfig, LabelScaler
//! n_params u32
//! per parameter { name len u32, name bytes, ndims u32, dims u64..., data f64... }
//! crc32    u32 over everything above
//! ```
//!
//! Parameters are stored in declaration order as 64-bit floats. Carrying
//! the train config and label scaler makes a checkpoint self-contained:
//! evaluation can rebuild the exact dataset split and map normalized
//! outputs back to meters.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;
use crate::training::{LabelScaler, TrainConfig};
use crate::vit::VitConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ADPC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Everything needed to restore and evaluate a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub vit_config: VitConfig,
    pub train_config: TrainConfig,
    pub scaler: LabelScaler,
    pub params: ParamSet,
}

fn push_json<T: serde::Serialize>(buf: &mut Vec<u8>, value: &T) -> Result<()> {
    let text = serde_json::to_vec(value)
        .map_err(|e| Error::Format(format!("checkpoint section serialization: {e}")))?;
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(&text);
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        serde_json::from_slice(bytes)
            .map_err(|e| Error::Format(format!("checkpoint section parse: {e}")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    push_json(&mut buf, &ckpt.vit_config)?;
    push_json(&mut buf, &ckpt.train_config)?;
    push_json(&mut buf, &ckpt.scaler)?;
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for entry in ckpt.params.entries() {
        buf.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(entry.name.as_bytes());
        buf.extend_from_slice(&(entry.value.shape().len() as u32).to_le_bytes());
        for &d in entry.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in entry.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 10 {
        return Err(Error::Format(format!(
            "{}: too short for a checkpoint",
            path.display()
        )));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(Error::Format(format!(
            "{}: checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})",
            path.display()
        )));
    }

    let mut r = Reader { buf: body, off: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: bad checkpoint magic", path.display())));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let vit_config: VitConfig = r.json()?;
    let train_config: TrainConfig = r.json()?;
    let scaler: LabelScaler = r.json()?;
    let n_params = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| Error::Format(format!("checkpoint parameter name: {e}")))?;
        let ndims = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let bytes = r.take(8)?;
            data.push(f64::from_le_bytes(bytes.try_into().unwrap()));
        }
        // Decay flags are a property of the layout, re-derived on load.
        params.push(name, Tensor::new(shape, data)?, false);
    }
    if r.off != body.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after parameters",
            path.display(),
            body.len() - r.off
        )));
    }
    Ok(Checkpoint {
        vit_config,
        train_config,
        scaler,
        params,
    })
}
