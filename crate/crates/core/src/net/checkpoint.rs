//! `MVDW` checkpoint files.
//!
//! Layout (little-endian): magic `MVDW`, u32 length + UTF-8 JSON config
//! echo, u32 tensor count, then per tensor: u32 name length, name, u32 rank,
//! u32 dims, f32 data.

use std::fs;
use std::path::Path;

use serde_json::Value;

use super::model::{ModelConfig, Mvdet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MVDW";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serializes `model`; `echo` is stored under `"run"` next to the model config.
pub fn checkpoint_bytes(model: &Mvdet<f32>, echo: &Value) -> Result<Vec<u8>> {
    let header = serde_json::json!({ "model": model.config, "run": echo });
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    let names = model.param_names();
    let shapes = model.param_shapes();
    let params = model.params();
    put_u32(&mut out, names.len());
    for ((name, shape), data) in names.iter().zip(&shapes).zip(params) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len());
        for &d in shape {
            put_u32(&mut out, d);
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Rebuilds the model and returns the stored run echo.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Mvdet<f32>, Value)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("missing MVDW magic".into()));
    }
    let json_len = r.u32()?;
    let mut header: Value = serde_json::from_slice(r.take(json_len)?)?;
    let config: ModelConfig = serde_json::from_value(header["model"].take())?;
    let mut model = Mvdet::<f32>::new(config, 0)?;
    let names = model.param_names();
    let shapes = model.param_shapes();
    let count = r.u32()?;
    if count != names.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, model needs {}",
            names.len()
        )));
    }
    let mut params = model.params_mut();
    for ((name, shape), dst) in names.iter().zip(&shapes).zip(params.iter_mut()) {
        let n = r.u32()?;
        let got = std::str::from_utf8(r.take(n)?).map_err(|e| Error::Format(e.to_string()))?;
        if got != name {
            return Err(Error::Format(format!(
                "expected tensor {name}, found {got}"
            )));
        }
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::Format(format!(
                "{name}: shape {dims:?}, expected {shape:?}"
            )));
        }
        let raw = r.take(4 * dst.len())?;
        for (v, b) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((model, header["run"].take()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Mvdet<f32>, echo: &Value) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &checkpoint_bytes(model, echo)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Mvdet<f32>, Value)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::ProjectionMode;

    #[test]
    fn round_trip() {
        let cfg = ModelConfig {
            n_views: 3,
            mode: ProjectionMode::Results,
            large_kernel: false,
            n_hid: 5,
            feature_channels: 4,
            image_channels: 3,
        };
        let mut model = Mvdet::<f32>::new(cfg, 42).unwrap();
        model.ground.layers[2].weight[1] = 0.125;
        let echo = serde_json::json!({"seed": 7});
        let bytes = checkpoint_bytes(&model, &echo).unwrap();
        assert_eq!(&bytes[..4], b"MVDW");
        let (back, e) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(e, echo);
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
