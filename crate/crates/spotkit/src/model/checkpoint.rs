//! Checkpoint container: magic "E2ESPOT", format version, JSON-encoded
//! configs, then named little-endian parameter arrays.
//!
//! Byte layout (all integers little-endian):
//! ```text
//! [0..8)    magic b"E2ESPOT\0"
//! [8..12)   format_version: u32
//! [12..16)  config_len: u32, followed by config_len bytes of JSON
//!           {"backbone": ..., "head": ..., "meta": ...}
//! next u32  parameter count
//! per parameter:
//!   u16 name length + name bytes (utf-8)
//!   u8 dtype tag (4 = f32, 8 = f64)
//!   u8 ndim, then ndim x u32 dims
//!   dims product x dtype-size bytes of raw little-endian data
//! ```

use super::nn::Scalar;
use super::{BackboneConfig, HeadConfig, SpotModel, TrainMeta};
use crate::core::SpotError;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"E2ESPOT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub meta: TrainMeta,
}

fn read_exact(r: &mut impl Read, n: usize, what: &str) -> crate::Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| SpotError::checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> crate::Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Serialize a model to checkpoint bytes.
pub fn checkpoint_bytes<T: Scalar>(model: &SpotModel<T>) -> crate::Result<Vec<u8>> {
    let config = CheckpointConfig {
        backbone: model.backbone.config.clone(),
        head: model.head.config.clone(),
        meta: model.meta.clone(),
    };
    let config_json = serde_json::to_vec(&config)
        .map_err(|e| SpotError::checkpoint(format!("config serialization failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for id in model.store.ids() {
        let name = model.store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(T::DTYPE_TAG);
        let value = model.store.value(id);
        out.push(value.ndim() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let data: Vec<T> = value.iter().cloned().collect();
        out.extend_from_slice(&T::to_le_bytes_vec(&data));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(model: &SpotModel<T>, path: impl AsRef<Path>) -> crate::Result<()> {
    let bytes = checkpoint_bytes(model)?;
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    f.write_all(&bytes)
        .map_err(|e| SpotError::io(path.display().to_string(), e))?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> crate::Result<CheckpointConfig> {
    let magic = read_exact(r, 8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(SpotError::checkpoint("bad magic: not a checkpoint file"));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(SpotError::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config_len = read_u32(r, "config length")? as usize;
    let config_json = read_exact(r, config_len, "config")?;
    serde_json::from_slice(&config_json)
        .map_err(|e| SpotError::checkpoint(format!("config parse failed: {e}")))
}

/// Read only the configs from a checkpoint, without building a model.
pub fn peek_checkpoint_config(path: impl AsRef<Path>) -> crate::Result<CheckpointConfig> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    read_header(&mut f)
}

/// Load a model from checkpoint bytes.
pub fn load_checkpoint_bytes<T: Scalar>(bytes: &[u8]) -> crate::Result<SpotModel<T>> {
    let mut r = std::io::Cursor::new(bytes);
    let config = read_header(&mut r)?;
    let mut model = SpotModel::<T>::new(&config.backbone, &config.head, 0)?;
    model.meta = config.meta;

    let count = read_u32(&mut r, "parameter count")? as usize;
    if count != model.store.len() {
        return Err(SpotError::checkpoint(format!(
            "config/parameter mismatch: file has {} arrays, configs imply {}",
            count,
            model.store.len()
        )));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let name_len = {
            let b = read_exact(&mut r, 2, "name length")?;
            u16::from_le_bytes([b[0], b[1]]) as usize
        };
        let name = String::from_utf8(read_exact(&mut r, name_len, "name")?)
            .map_err(|_| SpotError::checkpoint("parameter name is not utf-8"))?;
        if name != model.store.name(id) {
            return Err(SpotError::checkpoint(format!(
                "config/parameter mismatch: expected parameter {:?}, file has {:?}",
                model.store.name(id),
                name
            )));
        }
        let dtype = read_exact(&mut r, 1, "dtype")?[0];
        if dtype != T::DTYPE_TAG {
            return Err(SpotError::checkpoint(format!(
                "dtype mismatch for {name}: file tag {dtype}, expected {}",
                T::DTYPE_TAG
            )));
        }
        let ndim = read_exact(&mut r, 1, "ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r, "dim")? as usize);
        }
        if dims.as_slice() != model.store.value(id).shape() {
            return Err(SpotError::checkpoint(format!(
                "config/parameter mismatch: {name} has shape {:?} in file, {:?} expected",
                dims,
                model.store.value(id).shape()
            )));
        }
        let n: usize = dims.iter().product();
        let raw = read_exact(&mut r, n * T::DTYPE_TAG as usize, "parameter data")?;
        let vals = T::from_le_slice(&raw);
        let mut view = model.store.value_mut(id);
        for (dst, src) in view.iter_mut().zip(vals.into_iter()) {
            *dst = src;
        }
    }
    Ok(model)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> crate::Result<SpotModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    load_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadKind, ShiftMode};
    use ndarray::Array4;

    fn model() -> SpotModel<f32> {
        let bb = BackboneConfig::grad_check(3);
        let head = HeadConfig::new(HeadKind::Bigru, bb.feature_dim(), 2);
        SpotModel::new(&bb, &head, 42).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model();
        let bytes = checkpoint_bytes(&m).unwrap();
        let m2: SpotModel<f32> = load_checkpoint_bytes(&bytes).unwrap();
        for id in m.store.ids() {
            let a = m.store.value(id);
            let b = m2.store.value(id);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let x = Array4::<f32>::from_shape_fn((6, 3, 16, 16), |(a, b, c, d)| ((a + b + c + d) % 3) as f32 * 0.3);
        let s1 = m.forward_scores(&x).unwrap();
        let s2 = m2.forward_scores(&x).unwrap();
        assert_eq!(s1.scores, s2.scores);
        // And the serialization itself is stable.
        assert_eq!(bytes, checkpoint_bytes(&m2).unwrap());
    }

    #[test]
    fn version_bump_is_rejected() {
        let m = model();
        let mut bytes = checkpoint_bytes(&m).unwrap();
        bytes[8] = 99;
        let err = load_checkpoint_bytes::<f32>(&bytes).unwrap_err();
        match err {
            SpotError::CheckpointVersion { found, expected } => {
                assert_eq!(found, 99);
                assert_eq!(expected, CHECKPOINT_VERSION);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn altered_config_with_same_arrays_is_rejected() {
        let m = model();
        let bytes = checkpoint_bytes(&m).unwrap();
        // Rewrite the config to claim a different backbone, keeping arrays.
        let config_len = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
        let mut config: CheckpointConfig = serde_json::from_slice(&bytes[16..16 + config_len]).unwrap();
        config.backbone.stages[0].channels = 32;
        config.backbone.shift_mode = ShiftMode::Tsm;
        let new_json = serde_json::to_vec(&config).unwrap();
        let mut tampered = Vec::new();
        tampered.extend_from_slice(&bytes[..12]);
        tampered.extend_from_slice(&(new_json.len() as u32).to_le_bytes());
        tampered.extend_from_slice(&new_json);
        tampered.extend_from_slice(&bytes[16 + config_len..]);
        let err = load_checkpoint_bytes::<f32>(&tampered).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mismatch"), "{msg}");
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let err = load_checkpoint_bytes::<f32>(b"NOTACKPT").unwrap_err();
        assert!(err.to_string().contains("magic") || err.to_string().contains("truncated"));
    }
}
