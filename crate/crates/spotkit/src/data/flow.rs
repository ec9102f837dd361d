//! Raw optical-flow container: one file per frame, 16-byte header
//! (magic "FLO2", format version, height, width — all little-endian u32),
//! then row-major little-endian f32 (dx, dy) pairs.

use crate::core::SpotError;
use ndarray::{s, Array3, Array4};
use std::io::{Read, Write};
use std::path::Path;

pub const FLOW_MAGIC: &[u8; 4] = b"FLO2";
pub const FLOW_VERSION: u32 = 1;

/// Write one (H, W, 2) flow field.
pub fn write_flow(path: impl AsRef<Path>, flow: &Array3<f32>) -> crate::Result<()> {
    let path = path.as_ref();
    let (h, w, c) = flow.dim();
    if c != 2 {
        return Err(SpotError::ShapeMismatch(format!("flow must have 2 channels, got {}", c)));
    }
    let mut buf = Vec::with_capacity(16 + h * w * 8);
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&FLOW_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for i in 0..h {
        for j in 0..w {
            buf.extend_from_slice(&flow[[i, j, 0]].to_le_bytes());
            buf.extend_from_slice(&flow[[i, j, 1]].to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    f.write_all(&buf).map_err(|e| SpotError::io(path.display().to_string(), e))
}

/// Read one flow field.
pub fn read_flow(path: impl AsRef<Path>) -> crate::Result<Array3<f32>> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    let bad = |msg: &str| SpotError::Invalid(format!("{}: {}", path.display(), msg));
    if bytes.len() < 16 {
        return Err(bad("flow file shorter than its 16-byte header"));
    }
    if &bytes[0..4] != FLOW_MAGIC {
        return Err(bad("bad flow magic (expected \"FLO2\")"));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(4);
    if version != FLOW_VERSION {
        return Err(bad(&format!(
            "unsupported flow version {} (expected {})",
            version, FLOW_VERSION
        )));
    }
    let h = u32_at(8) as usize;
    let w = u32_at(12) as usize;
    let expected = 16 + h * w * 8;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "flow payload is {} bytes, expected {} for {}x{}",
            bytes.len(),
            expected,
            h,
            w
        )));
    }
    let mut flow = Array3::<f32>::zeros((h, w, 2));
    let mut o = 16;
    for i in 0..h {
        for j in 0..w {
            for c in 0..2 {
                flow[[i, j, c]] = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
                o += 4;
            }
        }
    }
    Ok(flow)
}

/// Path of flow frame `index` inside a flow directory.
pub fn flow_path(dir: impl AsRef<Path>, index: usize) -> std::path::PathBuf {
    dir.as_ref().join(format!("{:06}.flo2", index))
}

/// Load `num_frames` flow fields from a directory into (N, H, W, 2).
pub fn load_video_flow(dir: impl AsRef<Path>, num_frames: usize) -> crate::Result<Array4<f32>> {
    let dir = dir.as_ref();
    let first = read_flow(flow_path(dir, 0))?;
    let (h, w, _) = first.dim();
    let mut out = Array4::<f32>::zeros((num_frames, h, w, 2));
    out.slice_mut(s![0, .., .., ..]).assign(&first);
    for t in 1..num_frames {
        let f = read_flow(flow_path(dir, t))?;
        if f.dim() != (h, w, 2) {
            return Err(SpotError::ShapeMismatch(format!(
                "flow frame {} of {} is {:?}, expected {:?}",
                t,
                dir.display(),
                f.dim(),
                (h, w, 2)
            )));
        }
        out.slice_mut(s![t, .., .., ..]).assign(&f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let flow = Array3::from_shape_fn((5, 7, 2), |(i, j, c)| (i as f32 - j as f32) * 0.37 + c as f32);
        let p = flow_path(dir.path(), 0);
        write_flow(&p, &flow).unwrap();
        let back = read_flow(&p).unwrap();
        assert_eq!(flow, back);
        // header is exactly 16 bytes
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 5 * 7 * 8);
    }

    #[test]
    fn corrupt_files_are_rejected_with_reason() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.flo2");
        std::fs::write(&p, b"FLO1\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(read_flow(&p).unwrap_err().to_string().contains("magic"));
        let flow = Array3::<f32>::zeros((2, 2, 2));
        write_flow(&p, &flow).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_flow(&p).unwrap_err().to_string().contains("payload"));
    }

    #[test]
    fn video_flow_loads_in_order() {
        let dir = tempfile::tempdir().unwrap();
        for t in 0..3 {
            let f = Array3::from_elem((2, 2, 2), t as f32);
            write_flow(flow_path(dir.path(), t), &f).unwrap();
        }
        let v = load_video_flow(dir.path(), 3).unwrap();
        assert_eq!(v.dim(), (3, 2, 2, 2));
        assert_eq!(v[[2, 1, 1, 0]], 2.0);
    }
}
