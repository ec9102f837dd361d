//! Frame directory I/O: 8-bit image files named `%06d.png` (or `.jpg`),
//! frame 0 first, plus an in-memory cache keyed by video id.

use crate::core::SpotError;
use ndarray::{Array3, Array4, ArrayView3, s};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// All frames of one video as 8-bit RGB, (N, H, W, 3).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrames {
    pub pixels: Array4<u8>,
}

impl VideoFrames {
    pub fn num_frames(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, u8> {
        self.pixels.slice(s![t, .., .., ..])
    }

    /// Copy frames [start, start+len) into an f32 clip array in [0,1],
    /// zero-padding past the end of the video.
    pub fn clip_f32(&self, start: usize, len: usize) -> Array4<f32> {
        let (n, h, w, _) = self.pixels.dim();
        let mut out = Array4::<f32>::zeros((len, h, w, 3));
        for t in 0..len {
            if start + t >= n {
                break;
            }
            let src = self.pixels.slice(s![start + t, .., .., ..]);
            out.slice_mut(s![t, .., .., ..]).assign(&src.mapv(|p| p as f32 / 255.0));
        }
        out
    }
}

fn frame_path(dir: &Path, index: usize) -> crate::Result<PathBuf> {
    for ext in ["png", "jpg"] {
        let p = dir.join(format!("{:06}.{}", index, ext));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(SpotError::io(
        dir.join(format!("{:06}.png", index)).display().to_string(),
        std::io::Error::new(std::io::ErrorKind::NotFound, "frame file not found"),
    ))
}

/// Decode one frame file to 8-bit RGB.
pub fn read_frame(dir: impl AsRef<Path>, index: usize) -> crate::Result<Array3<u8>> {
    let path = frame_path(dir.as_ref(), index)?;
    let img = image::open(&path)
        .map_err(|e| {
            SpotError::io(
                path.display().to_string(),
                std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            )
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Array3::from_shape_vec((h, w, 3), raw).expect("rgb8 buffer shape"))
}

/// Encode one 8-bit RGB frame as `<dir>/<%06d>.png`.
pub fn write_frame(dir: impl AsRef<Path>, index: usize, frame: &ArrayView3<'_, u8>) -> crate::Result<()> {
    let (h, w, c) = frame.dim();
    if c != 3 {
        return Err(SpotError::ShapeMismatch(format!("frame must have 3 channels, got {}", c)));
    }
    let path = dir.as_ref().join(format!("{:06}.png", index));
    let flat: Vec<u8> = frame.iter().copied().collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, flat).expect("frame buffer shape");
    img.save(&path).map_err(|e| {
        SpotError::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::Other, e),
        )
    })
}

/// Decode all `num_frames` frames of a video directory.
pub fn load_video_frames(dir: impl AsRef<Path>, num_frames: usize) -> crate::Result<VideoFrames> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(SpotError::io(
            dir.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "frame directory not found"),
        ));
    }
    let first = read_frame(dir, 0)?;
    let (h, w, _) = first.dim();
    let mut pixels = Array4::<u8>::zeros((num_frames, h, w, 3));
    pixels.slice_mut(s![0, .., .., ..]).assign(&first);
    for t in 1..num_frames {
        let f = read_frame(dir, t)?;
        if f.dim() != (h, w, 3) {
            return Err(SpotError::ShapeMismatch(format!(
                "frame {} of {} is {:?}, expected {:?}",
                t,
                dir.display(),
                f.dim(),
                (h, w, 3)
            )));
        }
        pixels.slice_mut(s![t, .., .., ..]).assign(&f);
    }
    Ok(VideoFrames { pixels })
}

/// Shared in-memory store of decoded videos, keyed by frame directory.
/// Each video is decoded at most once.
#[derive(Default)]
pub struct FrameCache {
    inner: Mutex<HashMap<String, Arc<VideoFrames>>>,
}

impl FrameCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dir: &str, num_frames: usize) -> crate::Result<Arc<VideoFrames>> {
        if let Some(v) = self.inner.lock().unwrap().get(dir) {
            return Ok(v.clone());
        }
        let loaded = Arc::new(load_video_frames(dir, num_frames)?);
        self.inner.lock().unwrap().insert(dir.to_string(), loaded.clone());
        Ok(loaded)
    }
}
