//! Deterministic synthetic benchmark: a single ball bouncing under gravity
//! inside the frame.
//!
//! Event classes: 1 = "bounce-h" (horizontal velocity sign flip at a side
//! wall), 2 = "bounce-v" (vertical flip at floor/ceiling), 3 = "apex"
//! (ballistic vertical-velocity zero-crossing, labeled at the frame of
//! minimal |v_y|).
//!
//! Floor bounces take a fresh random upward impulse, so apex height varies
//! and apex frames are not recognizable from any single image. Video 0 is
//! a vertical-only probe whose impulse is an exact multiple of gravity: at
//! its apex v_y is exactly 0, so the apex frame and its predecessor render
//! byte-identically while carrying different labels — a built-in witness
//! that the apex class needs motion context.

use crate::core::{EventClassTable, EventLabel, SpotError, VideoMeta};
use crate::data::frames::write_frame;
use crate::data::manifest::{save_manifest, DatasetManifest, Split, VideoEntry};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SYNTH_CLASS_NAMES: [&str; 3] = ["bounce-h", "bounce-v", "apex"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub fps: f64,
    pub ball_radius: f64,
    /// Downward acceleration in px/frame².
    pub gravity: f64,
    /// Horizontal speed range in px/frame.
    pub speed_range: (f64, f64),
    /// Upward impulse range applied at each floor bounce, px/frame.
    pub impulse_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_videos: 200,
            frames_per_video: 300,
            frame_height: 64,
            frame_width: 64,
            fps: 25.0,
            ball_radius: 3.0,
            gravity: 0.5,
            speed_range: (0.8, 2.5),
            impulse_range: (1.5, 6.0),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.num_videos == 0 || self.frames_per_video == 0 {
            return Err(SpotError::invalid("num_videos and frames_per_video must be >= 1"));
        }
        if !(self.fps > 0.0) {
            return Err(SpotError::invalid("fps must be > 0"));
        }
        if self.ball_radius <= 0.0 || self.gravity <= 0.0 {
            return Err(SpotError::invalid("ball_radius and gravity must be > 0"));
        }
        if self.speed_range.0 <= 0.0 || self.speed_range.0 > self.speed_range.1 {
            return Err(SpotError::invalid("speed_range must be an increasing positive pair"));
        }
        if self.impulse_range.0 <= 0.0 || self.impulse_range.0 > self.impulse_range.1 {
            return Err(SpotError::invalid("impulse_range must be an increasing positive pair"));
        }
        // the ball must fit with room to move horizontally
        let (xmin, xmax) = self.x_bounds();
        let (ymin, ymax) = self.y_bounds();
        if xmax - xmin < 4.0 || ymax - ymin < 4.0 {
            return Err(SpotError::invalid(format!(
                "impossible geometry: frame {}x{} leaves no room for a radius-{} ball",
                self.frame_width, self.frame_height, self.ball_radius
            )));
        }
        // the strongest bounce must never reach the ceiling
        let v0 = self.impulse_range.1;
        let rise = v0 * v0 / (2.0 * self.gravity) + v0;
        if rise >= ymax - ymin {
            return Err(SpotError::invalid(format!(
                "impossible geometry: impulse {} rises {:.1} px but only {:.1} px are available",
                v0,
                rise,
                ymax - ymin
            )));
        }
        // the impulse must outlive one gravity step or apex merges into the bounce
        if self.impulse_range.0 <= 2.0 * self.gravity {
            return Err(SpotError::invalid("impulse_range.0 must exceed 2x gravity"));
        }
        Ok(())
    }

    fn x_bounds(&self) -> (f64, f64) {
        (self.ball_radius, self.frame_width as f64 - 1.0 - self.ball_radius)
    }

    fn y_bounds(&self) -> (f64, f64) {
        (self.ball_radius, self.frame_height as f64 - 1.0 - self.ball_radius)
    }
}

/// One simulated trajectory: per-frame ball centers plus its event list.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// (x, y) center per frame.
    pub centers: Vec<(f64, f64)>,
    /// Per-frame velocity after the step, for trace verification.
    pub velocities: Vec<(f64, f64)>,
    /// (frame, class) with classes 1..=3.
    pub events: Vec<(usize, usize)>,
}

/// Initial conditions for one video.
#[derive(Debug, Clone, Copy)]
struct Launch {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    /// None = exact repeatable impulse (probe video).
    impulse: Option<(f64, f64)>,
    fixed_impulse: f64,
}

/// Semi-implicit Euler simulation with reflective walls.
fn simulate(config: &SyntheticConfig, launch: Launch, rng: &mut ChaCha8Rng) -> Trajectory {
    let (xmin, xmax) = config.x_bounds();
    let (ymin, ymax) = config.y_bounds();
    let g = config.gravity;
    let n = config.frames_per_video;
    let (mut x, mut y, mut vx, mut vy) = (launch.x, launch.y, launch.vx, launch.vy);
    let mut centers = vec![(x, y)];
    let mut velocities = vec![(vx, vy)];
    let mut events: Vec<(usize, usize)> = Vec::new();
    let mut bounce_v_frames = vec![false; n];
    for t in 1..n {
        vy += g;
        x += vx;
        y += vy;
        if x < xmin {
            x = 2.0 * xmin - x;
            vx = -vx;
            events.push((t, 1));
        } else if x > xmax {
            x = 2.0 * xmax - x;
            vx = -vx;
            events.push((t, 1));
        }
        if y > ymax {
            y = 2.0 * ymax - y;
            vy = match launch.impulse {
                Some((lo, hi)) => -rng.gen_range(lo..=hi),
                None => -launch.fixed_impulse,
            };
            events.push((t, 2));
            bounce_v_frames[t] = true;
        } else if y < ymin {
            y = 2.0 * ymin - y;
            vy = -vy;
            events.push((t, 2));
            bounce_v_frames[t] = true;
        }
        centers.push((x, y));
        velocities.push((vx, vy));
    }
    // ballistic apexes: v_y crosses from negative to non-negative with no
    // wall involved; label the frame with the smaller |v_y|
    for t in 1..n {
        if bounce_v_frames[t] {
            continue;
        }
        let prev = velocities[t - 1].1;
        let cur = velocities[t].1;
        if prev < 0.0 && cur >= 0.0 {
            let frame = if cur.abs() <= prev.abs() { t } else { t - 1 };
            events.push((frame, 3));
        }
    }
    events.sort_unstable();
    Trajectory {
        centers,
        velocities,
        events,
    }
}

fn has_duplicate_frames(events: &[(usize, usize)]) -> bool {
    events.windows(2).any(|w| w[0].0 == w[1].0)
}

/// Simulate video `index` of a dataset, retrying with a salted stream when
/// two events collide on one frame. Video 0 is the deterministic
/// vertical-only probe.
pub fn simulate_video(config: &SyntheticConfig, index: usize) -> crate::Result<Trajectory> {
    let (xmin, xmax) = config.x_bounds();
    let (ymin, ymax) = config.y_bounds();
    if index == 0 {
        // exact-apex probe: v_y hits 0.0 exactly at the top of each arc
        let steps = (config.impulse_range.1 / config.gravity).floor();
        let v0 = steps * config.gravity;
        let launch = Launch {
            x: (xmin + xmax) / 2.0,
            y: ymax,
            vx: 0.0,
            vy: -v0,
            impulse: None,
            fixed_impulse: v0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let traj = simulate(config, launch, &mut rng);
        if has_duplicate_frames(&traj.events) {
            return Err(SpotError::invalid("probe trajectory produced colliding events"));
        }
        return Ok(traj);
    }
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((index as u64) << 8)
                .wrapping_add(attempt),
        );
        let launch = Launch {
            x: rng.gen_range(xmin..=xmax),
            y: rng.gen_range(ymin..=(ymin + ymax) / 2.0),
            vx: rng.gen_range(config.speed_range.0..=config.speed_range.1)
                * if rng.gen::<bool>() { 1.0 } else { -1.0 },
            vy: rng.gen_range(-1.0..=1.0),
            impulse: Some(config.impulse_range),
            fixed_impulse: 0.0,
        };
        let traj = simulate(config, launch, &mut rng);
        if !has_duplicate_frames(&traj.events) {
            return Ok(traj);
        }
    }
    Err(SpotError::invalid(format!(
        "video {}: no collision-free trajectory found in 100 attempts",
        index
    )))
}

/// Render one frame: a white anti-aliased disc on black.
pub fn render_frame(config: &SyntheticConfig, center: (f64, f64)) -> Array3<u8> {
    let (h, w) = (config.frame_height, config.frame_width);
    let r = config.ball_radius;
    let (cx, cy) = center;
    let mut img = Array3::<u8>::zeros((h, w, 3));
    let i0 = ((cy - r - 1.0).floor().max(0.0)) as usize;
    let i1 = ((cy + r + 1.0).ceil().min(h as f64 - 1.0)) as usize;
    let j0 = ((cx - r - 1.0).floor().max(0.0)) as usize;
    let j1 = ((cx + r + 1.0).ceil().min(w as f64 - 1.0)) as usize;
    for i in i0..=i1 {
        for j in j0..=j1 {
            let d = ((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2)).sqrt();
            // linear edge falloff over one pixel gives subpixel cues
            let alpha = (r + 0.5 - d).clamp(0.0, 1.0);
            let v = (alpha * 255.0).round() as u8;
            for c in 0..3 {
                img[[i, j, c]] = v;
            }
        }
    }
    img
}

fn split_for(index: usize) -> Split {
    match index % 5 {
        3 => Split::Val,
        4 => Split::Test,
        _ => Split::Train,
    }
}

/// Generate the dataset on disk: `<out>/frames/<video>/<%06d>.png` plus
/// `<out>/manifest.json` with a 3:1:1 train/val/test split over videos.
pub fn generate_synthetic(config: &SyntheticConfig, out: impl AsRef<Path>) -> crate::Result<DatasetManifest> {
    config.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| SpotError::io(out.display().to_string(), e))?;
    let mut videos = Vec::with_capacity(config.num_videos);
    let mut events = Vec::new();
    for vi in 0..config.num_videos {
        let id = format!("v{:03}", vi);
        let dir = out.join("frames").join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| SpotError::io(dir.display().to_string(), e))?;
        let traj = simulate_video(config, vi)?;
        for (t, &center) in traj.centers.iter().enumerate() {
            let img = render_frame(config, center);
            write_frame(&dir, t, &img.view())?;
        }
        for &(frame, class_id) in &traj.events {
            events.push(EventLabel {
                video_id: id.clone(),
                frame,
                class_id,
            });
        }
        videos.push(VideoEntry {
            meta: VideoMeta {
                id,
                fps: config.fps,
                num_frames: config.frames_per_video,
                frame_source: dir.to_string_lossy().into_owned(),
            },
            split: split_for(vi),
        });
    }
    let manifest = DatasetManifest::new(
        EventClassTable::new(SYNTH_CLASS_NAMES.iter().map(|s| s.to_string()).collect())?,
        videos,
        events,
    )?;
    save_manifest(&manifest, out.join("manifest.json"))?;
    Ok(manifest)
}
