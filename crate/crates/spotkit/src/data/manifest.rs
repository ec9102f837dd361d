//! Dataset manifest: a JSON document listing classes, videos (with frame
//! directories and splits), and frame-accurate events.

use crate::core::{EventClassTable, EventLabel, SpotError, VideoMeta};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {:?} (expected train, val, or test)", other)),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One video plus its assigned split.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEntry {
    pub meta: VideoMeta,
    pub split: Split,
}

/// A fully validated dataset description.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub class_table: EventClassTable,
    pub videos: Vec<VideoEntry>,
    pub events: Vec<EventLabel>,
}

// On-disk schema. `class` is the 1-based index into `classes`.
#[derive(Serialize, Deserialize)]
struct RawManifest {
    classes: Vec<String>,
    videos: Vec<RawVideo>,
    events: Vec<RawEvent>,
}

#[derive(Serialize, Deserialize)]
struct RawVideo {
    id: String,
    fps: f64,
    num_frames: usize,
    frame_dir: String,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    video: String,
    frame: usize,
    class: usize,
}

impl DatasetManifest {
    pub fn new(
        class_table: EventClassTable,
        videos: Vec<VideoEntry>,
        events: Vec<EventLabel>,
    ) -> crate::Result<Self> {
        let m = Self {
            class_table,
            videos,
            events,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> crate::Result<()> {
        let mut ids = HashSet::new();
        for v in &self.videos {
            v.meta.validate().map_err(|e| SpotError::Manifest(e.to_string()))?;
            if !ids.insert(v.meta.id.clone()) {
                return Err(SpotError::Manifest(format!("duplicate video id {:?}", v.meta.id)));
            }
        }
        let frames: BTreeMap<&str, usize> = self
            .videos
            .iter()
            .map(|v| (v.meta.id.as_str(), v.meta.num_frames))
            .collect();
        let k = self.class_table.num_classes();
        let mut seen = HashSet::new();
        for e in &self.events {
            let Some(&n) = frames.get(e.video_id.as_str()) else {
                return Err(SpotError::Manifest(format!(
                    "event at frame {} references unknown video {:?}",
                    e.frame, e.video_id
                )));
            };
            if e.class_id == 0 || e.class_id > k {
                return Err(SpotError::Manifest(format!(
                    "event in video {:?} at frame {}: unknown class id {} (expected 1..={})",
                    e.video_id, e.frame, e.class_id, k
                )));
            }
            if e.frame >= n {
                return Err(SpotError::Manifest(format!(
                    "event out of range: frame {} >= num_frames {} in video {:?}",
                    e.frame, n, e.video_id
                )));
            }
            if !seen.insert((e.video_id.as_str(), e.frame)) {
                return Err(SpotError::Manifest(format!(
                    "duplicate event frame {} in video {:?}",
                    e.frame, e.video_id
                )));
            }
        }
        Ok(())
    }

    pub fn video(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.meta.id == id)
    }

    pub fn videos_in_split(&self, split: Split) -> Vec<&VideoEntry> {
        self.videos.iter().filter(|v| v.split == split).collect()
    }

    pub fn events_for_video(&self, id: &str) -> Vec<EventLabel> {
        self.events.iter().filter(|e| e.video_id == id).cloned().collect()
    }

    /// Dense per-frame labels for one video (radius-0 densification).
    pub fn dense_labels(&self, id: &str) -> crate::Result<crate::core::DenseLabelSeq> {
        let v = self
            .video(id)
            .ok_or_else(|| SpotError::Manifest(format!("unknown video {:?}", id)))?;
        crate::core::densify(&self.events_for_video(id), v.meta.num_frames, self.class_table.num_classes())
    }
}

/// Read and validate a manifest file. Relative `frame_dir` paths are
/// resolved against the manifest's own directory.
pub fn load_manifest(path: impl AsRef<Path>) -> crate::Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    let raw: RawManifest = serde_json::from_str(&text)
        .map_err(|e| SpotError::Manifest(format!("{}: {}", path.display(), e)))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let class_table = EventClassTable::new(raw.classes).map_err(|e| SpotError::Manifest(e.to_string()))?;
    let videos = raw
        .videos
        .into_iter()
        .map(|v| {
            let dir = base.join(&v.frame_dir);
            VideoEntry {
                meta: VideoMeta {
                    id: v.id,
                    fps: v.fps,
                    num_frames: v.num_frames,
                    frame_source: dir.to_string_lossy().into_owned(),
                },
                split: v.split,
            }
        })
        .collect();
    let events = raw
        .events
        .into_iter()
        .map(|e| EventLabel {
            video_id: e.video,
            frame: e.frame,
            class_id: e.class,
        })
        .collect();
    DatasetManifest::new(class_table, videos, events)
}

/// Write a manifest file; `frame_dir`s are stored relative to the manifest
/// directory when possible.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let raw = RawManifest {
        classes: manifest.class_table.names().to_vec(),
        videos: manifest
            .videos
            .iter()
            .map(|v| {
                let dir = Path::new(&v.meta.frame_source);
                let rel = dir.strip_prefix(base).unwrap_or(dir);
                RawVideo {
                    id: v.meta.id.clone(),
                    fps: v.meta.fps,
                    num_frames: v.meta.num_frames,
                    frame_dir: rel.to_string_lossy().into_owned(),
                    split: v.split,
                }
            })
            .collect(),
        events: manifest
            .events
            .iter()
            .map(|e| RawEvent {
                video: e.video_id.clone(),
                frame: e.frame,
                class: e.class_id,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&raw)
        .map_err(|e| SpotError::Manifest(format!("serialize manifest: {}", e)))?;
    std::fs::write(path, text).map_err(|e| SpotError::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_manifest(json: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let mut f = std::fs::File::create(dir.path().join("manifest.json")).unwrap();
        f.write_all(json.as_bytes()).unwrap();
        dir
    }

    #[test]
    fn minimal_manifest_loads() {
        let dir = write_manifest(
            r#"{"classes": ["bounce-h"],
                "videos": [{"id": "v0", "fps": 25.0, "num_frames": 10, "frame_dir": "frames/v0", "split": "train"}],
                "events": []}"#,
        );
        let m = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(m.class_table.num_classes(), 1);
        assert_eq!(m.videos.len(), 1);
        assert!(m.events.is_empty());
        // relative frame_dir resolves against the manifest directory
        assert!(m.videos[0].meta.frame_source.starts_with(dir.path().to_str().unwrap()));
    }

    #[test]
    fn event_out_of_range_is_rejected() {
        let dir = write_manifest(
            r#"{"classes": ["a"],
                "videos": [{"id": "v0", "fps": 25.0, "num_frames": 10, "frame_dir": "f", "split": "train"}],
                "events": [{"video": "v0", "frame": 10, "class": 1}]}"#,
        );
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
        assert!(err.to_string().contains("v0"), "{err}");
    }

    #[test]
    fn duplicate_video_id_is_rejected() {
        let dir = write_manifest(
            r#"{"classes": ["a"],
                "videos": [{"id": "v0", "fps": 25.0, "num_frames": 10, "frame_dir": "f", "split": "train"},
                           {"id": "v0", "fps": 25.0, "num_frames": 10, "frame_dir": "g", "split": "val"}],
                "events": []}"#,
        );
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("duplicate video id"), "{err}");
    }

    #[test]
    fn unknown_class_and_unknown_video_are_rejected() {
        let dir = write_manifest(
            r#"{"classes": ["a"],
                "videos": [{"id": "v0", "fps": 25.0, "num_frames": 10, "frame_dir": "f", "split": "train"}],
                "events": [{"video": "v0", "frame": 3, "class": 2}]}"#,
        );
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("unknown class id 2"), "{err}");

        let dir = write_manifest(
            r#"{"classes": ["a"],
                "videos": [{"id": "v0", "fps": 25.0, "num_frames": 10, "frame_dir": "f", "split": "train"}],
                "events": [{"video": "vX", "frame": 3, "class": 1}]}"#,
        );
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("unknown video"), "{err}");
    }

    #[test]
    fn duplicate_event_frame_is_rejected() {
        let dir = write_manifest(
            r#"{"classes": ["a", "b"],
                "videos": [{"id": "v0", "fps": 25.0, "num_frames": 10, "frame_dir": "f", "split": "train"}],
                "events": [{"video": "v0", "frame": 3, "class": 1},
                           {"video": "v0", "frame": 3, "class": 2}]}"#,
        );
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("duplicate event frame 3"), "{err}");
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            EventClassTable::new(vec!["a".into(), "b".into()]).unwrap(),
            vec![
                VideoEntry {
                    meta: VideoMeta {
                        id: "v0".into(),
                        fps: 25.0,
                        num_frames: 20,
                        frame_source: dir.path().join("frames/v0").to_string_lossy().into_owned(),
                    },
                    split: Split::Train,
                },
                VideoEntry {
                    meta: VideoMeta {
                        id: "v1".into(),
                        fps: 25.0,
                        num_frames: 30,
                        frame_source: dir.path().join("frames/v1").to_string_lossy().into_owned(),
                    },
                    split: Split::Test,
                },
            ],
            vec![EventLabel {
                video_id: "v0".into(),
                frame: 7,
                class_id: 2,
            }],
        )
        .unwrap();
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let m2 = load_manifest(&path).unwrap();
        assert_eq!(m, m2);
        // frame_dir stored relative
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"frames/v0\""), "{text}");
    }

    #[test]
    fn split_queries() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            EventClassTable::new(vec!["a".into()]).unwrap(),
            vec![
                VideoEntry {
                    meta: VideoMeta {
                        id: "v0".into(),
                        fps: 25.0,
                        num_frames: 5,
                        frame_source: dir.path().to_string_lossy().into_owned(),
                    },
                    split: Split::Train,
                },
                VideoEntry {
                    meta: VideoMeta {
                        id: "v1".into(),
                        fps: 25.0,
                        num_frames: 5,
                        frame_source: dir.path().to_string_lossy().into_owned(),
                    },
                    split: Split::Val,
                },
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(m.videos_in_split(Split::Train).len(), 1);
        assert_eq!(m.videos_in_split(Split::Test).len(), 0);
        assert_eq!(m.dense_labels("v0").unwrap().len(), 5);
    }
}
