//! Spotting metrics: greedy temporal matching, per-class average precision
//! at a frame tolerance δ, mAP, second-scale tolerance sweeps, and PR
//! curves.

use crate::core::{prediction_order, EventLabel, SpotPrediction, SpotError};
use crate::data::DatasetManifest;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Greedy matching for one (video, class) pair. `preds` must already be in
/// the global tie ordering. A prediction is a true positive iff an
/// unmatched ground-truth frame lies within |Δframe| ≤ δ; it consumes the
/// nearest such frame (ties: lower frame); each event matches at most once.
pub fn match_predictions(pred_frames: &[usize], gt_frames: &[usize], delta: usize) -> Vec<bool> {
    let mut taken = vec![false; gt_frames.len()];
    let mut flags = Vec::with_capacity(pred_frames.len());
    for &p in pred_frames {
        let mut best: Option<(usize, usize, usize)> = None; // (distance, gt frame, index)
        for (i, &g) in gt_frames.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = p.abs_diff(g);
            if d > delta {
                continue;
            }
            if best.map_or(true, |(bd, bg, _)| (d, g) < (bd, bg)) {
                best = Some((d, g, i));
            }
        }
        match best {
            Some((_, _, i)) => {
                taken[i] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    flags
}

/// TP/FP flags for one class across all videos, in the global prediction
/// ordering. Matching runs independently per video.
fn flags_for_class(preds: &[SpotPrediction], gts: &[EventLabel], delta: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| prediction_order(&preds[a], &preds[b]));
    let mut gt_by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for g in gts {
        gt_by_video.entry(g.video_id.as_str()).or_default().push(g.frame);
    }
    let mut pred_by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        pred_by_video.entry(preds[i].video_id.as_str()).or_default().push(i);
    }
    let empty = Vec::new();
    let mut flags = vec![false; preds.len()];
    for (video, idxs) in &pred_by_video {
        let frames: Vec<usize> = idxs.iter().map(|&i| preds[i].frame).collect();
        let gt = gt_by_video.get(video).unwrap_or(&empty);
        for (&i, tp) in idxs.iter().zip(match_predictions(&frames, gt, delta)) {
            flags[i] = tp;
        }
    }
    order.into_iter().map(|i| flags[i]).collect()
}

/// All-point interpolated AP from rank-ordered TP flags.
fn ap_from_flags(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    // precision/recall at each rank, then the monotone precision envelope
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(flags.len());
    for (rank, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut envelope = vec![0.0f64; points.len()];
    let mut m = 0.0f64;
    for i in (0..points.len()).rev() {
        m = m.max(points[i].1);
        envelope[i] = m;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = recall;
        }
    }
    ap
}

/// AP for one class (predictions and events of that class only, any number
/// of videos). `None` when the class has neither events nor predictions.
pub fn average_precision(preds: &[SpotPrediction], gts: &[EventLabel], delta: usize) -> Option<f64> {
    if gts.is_empty() {
        return if preds.is_empty() { None } else { Some(0.0) };
    }
    let flags = flags_for_class(preds, gts, delta);
    Some(ap_from_flags(&flags, gts.len()))
}

/// One PR-curve sample at a prediction rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub interp_precision: f64,
}

/// Rank-by-rank PR points plus the monotone envelope used by AP.
pub fn pr_points(preds: &[SpotPrediction], gts: &[EventLabel], delta: usize) -> Vec<PrPoint> {
    if preds.is_empty() {
        return Vec::new();
    }
    let flags = flags_for_class(preds, gts, delta);
    let num_gt = gts.len().max(1);
    let mut tp = 0usize;
    let mut raw: Vec<(f64, f64)> = Vec::with_capacity(flags.len());
    for (rank, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        raw.push((tp as f64 / num_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut out: Vec<PrPoint> = raw
        .iter()
        .map(|&(recall, precision)| PrPoint {
            recall,
            precision,
            interp_precision: 0.0,
        })
        .collect();
    let mut m = 0.0f64;
    for i in (0..out.len()).rev() {
        m = m.max(out[i].precision);
        out[i].interp_precision = m;
    }
    out
}

/// Per-class results at every requested tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub num_events: usize,
    pub num_predictions: usize,
    /// AP per delta; `None` where undefined (no events, no predictions).
    pub ap_by_delta: Vec<Option<f64>>,
}

/// The evaluation summary, serialized as the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub deltas: Vec<usize>,
    pub classes: Vec<ClassReport>,
    /// Mean of defined per-class APs at each delta.
    pub map_by_delta: Vec<f64>,
    pub num_videos: usize,
    /// Echoed post-processing parameters, for provenance.
    pub nms_window: Option<usize>,
    /// Set when delta 0 is evaluated: exact-frame scoring is sensitive to
    /// annotation ambiguity and should be read with care.
    pub delta_zero_caveat: bool,
}

fn validate_predictions(preds: &[SpotPrediction], manifest: &DatasetManifest) -> crate::Result<()> {
    let k = manifest.class_table.num_classes();
    for p in preds {
        let Some(v) = manifest.video(&p.video_id) else {
            return Err(SpotError::invalid(format!(
                "prediction (video {:?}, frame {}, class {}) references an unknown video",
                p.video_id, p.frame, p.class_id
            )));
        };
        if p.class_id == 0 || p.class_id > k {
            return Err(SpotError::invalid(format!(
                "prediction (video {:?}, frame {}) has unknown class id {}",
                p.video_id, p.frame, p.class_id
            )));
        }
        if p.frame >= v.meta.num_frames {
            return Err(SpotError::invalid(format!(
                "prediction (video {:?}, frame {}) is past the video's {} frames",
                p.video_id, p.frame, v.meta.num_frames
            )));
        }
    }
    Ok(())
}

/// Evaluate predictions against the manifest's events, restricted to the
/// videos the predictions may reference (all manifest videos).
pub fn map_at_deltas(
    preds: &[SpotPrediction],
    manifest: &DatasetManifest,
    deltas: &[usize],
    nms_window: Option<usize>,
) -> crate::Result<EvalReport> {
    if deltas.is_empty() {
        return Err(SpotError::invalid("at least one delta is required"));
    }
    validate_predictions(preds, manifest)?;
    let k = manifest.class_table.num_classes();
    let mut classes = Vec::with_capacity(k);
    for class_id in 1..=k {
        let cp: Vec<SpotPrediction> = preds.iter().filter(|p| p.class_id == class_id).cloned().collect();
        let cg: Vec<EventLabel> = manifest.events.iter().filter(|e| e.class_id == class_id).cloned().collect();
        let ap_by_delta = deltas.iter().map(|&d| average_precision(&cp, &cg, d)).collect();
        classes.push(ClassReport {
            class_id,
            name: manifest.class_table.name_of(class_id).unwrap_or("?").to_string(),
            num_events: cg.len(),
            num_predictions: cp.len(),
            ap_by_delta,
        });
    }
    let map_by_delta = (0..deltas.len())
        .map(|di| {
            let defined: Vec<f64> = classes.iter().filter_map(|c| c.ap_by_delta[di]).collect();
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        })
        .collect();
    Ok(EvalReport {
        deltas: deltas.to_vec(),
        classes,
        map_by_delta,
        num_videos: manifest.videos.len(),
        nms_window,
        delta_zero_caveat: deltas.contains(&0),
    })
}

/// Mean mAP over second-scale tolerances; each tolerance δs maps to a
/// frame radius of round(fps·δs/2). All videos must share one fps.
pub fn average_map_seconds(
    preds: &[SpotPrediction],
    manifest: &DatasetManifest,
    tolerances_sec: &[f64],
) -> crate::Result<f64> {
    if tolerances_sec.is_empty() {
        return Err(SpotError::invalid("at least one tolerance is required"));
    }
    let mut fps = None;
    for v in &manifest.videos {
        match fps {
            None => fps = Some(v.meta.fps),
            Some(f) if (f - v.meta.fps).abs() < 1e-9 => {}
            Some(f) => {
                return Err(SpotError::invalid(format!(
                    "mixed fps across videos ({} vs {} in {:?})",
                    f, v.meta.fps, v.meta.id
                )));
            }
        }
    }
    let fps = fps.ok_or_else(|| SpotError::invalid("manifest has no videos"))?;
    let mut total = 0.0;
    for &ts in tolerances_sec {
        if ts <= 0.0 {
            return Err(SpotError::invalid("tolerances must be > 0 seconds"));
        }
        let radius = (fps * ts / 2.0).round() as usize;
        let report = map_at_deltas(preds, manifest, &[radius], None)?;
        total += report.map_by_delta[0];
    }
    Ok(total / tolerances_sec.len() as f64)
}
