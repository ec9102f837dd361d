//! Whole-video dense prediction: 50%-overlapping clip windows, per-frame
//! probability averaging, candidate extraction, class-wise temporal NMS,
//! two-stream ensembling, flow preprocessing, and the prediction file
//! format.

use crate::core::{prediction_order, ScoreSeq, SpotError, SpotPrediction, BACKGROUND};
use crate::model::{Scalar, SpotModel};
use ndarray::{s, Array2, Array4};
use std::io::{BufRead, Write};
use std::path::Path;

/// Clip start frames covering one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub starts: Vec<usize>,
    pub clip_len: usize,
}

/// Starts 0, L/2, L, … while start+L ≤ N, plus a final clamped start when
/// the tail is otherwise uncovered. N < L yields a single padded window.
pub fn plan_windows(num_frames: usize, clip_len: usize) -> crate::Result<WindowPlan> {
    if clip_len < 2 || clip_len % 2 != 0 {
        return Err(SpotError::invalid(format!(
            "clip length must be even and >= 2, got {}",
            clip_len
        )));
    }
    if num_frames == 0 {
        return Err(SpotError::invalid("video has no frames"));
    }
    let mut starts = Vec::new();
    let mut start = 0usize;
    while start + clip_len <= num_frames {
        starts.push(start);
        start += clip_len / 2;
    }
    let covered_to = starts.last().map(|s| s + clip_len).unwrap_or(0);
    if covered_to < num_frames {
        starts.push(num_frames.saturating_sub(clip_len));
    }
    Ok(WindowPlan { starts, clip_len })
}

/// Mean of all covering windows' rows per frame; window rows past the end
/// of the video (padding) are excluded.
pub fn average_scores(windows: &[(usize, ScoreSeq)], num_frames: usize) -> crate::Result<ScoreSeq> {
    let k1 = windows
        .first()
        .map(|(_, s)| s.scores.ncols())
        .ok_or_else(|| SpotError::invalid("no windows to average"))?;
    let mut sum = Array2::<f64>::zeros((num_frames, k1));
    let mut count = vec![0usize; num_frames];
    for (start, seq) in windows {
        if seq.scores.ncols() != k1 {
            return Err(SpotError::ShapeMismatch(format!(
                "window class counts disagree: {} vs {}",
                seq.scores.ncols(),
                k1
            )));
        }
        for (t, row) in seq.scores.rows().into_iter().enumerate() {
            let frame = start + t;
            if frame >= num_frames {
                break;
            }
            for (c, &v) in row.iter().enumerate() {
                sum[[frame, c]] += v as f64;
            }
            count[frame] += 1;
        }
    }
    let mut scores = Array2::<f32>::zeros((num_frames, k1));
    for f in 0..num_frames {
        if count[f] == 0 {
            return Err(SpotError::invalid(format!("frame {} is covered by no window", f)));
        }
        for c in 0..k1 {
            scores[[f, c]] = (sum[[f, c]] / count[f] as f64) as f32;
        }
    }
    Ok(ScoreSeq { scores })
}

/// One candidate per (frame, foreground class), filtered by `min_score`,
/// in the global tie ordering.
pub fn scores_to_predictions(scores: &ScoreSeq, video_id: &str, min_score: f32) -> Vec<SpotPrediction> {
    let mut preds = Vec::new();
    for (frame, row) in scores.scores.rows().into_iter().enumerate() {
        for (class_id, &score) in row.iter().enumerate() {
            if class_id == BACKGROUND || score < min_score || score <= 0.0 {
                continue;
            }
            preds.push(SpotPrediction {
                video_id: video_id.to_string(),
                frame,
                class_id,
                score,
            });
        }
    }
    preds.sort_by(prediction_order);
    preds
}

/// Greedy class-wise temporal suppression for one video's candidates:
/// visit in the tie ordering; keep a candidate iff no kept same-class
/// candidate lies within |Δframe| ≤ window. Scores are unchanged.
pub fn nms(preds: &[SpotPrediction], window: usize) -> Vec<SpotPrediction> {
    let mut sorted: Vec<&SpotPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| prediction_order(a, b));
    let mut kept: Vec<SpotPrediction> = Vec::new();
    for p in sorted {
        let clash = kept
            .iter()
            .any(|k| k.class_id == p.class_id && k.frame.abs_diff(p.frame) <= window);
        if !clash {
            kept.push(p.clone());
        }
    }
    kept
}

/// Two-stream fusion: elementwise mean of two probability sequences.
pub fn ensemble(a: &ScoreSeq, b: &ScoreSeq) -> crate::Result<ScoreSeq> {
    if a.scores.dim() != b.scores.dim() {
        return Err(SpotError::ShapeMismatch(format!(
            "ensemble shapes disagree: {:?} vs {:?}",
            a.scores.dim(),
            b.scores.dim()
        )));
    }
    Ok(ScoreSeq {
        scores: (&a.scores + &b.scores) / 2.0,
    })
}

/// Per frame, per channel: subtract that frame-channel's median, then
/// clamp to [−20, +20] pixels.
pub fn preprocess_flow(flow: &Array4<f32>) -> Array4<f32> {
    let (l, h, w, c) = flow.dim();
    let mut out = flow.clone();
    for t in 0..l {
        for ch in 0..c {
            let mut vals: Vec<f32> = flow.slice(s![t, .., .., ch]).iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = vals.len();
            let median = if n % 2 == 1 {
                vals[n / 2]
            } else {
                (vals[n / 2 - 1] + vals[n / 2]) / 2.0
            };
            for i in 0..h {
                for j in 0..w {
                    out[[t, i, j, ch]] = (flow[[t, i, j, ch]] - median).clamp(-20.0, 20.0);
                }
            }
        }
    }
    out
}

/// Dense scores for a whole video from a (N, C, H, W) input, plus the
/// number of backbone frame-evaluations spent (instrumentation for the
/// efficiency contract).
pub fn infer_scores<T: Scalar>(
    model: &SpotModel<T>,
    input: &Array4<T>,
    clip_len: usize,
) -> crate::Result<(ScoreSeq, usize)> {
    let (n, c, h, w) = input.dim();
    let plan = plan_windows(n, clip_len)?;
    let mut windows = Vec::with_capacity(plan.starts.len());
    let mut frame_evals = 0usize;
    for &start in &plan.starts {
        let mut clip = Array4::<T>::zeros((clip_len, c, h, w));
        let take = clip_len.min(n - start);
        clip.slice_mut(s![..take, .., .., ..])
            .assign(&input.slice(s![start..start + take, .., .., ..]));
        let scores = model.forward_scores(&clip)?;
        frame_evals += clip_len;
        windows.push((start, scores));
    }
    Ok((average_scores(&windows, n)?, frame_evals))
}

/// Write predictions in the interchange format: one CSV record per line,
/// header `video,frame,class,score`, scores at 6 decimal places, sorted by
/// the global tie ordering.
pub fn write_predictions(path: impl AsRef<Path>, preds: &[SpotPrediction]) -> crate::Result<()> {
    let path = path.as_ref();
    let mut sorted: Vec<&SpotPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| prediction_order(a, b).then(a.video_id.cmp(&b.video_id)));
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| SpotError::io(path.display().to_string(), e))?,
    );
    writeln!(f, "video,frame,class,score").map_err(|e| SpotError::io(path.display().to_string(), e))?;
    for p in sorted {
        writeln!(f, "{},{},{},{:.6}", p.video_id, p.frame, p.class_id, p.score)
            .map_err(|e| SpotError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Read a prediction file written by [`write_predictions`].
pub fn read_predictions(path: impl AsRef<Path>) -> crate::Result<Vec<SpotPrediction>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
    let mut preds = Vec::new();
    for (ln, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| SpotError::io(path.display().to_string(), e))?;
        if ln == 0 {
            if line.trim() != "video,frame,class,score" {
                return Err(SpotError::invalid(format!(
                    "{}: bad prediction file header {:?}",
                    path.display(),
                    line
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || SpotError::invalid(format!("{} line {}: bad record {:?}", path.display(), ln + 1, line));
        if parts.len() != 4 {
            return Err(bad());
        }
        preds.push(SpotPrediction {
            video_id: parts[0].to_string(),
            frame: parts[1].parse().map_err(|_| bad())?,
            class_id: parts[2].parse().map_err(|_| bad())?,
            score: parts[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: Vec<Vec<f32>>) -> ScoreSeq {
        let r = rows.len();
        let c = rows[0].len();
        ScoreSeq {
            scores: Array2::from_shape_fn((r, c), |(i, j)| rows[i][j]),
        }
    }

    fn pred(frame: usize, class_id: usize, score: f32) -> SpotPrediction {
        SpotPrediction {
            video_id: "v".into(),
            frame,
            class_id,
            score,
        }
    }

    #[test]
    fn window_plans_match_worked_examples() {
        assert_eq!(plan_windows(200, 100).unwrap().starts, vec![0, 50, 100]);
        assert_eq!(plan_windows(120, 100).unwrap().starts, vec![0, 20]);
        assert_eq!(plan_windows(100, 100).unwrap().starts, vec![0]);
        // N < L: one padded window at 0
        assert_eq!(plan_windows(60, 100).unwrap().starts, vec![0]);
        assert!(plan_windows(10, 7).is_err());
        assert!(plan_windows(10, 0).is_err());
    }

    #[test]
    fn every_frame_is_covered() {
        for n in [1usize, 5, 99, 100, 101, 149, 150, 151, 1000] {
            let plan = plan_windows(n, 100).unwrap();
            let mut covered = vec![false; n];
            for &s in &plan.starts {
                for f in s..(s + 100).min(n) {
                    covered[f] = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "n={}", n);
        }
    }

    #[test]
    fn averaging_merges_overlaps_and_masks_padding() {
        // 6 frames, clip 4 → windows at 0 and 2
        let w0 = seq(vec![vec![0.8, 0.2]; 4]);
        let w1 = seq(vec![vec![0.4, 0.6]; 4]);
        let out = average_scores(&[(0, w0), (2, w1)], 6).unwrap();
        assert!((out.scores[[0, 0]] - 0.8).abs() < 1e-6); // single cover
        assert!((out.scores[[2, 0]] - 0.6).abs() < 1e-6); // (0.8+0.4)/2
        assert!((out.scores[[5, 0]] - 0.4).abs() < 1e-6); // single cover
        for t in 0..6 {
            let s: f32 = out.scores.row(t).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        // padded rows past the video end are ignored
        let w = seq(vec![vec![0.5, 0.5], vec![0.1, 0.9], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let out = average_scores(&[(0, w)], 2).unwrap();
        assert_eq!(out.scores.nrows(), 2);
        assert!((out.scores[[1, 1]] - 0.9).abs() < 1e-6);
        // uncovered frame is an error
        let w = seq(vec![vec![1.0, 0.0]; 4]);
        assert!(average_scores(&[(2, w)], 6).is_err());
    }

    #[test]
    fn candidate_extraction_worked_example() {
        let scores = seq(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let preds = scores_to_predictions(&scores, "v", 0.0);
        assert_eq!(preds.len(), 2);
        assert_eq!((preds[0].frame, preds[0].class_id), (1, 1));
        assert!((preds[0].score - 0.8).abs() < 1e-6);
        assert_eq!((preds[1].frame, preds[1].class_id), (0, 1));
        // threshold
        let preds = scores_to_predictions(&scores, "v", 0.5);
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].frame, 1);
    }

    #[test]
    fn nms_worked_example_and_properties() {
        let preds = vec![pred(10, 1, 0.9), pred(11, 1, 0.8), pred(13, 1, 0.7)];
        let kept = nms(&preds, 1);
        let frames: Vec<usize> = kept.iter().map(|p| p.frame).collect();
        assert_eq!(frames, vec![10, 13]);
        // idempotence
        assert_eq!(nms(&kept, 1), kept);
        // window 0 keeps everything (unique frames per class)
        assert_eq!(nms(&preds, 0).len(), 3);
        // classes are independent
        let mixed = vec![pred(10, 1, 0.9), pred(10, 2, 0.8), pred(11, 2, 0.7)];
        let kept = nms(&mixed, 1);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().any(|p| p.class_id == 1 && p.frame == 10));
        assert!(kept.iter().any(|p| p.class_id == 2 && p.frame == 10));
    }

    #[test]
    fn ensemble_is_a_symmetric_mean() {
        let a = seq(vec![vec![0.9, 0.1], vec![0.3, 0.7]]);
        let b = seq(vec![vec![0.5, 0.5], vec![0.1, 0.9]]);
        let m = ensemble(&a, &b).unwrap();
        assert!((m.scores[[0, 0]] - 0.7).abs() < 1e-6);
        assert_eq!(ensemble(&a, &b).unwrap(), ensemble(&b, &a).unwrap());
        assert_eq!(ensemble(&a, &a).unwrap(), a);
        for t in 0..2 {
            let s: f32 = m.scores.row(t).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        let c = seq(vec![vec![1.0, 0.0]]);
        assert!(ensemble(&a, &c).is_err());
    }

    #[test]
    fn flow_preprocessing_median_and_clamp() {
        // spatially constant flow → all zeros
        let constant = Array4::<f32>::from_elem((2, 3, 3, 2), 7.5);
        assert!(preprocess_flow(&constant).iter().all(|&v| v == 0.0));
        // clamping after median subtraction
        let mut f = Array4::<f32>::zeros((1, 3, 3, 2));
        f[[0, 0, 0, 0]] = 35.0; // median of channel 0 is 0
        f[[0, 1, 1, 1]] = -50.0;
        let out = preprocess_flow(&f);
        assert_eq!(out[[0, 0, 0, 0]], 20.0);
        assert_eq!(out[[0, 1, 1, 1]], -20.0);
    }

    #[test]
    fn whole_video_inference_counts_frame_evals() {
        use crate::model::{BackboneConfig, HeadConfig, HeadKind};
        let bb = BackboneConfig::grad_check(3);
        let head = HeadConfig::new(HeadKind::Linear, bb.feature_dim(), 2);
        let model: SpotModel<f32> = SpotModel::new(&bb, &head, 3).unwrap();
        let input = Array4::<f32>::from_elem((30, 3, 16, 16), 0.2);
        let (scores, evals) = infer_scores(&model, &input, 8).unwrap();
        assert_eq!(scores.num_frames(), 30);
        // starts 0,4,8,12,16,20 (+ clamped 22) → 7 windows × 8 frames
        assert_eq!(evals, 7 * 8);
        for t in 0..30 {
            let s: f32 = scores.scores.row(t).sum();
            assert!((s - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn prediction_file_roundtrip_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("preds.csv");
        let preds = vec![pred(3, 2, 0.25), pred(1, 1, 0.75)];
        write_predictions(&p, &preds).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "video,frame,class,score");
        // sorted by descending score, 6 decimal places
        assert_eq!(lines[1], "v,1,1,0.750000");
        assert_eq!(lines[2], "v,3,2,0.250000");
        let back = read_predictions(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].frame, 1);
        assert!((back[0].score - 0.75).abs() < 1e-6);
        // corrupt header rejected
        std::fs::write(&p, "nope\n").unwrap();
        assert!(read_predictions(&p).is_err());
    }
}
