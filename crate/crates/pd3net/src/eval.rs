//! Detection evaluation: greedy nearest-first matching with an occlusion
//! exemption, precision/recall/F1 with normal-approximation confidence
//! intervals, threshold sweeps, and tuned vs. global threshold selection.

use serde::Serialize;

use crate::codec::{decode_detections, Annotation, Detection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of matching one frame's detections against its ground truth.
#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Unmatched annotations excused because the head was more than half
    /// occluded.
    pub ignored: usize,
    /// Matched `(detection index, annotation index, distance in pixels)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Match detections to annotations one-to-one, globally nearest pair first,
/// within a distance gate. Unmatched detections count as false positives.
/// An unmatched annotation whose head is occluded by more than 50% is
/// ignored rather than counted as a false negative; annotations that *are*
/// detected count as true positives regardless of occlusion.
pub fn match_frame(
    detections: &[Detection],
    annotations: &[Annotation],
    gate_px: f64,
) -> MatchResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        for (ai, a) in annotations.iter().enumerate() {
            let dist = ((d.u - a.u).powi(2) + (d.v - a.v).powi(2)).sqrt();
            if dist <= gate_px {
                candidates.push((dist, di, ai));
            }
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut det_used = vec![false; detections.len()];
    let mut ann_used = vec![false; annotations.len()];
    let mut result = MatchResult::default();
    for (dist, di, ai) in candidates {
        if det_used[di] || ann_used[ai] {
            continue;
        }
        det_used[di] = true;
        ann_used[ai] = true;
        result.pairs.push((di, ai, dist));
    }
    result.true_positives = result.pairs.len();
    result.false_positives = det_used.iter().filter(|&&u| !u).count();
    for (ai, used) in ann_used.iter().enumerate() {
        if !used {
            if annotations[ai].occlusion > 0.5 {
                result.ignored += 1;
            } else {
                result.false_negatives += 1;
            }
        }
    }
    result
}

/// Aggregate detection metrics.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `(false negatives + false positives) / ground truth count`.
    pub error: f64,
    /// 95% confidence half-width for the F1 score (normal approximation).
    pub ci95_f1: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

/// Compute the report from aggregate counts. The ground-truth count is
/// `tp + fn` (ignored annotations are excluded upstream).
pub fn compute_metrics(
    true_positives: usize,
    false_positives: usize,
    false_negatives: usize,
) -> Result<MetricsReport> {
    let n_gt = true_positives + false_negatives;
    if n_gt == 0 {
        return Err(Error::Validation(
            "metrics undefined without ground-truth people".into(),
        ));
    }
    let n_det = true_positives + false_positives;
    let precision = if n_det == 0 {
        1.0
    } else {
        true_positives as f64 / n_det as f64
    };
    let recall = true_positives as f64 / n_gt as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let error = (false_negatives + false_positives) as f64 / n_gt as f64;
    let ci95_f1 = 1.96 * (f1 * (1.0 - f1) / n_gt as f64).sqrt();
    Ok(MetricsReport { precision, recall, f1, error, ci95_f1, n_gt, n_det })
}

/// One sampled operating point of a threshold sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// F1-versus-threshold curve with its best operating point.
#[derive(Debug, Clone)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    pub best_threshold: f64,
    pub best_f1: f64,
    /// Total annotations available to the sweep (dataset weight for global
    /// threshold selection).
    pub n_annotations: usize,
}

/// Build an inclusive, evenly spaced threshold grid.
pub fn threshold_grid(t_min: f64, t_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max < 1.0 && t_min <= t_max && step > 0.0) {
        return Err(Error::Param(format!(
            "invalid threshold grid: [{t_min}, {t_max}] step {step}"
        )));
    }
    let count = ((t_max - t_min) / step).round() as usize;
    Ok((0..=count).map(|i| t_min + i as f64 * step).collect())
}

/// Decode every map at every threshold, aggregate matches, and compute the
/// per-threshold metrics. The best threshold is the argmax of F1, breaking
/// ties toward the lowest threshold.
pub fn threshold_sweep(
    maps: &[Tensor],
    annotations: &[Vec<Annotation>],
    thresholds: &[f64],
    gate_px: f64,
    min_area: usize,
) -> Result<SweepCurve> {
    if thresholds.is_empty() {
        return Err(Error::Param("empty threshold list".into()));
    }
    if !thresholds.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Param("thresholds must be strictly increasing".into()));
    }
    if maps.len() != annotations.len() {
        return Err(Error::Param(format!(
            "{} maps but {} annotation lists",
            maps.len(),
            annotations.len()
        )));
    }
    let mut points = Vec::with_capacity(thresholds.len());
    let mut best_threshold = thresholds[0];
    let mut best_f1 = -1.0;
    for &t in thresholds {
        let mut tp = 0;
        let mut fp = 0;
        let mut missed = 0;
        for (map, anns) in maps.iter().zip(annotations) {
            let dets = decode_detections(map, t, min_area)?;
            let m = match_frame(&dets, anns, gate_px);
            tp += m.true_positives;
            fp += m.false_positives;
            missed += m.false_negatives;
        }
        let (precision, recall, f1) = if tp + missed == 0 {
            // No visible ground truth at all; count precision only.
            let p = if tp + fp == 0 { 1.0 } else { 0.0 };
            (p, 1.0, if fp == 0 { 1.0 } else { 0.0 })
        } else {
            let r = compute_metrics(tp, fp, missed)?;
            (r.precision, r.recall, r.f1)
        };
        if f1 > best_f1 {
            best_f1 = f1;
            best_threshold = t;
        }
        points.push(SweepPoint { threshold: t, precision, recall, f1 });
    }
    let n_annotations = annotations.iter().map(|a| a.len()).sum();
    Ok(SweepCurve { points, best_threshold, best_f1, n_annotations })
}

/// Pick the threshold maximizing the annotation-count-weighted average F1
/// across several sweep curves sampled on a common grid. With a single curve
/// this reduces to its tuned threshold.
pub fn select_global_threshold(curves: &[&SweepCurve]) -> Result<f64> {
    let first = curves.first().ok_or_else(|| Error::State("no sweep curves".into()))?;
    for c in curves {
        if c.points.len() != first.points.len()
            || c.points
                .iter()
                .zip(&first.points)
                .any(|(a, b)| (a.threshold - b.threshold).abs() > 1e-12)
        {
            return Err(Error::Param("sweep curves use different threshold grids".into()));
        }
    }
    let total_weight: f64 = curves.iter().map(|c| c.n_annotations as f64).sum();
    if total_weight == 0.0 {
        return Err(Error::State("sweep curves carry no annotations".into()));
    }
    let mut best_t = first.points[0].threshold;
    let mut best = -1.0;
    for i in 0..first.points.len() {
        let avg: f64 = curves
            .iter()
            .map(|c| c.points[i].f1 * c.n_annotations as f64)
            .sum::<f64>()
            / total_weight;
        if avg > best {
            best = avg;
            best_t = first.points[i].threshold;
        }
    }
    Ok(best_t)
}
