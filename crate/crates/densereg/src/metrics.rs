//! Evaluation metrics: normalized landmark errors with cumulative error
//! curves, per-class segmentation IoU and depth RMSE.

use serde::{Deserialize, Serialize};

use crate::raster::CorrespondenceField;
use crate::synth::GtLandmark;
use crate::tasks::DetectedLandmark;
use crate::{Error, Result};

/// Normalized landmark errors above this value count as failures, and the
/// cumulative error curve is integrated up to it.
pub const ERROR_CAP: f64 = 0.1;

/// Steps used when sampling the cumulative error curve.
pub const CED_STEPS: usize = 1000;

/// RMS pixel distance between detections and ground truth, matched by name
/// and divided by `normalizer`. Only visible ground-truth landmarks
/// participate; any undetected landmark is an error here (the cap convention
/// for undetected landmarks lives in [`normalized_image_error`]).
pub fn rms_point_error(
    pred: &[DetectedLandmark],
    gt: &[GtLandmark],
    normalizer: f64,
) -> Result<f64> {
    if normalizer <= 0.0 {
        return Err(Error::Metrics("normalizer must be positive".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for g in gt.iter().filter(|g| g.visible) {
        let p = pred
            .iter()
            .find(|p| p.name == g.name)
            .ok_or_else(|| Error::Metrics(format!("no prediction for landmark {:?}", g.name)))?;
        if !p.detected {
            return Err(Error::Metrics(format!("landmark {:?} undetected", g.name)));
        }
        let dr = p.row - g.row;
        let dc = p.col - g.col;
        sum += dr * dr + dc * dc;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metrics("no visible landmarks to score".into()));
    }
    Ok((sum / n as f64).sqrt() / normalizer)
}

/// Distance between the outer eye corners of the ground truth.
pub fn interocular_distance(gt: &[GtLandmark]) -> Result<f64> {
    let find = |name: &str| {
        gt.iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Metrics(format!("ground truth lacks landmark {name:?}")))
    };
    let l = find("left_eye_outer")?;
    let r = find("right_eye_outer")?;
    let d = ((l.row - r.row).powi(2) + (l.col - r.col).powi(2)).sqrt();
    if d <= 0.0 {
        return Err(Error::Metrics("degenerate interocular distance".into()));
    }
    Ok(d)
}

/// Fallback normalizer: average edge length of the landmarks' tight
/// bounding box, `(width + height) / 2`.
pub fn bbox_edge_normalizer(gt: &[GtLandmark]) -> Result<f64> {
    if gt.len() < 2 {
        return Err(Error::Metrics("bbox normalizer needs at least 2 landmarks".into()));
    }
    let (mut r0, mut r1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut c0, mut c1) = (f64::INFINITY, f64::NEG_INFINITY);
    for g in gt {
        r0 = r0.min(g.row);
        r1 = r1.max(g.row);
        c0 = c0.min(g.col);
        c1 = c1.max(g.col);
    }
    let mean_edge = ((r1 - r0) + (c1 - c0)) / 2.0;
    if mean_edge <= 0.0 {
        return Err(Error::Metrics("degenerate landmark bounding box".into()));
    }
    Ok(mean_edge)
}

/// Per-image normalized error; undetected visible landmarks are scored at the
/// error cap and flagged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageError {
    pub normalized: f64,
    pub n_visible: usize,
    pub n_undetected: usize,
}

/// RMS pixel error over visible ground truth, divided by `normalizer`.
/// Every undetected landmark contributes `cap * normalizer` pixels of error.
pub fn normalized_image_error(
    pred: &[DetectedLandmark],
    gt: &[GtLandmark],
    normalizer: f64,
    cap: f64,
) -> Result<ImageError> {
    if normalizer <= 0.0 {
        return Err(Error::Metrics("normalizer must be positive".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut undetected = 0usize;
    for g in gt.iter().filter(|g| g.visible) {
        let p = pred
            .iter()
            .find(|p| p.name == g.name)
            .ok_or_else(|| Error::Metrics(format!("no prediction for landmark {:?}", g.name)))?;
        let d = if p.detected {
            ((p.row - g.row).powi(2) + (p.col - g.col).powi(2)).sqrt()
        } else {
            undetected += 1;
            cap * normalizer
        };
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metrics("no visible landmarks to score".into()));
    }
    Ok(ImageError {
        normalized: (sum / n as f64).sqrt() / normalizer,
        n_visible: n,
        n_undetected: undetected,
    })
}

/// A sampled cumulative error distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CedCurve {
    pub thresholds: Vec<f64>,
    /// Fraction of images with error <= threshold.
    pub fractions: Vec<f64>,
}

impl CedCurve {
    /// Two-column `threshold fraction` text, one sample per line.
    pub fn to_two_column_text(&self) -> String {
        self.thresholds
            .iter()
            .zip(&self.fractions)
            .map(|(t, f)| format!("{t:.6} {f:.6}\n"))
            .collect()
    }
}

/// Samples the cumulative error distribution on `steps + 1` evenly spaced
/// thresholds in `[0, cap]`.
pub fn ced(errors: &[f64], cap: f64, steps: usize) -> Result<CedCurve> {
    if errors.is_empty() {
        return Err(Error::Metrics("CED over an empty error list".into()));
    }
    if cap <= 0.0 || steps == 0 {
        return Err(Error::Metrics("CED needs positive cap and step count".into()));
    }
    let n = errors.len() as f64;
    let mut thresholds = Vec::with_capacity(steps + 1);
    let mut fractions = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = cap * i as f64 / steps as f64;
        thresholds.push(t);
        fractions.push(errors.iter().filter(|&&e| e <= t).count() as f64 / n);
    }
    Ok(CedCurve { thresholds, fractions })
}

/// Trapezoid area under the CED, normalized by the threshold cap so a perfect
/// detector scores 1.
pub fn auc(curve: &CedCurve) -> f64 {
    let mut area = 0.0;
    for i in 1..curve.thresholds.len() {
        let dt = curve.thresholds[i] - curve.thresholds[i - 1];
        area += 0.5 * (curve.fractions[i] + curve.fractions[i - 1]) * dt;
    }
    area / curve.thresholds.last().unwrap()
}

/// Percentage of images whose error exceeds the cap.
pub fn failure_rate(errors: &[f64], cap: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    100.0 * errors.iter().filter(|&&e| e > cap).count() as f64 / errors.len() as f64
}

/// One-line report format: `name AUC / failure%`.
pub fn format_summary_line(name: &str, auc: f64, failure_pct: f64) -> String {
    format!("{name} {auc:.4} / {failure_pct:.2}%")
}

/// Per-class intersection over union; `None` when the class appears in
/// neither map (excluded from the mean rather than scored 0 or 1).
pub fn iou_per_class(pred: &[u8], gt: &[u8], classes: &[u8]) -> Result<Vec<Option<f64>>> {
    if pred.len() != gt.len() {
        return Err(Error::Metrics("IoU: label map sizes differ".into()));
    }
    let mut out = Vec::with_capacity(classes.len());
    for &c in classes {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &g) in pred.iter().zip(gt) {
            let pi = p == c;
            let gi = g == c;
            if pi && gi {
                inter += 1;
            }
            if pi || gi {
                union += 1;
            }
        }
        out.push(if union == 0 { None } else { Some(inter as f64 / union as f64) });
    }
    Ok(out)
}

/// Mean over the classes present in at least one of the two maps.
pub fn mean_iou(pred: &[u8], gt: &[u8], classes: &[u8]) -> Result<f64> {
    let per = iou_per_class(pred, gt, classes)?;
    let present: Vec<f64> = per.into_iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::Metrics("IoU: no class present in either map".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// RMSE of predicted vs ground-truth depth over pixels foreground in both.
pub fn depth_rmse(pred: &CorrespondenceField, gt: &CorrespondenceField) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Metrics("depth RMSE: field sizes differ".into()));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for p in 0..gt.len() {
        if pred.mask[p] && gt.mask[p] {
            let e = pred.z[p] as f64 - gt.z[p] as f64;
            sum += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metrics("depth RMSE: masks do not overlap".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Full evaluation summary, serialized as JSON by the eval command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub cap: f64,
    pub landmark_auc: f64,
    pub landmark_failure_rate: f64,
    pub mean_normalized_error: f64,
    pub per_image_errors: Vec<f64>,
    pub mean_iou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    /// `None` when no pixel is foreground in both prediction and ground truth.
    pub depth_rmse: Option<f64>,
    pub ced: CedCurve,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Metrics(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Metrics(format!("report parse: {e}")))
    }
}
