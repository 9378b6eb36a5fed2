//! Downstream tasks on top of a predicted correspondence field: decoding
//! network outputs to UV, landmark localization and part-label transfer.

use crate::codec::{decode_classification_only, decode_scalar, Tessellation, DUMMY};
use crate::net::{NetworkOutput, Tensor};
use crate::raster::{barycentric, CorrespondenceField, BACKGROUND_PART};
use crate::template::{TemplateMesh, UvAtlas};
use crate::{Error, Result};

/// How a (bin, residual) prediction is turned back into a coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// `u = q*d + r[q]` with the residual bank multiplexed by the winning bin.
    Full,
    /// Bin centers only, `u = (q + 0.5)*d`; isolates the classifier branch.
    ClassificationOnly,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "classification" | "cls" => Ok(Self::ClassificationOnly),
            other => Err(Error::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

/// Per-pixel argmax over the (K+1) logit channels; ties go to the lowest
/// class index, and the dummy class maps to [`DUMMY`].
pub fn argmax_labels(logits: &Tensor<f32>, tess: Tessellation) -> Result<Vec<u32>> {
    let (c, h, w) = logits.chw();
    if c != tess.k() + 1 {
        return Err(Error::Net(format!("argmax: {c} channels for K = {}", tess.k())));
    }
    let n = h * w;
    let mut out = vec![0u32; n];
    for p in 0..n {
        let mut best = 0usize;
        let mut best_v = logits.data[p];
        for ch in 1..c {
            let v = logits.data[ch * n + p];
            if v > best_v {
                best_v = v;
                best = ch;
            }
        }
        out[p] = if best == tess.dummy_class() { DUMMY } else { best as u32 };
    }
    Ok(out)
}

/// Decodes raw head outputs into a predicted correspondence field.
///
/// A pixel is foreground only if both axis classifiers vote non-dummy.
/// Coordinates are clamped to `[0, 1]`; depth likewise. Part labels stay at
/// [`BACKGROUND_PART`] until [`transfer_segmentation`] fills them.
pub fn predict_field(
    out: &NetworkOutput<f32>,
    tess: Tessellation,
    mode: DecodeMode,
) -> Result<CorrespondenceField> {
    let (_, h, w) = out.logits_h.chw();
    let n = h * w;
    if out.res_h.shape[0] != tess.k() {
        return Err(Error::Net(format!(
            "predict: residual bank has {} maps for K = {}",
            out.res_h.shape[0],
            tess.k()
        )));
    }
    let q_h = argmax_labels(&out.logits_h, tess)?;
    let q_v = argmax_labels(&out.logits_v, tess)?;
    let decode_axis = |q: &[u32], bank: &Tensor<f32>| -> Vec<f32> {
        match mode {
            DecodeMode::Full => q
                .iter()
                .enumerate()
                .map(|(p, &qi)| {
                    if qi == DUMMY {
                        0.0
                    } else {
                        let r = bank.data[qi as usize * n + p];
                        decode_scalar(qi, r, tess).clamp(0.0, 1.0)
                    }
                })
                .collect(),
            DecodeMode::ClassificationOnly => decode_classification_only(q, tess).u,
        }
    };
    let mut field = CorrespondenceField::empty(w, h);
    field.u_h = decode_axis(&q_h, &out.res_h);
    field.u_v = decode_axis(&q_v, &out.res_v);
    for p in 0..n {
        field.mask[p] = q_h[p] != DUMMY && q_v[p] != DUMMY;
        field.z[p] = out.depth.data[p].clamp(0.0, 1.0);
        if !field.mask[p] {
            field.u_h[p] = 0.0;
            field.u_v[p] = 0.0;
            field.z[p] = 0.0;
        }
    }
    Ok(field)
}

/// One localized landmark. `row`/`col` are pixel-center coordinates of the
/// winning pixel; `detected` is false when no foreground pixel fell within
/// the UV distance threshold. `uv_distance` is the smallest UV distance seen
/// over the foreground (infinite when the foreground is empty).
#[derive(Debug, Clone)]
pub struct DetectedLandmark {
    pub name: String,
    pub row: f64,
    pub col: f64,
    pub detected: bool,
    pub uv_distance: f64,
}

/// Default UV-distance threshold for landmark detection.
pub const DEFAULT_LANDMARK_TAU: f64 = 0.05;

fn connected_component(
    seed: usize,
    inside: &[bool],
    width: usize,
    height: usize,
    visited: &mut [bool],
) -> Vec<usize> {
    // 4-connected flood fill
    let mut stack = vec![seed];
    let mut out = Vec::new();
    visited[seed] = true;
    while let Some(p) = stack.pop() {
        out.push(p);
        let (r, c) = (p / width, p % width);
        let mut push = |q: usize| {
            if inside[q] && !visited[q] {
                visited[q] = true;
                stack.push(q);
            }
        };
        if r > 0 {
            push(p - width);
        }
        if r + 1 < height {
            push(p + width);
        }
        if c > 0 {
            push(p - 1);
        }
        if c + 1 < width {
            push(p + 1);
        }
    }
    out
}

/// Localizes template landmarks in a predicted field.
///
/// For each landmark with template coordinate `uv`, the UV distance
/// `D(p) = |u(p) - uv|` is computed on foreground pixels, thresholded at
/// `tau`, and the 4-connected component containing the global minimum is
/// selected; the reported pixel is that component's argmin (lexicographic
/// (row, col) tie-break).
pub fn localize_landmarks(
    field: &CorrespondenceField,
    landmarks: &[(String, [f64; 2])],
    tau: f64,
) -> Result<Vec<DetectedLandmark>> {
    if tau <= 0.0 {
        return Err(Error::Metrics("landmark threshold must be positive".into()));
    }
    let (w, h) = (field.width, field.height);
    let n = w * h;
    let mut out = Vec::with_capacity(landmarks.len());
    let mut dist = vec![f64::INFINITY; n];
    for (name, uv) in landmarks {
        // global minimum; strict < keeps the lowest pixel index on ties, so
        // the winning component is the one holding the global minimum
        let mut best: Option<(f64, usize)> = None;
        for p in 0..n {
            dist[p] = if field.mask[p] {
                let dh = field.u_h[p] as f64 - uv[0];
                let dv = field.u_v[p] as f64 - uv[1];
                (dh * dh + dv * dv).sqrt()
            } else {
                f64::INFINITY
            };
            if dist[p].is_finite() && best.map_or(true, |(bd, _)| dist[p] < bd) {
                best = Some((dist[p], p));
            }
        }
        match best {
            Some((d, seed)) if d <= tau => {
                let inside: Vec<bool> = dist.iter().map(|&v| v <= tau).collect();
                let mut visited = vec![false; n];
                let component = connected_component(seed, &inside, w, h, &mut visited);
                let mut win = seed;
                for &p in &component {
                    if dist[p] < dist[win] || (dist[p] == dist[win] && p < win) {
                        win = p;
                    }
                }
                out.push(DetectedLandmark {
                    name: name.clone(),
                    row: (win / w) as f64 + 0.5,
                    col: (win % w) as f64 + 0.5,
                    detected: true,
                    uv_distance: dist[win],
                });
            }
            other => out.push(DetectedLandmark {
                name: name.clone(),
                row: 0.0,
                col: 0.0,
                detected: false,
                uv_distance: other.map_or(f64::INFINITY, |(d, _)| d),
            }),
        }
    }
    Ok(out)
}

/// Writes landmark results as one text line each:
/// `name row col detected uv_distance`.
pub fn write_landmark_results(
    path: &std::path::Path,
    results: &[DetectedLandmark],
) -> Result<()> {
    let mut text = String::new();
    for r in results {
        text.push_str(&format!(
            "{} {:.4} {:.4} {} {:.6}\n",
            r.name,
            r.row,
            r.col,
            u8::from(r.detected),
            r.uv_distance
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// A dense `R x R` lookup table from UV cells to part labels, built once from
/// the template and used to label any predicted field.
#[derive(Debug, Clone)]
pub struct LabelLut {
    pub resolution: usize,
    /// Row-major `[v][h]`, every cell holds a real part label after the fill.
    pub labels: Vec<u8>,
}

/// Rasterizes template part labels into UV space, then nearest-fills cells no
/// triangle covered (breadth-first from labeled cells, so the fill is the
/// 4-connected nearest label with deterministic ties).
pub fn build_label_lut(mesh: &TemplateMesh, atlas: &UvAtlas, resolution: usize) -> Result<LabelLut> {
    if resolution == 0 {
        return Err(Error::Metrics("LUT resolution must be positive".into()));
    }
    let r = resolution;
    let mut labels = vec![BACKGROUND_PART; r * r];
    for t in 0..mesh.triangles.len() {
        let uv = atlas.tri_uv(mesh, t);
        // seam triangles carry u_h offsets above 1; rasterize both the stored
        // copy and its wrap back into [0, 1)
        for shift in [0.0f64, -1.0] {
            let tri = [
                [uv[0][0] + shift, uv[0][1]],
                [uv[1][0] + shift, uv[1][1]],
                [uv[2][0] + shift, uv[2][1]],
            ];
            let (min_h, max_h) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
                (acc.0.min(p[0]), acc.1.max(p[0]))
            });
            if max_h < 0.0 || min_h > 1.0 {
                continue;
            }
            let (min_v, max_v) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
                (acc.0.min(p[1]), acc.1.max(p[1]))
            });
            let c0 = ((min_h * r as f64).floor() as i64).clamp(0, r as i64 - 1) as usize;
            let c1 = ((max_h * r as f64).ceil() as i64).clamp(0, r as i64 - 1) as usize;
            let r0 = ((min_v * r as f64).floor() as i64).clamp(0, r as i64 - 1) as usize;
            let r1 = ((max_v * r as f64).ceil() as i64).clamp(0, r as i64 - 1) as usize;
            let corner_parts = [
                mesh.part_labels[mesh.triangles[t][0]],
                mesh.part_labels[mesh.triangles[t][1]],
                mesh.part_labels[mesh.triangles[t][2]],
            ];
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let p = [
                        (col as f64 + 0.5) / r as f64,
                        (row as f64 + 0.5) / r as f64,
                    ];
                    let Ok(bc) = barycentric(tri, p) else { continue };
                    if bc.iter().all(|&b| b >= 0.0) {
                        // same convention as the image rasterizer: the corner
                        // with the largest barycentric owns the label
                        let mut best = 0usize;
                        for i in 1..3 {
                            if bc[i] > bc[best] {
                                best = i;
                            }
                        }
                        labels[row * r + col] = corner_parts[best];
                    }
                }
            }
        }
    }
    // nearest fill
    let mut queue: std::collections::VecDeque<usize> = (0..r * r)
        .filter(|&p| labels[p] != BACKGROUND_PART)
        .collect();
    if queue.is_empty() {
        return Err(Error::Metrics("label LUT: no cell covered by any triangle".into()));
    }
    while let Some(p) = queue.pop_front() {
        let (row, col) = (p / r, p % r);
        let mut visit = |q: usize| {
            if labels[q] == BACKGROUND_PART {
                labels[q] = labels[p];
                queue.push_back(q);
            }
        };
        if row > 0 {
            visit(p - r);
        }
        if row + 1 < r {
            visit(p + r);
        }
        if col > 0 {
            visit(p - 1);
        }
        if col + 1 < r {
            visit(p + 1);
        }
    }
    Ok(LabelLut { resolution: r, labels })
}

impl LabelLut {
    /// Looks up the part label at a UV coordinate.
    pub fn lookup(&self, u_h: f32, u_v: f32) -> u8 {
        let r = self.resolution;
        let col = ((u_h as f64 * r as f64).floor() as i64).clamp(0, r as i64 - 1) as usize;
        let row = ((u_v as f64 * r as f64).floor() as i64).clamp(0, r as i64 - 1) as usize;
        self.labels[row * r + col]
    }
}

/// Stamps part labels onto a predicted field via the UV lookup table.
/// Background pixels keep [`BACKGROUND_PART`].
pub fn transfer_segmentation(field: &mut CorrespondenceField, lut: &LabelLut) {
    for p in 0..field.len() {
        field.parts[p] = if field.mask[p] {
            lut.lookup(field.u_h[p], field.u_v[p])
        } else {
            BACKGROUND_PART
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{cylindrical_unwrap, face_lowpoly};

    fn tess(k: usize) -> Tessellation {
        Tessellation::new(k).unwrap()
    }

    #[test]
    fn argmax_tie_goes_to_lowest_class() {
        let logits = Tensor::from_vec(&[3, 1, 1], vec![2.0f32, 2.0, 1.0]).unwrap();
        let q = argmax_labels(&logits, tess(2)).unwrap();
        assert_eq!(q, vec![0]);
        // dummy class wins only on a strict maximum
        let logits = Tensor::from_vec(&[3, 1, 1], vec![1.0f32, 1.0, 3.0]).unwrap();
        assert_eq!(argmax_labels(&logits, tess(2)).unwrap(), vec![DUMMY]);
    }

    fn one_pixel_output(k: usize, qh: usize, rh: f32, qv: usize, rv: f32) -> NetworkOutput<f32> {
        let mut logits_h = Tensor::zeros(&[k + 1, 1, 1]);
        let mut logits_v = Tensor::zeros(&[k + 1, 1, 1]);
        logits_h.data[qh] = 5.0;
        logits_v.data[qv] = 5.0;
        let mut res_h = Tensor::zeros(&[k, 1, 1]);
        let mut res_v = Tensor::zeros(&[k, 1, 1]);
        if qh < k {
            res_h.data[qh] = rh;
        }
        if qv < k {
            res_v.data[qv] = rv;
        }
        NetworkOutput {
            logits_h,
            logits_v,
            res_h,
            res_v,
            depth: Tensor::from_vec(&[1, 1, 1], vec![0.7]).unwrap(),
        }
    }

    #[test]
    fn full_decode_multiplexes_by_winning_bin() {
        let t = tess(10);
        let out = one_pixel_output(10, 3, 0.07, 6, 0.02);
        let field = predict_field(&out, t, DecodeMode::Full).unwrap();
        assert!(field.mask[0]);
        assert!((field.u_h[0] - 0.37).abs() < 1e-6);
        assert!((field.u_v[0] - 0.62).abs() < 1e-6);
        assert!((field.z[0] - 0.7).abs() < 1e-7);
    }

    #[test]
    fn classification_only_decode_uses_bin_centers() {
        let t = tess(10);
        let out = one_pixel_output(10, 3, 0.07, 6, 0.02);
        let field = predict_field(&out, t, DecodeMode::ClassificationOnly).unwrap();
        assert!((field.u_h[0] - 0.35).abs() < 1e-6);
        assert!((field.u_v[0] - 0.65).abs() < 1e-6);
    }

    #[test]
    fn dummy_on_either_axis_is_background() {
        let t = tess(4);
        let out = one_pixel_output(4, 4, 0.0, 1, 0.1); // h axis votes dummy
        let field = predict_field(&out, t, DecodeMode::Full).unwrap();
        assert!(!field.mask[0]);
        assert_eq!(field.u_h[0], 0.0);
        assert_eq!(field.z[0], 0.0);
    }

    fn uniform_field(w: usize, h: usize, uv: [f32; 2]) -> CorrespondenceField {
        let mut f = CorrespondenceField::empty(w, h);
        for p in 0..w * h {
            f.mask[p] = true;
            f.u_h[p] = uv[0];
            f.u_v[p] = uv[1];
        }
        f
    }

    #[test]
    fn landmark_found_at_distance_minimum() {
        let mut field = uniform_field(5, 5, [0.9, 0.9]);
        // pixel (2,3) carries the landmark's exact UV
        field.u_h[2 * 5 + 3] = 0.2;
        field.u_v[2 * 5 + 3] = 0.3;
        let lms = vec![("nose_tip".to_string(), [0.2f64, 0.3])];
        let out = localize_landmarks(&field, &lms, 0.05).unwrap();
        assert!(out[0].detected);
        assert_eq!((out[0].row, out[0].col), (2.5, 3.5));
        assert!(out[0].uv_distance < 1e-7); // f32 field vs f64 target

    }

    #[test]
    fn landmark_tie_breaks_lexicographically() {
        let mut field = uniform_field(4, 4, [0.9, 0.9]);
        // two adjacent pixels at identical distance
        for &p in &[5usize, 6] {
            field.u_h[p] = 0.2;
            field.u_v[p] = 0.3;
        }
        let lms = vec![("x".to_string(), [0.2f64, 0.3])];
        let out = localize_landmarks(&field, &lms, 0.05).unwrap();
        assert_eq!((out[0].row, out[0].col), (1.5, 1.5)); // pixel (1,1) beats (1,2)
    }

    #[test]
    fn landmark_missing_when_all_pixels_far() {
        let field = uniform_field(4, 4, [0.9, 0.9]);
        let lms = vec![("x".to_string(), [0.1f64, 0.1])];
        let out = localize_landmarks(&field, &lms, 0.05).unwrap();
        assert!(!out[0].detected);
        assert!(out[0].uv_distance > 0.05 && out[0].uv_distance.is_finite());
    }

    #[test]
    fn empty_foreground_is_undetected_everywhere() {
        let field = CorrespondenceField::empty(4, 4);
        let lms = vec![("a".to_string(), [0.5f64, 0.5]), ("b".to_string(), [0.1, 0.1])];
        let out = localize_landmarks(&field, &lms, 0.05).unwrap();
        assert!(out.iter().all(|r| !r.detected && r.uv_distance.is_infinite()));
    }

    #[test]
    fn global_minimum_component_wins_over_nearer_blob() {
        // two blobs under threshold; the one holding the global min is chosen
        let mut field = uniform_field(7, 1, [0.9, 0.9]);
        field.u_h[1] = 0.21; // blob A, distance 0.01
        field.u_v[1] = 0.3;
        field.u_h[5] = 0.204; // blob B, distance 0.004 (global min)
        field.u_v[5] = 0.3;
        let lms = vec![("x".to_string(), [0.2f64, 0.3])];
        let out = localize_landmarks(&field, &lms, 0.05).unwrap();
        assert_eq!((out[0].row, out[0].col), (0.5, 5.5));
    }

    #[test]
    fn label_lut_is_total_and_matches_known_regions() {
        let mesh = face_lowpoly();
        let atlas = cylindrical_unwrap(&mesh).unwrap();
        let lut = build_label_lut(&mesh, &atlas, 64).unwrap();
        assert!(lut.labels.iter().all(|&l| l != BACKGROUND_PART && l < 8));
        // all 8 parts represented
        let present: std::collections::BTreeSet<u8> = lut.labels.iter().copied().collect();
        assert_eq!(present.len(), 8);
    }

    #[test]
    fn segmentation_transfer_labels_foreground_only() {
        let mesh = face_lowpoly();
        let atlas = cylindrical_unwrap(&mesh).unwrap();
        let lut = build_label_lut(&mesh, &atlas, 64).unwrap();
        let mut field = uniform_field(3, 1, [0.5, 0.5]);
        field.mask[2] = false;
        transfer_segmentation(&mut field, &lut);
        assert_eq!(field.parts[0], lut.lookup(0.5, 0.5));
        assert_eq!(field.parts[2], BACKGROUND_PART);
    }
}
