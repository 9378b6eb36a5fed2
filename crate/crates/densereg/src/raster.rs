//! Software triangle rasterizer: per-pixel UV, depth, part labels and
//! foreground mask from a projected mesh, with z-buffer visibility.
//!
//! Conventions (all asserted by oracle equality in the integration tests):
//! pixel `(row, col)` samples at `(col + 0.5, row + 0.5)`; points exactly on
//! an edge belong to one triangle per a top-left fill rule; z ties are won
//! by the lower triangle index.

use std::path::Path;

use crate::io::{self, channel};
use crate::template::{TemplateMesh, UvAtlas};
use crate::{Error, Result};

/// Part label sentinel for background pixels.
pub const BACKGROUND_PART: u8 = 255;

/// A mesh projected to pixel coordinates with camera-space depth
/// (larger = farther).
#[derive(Debug, Clone)]
pub struct ProjectedMesh {
    pub vertices_2d: Vec<[f64; 2]>,
    pub vertex_depth: Vec<f64>,
    pub triangles: Vec<[usize; 3]>,
    /// Per-triangle per-corner UV, seam correction already applied
    /// (`u_h` may exceed 1 on seam triangles).
    pub tri_uv: Vec<[[f64; 2]; 3]>,
    pub part_labels: Vec<u8>,
}

impl ProjectedMesh {
    pub fn from_template(
        mesh: &TemplateMesh,
        atlas: &UvAtlas,
        vertices_2d: Vec<[f64; 2]>,
        vertex_depth: Vec<f64>,
    ) -> Result<Self> {
        let tri_uv = (0..mesh.triangles.len()).map(|t| atlas.tri_uv(mesh, t)).collect();
        let pm = Self {
            vertices_2d,
            vertex_depth,
            triangles: mesh.triangles.clone(),
            tri_uv,
            part_labels: mesh.part_labels.clone(),
        };
        pm.validate()?;
        Ok(pm)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.vertices_2d.len();
        if self.vertex_depth.len() != m || self.part_labels.len() != m {
            return Err(Error::Raster("projected mesh: inconsistent vertex arrays".into()));
        }
        if self.tri_uv.len() != self.triangles.len() {
            return Err(Error::Raster("projected mesh: tri_uv length mismatch".into()));
        }
        if self.vertex_depth.iter().any(|d| !d.is_finite()) {
            return Err(Error::Raster("projected mesh: non-finite depth".into()));
        }
        if self.triangles.iter().flatten().any(|&i| i >= m) {
            return Err(Error::Raster("projected mesh: triangle index out of range".into()));
        }
        Ok(())
    }
}

/// Per-pixel ground truth or prediction: UV, normalized depth, foreground
/// mask and part labels. Masked-out pixels carry sentinel values
/// (UV = 0, Z = 0, parts = [`BACKGROUND_PART`]).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceField {
    pub width: usize,
    pub height: usize,
    pub u_h: Vec<f32>,
    pub u_v: Vec<f32>,
    pub z: Vec<f32>,
    pub mask: Vec<bool>,
    pub parts: Vec<u8>,
}

impl CorrespondenceField {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u_h: vec![0.0; n],
            u_v: vec![0.0; n],
            z: vec![0.0; n],
            mask: vec![false; n],
            parts: vec![BACKGROUND_PART; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Barycentric coordinates of `p` in the triangle `(a, b, c)`.
///
/// Satisfies `alpha + beta + gamma = 1` and `alpha*a + beta*b + gamma*c = p`;
/// `p` is inside iff all coordinates are >= 0.
pub fn barycentric(tri: [[f64; 2]; 3], p: [f64; 2]) -> Result<[f64; 3]> {
    let [a, b, c] = tri;
    let denom = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if denom == 0.0 {
        return Err(Error::Raster("degenerate triangle".into()));
    }
    let alpha = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / denom;
    let beta = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / denom;
    Ok([alpha, beta, 1.0 - alpha - beta])
}

/// Top-left ownership for an on-edge sample. `(dx, dy)` is the directed edge
/// opposite the zero barycentric coordinate, in image coordinates (y down,
/// counter-clockwise canonical winding).
pub fn edge_is_top_left(dx: f64, dy: f64) -> bool {
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

struct PreparedTri {
    // corners after canonical winding (positive signed denominator)
    p: [[f64; 2]; 3],
    depth: [f64; 3],
    uv: [[f64; 2]; 3],
    labels: [u8; 3],
    denom: f64,
}

/// Canonicalizes triangle `t` of `pm` for rasterization: swaps corners 1 and 2
/// when the signed denominator is negative so inside means all barycentric
/// coordinates >= 0. Returns `None` for zero-area projections.
fn prepare(pm: &ProjectedMesh, t: usize) -> Option<PreparedTri> {
    let tri = pm.triangles[t];
    let mut p = [pm.vertices_2d[tri[0]], pm.vertices_2d[tri[1]], pm.vertices_2d[tri[2]]];
    let mut depth = [
        pm.vertex_depth[tri[0]],
        pm.vertex_depth[tri[1]],
        pm.vertex_depth[tri[2]],
    ];
    let mut uv = pm.tri_uv[t];
    let mut labels = [
        pm.part_labels[tri[0]],
        pm.part_labels[tri[1]],
        pm.part_labels[tri[2]],
    ];
    let denom_of = |p: &[[f64; 2]; 3]| {
        (p[1][1] - p[2][1]) * (p[0][0] - p[2][0]) + (p[2][0] - p[1][0]) * (p[0][1] - p[2][1])
    };
    let mut denom = denom_of(&p);
    if denom < 0.0 {
        p.swap(1, 2);
        depth.swap(1, 2);
        uv.swap(1, 2);
        labels.swap(1, 2);
        denom = denom_of(&p);
    }
    if denom == 0.0 {
        None
    } else {
        Some(PreparedTri { p, depth, uv, labels, denom })
    }
}

/// Inside test with the top-left fill rule, for a canonicalized triangle.
/// Returns barycentric coordinates when the sample is owned by the triangle.
fn covered(tri: &PreparedTri, x: f64, y: f64) -> Option<[f64; 3]> {
    let [a, b, c] = tri.p;
    let e0 = (b[1] - c[1]) * (x - c[0]) + (c[0] - b[0]) * (y - c[1]);
    let e1 = (c[1] - a[1]) * (x - c[0]) + (a[0] - c[0]) * (y - c[1]);
    let alpha = e0 / tri.denom;
    let beta = e1 / tri.denom;
    let gamma = 1.0 - alpha - beta;
    // edge opposite corner 0 is b->c, opposite 1 is c->a, opposite 2 is a->b
    let edges = [
        (alpha, c[0] - b[0], c[1] - b[1]),
        (beta, a[0] - c[0], a[1] - c[1]),
        (gamma, b[0] - a[0], b[1] - a[1]),
    ];
    for (w, dx, dy) in edges {
        if w < 0.0 || (w == 0.0 && !edge_is_top_left(dx, dy)) {
            return None;
        }
    }
    Some([alpha, beta, gamma])
}

fn wrap_unit(u: f64) -> f32 {
    let mut u = u;
    if u >= 1.0 {
        u -= 1.0;
    }
    u.clamp(0.0, 1.0) as f32
}

/// Rasterization output with the raw (unnormalized) z-buffer, used for
/// landmark visibility checks.
pub struct RasterOutput {
    pub field: CorrespondenceField,
    /// Winning interpolated depth per covered pixel (camera units).
    pub raw_depth: Vec<f64>,
    /// Winning triangle index per pixel, `u32::MAX` for background.
    pub tri_id: Vec<u32>,
}

/// Rasterizes the projected mesh with z-buffer visibility.
///
/// Per covered pixel the triangle with the smallest interpolated depth wins;
/// UV and depth interpolate barycentrically, the part label comes from the
/// corner with the largest barycentric weight. Seam-corrected `u_h` values
/// are wrapped back into `[0, 1)`. The depth channel is renormalized over the
/// foreground to `[0, 1]` with nearest = 1. No coverage yields a valid empty
/// field.
pub fn rasterize(pm: &ProjectedMesh, width: usize, height: usize) -> Result<CorrespondenceField> {
    Ok(rasterize_full(pm, width, height)?.field)
}

pub fn rasterize_full(pm: &ProjectedMesh, width: usize, height: usize) -> Result<RasterOutput> {
    pm.validate()?;
    let n = width * height;
    let mut field = CorrespondenceField::empty(width, height);
    let mut raw_depth = vec![f64::INFINITY; n];
    let mut tri_id = vec![u32::MAX; n];

    for t in 0..pm.triangles.len() {
        let Some(tri) = prepare(pm, t) else { continue };
        let min_x = tri.p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let max_x = tri.p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = tri.p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let max_y = tri.p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let col0 = ((min_x - 0.5).floor().max(0.0)) as usize;
        let col1 = ((max_x - 0.5).ceil().min((width as f64) - 1.0)).max(0.0) as usize;
        let row0 = ((min_y - 0.5).floor().max(0.0)) as usize;
        let row1 = ((max_y - 0.5).ceil().min((height as f64) - 1.0)).max(0.0) as usize;
        if min_x > width as f64 || max_x < 0.0 || min_y > height as f64 || max_y < 0.0 {
            continue;
        }
        for row in row0..=row1 {
            let y = row as f64 + 0.5;
            for col in col0..=col1 {
                let x = col as f64 + 0.5;
                let Some(w) = covered(&tri, x, y) else { continue };
                let d = w[0] * tri.depth[0] + w[1] * tri.depth[1] + w[2] * tri.depth[2];
                let idx = row * width + col;
                // strict test: earlier (lower-index) triangles win depth ties
                if d < raw_depth[idx] {
                    raw_depth[idx] = d;
                    tri_id[idx] = t as u32;
                    field.mask[idx] = true;
                    field.u_h[idx] =
                        wrap_unit(w[0] * tri.uv[0][0] + w[1] * tri.uv[1][0] + w[2] * tri.uv[2][0]);
                    field.u_v[idx] = (w[0] * tri.uv[0][1]
                        + w[1] * tri.uv[1][1]
                        + w[2] * tri.uv[2][1])
                        .clamp(0.0, 1.0) as f32;
                    let mut best = 0;
                    for c in 1..3 {
                        if w[c] > w[best] {
                            best = c;
                        }
                    }
                    field.parts[idx] = tri.labels[best];
                }
            }
        }
    }

    // min-max depth normalization over foreground, nearest = 1
    let mut min_d = f64::INFINITY;
    let mut max_d = f64::NEG_INFINITY;
    for i in 0..n {
        if field.mask[i] {
            min_d = min_d.min(raw_depth[i]);
            max_d = max_d.max(raw_depth[i]);
        }
    }
    // a range at roundoff scale is constant depth, which maps to 1 everywhere
    let constant = max_d - min_d <= 1e-12 * max_d.abs().max(min_d.abs()).max(1.0);
    for i in 0..n {
        if field.mask[i] {
            field.z[i] = if constant {
                1.0
            } else {
                ((max_d - raw_depth[i]) / (max_d - min_d)) as f32
            };
        }
    }
    Ok(RasterOutput { field, raw_depth, tri_id })
}

/// Writes a correspondence field as a 5-channel DRF1 file.
pub fn write_field(path: &Path, field: &CorrespondenceField) -> Result<()> {
    let mask: Vec<f32> = field.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let parts: Vec<f32> = field.parts.iter().map(|&p| p as f32).collect();
    io::write_drf1(
        path,
        field.width as u32,
        field.height as u32,
        &[
            (channel::U_H, &field.u_h),
            (channel::U_V, &field.u_v),
            (channel::Z, &field.z),
            (channel::MASK, &mask),
            (channel::PARTS, &parts),
        ],
    )
}

/// Reads a correspondence field back from DRF1; exact inverse of
/// [`write_field`].
pub fn read_field(path: &Path) -> Result<CorrespondenceField> {
    let (width, height, channels) = io::read_drf1(path)?;
    let mut field = CorrespondenceField::empty(width as usize, height as usize);
    let mut seen = [false; 5];
    for (desc, data) in channels {
        match desc {
            channel::U_H => field.u_h = data,
            channel::U_V => field.u_v = data,
            channel::Z => field.z = data,
            channel::MASK => field.mask = data.iter().map(|&v| v != 0.0).collect(),
            channel::PARTS => field.parts = data.iter().map(|&v| v as u8).collect(),
            other => {
                return Err(Error::Format(format!(
                    "unexpected channel descriptor {other} in field file"
                )))
            }
        }
        if (desc as usize) < 5 {
            seen[desc as usize] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Format("field file missing required channels".into()));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tri(uv: [f64; 2], depth: f64) -> ProjectedMesh {
        ProjectedMesh {
            vertices_2d: vec![[1.0, 1.0], [14.0, 1.0], [1.0, 14.0]],
            vertex_depth: vec![depth; 3],
            triangles: vec![[0, 1, 2]],
            tri_uv: vec![[uv; 3]],
            part_labels: vec![3; 3],
        }
    }

    #[test]
    fn barycentric_centroid_and_vertices() {
        let tri = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
        let centroid = [1.0, 1.0];
        let w = barycentric(tri, centroid).unwrap();
        for c in w {
            assert!((c - 1.0 / 3.0).abs() < 1e-12);
        }
        let w = barycentric(tri, [0.0, 0.0]).unwrap();
        assert_eq!(w, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn barycentric_sign_convention() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let w = barycentric(tri, [0.5, -0.1]).unwrap();
        assert!(w[2] < 0.0);
    }

    #[test]
    fn barycentric_rejects_degenerate() {
        let tri = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(barycentric(tri, [0.0, 0.0]).is_err());
    }

    #[test]
    fn constant_uv_triangle() {
        let pm = one_tri([0.2, 0.7], 0.5);
        let field = rasterize(&pm, 16, 16).unwrap();
        assert!(field.foreground_count() > 0);
        for i in 0..field.len() {
            if field.mask[i] {
                assert_eq!(field.u_h[i], 0.2);
                assert_eq!(field.u_v[i], 0.7);
                assert_eq!(field.parts[i], 3);
                assert_eq!(field.z[i], 1.0); // constant depth normalizes to 1
            } else {
                assert_eq!(field.u_h[i], 0.0);
                assert_eq!(field.parts[i], BACKGROUND_PART);
            }
        }
    }

    #[test]
    fn z_test_near_triangle_wins() {
        let mut pm = one_tri([0.9, 0.9], 0.9);
        // same footprint, nearer, different uv/label
        pm.vertices_2d.extend_from_slice(&[[1.0, 1.0], [14.0, 1.0], [1.0, 14.0]]);
        pm.vertex_depth.extend_from_slice(&[0.1; 3]);
        pm.triangles.push([3, 4, 5]);
        pm.tri_uv.push([[0.3, 0.4]; 3]);
        pm.part_labels.extend_from_slice(&[5; 3]);
        let field = rasterize(&pm, 16, 16).unwrap();
        for i in 0..field.len() {
            if field.mask[i] {
                assert_eq!(field.u_h[i], 0.3);
                assert_eq!(field.u_v[i], 0.4);
                assert_eq!(field.parts[i], 5);
            }
        }
    }

    #[test]
    fn no_coverage_is_valid_empty_field() {
        let mut pm = one_tri([0.2, 0.7], 0.5);
        for v in &mut pm.vertices_2d {
            v[0] += 1000.0;
        }
        let field = rasterize(&pm, 16, 16).unwrap();
        assert_eq!(field.foreground_count(), 0);
    }

    #[test]
    fn depth_normalization_bounds() {
        let mut pm = one_tri([0.2, 0.7], 0.0);
        pm.vertex_depth = vec![0.0, 1.0, 2.0];
        let field = rasterize(&pm, 16, 16).unwrap();
        let fg: Vec<f32> =
            (0..field.len()).filter(|&i| field.mask[i]).map(|i| field.z[i]).collect();
        let min = fg.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = fg.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(min >= 0.0 && max <= 1.0);
        assert!(max > 0.99, "nearest should normalize to ~1");
    }

    #[test]
    fn field_roundtrip_bit_exact() {
        let pm = one_tri([0.21, 0.73], 0.5);
        let field = rasterize(&pm, 16, 16).unwrap();
        let dir = std::env::temp_dir().join("densereg_raster_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.drf");
        write_field(&path, &field).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back, field);
    }
}
