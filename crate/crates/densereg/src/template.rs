//! Template mesh, annotations, and the cylindrical unwrapping into the
//! deformation-free UV square.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A 3D template mesh with per-vertex part labels and named landmarks.
///
/// Vertically oriented by convention: the y axis is the height axis.
#[derive(Debug, Clone)]
pub struct TemplateMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    /// Per-vertex part label in `{0..7}` (8 classes including "other").
    pub part_labels: Vec<u8>,
    /// Ordered (name, vertex index) pairs, sorted by name.
    pub landmarks: Vec<(String, usize)>,
}

/// Per-vertex deformation-free coordinates produced by [`cylindrical_unwrap`].
#[derive(Debug, Clone)]
pub struct UvAtlas {
    /// Per-vertex `(u_h, u_v)`, each in `[0, 1]`.
    pub uv: Vec<[f64; 2]>,
    /// For triangles straddling the azimuth seam: corrected per-corner `u_h`
    /// values (the small side shifted by +1 so interpolation never crosses
    /// the wrap). `None` for non-seam triangles.
    pub seam_duplicates: Vec<Option<[f64; 3]>>,
}

impl UvAtlas {
    /// Per-corner UV of triangle `t`, seam correction applied.
    /// Corrected `u_h` may exceed 1; consumers wrap interpolated values.
    pub fn tri_uv(&self, mesh: &TemplateMesh, t: usize) -> [[f64; 2]; 3] {
        let tri = mesh.triangles[t];
        let mut out = [[0.0; 2]; 3];
        for c in 0..3 {
            out[c] = self.uv[tri[c]];
        }
        if let Some(uh) = self.seam_duplicates[t] {
            for c in 0..3 {
                out[c][0] = uh[c];
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MeshDoc {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    part_labels: Vec<u8>,
    landmarks: BTreeMap<String, usize>,
}

impl TemplateMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn landmark_index(&self, name: &str) -> Result<usize> {
        self.landmarks
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, i)| i)
            .ok_or_else(|| Error::Mesh(format!("unknown landmark {name:?}")))
    }

    /// Checks all structural invariants, naming the offending element.
    pub fn validate(&self) -> Result<()> {
        let m = self.vertices.len();
        if m == 0 {
            return Err(Error::Mesh("no vertices".into()));
        }
        if self.triangles.is_empty() {
            return Err(Error::Mesh("no triangles".into()));
        }
        if self.part_labels.len() != m {
            return Err(Error::Mesh(format!(
                "part_labels length {} != vertex count {m}",
                self.part_labels.len()
            )));
        }
        for (v, &l) in self.part_labels.iter().enumerate() {
            if l > 7 {
                return Err(Error::Mesh(format!("vertex {v}: part label {l} outside 0..7")));
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            for &i in tri {
                if i >= m {
                    return Err(Error::Mesh(format!(
                        "triangle {t}: index out of range ({i} >= {m})"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Mesh(format!("triangle {t}: repeated vertex index")));
            }
            let a = self.vertices[tri[0]];
            let b = self.vertices[tri[1]];
            let c = self.vertices[tri[2]];
            let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let cx = [
                ab[1] * ac[2] - ab[2] * ac[1],
                ab[2] * ac[0] - ab[0] * ac[2],
                ab[0] * ac[1] - ab[1] * ac[0],
            ];
            if cx[0] * cx[0] + cx[1] * cx[1] + cx[2] * cx[2] == 0.0 {
                return Err(Error::Mesh(format!("triangle {t}: zero area in model space")));
            }
        }
        for (name, i) in &self.landmarks {
            if *i >= m {
                return Err(Error::Mesh(format!(
                    "landmark {name:?}: index out of range ({i} >= {m})"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = MeshDoc {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            part_labels: self.part_labels.clone(),
            landmarks: self.landmarks.iter().cloned().collect(),
        };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Format(format!("mesh serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Loads and validates a template mesh from the structured text format.
pub fn load_mesh(path: &Path) -> Result<TemplateMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<TemplateMesh> {
    let doc: MeshDoc =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("mesh parse: {e}")))?;
    let mesh = TemplateMesh {
        vertices: doc.vertices,
        triangles: doc.triangles,
        part_labels: doc.part_labels,
        landmarks: doc.landmarks.into_iter().collect(),
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Unwraps the mesh onto the unit UV square: `u_h` is the azimuth around the
/// vertical axis, `u_v` the normalized height.
///
/// `u_h = (atan2(x, z) + pi) / 2pi`, `u_v = (y - y_min) / (y_max - y_min)`.
pub fn cylindrical_unwrap(mesh: &TemplateMesh) -> Result<UvAtlas> {
    mesh.validate()?;
    let y_min = mesh.vertices.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
    let y_max = mesh.vertices.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max);
    if y_max == y_min {
        return Err(Error::Mesh("degenerate height range (y_max = y_min)".into()));
    }
    let mut uv = Vec::with_capacity(mesh.vertices.len());
    for v in &mesh.vertices {
        let u_h = (v[0].atan2(v[2]) + PI) / (2.0 * PI);
        let u_v = (v[1] - y_min) / (y_max - y_min);
        uv.push([u_h.clamp(0.0, 1.0), u_v.clamp(0.0, 1.0)]);
    }

    // Injectivity: no two vertices may share the exact UV pair.
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (i, p) in uv.iter().enumerate() {
        let key = (p[0].to_bits(), p[1].to_bits());
        if let Some(&j) = seen.get(&key) {
            return Err(Error::Mesh(format!(
                "unwrap not injective: vertices {j} and {i} map to the same UV"
            )));
        }
        seen.insert(key, i);
    }

    let mut seam_duplicates = vec![None; mesh.triangles.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let uh = [uv[tri[0]][0], uv[tri[1]][0], uv[tri[2]][0]];
        let max_delta = uh
            .iter()
            .flat_map(|a| uh.iter().map(move |b| (a - b).abs()))
            .fold(0.0, f64::max);
        if max_delta > 0.5 {
            let mut corrected = uh;
            for c in &mut corrected {
                if *c < 0.5 {
                    *c += 1.0;
                }
            }
            seam_duplicates[t] = Some(corrected);
        }
    }
    Ok(UvAtlas { uv, seam_duplicates })
}

/// UV of a named landmark's vertex.
pub fn landmark_uv(mesh: &TemplateMesh, atlas: &UvAtlas, name: &str) -> Result<[f64; 2]> {
    let idx = mesh.landmark_index(name)?;
    Ok(atlas.uv[idx])
}

const N_AZ: usize = 24;
const N_H: usize = 16;

fn face_part_label(u_h: f64, u_v: f64) -> u8 {
    let in_box = |h0: f64, h1: f64, v0: f64, v1: f64| {
        u_h >= h0 && u_h <= h1 && u_v >= v0 && u_v <= v1
    };
    if in_box(0.44, 0.56, 0.33, 0.62) {
        5 // nose
    } else if in_box(0.56, 0.70, 0.58, 0.66) {
        3 // left eye
    } else if in_box(0.30, 0.44, 0.58, 0.66) {
        4 // right eye
    } else if in_box(0.56, 0.70, 0.70, 0.78) {
        1 // left eyebrow
    } else if in_box(0.30, 0.44, 0.70, 0.78) {
        2 // right eyebrow
    } else if in_box(0.40, 0.60, 0.24, 0.32) {
        6 // upper lip
    } else if in_box(0.40, 0.60, 0.15, 0.23) {
        7 // lower lip
    } else {
        0 // other
    }
}

/// The bundled low-poly face-like template: a closed vertical band with a
/// nose bump, 8 hand-assigned part-label regions, and a small named landmark
/// set. Shipped serialized as `assets/face_lowpoly.json`.
pub fn face_lowpoly() -> TemplateMesh {
    let mut vertices = Vec::with_capacity(N_AZ * N_H);
    for j in 0..N_H {
        let v = j as f64 / (N_H - 1) as f64;
        let y = v * 2.0 - 1.0;
        for i in 0..N_AZ {
            let theta = 2.0 * PI * i as f64 / N_AZ as f64 - PI;
            let mut r = 0.45 + 0.4 * (1.0 - 0.85 * y * y);
            // nose bump on the front of the band (theta = 0)
            let bump = (-((theta / 0.45).powi(2) + (y / 0.28).powi(2))).exp();
            r *= 1.0 + 0.22 * bump;
            vertices.push([r * theta.sin(), y, r * theta.cos()]);
        }
    }
    let mut triangles = Vec::new();
    for j in 0..N_H - 1 {
        for i in 0..N_AZ {
            let i1 = (i + 1) % N_AZ;
            let a = j * N_AZ + i;
            let b = j * N_AZ + i1;
            let c = (j + 1) * N_AZ + i;
            let d = (j + 1) * N_AZ + i1;
            triangles.push([a, b, c]);
            triangles.push([b, d, c]);
        }
    }
    let mut part_labels = Vec::with_capacity(vertices.len());
    for j in 0..N_H {
        let u_v = j as f64 / (N_H - 1) as f64;
        for i in 0..N_AZ {
            let u_h = i as f64 / N_AZ as f64;
            part_labels.push(face_part_label(u_h, u_v));
        }
    }
    let at = |i: usize, j: usize| j * N_AZ + i;
    let mut landmarks: Vec<(String, usize)> = vec![
        ("chin".into(), at(12, 1)),
        ("left_eye_inner".into(), at(14, 9)),
        ("left_eye_outer".into(), at(16, 9)),
        ("mouth_left".into(), at(14, 4)),
        ("mouth_right".into(), at(10, 4)),
        ("nose_tip".into(), at(12, 7)),
        ("right_eye_inner".into(), at(10, 9)),
        ("right_eye_outer".into(), at(8, 9)),
    ];
    landmarks.sort_by(|a, b| a.0.cmp(&b.0));
    TemplateMesh { vertices, triangles, part_labels, landmarks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cylinder_12() -> TemplateMesh {
        // two rings of 6 vertices, y in [-1, 1]
        let mut vertices = Vec::new();
        for &y in &[-1.0f64, 1.0] {
            for i in 0..6 {
                let theta = 2.0 * PI * i as f64 / 6.0 - PI;
                vertices.push([theta.sin(), y, theta.cos()]);
            }
        }
        let mut triangles = Vec::new();
        for i in 0..6 {
            let i1 = (i + 1) % 6;
            triangles.push([i, i1, 6 + i]);
            triangles.push([i1, 6 + i1, 6 + i]);
        }
        TemplateMesh {
            vertices,
            triangles,
            part_labels: vec![0; 12],
            landmarks: vec![("front".into(), 3)],
        }
    }

    #[test]
    fn unwrap_known_vertices() {
        let mut mesh = cylinder_12();
        mesh.vertices[0] = [0.0, 0.0, 1.0];
        mesh.vertices[1] = [1.0, 1.0, 0.0];
        let atlas = cylindrical_unwrap(&mesh).unwrap();
        assert_eq!(atlas.uv[0], [0.5, 0.5]);
        assert_eq!(atlas.uv[1], [0.75, 1.0]);
    }

    #[test]
    fn unwrap_matches_per_vertex_formula() {
        // independent scalar evaluation of the unwrap formula per vertex
        let mesh = cylinder_12();
        let atlas = cylindrical_unwrap(&mesh).unwrap();
        let y_min = -1.0;
        let y_max = 1.0;
        for (i, v) in mesh.vertices.iter().enumerate() {
            let u_h = (f64::atan2(v[0], v[2]) + PI) / (2.0 * PI);
            let u_v = (v[1] - y_min) / (y_max - y_min);
            assert_eq!(atlas.uv[i], [u_h, u_v], "vertex {i}");
        }
    }

    #[test]
    fn unwrap_is_pure_and_in_unit_square() {
        let mesh = face_lowpoly();
        let a = cylindrical_unwrap(&mesh).unwrap();
        let b = cylindrical_unwrap(&mesh).unwrap();
        for (p, q) in a.uv.iter().zip(&b.uv) {
            assert_eq!(p, q);
        }
        for p in &a.uv {
            assert!(p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0);
        }
    }

    #[test]
    fn seam_correction_bounds_triangle_span() {
        let mesh = face_lowpoly();
        let atlas = cylindrical_unwrap(&mesh).unwrap();
        let mut seam_count = 0;
        for t in 0..mesh.triangles.len() {
            let uv = atlas.tri_uv(&mesh, t);
            let mut max_delta: f64 = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    max_delta = max_delta.max((uv[a][0] - uv[b][0]).abs());
                }
            }
            assert!(max_delta <= 0.5, "triangle {t} spans {max_delta}");
            if atlas.seam_duplicates[t].is_some() {
                seam_count += 1;
            }
        }
        assert!(seam_count > 0, "band mesh must have seam triangles");
    }

    #[test]
    fn unwrap_rejects_flat_mesh() {
        let mut mesh = cylinder_12();
        for v in &mut mesh.vertices {
            v[1] = 0.0;
        }
        // flattening makes triangles degenerate too; give them height back in z only
        mesh.vertices = (0..12)
            .map(|i| {
                let theta = 2.0 * PI * (i % 6) as f64 / 6.0;
                let r = if i < 6 { 1.0 } else { 0.5 };
                [r * theta.sin(), 0.0, r * theta.cos()]
            })
            .collect();
        let err = cylindrical_unwrap(&mesh).unwrap_err();
        assert!(err.to_string().contains("degenerate height range"));
    }

    #[test]
    fn validate_rejects_out_of_range_index() {
        let mut mesh = cylinder_12();
        mesh.triangles[0] = [0, 1, 12];
        let err = mesh.validate().unwrap_err();
        assert!(err.to_string().contains("index out of range"));
    }

    #[test]
    fn validate_rejects_empty_triangles() {
        let mut mesh = cylinder_12();
        mesh.triangles.clear();
        let err = mesh.validate().unwrap_err();
        assert!(err.to_string().contains("no triangles"));
    }

    #[test]
    fn bundled_template_contract() {
        let mesh = face_lowpoly();
        mesh.validate().unwrap();
        assert!(mesh.vertex_count() > 0);
        let mut labels: Vec<u8> = mesh.part_labels.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        // injectivity asserted at unwrap
        cylindrical_unwrap(&mesh).unwrap();
    }

    #[test]
    fn landmark_uv_lookup() {
        let mesh = face_lowpoly();
        let atlas = cylindrical_unwrap(&mesh).unwrap();
        let (name, idx) = mesh.landmarks[0].clone();
        assert_eq!(landmark_uv(&mesh, &atlas, &name).unwrap(), atlas.uv[idx]);
        assert!(landmark_uv(&mesh, &atlas, "chin99").is_err());
        // all bundled landmarks have pairwise-distinct UVs
        let uvs: Vec<[f64; 2]> = mesh
            .landmarks
            .iter()
            .map(|(n, _)| landmark_uv(&mesh, &atlas, n).unwrap())
            .collect();
        for a in 0..uvs.len() {
            for b in a + 1..uvs.len() {
                assert_ne!(uvs[a], uvs[b]);
            }
        }
    }

    #[test]
    fn mesh_roundtrip_through_text() {
        let mesh = face_lowpoly();
        let dir = std::env::temp_dir().join("densereg_mesh_rt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mesh.json");
        mesh.save(&path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.triangles, mesh.triangles);
        assert_eq!(back.part_labels, mesh.part_labels);
        assert_eq!(back.landmarks, mesh.landmarks);
    }
}
