//! Unwraps the bundled template into the UV square and prints where each
//! named landmark lands.

use densereg::template::{cylindrical_unwrap, face_lowpoly, landmark_uv};

fn main() {
    let mesh = face_lowpoly();
    let atlas = cylindrical_unwrap(&mesh).unwrap();

    println!(
        "template: {} vertices, {} triangles, {} landmarks",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.landmarks.len()
    );

    let (mut min_h, mut max_h, mut min_v, mut max_v) = (1.0f64, 0.0f64, 1.0f64, 0.0f64);
    for uv in &atlas.uv {
        min_h = min_h.min(uv[0]);
        max_h = max_h.max(uv[0]);
        min_v = min_v.min(uv[1]);
        max_v = max_v.max(uv[1]);
    }
    println!("uv footprint: u_h [{min_h:.3}, {max_h:.3}], u_v [{min_v:.3}, {max_v:.3}]");
    let seams = atlas.seam_duplicates.iter().flatten().count();
    println!("{seams} seam triangles carry a +1 u_h correction");

    for (name, _) in &mesh.landmarks {
        let uv = landmark_uv(&mesh, &atlas, name).unwrap();
        println!("  {name:<16} -> ({:.4}, {:.4})", uv[0], uv[1]);
    }
}
