//! Projects the template at a fixed frontal pose and rasterizes it, writing
//! a UV-colored preview and the part-label image.

use densereg::io::{write_pgm, write_ppm, RgbImage};
use densereg::raster::{rasterize, ProjectedMesh, BACKGROUND_PART};
use densereg::template::{cylindrical_unwrap, face_lowpoly};

fn main() {
    let mesh = face_lowpoly();
    let atlas = cylindrical_unwrap(&mesh).unwrap();
    let (w, h) = (128usize, 128usize);

    // frontal weak-perspective projection: x right, y up in the mesh,
    // rows grow downward in the image
    let scale = 0.34 * w as f64;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let vertices_2d: Vec<[f64; 2]> =
        mesh.vertices.iter().map(|v| [cx + scale * v[0], cy - scale * v[1]]).collect();
    let vertex_depth: Vec<f64> = mesh.vertices.iter().map(|v| -v[2]).collect();
    let pm = ProjectedMesh::from_template(&mesh, &atlas, vertices_2d, vertex_depth).unwrap();

    let field = rasterize(&pm, w, h).unwrap();
    println!("{} of {} pixels covered", field.foreground_count(), w * h);

    let mut preview = RgbImage::new(w, h);
    for p in 0..w * h {
        preview.data[p * 3] = field.u_h[p];
        preview.data[p * 3 + 1] = field.u_v[p];
        preview.data[p * 3 + 2] = field.z[p];
    }
    let labels: Vec<u8> = field
        .parts
        .iter()
        .map(|&l| if l == BACKGROUND_PART { 0 } else { 32 + l * 28 })
        .collect();

    let dir = std::env::temp_dir().join("densereg_example_raster");
    std::fs::create_dir_all(&dir).unwrap();
    write_ppm(&dir.join("uvz.ppm"), &preview).unwrap();
    write_pgm(&dir.join("parts.pgm"), w, h, &labels).unwrap();
    println!("wrote uvz.ppm and parts.pgm to {}", dir.display());
}
