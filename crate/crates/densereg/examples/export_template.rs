//! Writes the built-in template mesh as JSON, the same format `load_mesh`
//! reads back, so it can be edited or swapped via the `template` config key.

use std::path::PathBuf;

use densereg::template::{face_lowpoly, load_mesh};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("face_lowpoly.json"));
    let mesh = face_lowpoly();
    mesh.save(&path).unwrap();
    let back = load_mesh(&path).unwrap();
    assert_eq!(back.vertices, mesh.vertices);
    println!(
        "wrote {} ({} vertices, {} triangles)",
        path.display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
}
