//! Renders one synthetic training scene and writes the image, the per-pixel
//! ground-truth field and the landmark file next to each other.

use densereg::raster::write_field;
use densereg::synth::{synthesize_sample, write_landmarks, SynthConfig};
use densereg::template::{cylindrical_unwrap, face_lowpoly};

fn main() {
    let mesh = face_lowpoly();
    let atlas = cylindrical_unwrap(&mesh).unwrap();
    let cfg = SynthConfig::default();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4711);

    let sample = synthesize_sample(&mesh, &atlas, &cfg, seed).unwrap();
    println!(
        "seed {seed}: scale {:.2}, tps magnitude {:.2}, {} foreground pixels",
        sample.scale_ratio,
        sample.tps_magnitude,
        sample.gt.foreground_count()
    );
    for lm in &sample.gt_landmarks {
        println!(
            "  {:<16} ({:5.1}, {:5.1}) {}",
            lm.name,
            lm.row,
            lm.col,
            if lm.visible { "visible" } else { "occluded" }
        );
    }

    let dir = std::env::temp_dir().join("densereg_example_scene");
    std::fs::create_dir_all(&dir).unwrap();
    densereg::io::write_ppm(&dir.join("scene.ppm"), &sample.image).unwrap();
    write_field(&dir.join("scene.drf"), &sample.gt).unwrap();
    write_landmarks(&dir.join("scene.lmk"), &sample.gt_landmarks).unwrap();
    println!("wrote scene.ppm / scene.drf / scene.lmk to {}", dir.display());
}
