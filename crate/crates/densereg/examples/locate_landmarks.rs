//! Runs UV-distance landmark localization and segmentation transfer on a
//! ground-truth field, the same downstream path predictions go through.

use densereg::tasks::{build_label_lut, localize_landmarks, transfer_segmentation};
use densereg::template::{cylindrical_unwrap, face_lowpoly};
use densereg::synth::{synthesize_sample, SynthConfig};

fn main() {
    let mesh = face_lowpoly();
    let atlas = cylindrical_unwrap(&mesh).unwrap();
    let sample = synthesize_sample(&mesh, &atlas, &SynthConfig::default(), 99).unwrap();

    let targets: Vec<(String, [f64; 2])> = mesh
        .landmarks
        .iter()
        .map(|(name, idx)| (name.clone(), atlas.uv[*idx]))
        .collect();
    let detected = localize_landmarks(&sample.gt, &targets, 0.05).unwrap();
    for d in &detected {
        if d.detected {
            println!("  {:<16} pixel ({:5.1}, {:5.1}), uv distance {:.2e}", d.name, d.row, d.col, d.uv_distance);
        } else {
            println!("  {:<16} undetected (closest uv distance {:.3})", d.name, d.uv_distance);
        }
    }

    let lut = build_label_lut(&mesh, &atlas, 512).unwrap();
    let mut labeled = sample.gt.clone();
    transfer_segmentation(&mut labeled, &lut);
    let moved = labeled
        .parts
        .iter()
        .zip(&sample.gt.parts)
        .filter(|(a, b)| a != b)
        .count();
    println!(
        "segmentation transfer: {} / {} foreground pixels differ from the rasterized labels",
        moved,
        sample.gt.foreground_count()
    );
}
