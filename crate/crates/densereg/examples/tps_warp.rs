//! Fits a thin plate spline to scattered control points and shows the
//! interpolation property plus smooth off-control behavior.

use densereg::synth::{apply_tps, fit_tps};

fn main() {
    let src = [
        [0.0, 0.0],
        [10.0, 0.0],
        [0.0, 10.0],
        [10.0, 10.0],
        [5.0, 5.0],
        [2.0, 7.0],
    ];
    let dst = [
        [0.4, -0.2],
        [10.3, 0.5],
        [-0.1, 9.6],
        [10.0, 10.4],
        [5.8, 4.6],
        [1.7, 7.9],
    ];
    let warp = fit_tps(&src, &dst, 0.0).unwrap();

    println!("control points map exactly (lambda = 0):");
    for (s, d) in src.iter().zip(apply_tps(&warp, &src)) {
        println!("  ({:4.1}, {:4.1}) -> ({:7.4}, {:7.4})", s[0], s[1], d[0], d[1]);
    }

    let probes = [[5.0, 0.0], [0.0, 5.0], [7.5, 7.5], [3.3, 3.3]];
    println!("off-control probes interpolate smoothly:");
    for (p, q) in probes.iter().zip(apply_tps(&warp, &probes)) {
        println!("  ({:4.1}, {:4.1}) -> ({:7.4}, {:7.4})", p[0], p[1], q[0], q[1]);
    }

    // identity data recovers the identity map
    let id = fit_tps(&src, &src, 0.0).unwrap();
    let back = apply_tps(&id, &probes);
    let drift = probes
        .iter()
        .zip(&back)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .fold(0.0f64, f64::max);
    println!("identity fit drift: {drift:.2e}");
}
