//! Shows the (bin, residual) codec: exact roundtrip through the full decode
//! and the bounded error of decoding from bin centers alone.

use densereg::codec::{decode_scalar, encode_scalar, Tessellation};

fn main() {
    for k in [1usize, 2, 5, 10, 40] {
        let tess = Tessellation::new(k).unwrap();
        let d = tess.d();
        let mut worst_full = 0.0f32;
        let mut worst_cls = 0.0f32;
        for i in 0..=10_000 {
            let u = i as f32 / 10_000.0;
            let (q, r) = encode_scalar(u, tess);
            worst_full = worst_full.max((decode_scalar(q, r, tess) - u).abs());
            worst_cls = worst_cls.max(((q as f32 + 0.5) * d - u).abs());
        }
        println!(
            "K = {k:>2} (d = {d:.3}): full decode max error {worst_full:.1e}, \
             bin-center decode max error {worst_cls:.4} (bound d/2 = {:.4})",
            d / 2.0
        );
    }

    let tess = Tessellation::new(10).unwrap();
    let (q, r) = encode_scalar(0.37, tess);
    println!("example: u = 0.37 at K = 10 -> bin {q}, residual {r:.3}");
    let (q, r) = encode_scalar(1.0, tess);
    println!("boundary: u = 1.0 clamps to bin {q} with residual {r:.3}");
}
