//! Trains the network for a short run on a tiny in-memory dataset and prints
//! the loss every 25 iterations.

use densereg::cli::image_to_tensor;
use densereg::codec::{encode, Tessellation};
use densereg::net::{train, TrainConfig, TrainSample};
use densereg::synth::{sample_seed, synthesize_sample, SynthConfig};
use densereg::template::{cylindrical_unwrap, face_lowpoly};

fn main() {
    let mesh = face_lowpoly();
    let atlas = cylindrical_unwrap(&mesh).unwrap();
    let cfg = SynthConfig::default();
    let k = 5;
    let tess = Tessellation::new(k).unwrap();

    let dataset: Vec<TrainSample> = (0..16u64)
        .map(|i| {
            let sample = synthesize_sample(&mesh, &atlas, &cfg, sample_seed(1, i)).unwrap();
            TrainSample {
                image: image_to_tensor(&sample.image),
                target: encode(&sample.gt, tess),
                z: sample.gt.z.clone(),
            }
        })
        .collect();

    let mut tc = TrainConfig::new(k);
    tc.iterations = 200;
    tc.warmup_iters = 50;
    tc.batch_size = 2;
    println!("training K = {k} (w_reg {}) on {} samples", tc.w_reg, dataset.len());

    let (_, log) = train(&dataset, &tc).unwrap();
    for line in log.iter().filter(|l| l.iter % 25 == 0 || l.iter == 199) {
        println!(
            "iter {:>3}  lr {:.2e}  loss {:.4} (cls {:.4}, reg {:.4}, depth {:.4})",
            line.iter, line.lr, line.loss, line.loss_cls, line.loss_reg, line.loss_depth
        );
    }
}
