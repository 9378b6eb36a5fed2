//! Slow training-behavior checks kept out of the unit suites.

use densereg::cli::image_to_tensor;
use densereg::codec::{encode, Tessellation};
use densereg::net::{train, TrainConfig, TrainSample};
use densereg::synth::{sample_seed, synthesize_sample, SynthConfig};
use densereg::template::{cylindrical_unwrap, face_lowpoly};

fn synth_train_set(n: usize, master_seed: u64, k: usize) -> Vec<TrainSample> {
    let mesh = face_lowpoly();
    let atlas = cylindrical_unwrap(&mesh).unwrap();
    let cfg = SynthConfig::default();
    let tess = Tessellation::new(k).unwrap();
    (0..n as u64)
        .map(|i| {
            let mut seed = sample_seed(master_seed, i);
            let sample = loop {
                match synthesize_sample(&mesh, &atlas, &cfg, seed) {
                    Ok(s) => break s,
                    Err(_) => seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
                }
            };
            TrainSample {
                image: image_to_tensor(&sample.image),
                target: encode(&sample.gt, tess),
                z: sample.gt.z.clone(),
            }
        })
        .collect()
}

/// 500 iterations on a 32-sample set: the mean loss over each successive
/// 50-iteration window strictly decreases.
#[test]
fn loss_decreases_over_windows() {
    let dataset = synth_train_set(32, 42, 10);
    let mut cfg = TrainConfig::new(10);
    cfg.iterations = 500;
    let (_, log) = train(&dataset, &cfg).unwrap();
    assert_eq!(log.len(), 500);
    let means: Vec<f64> = log
        .chunks(50)
        .map(|w| w.iter().map(|l| l.loss).sum::<f64>() / w.len() as f64)
        .collect();
    for (i, pair) in means.windows(2).enumerate() {
        assert!(
            pair[1] < pair[0],
            "window {} mean {:.4} did not improve on {:.4} (all: {means:?})",
            i + 1,
            pair[1],
            pair[0]
        );
    }
}

/// Identical configs give bit-identical loss trajectories and weights.
#[test]
fn training_is_deterministic() {
    let dataset = synth_train_set(4, 9, 5);
    let mut cfg = TrainConfig::new(5);
    cfg.iterations = 20;
    cfg.warmup_iters = 5;
    cfg.batch_size = 2;
    let (net_a, log_a) = train(&dataset, &cfg).unwrap();
    let (net_b, log_b) = train(&dataset, &cfg).unwrap();
    for (a, b) in log_a.iter().zip(&log_b) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
    for ((wa, ba), (wb, bb)) in net_a.params().iter().zip(net_b.params()) {
        assert_eq!(wa.data, wb.data);
        assert_eq!(*ba, bb);
    }
}
