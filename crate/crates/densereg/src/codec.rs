//! Quantized regression codec: uniform tessellation of the UV square,
//! (bin, residual) encoding of ground truth, residual-bank multiplexing and
//! the decode back to continuous coordinates.

use std::path::Path;

use crate::io::{self, channel};
use crate::raster::CorrespondenceField;
use crate::{Error, Result};

/// Label value signalling a non-object pixel (class index K in each
/// (K+1)-way classifier).
pub const DUMMY: u32 = u32::MAX;

/// A K-bin-per-axis tessellation of the UV square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tessellation {
    k: usize,
}

impl Tessellation {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Codec("K must be >= 1".into()));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Quantization step, always derived as `1/K`.
    pub fn d(&self) -> f32 {
        1.0 / self.k as f32
    }

    /// The dummy class index in a (K+1)-way classifier.
    pub fn dummy_class(&self) -> usize {
        self.k
    }
}

/// Per-pixel bin labels and residuals for one tessellation.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTarget {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    /// Labels in `{0..K-1}`, or [`DUMMY`] on background.
    pub q_h: Vec<u32>,
    pub q_v: Vec<u32>,
    /// Residuals in `[0, d]`; 0 on background.
    pub r_h: Vec<f32>,
    pub r_v: Vec<f32>,
    pub mask: Vec<bool>,
}

fn encode_axis(u: f32, tess: Tessellation) -> (u32, f32) {
    let d = tess.d();
    let q = ((u / d).floor() as i64).clamp(0, tess.k as i64 - 1) as u32;
    let r = (u - q as f32 * d).clamp(0.0, d);
    (q, r)
}

/// Encodes one scalar coordinate; boundary rule: `u = 1` clamps to the top
/// bin with residual `d`.
pub fn encode_scalar(u: f32, tess: Tessellation) -> (u32, f32) {
    encode_axis(u, tess)
}

/// Decodes one (bin, residual) pair: `u = q*d + r`.
pub fn decode_scalar(q: u32, r: f32, tess: Tessellation) -> f32 {
    q as f32 * tess.d() + r
}

/// Encodes a ground-truth field into per-pixel (bin, residual) pairs.
/// Background pixels become [`DUMMY`] with zero residual.
pub fn encode(field: &CorrespondenceField, tess: Tessellation) -> QuantizedTarget {
    let n = field.len();
    let mut out = QuantizedTarget {
        k: tess.k,
        width: field.width,
        height: field.height,
        q_h: vec![DUMMY; n],
        q_v: vec![DUMMY; n],
        r_h: vec![0.0; n],
        r_v: vec![0.0; n],
        mask: field.mask.clone(),
    };
    for i in 0..n {
        if field.mask[i] {
            let (qh, rh) = encode_axis(field.u_h[i], tess);
            let (qv, rv) = encode_axis(field.u_v[i], tess);
            out.q_h[i] = qh;
            out.q_v[i] = qv;
            out.r_h[i] = rh;
            out.r_v[i] = rv;
        }
    }
    out
}

/// Decoded single-axis UV map: values plus a validity mask (false where the
/// label was [`DUMMY`]).
pub struct DecodedAxis {
    pub u: Vec<f32>,
    pub valid: Vec<bool>,
}

/// `u = q*d + r` per non-dummy pixel.
pub fn decode(q: &[u32], r_selected: &[f32], tess: Tessellation) -> DecodedAxis {
    let mut u = vec![0.0; q.len()];
    let mut valid = vec![false; q.len()];
    for i in 0..q.len() {
        if q[i] != DUMMY {
            u[i] = decode_scalar(q[i], r_selected[i], tess);
            valid[i] = true;
        }
    }
    DecodedAxis { u, valid }
}

/// Bin-center decode, `u = (q + 0.5)*d`, for evaluating the classification
/// branch alone.
pub fn decode_classification_only(q: &[u32], tess: Tessellation) -> DecodedAxis {
    let mut u = vec![0.0; q.len()];
    let mut valid = vec![false; q.len()];
    for i in 0..q.len() {
        if q[i] != DUMMY {
            u[i] = (q[i] as f32 + 0.5) * tess.d();
            valid[i] = true;
        }
    }
    DecodedAxis { u, valid }
}

/// Multiplexes a residual bank by the label map: `out[p] = bank[q[p]][p]`,
/// 0 at dummy pixels. The bank must hold exactly K maps.
pub fn select_residual(bank: &[Vec<f32>], q: &[u32], tess: Tessellation) -> Result<Vec<f32>> {
    if bank.len() != tess.k {
        return Err(Error::Codec(format!(
            "residual bank has {} maps, expected K = {}",
            bank.len(),
            tess.k
        )));
    }
    for (b, map) in bank.iter().enumerate() {
        if map.len() != q.len() {
            return Err(Error::Codec(format!("bank map {b} length mismatch")));
        }
    }
    let mut out = vec![0.0; q.len()];
    for i in 0..q.len() {
        if q[i] != DUMMY {
            out[i] = bank[q[i] as usize][i];
        }
    }
    Ok(out)
}

/// Region id `q_h*K + q_v` in `{0..K^2-1}` on foreground, `None` on dummy.
pub fn region_index(q_h: u32, q_v: u32, tess: Tessellation) -> Option<u32> {
    if q_h == DUMMY || q_v == DUMMY {
        None
    } else {
        Some(q_h * tess.k as u32 + q_v)
    }
}

/// Serializes a quantized target through the DRF1 container using the
/// extended channel descriptors (labels stored as floats, dummy as -1).
pub fn write_target(path: &Path, target: &QuantizedTarget) -> Result<()> {
    let enc_q = |q: &[u32]| -> Vec<f32> {
        q.iter().map(|&v| if v == DUMMY { -1.0 } else { v as f32 }).collect()
    };
    let qh = enc_q(&target.q_h);
    let qv = enc_q(&target.q_v);
    let mask: Vec<f32> = target.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    io::write_drf1(
        path,
        target.width as u32,
        target.height as u32,
        &[
            (channel::Q_H, &qh),
            (channel::Q_V, &qv),
            (channel::R_H, &target.r_h),
            (channel::R_V, &target.r_v),
            (channel::MASK, &mask),
        ],
    )
}

pub fn read_target(path: &Path, k: usize) -> Result<QuantizedTarget> {
    let (width, height, channels) = io::read_drf1(path)?;
    let n = (width * height) as usize;
    let dec_q = |data: &[f32]| -> Vec<u32> {
        data.iter().map(|&v| if v < 0.0 { DUMMY } else { v as u32 }).collect()
    };
    let mut target = QuantizedTarget {
        k,
        width: width as usize,
        height: height as usize,
        q_h: vec![DUMMY; n],
        q_v: vec![DUMMY; n],
        r_h: vec![0.0; n],
        r_v: vec![0.0; n],
        mask: vec![false; n],
    };
    for (desc, data) in channels {
        match desc {
            channel::Q_H => target.q_h = dec_q(&data),
            channel::Q_V => target.q_v = dec_q(&data),
            channel::R_H => target.r_h = data,
            channel::R_V => target.r_v = data,
            channel::MASK => target.mask = data.iter().map(|&v| v != 0.0).collect(),
            other => {
                return Err(Error::Format(format!(
                    "unexpected channel descriptor {other} in target file"
                )))
            }
        }
    }
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tess(k: usize) -> Tessellation {
        Tessellation::new(k).unwrap()
    }

    #[test]
    fn encode_direct_values() {
        let (q, r) = encode_scalar(0.37, tess(10));
        assert_eq!(q, 3);
        assert!((r - 0.07).abs() < 1e-6);

        let (q, r) = encode_scalar(1.0, tess(10));
        assert_eq!(q, 9);
        assert!((r - 0.1).abs() < 1e-6);
    }

    #[test]
    fn k1_degenerates_to_plain_regression() {
        let t = tess(1);
        for &u in &[0.0f32, 0.25, 0.5, 0.99, 1.0] {
            let (q, r) = encode_scalar(u, t);
            assert_eq!(q, 0);
            assert_eq!(r, u);
        }
    }

    #[test]
    fn roundtrip_grid_within_one_ulp() {
        for &k in &[1usize, 2, 5, 10, 40] {
            let t = tess(k);
            for i in 0..=10_000 {
                let u = i as f32 / 10_000.0;
                let (q, r) = encode_scalar(u, t);
                let back = decode_scalar(q, r, t);
                let ulp = f32::EPSILON * u.max(t.d());
                assert!(
                    (back - u).abs() <= ulp,
                    "K={k} u={u}: decoded {back}"
                );
            }
        }
    }

    #[test]
    fn decode_example() {
        assert!((decode_scalar(3, 0.07, tess(10)) - 0.37).abs() < 1e-7);
    }

    #[test]
    fn classification_only_decode() {
        let t = tess(10);
        let out = decode_classification_only(&[3], t);
        assert!((out.u[0] - 0.35).abs() < 1e-7);
        assert!(out.valid[0]);
        let t1 = tess(1);
        let out = decode_classification_only(&[0], t1);
        assert_eq!(out.u[0], 0.5);
        let out = decode_classification_only(&[DUMMY], t);
        assert!(!out.valid[0]);
    }

    #[test]
    fn classification_only_error_bound() {
        for &k in &[1usize, 2, 5, 10] {
            let t = tess(k);
            for i in 0..=1000 {
                let u = i as f32 / 1000.0;
                let (q, _) = encode_scalar(u, t);
                let out = decode_classification_only(&[q], t);
                assert!((out.u[0] - u).abs() <= t.d() / 2.0 + 1e-7, "K={k} u={u}");
            }
        }
    }

    #[test]
    fn select_residual_gather() {
        let t = tess(3);
        let bank = vec![vec![0.1f32; 4], vec![0.2; 4], vec![0.3; 4]];
        let q = vec![2, 0, DUMMY, 1];
        let out = select_residual(&bank, &q, t).unwrap();
        assert_eq!(out, vec![0.3, 0.1, 0.0, 0.2]);
        assert!(select_residual(&bank[..2].to_vec(), &q, t).is_err());
    }

    #[test]
    fn region_index_corners() {
        let t = tess(4);
        assert_eq!(region_index(0, 0, t), Some(0));
        assert_eq!(region_index(3, 3, t), Some(15));
        assert_eq!(region_index(DUMMY, 0, t), None);
    }

    #[test]
    fn region_index_k2_pattern() {
        // K=2 over a full field gives exactly the 4-region coarse tessellation
        let t = tess(2);
        let mut ids = std::collections::BTreeSet::new();
        for i in 0..=10 {
            for j in 0..=10 {
                let u = i as f32 / 10.0;
                let v = j as f32 / 10.0;
                let (qh, _) = encode_scalar(u, t);
                let (qv, _) = encode_scalar(v, t);
                let id = region_index(qh, qv, t).unwrap();
                let expected = u32::from(u >= 0.5) * 2 + u32::from(v >= 0.5);
                assert_eq!(id, expected);
                ids.insert(id);
            }
        }
        assert_eq!(ids.len(), 4);
    }

    proptest! {
        #[test]
        fn residual_always_in_range(u in 0.0f32..=1.0, k in 1usize..=40) {
            let t = tess(k);
            let (q, r) = encode_scalar(u, t);
            prop_assert!(q < k as u32);
            prop_assert!(r >= 0.0 && r <= t.d());
        }

        #[test]
        fn select_matches_per_pixel_gather(
            seed in 0u64..1000,
            k in 1usize..=8,
            n in 1usize..=64,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = tess(k);
            let bank: Vec<Vec<f32>> =
                (0..k).map(|_| (0..n).map(|_| rng.gen::<f32>()).collect()).collect();
            let q: Vec<u32> = (0..n)
                .map(|_| if rng.gen_bool(0.2) { DUMMY } else { rng.gen_range(0..k as u32) })
                .collect();
            let out = select_residual(&bank, &q, t).unwrap();
            // naive per-pixel loop oracle
            for i in 0..n {
                let expected = if q[i] == DUMMY { 0.0 } else { bank[q[i] as usize][i] };
                prop_assert_eq!(out[i], expected);
            }
        }
    }

    #[test]
    fn target_roundtrip() {
        use crate::raster::CorrespondenceField;
        let mut field = CorrespondenceField::empty(4, 3);
        for i in 0..6 {
            field.mask[i] = true;
            field.u_h[i] = i as f32 / 6.0;
            field.u_v[i] = 1.0 - i as f32 / 6.0;
        }
        let t = tess(5);
        let target = encode(&field, t);
        // reconstruction is exact on foreground
        for i in 0..field.len() {
            if field.mask[i] {
                assert_eq!(decode_scalar(target.q_h[i], target.r_h[i], t), field.u_h[i]);
            } else {
                assert_eq!(target.q_h[i], DUMMY);
                assert_eq!(target.r_h[i], 0.0);
            }
        }
        let dir = std::env::temp_dir().join("densereg_codec_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("target.drf");
        write_target(&path, &target).unwrap();
        let back = read_target(&path, 5).unwrap();
        assert_eq!(back, target);
    }
}
