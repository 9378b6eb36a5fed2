//! On-disk dataset layout: a manifest per split with one record per sample
//! (index, seed, image/field/landmark paths relative to the dataset root).

use std::path::{Path, PathBuf};

use crate::codec::{encode, QuantizedTarget, Tessellation};
use crate::net::{Tensor, TrainSample};
use crate::raster::CorrespondenceField;
use crate::synth::GtLandmark;
use crate::{io, raster, synth, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub index: usize,
    pub seed: u64,
    pub image: PathBuf,
    pub field: PathBuf,
    pub landmarks: PathBuf,
}

pub fn manifest_path(root: &Path, split: &str) -> PathBuf {
    root.join(format!("{split}_manifest.txt"))
}

pub fn write_manifest(root: &Path, split: &str, rows: &[ManifestRow]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!(
            "{} {} {} {} {}\n",
            r.index,
            r.seed,
            r.image.display(),
            r.field.display(),
            r.landmarks.display()
        ));
    }
    std::fs::write(manifest_path(root, split), text)?;
    Ok(())
}

pub fn read_manifest(root: &Path, split: &str) -> Result<Vec<ManifestRow>> {
    let path = manifest_path(root, split);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(Error::Format(format!("manifest line {}: expected 5 fields", i + 1)));
        }
        let bad = |what: &str| Error::Format(format!("manifest line {}: bad {what}", i + 1));
        rows.push(ManifestRow {
            index: parts[0].parse().map_err(|_| bad("index"))?,
            seed: parts[1].parse().map_err(|_| bad("seed"))?,
            image: root.join(parts[2]),
            field: root.join(parts[3]),
            landmarks: root.join(parts[4]),
        });
    }
    Ok(rows)
}

/// Interleaved RGB to the channel-major layout the network expects.
pub fn image_to_tensor(img: &io::RgbImage) -> Tensor<f32> {
    let n = img.width * img.height;
    let mut data = vec![0.0f32; 3 * n];
    for p in 0..n {
        for c in 0..3 {
            data[c * n + p] = img.data[p * 3 + c];
        }
    }
    Tensor::from_vec(&[3, img.height, img.width], data).unwrap()
}

/// One fully loaded evaluation record.
pub struct LoadedSample {
    pub image: io::RgbImage,
    pub field: CorrespondenceField,
    pub landmarks: Vec<GtLandmark>,
}

pub fn load_sample(row: &ManifestRow) -> Result<LoadedSample> {
    Ok(LoadedSample {
        image: io::read_ppm(&row.image)?,
        field: raster::read_field(&row.field)?,
        landmarks: synth::read_landmarks(&row.landmarks)?,
    })
}

/// Loads a split and encodes it as training fixtures for a tessellation.
pub fn load_train_split(root: &Path, split: &str, tess: Tessellation) -> Result<Vec<TrainSample>> {
    let rows = read_manifest(root, split)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{split} manifest is empty")));
    }
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let sample = load_sample(row)?;
        let target: QuantizedTarget = encode(&sample.field, tess);
        out.push(TrainSample {
            image: image_to_tensor(&sample.image),
            z: sample.field.z.clone(),
            target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip() {
        let dir = std::env::temp_dir().join("densereg_manifest_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let rows = vec![
            ManifestRow {
                index: 0,
                seed: 42,
                image: dir.join("train/0000.ppm"),
                field: dir.join("train/0000.drf"),
                landmarks: dir.join("train/0000.lmk"),
            },
            ManifestRow {
                index: 1,
                seed: 43,
                image: dir.join("train/0001.ppm"),
                field: dir.join("train/0001.drf"),
                landmarks: dir.join("train/0001.lmk"),
            },
        ];
        // write with relative paths, read back resolved against the root
        let rel: Vec<ManifestRow> = rows
            .iter()
            .map(|r| ManifestRow {
                index: r.index,
                seed: r.seed,
                image: PathBuf::from(format!("train/{:04}.ppm", r.index)),
                field: PathBuf::from(format!("train/{:04}.drf", r.index)),
                landmarks: PathBuf::from(format!("train/{:04}.lmk", r.index)),
            })
            .collect();
        write_manifest(&dir, "train", &rel).unwrap();
        assert_eq!(read_manifest(&dir, "train").unwrap(), rows);
    }

    #[test]
    fn image_tensor_layout_is_channel_major() {
        let mut img = io::RgbImage::new(2, 1);
        img.data = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let t = image_to_tensor(&img);
        assert_eq!(t.shape, vec![3, 1, 2]);
        assert_eq!(t.data, vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
