//! The six pipeline commands.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::codec::Tessellation;
use crate::io::RgbImage;
use crate::metrics::{
    auc, ced, failure_rate, format_summary_line, interocular_distance, normalized_image_error,
    bbox_edge_normalizer, EvalReport, CED_STEPS, ERROR_CAP,
};
use crate::net::{load_checkpoint, save_checkpoint, train, DenseRegNet, TrainConfig};
use crate::raster::{self, CorrespondenceField, BACKGROUND_PART};
use crate::synth::{sample_seed, synthesize_sample, write_landmarks, SynthConfig};
use crate::tasks::{
    build_label_lut, localize_landmarks, predict_field, transfer_segmentation, DecodeMode,
    DEFAULT_LANDMARK_TAU,
};
use crate::template::{cylindrical_unwrap, face_lowpoly, load_mesh, TemplateMesh, UvAtlas};
use crate::{io, Error, Result};

use super::config::{thread_count, RunConfig};
use super::dataset::{
    image_to_tensor, load_sample, load_train_split, read_manifest, write_manifest, LoadedSample,
    ManifestRow,
};

fn load_template(cfg: &RunConfig) -> Result<(TemplateMesh, UvAtlas)> {
    let mesh = match cfg.get_opt("template") {
        None => face_lowpoly(),
        Some(path) => load_mesh(Path::new(path))?,
    };
    let atlas = cylindrical_unwrap(&mesh)?;
    Ok((mesh, atlas))
}

fn landmark_uvs(mesh: &TemplateMesh, atlas: &UvAtlas) -> Vec<(String, [f64; 2])> {
    mesh.landmarks
        .iter()
        .map(|(name, idx)| (name.clone(), atlas.uv[*idx]))
        .collect()
}

const SYNTH_KEYS: &[&str] = &[
    "out", "seed", "n_train", "n_test", "width", "height", "yaw_range", "rotation_range",
    "tps_grid", "tps_jitter", "noise", "threads", "template",
];

/// Test sample indices live in a disjoint seed stream from training ones.
const TEST_INDEX_BASE: u64 = 1 << 32;

/// Generates the train and test splits of a synthetic dataset.
pub fn cmd_synth(cfg: &RunConfig) -> Result<i32> {
    cfg.check_keys(SYNTH_KEYS)?;
    let out = cfg.require_path("out")?;
    let master_seed = cfg.get_u64("seed", 0)?;
    let n_train = cfg.get_usize("n_train", 200)?;
    let n_test = cfg.get_usize("n_test", 50)?;
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config("n_train and n_test must be positive".into()));
    }
    let synth_cfg = SynthConfig {
        width: cfg.get_usize("width", 64)?,
        height: cfg.get_usize("height", 64)?,
        yaw_range: cfg.get_f64("yaw_range", 0.45)?,
        rotation_range: cfg.get_f64("rotation_range", 0.2)?,
        tps_grid: cfg.get_usize("tps_grid", 3)?,
        tps_jitter: cfg.get_f64("tps_jitter", 1.2)?,
        noise: cfg.get_f64("noise", 0.1)?,
        ..Default::default()
    };
    let threads = thread_count(cfg)?;
    let (mesh, atlas) = load_template(cfg)?;

    for split in ["train", "test"] {
        std::fs::create_dir_all(out.join(split))?;
    }
    for (split, count, base) in [("train", n_train, 0u64), ("test", n_test, TEST_INDEX_BASE)] {
        let seeds = Mutex::new(vec![None::<u64>; count]);
        let error = Mutex::new(None::<Error>);
        std::thread::scope(|scope| {
            for worker in 0..threads.min(count) {
                let (mesh, atlas, synth_cfg, out, seeds, error) =
                    (&mesh, &atlas, &synth_cfg, &out, &seeds, &error);
                scope.spawn(move || {
                    for i in (worker..count).step_by(threads) {
                        let r = synth_one(mesh, atlas, synth_cfg, master_seed, base + i as u64)
                            .and_then(|(seed, sample)| {
                                let stem = out.join(split).join(format!("{i:04}"));
                                io::write_ppm(&stem.with_extension("ppm"), &sample.image)?;
                                raster::write_field(&stem.with_extension("drf"), &sample.gt)?;
                                write_landmarks(
                                    &stem.with_extension("lmk"),
                                    &sample.gt_landmarks,
                                )?;
                                Ok(seed)
                            });
                        match r {
                            Ok(seed) => seeds.lock().unwrap()[i] = Some(seed),
                            Err(e) => {
                                *error.lock().unwrap() = Some(e);
                                return;
                            }
                        }
                    }
                });
            }
        });
        if let Some(e) = error.into_inner().unwrap() {
            return Err(e);
        }
        let rows: Vec<ManifestRow> = seeds
            .into_inner()
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, seed)| ManifestRow {
                index: i,
                seed: seed.expect("worker covered every index"),
                image: PathBuf::from(format!("{split}/{i:04}.ppm")),
                field: PathBuf::from(format!("{split}/{i:04}.drf")),
                landmarks: PathBuf::from(format!("{split}/{i:04}.lmk")),
            })
            .collect();
        write_manifest(&out, split, &rows)?;
    }
    println!("synth: wrote {n_train} train + {n_test} test samples to {}", out.display());
    Ok(super::EXIT_OK)
}

/// One sample with deterministic retries for the rare degenerate draw (face
/// fully off-screen); the retried seed lands in the manifest.
fn synth_one(
    mesh: &TemplateMesh,
    atlas: &UvAtlas,
    cfg: &SynthConfig,
    master_seed: u64,
    index: u64,
) -> Result<(u64, crate::synth::SceneSample)> {
    let mut seed = sample_seed(master_seed, index);
    for _ in 0..16 {
        match synthesize_sample(mesh, atlas, cfg, seed) {
            Ok(sample) => return Ok((seed, sample)),
            Err(Error::Synth(_)) => seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Synth(format!("sample {index}: no valid draw in 16 attempts")))
}

const TRAIN_KEYS: &[&str] = &[
    "out", "dataset", "split", "k", "iterations", "warmup_iters", "base_lr", "warmup_lr",
    "poly_power", "batch_size", "crop", "w_cls", "w_reg", "w_depth", "seed",
];

/// Trains a checkpoint from a synth dataset; returns the checkpoint path.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.check_keys(TRAIN_KEYS)?;
    let out = cfg.require_path("out")?;
    let dataset = cfg.require_path("dataset")?;
    let split = cfg.get_str("split", "train");
    let k = cfg.get_usize("k", 10)?;
    let mut tc = TrainConfig::new(k);
    tc.iterations = cfg.get_usize("iterations", tc.iterations)?;
    tc.warmup_iters = cfg.get_usize("warmup_iters", tc.warmup_iters)?;
    tc.base_lr = cfg.get_f64("base_lr", tc.base_lr)?;
    tc.warmup_lr = cfg.get_f64("warmup_lr", tc.warmup_lr)?;
    tc.poly_power = cfg.get_f64("poly_power", tc.poly_power)?;
    tc.batch_size = cfg.get_usize("batch_size", tc.batch_size)?;
    tc.crop = cfg.get_usize("crop", tc.crop)?;
    tc.w_cls = cfg.get_f64("w_cls", tc.w_cls)?;
    tc.w_reg = cfg.get_f64("w_reg", tc.w_reg)?;
    tc.w_depth = cfg.get_f64("w_depth", tc.w_depth)?;
    tc.seed = cfg.get_u64("seed", tc.seed)?;
    tc.validate()?;
    let tess = Tessellation::new(k)?;
    let samples = load_train_split(&dataset, &split, tess)?;

    std::fs::create_dir_all(&out)?;
    let echo = format!(
        "k={}\niterations={}\nwarmup_iters={}\nbase_lr={}\nwarmup_lr={}\npoly_power={}\n\
         batch_size={}\ncrop={}\nw_cls={}\nw_reg={}\nw_depth={}\nseed={}\n",
        tc.k, tc.iterations, tc.warmup_iters, tc.base_lr, tc.warmup_lr, tc.poly_power,
        tc.batch_size, tc.crop, tc.w_cls, tc.w_reg, tc.w_depth, tc.seed
    );
    std::fs::write(out.join("train_config.txt"), echo)?;
    println!("train: k={} w_reg={} on {} samples", tc.k, tc.w_reg, samples.len());

    let (net, log) = train(&samples, &tc)?;
    let log_text: String = log.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(out.join("train.log"), log_text)?;
    let ckpt = out.join("checkpoint.drn");
    save_checkpoint(&net, &ckpt)?;
    println!("train: final loss {:.4}, checkpoint {}", log.last().unwrap().loss, ckpt.display());
    Ok(ckpt)
}

/// Runs a network over loaded samples, decoding each output to a field.
pub fn infer_fields(
    net: &DenseRegNet<f32>,
    samples: &[LoadedSample],
    mode: DecodeMode,
) -> Result<Vec<CorrespondenceField>> {
    let tess = Tessellation::new(net.cfg.k)?;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let (output, _) = net.forward(&image_to_tensor(&s.image))?;
        out.push(predict_field(&output, tess, mode)?);
    }
    Ok(out)
}

fn field_preview(field: &CorrespondenceField) -> RgbImage {
    let mut img = RgbImage::new(field.width, field.height);
    for p in 0..field.len() {
        img.data[p * 3] = field.u_h[p];
        img.data[p * 3 + 1] = field.u_v[p];
        img.data[p * 3 + 2] = if field.mask[p] { 1.0 } else { 0.0 };
    }
    img
}

const INFER_KEYS: &[&str] = &["out", "dataset", "split", "checkpoint", "decode_mode", "k"];

/// Writes predicted fields (DRF1) plus UV preview images for a split.
pub fn cmd_infer(cfg: &RunConfig) -> Result<i32> {
    cfg.check_keys(INFER_KEYS)?;
    let out = cfg.require_path("out")?;
    let dataset = cfg.require_path("dataset")?;
    let ckpt = cfg.require_path("checkpoint")?;
    let split = cfg.get_str("split", "test");
    let mode: DecodeMode = cfg.get_str("decode_mode", "full").parse()?;
    let net = load_checkpoint(&ckpt)?;
    if let Some(k) = cfg.get_opt("k") {
        let k: usize = k.parse().map_err(|_| Error::Config("k: bad value".into()))?;
        if k != net.cfg.k {
            return Err(Error::Config(format!(
                "config k = {k} but checkpoint was trained with K = {}",
                net.cfg.k
            )));
        }
    }
    let rows = read_manifest(&dataset, &split)?;
    std::fs::create_dir_all(&out)?;
    for row in &rows {
        let sample = load_sample(row)?;
        let fields = infer_fields(&net, std::slice::from_ref(&sample), mode)?;
        let stem = out.join(format!("{:04}", row.index));
        raster::write_field(&stem.with_extension("drf"), &fields[0])?;
        io::write_ppm(&stem.with_extension("ppm"), &field_preview(&fields[0]))?;
    }
    println!("infer: wrote {} predictions to {}", rows.len(), out.display());
    Ok(super::EXIT_OK)
}

/// Which per-image pixel normalizer divides the RMS landmark error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalizer {
    Interocular,
    Bbox,
}

impl std::str::FromStr for Normalizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interocular" => Ok(Self::Interocular),
            "bbox" => Ok(Self::Bbox),
            other => Err(Error::Config(format!("unknown normalizer {other:?}"))),
        }
    }
}

pub struct EvalSettings {
    pub tau: f64,
    pub cap: f64,
    pub ced_steps: usize,
    pub normalizer: Normalizer,
    pub lut_resolution: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            tau: DEFAULT_LANDMARK_TAU,
            cap: ERROR_CAP,
            ced_steps: CED_STEPS,
            normalizer: Normalizer::Interocular,
            lut_resolution: 2048,
        }
    }
}

/// Scores predicted fields against loaded ground truth.
pub fn eval_fields(
    preds: &[CorrespondenceField],
    samples: &[LoadedSample],
    mesh: &TemplateMesh,
    atlas: &UvAtlas,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if preds.len() != samples.len() {
        return Err(Error::Metrics(format!(
            "{} predictions for {} ground-truth samples",
            preds.len(),
            samples.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metrics("nothing to evaluate".into()));
    }
    let uvs = landmark_uvs(mesh, atlas);
    let lut = build_label_lut(mesh, atlas, settings.lut_resolution)?;
    let mut errors = Vec::with_capacity(preds.len());
    let mut pred_parts: Vec<u8> = Vec::new();
    let mut gt_parts: Vec<u8> = Vec::new();
    let mut depth_sq = 0.0f64;
    let mut depth_n = 0usize;
    for (pred, s) in preds.iter().zip(samples) {
        if s.landmarks.iter().filter(|l| l.visible).count() > 0 {
            let detected = localize_landmarks(pred, &uvs, settings.tau)?;
            let normalizer = match settings.normalizer {
                Normalizer::Interocular => interocular_distance(&s.landmarks)?,
                Normalizer::Bbox => bbox_edge_normalizer(&s.landmarks)?,
            };
            let e = normalized_image_error(&detected, &s.landmarks, normalizer, settings.cap)?;
            errors.push(e.normalized);
        }
        let mut labeled = pred.clone();
        transfer_segmentation(&mut labeled, &lut);
        pred_parts.extend_from_slice(&labeled.parts);
        gt_parts.extend_from_slice(&s.field.parts);
        for p in 0..pred.len() {
            if pred.mask[p] && s.field.mask[p] {
                let d = pred.z[p] as f64 - s.field.z[p] as f64;
                depth_sq += d * d;
                depth_n += 1;
            }
        }
    }
    if errors.is_empty() {
        return Err(Error::Metrics("no image had a visible landmark".into()));
    }
    let curve = ced(&errors, settings.cap, settings.ced_steps)?;
    let classes: Vec<u8> = (0..8).chain([BACKGROUND_PART]).collect();
    let per_class_iou = crate::metrics::iou_per_class(&pred_parts, &gt_parts, &classes)?;
    let present: Vec<f64> = per_class_iou.iter().take(8).flatten().copied().collect();
    let mean_iou = if present.is_empty() {
        return Err(Error::Metrics("no part class present anywhere".into()));
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(EvalReport {
        n_images: preds.len(),
        cap: settings.cap,
        landmark_auc: auc(&curve),
        landmark_failure_rate: failure_rate(&errors, settings.cap),
        mean_normalized_error: errors.iter().sum::<f64>() / errors.len() as f64,
        per_image_errors: errors,
        // the report's mean is over the 8 part classes only; the background
        // row is still listed per class
        mean_iou,
        per_class_iou,
        depth_rmse: if depth_n == 0 { None } else { Some((depth_sq / depth_n as f64).sqrt()) },
        ced: curve,
    })
}

const EVAL_KEYS: &[&str] = &[
    "out", "dataset", "split", "predictions", "normalizer", "tau", "cap", "ced_steps",
    "lut_resolution", "template",
];

/// Evaluates predicted fields (or, without a `predictions` dir, the ground
/// truth against itself for a pipeline closure check).
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.check_keys(EVAL_KEYS)?;
    let out = cfg.require_path("out")?;
    let dataset = cfg.require_path("dataset")?;
    let split = cfg.get_str("split", "test");
    let settings = EvalSettings {
        tau: cfg.get_f64("tau", DEFAULT_LANDMARK_TAU)?,
        cap: cfg.get_f64("cap", ERROR_CAP)?,
        ced_steps: cfg.get_usize("ced_steps", CED_STEPS)?,
        normalizer: cfg.get_str("normalizer", "interocular").parse()?,
        lut_resolution: cfg.get_usize("lut_resolution", 2048)?,
    };
    let (mesh, atlas) = load_template(cfg)?;
    let rows = read_manifest(&dataset, &split)?;
    let samples: Vec<LoadedSample> = rows.iter().map(load_sample).collect::<Result<_>>()?;
    let preds: Vec<CorrespondenceField> = match cfg.get_opt("predictions") {
        None => samples.iter().map(|s| s.field.clone()).collect(),
        Some(dir) => rows
            .iter()
            .map(|r| raster::read_field(&Path::new(dir).join(format!("{:04}.drf", r.index))))
            .collect::<Result<_>>()?,
    };
    let report = eval_fields(&preds, &samples, &mesh, &atlas, &settings)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    std::fs::write(out.join("ced.txt"), report.ced.to_two_column_text())?;
    println!(
        "{}",
        format_summary_line("densereg", report.landmark_auc, report.landmark_failure_rate)
    );
    match report.depth_rmse {
        Some(d) => println!("mean IoU {:.4}, depth RMSE {:.4}", report.mean_iou, d),
        None => println!("mean IoU {:.4}, depth RMSE n/a", report.mean_iou),
    }
    Ok(report)
}

const GRADCHECK_KEYS: &[&str] = &["seed"];

/// Runs every finite-difference suite; exit 3 if any op fails.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<i32> {
    cfg.check_keys(GRADCHECK_KEYS)?;
    let seed = cfg.get_u64("seed", 0)?;
    let reports = crate::net::check_all(seed)?;
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.pass();
    }
    Ok(if ok { super::EXIT_OK } else { super::EXIT_VERIFICATION })
}

const ABLATE_KEYS: &[&str] = &[
    "out", "dataset", "k_list", "iterations", "warmup_iters", "base_lr", "warmup_lr",
    "poly_power", "batch_size", "crop", "seed", "tau", "cap", "ced_steps", "lut_resolution",
    "normalizer", "template",
];

/// Trains one network per K and scores both decode modes on the test split.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<i32> {
    cfg.check_keys(ABLATE_KEYS)?;
    let out = cfg.require_path("out")?;
    let dataset = cfg.require_path("dataset")?;
    let k_list = cfg.get_usize_list("k_list", &[1, 5, 10])?;
    if k_list.is_empty() {
        return Err(Error::Config("k_list is empty".into()));
    }
    let settings = EvalSettings {
        tau: cfg.get_f64("tau", DEFAULT_LANDMARK_TAU)?,
        cap: cfg.get_f64("cap", ERROR_CAP)?,
        ced_steps: cfg.get_usize("ced_steps", CED_STEPS)?,
        normalizer: cfg.get_str("normalizer", "interocular").parse()?,
        lut_resolution: cfg.get_usize("lut_resolution", 2048)?,
    };
    let (mesh, atlas) = load_template(cfg)?;
    let test_rows = read_manifest(&dataset, "test")?;
    let test: Vec<LoadedSample> = test_rows.iter().map(load_sample).collect::<Result<_>>()?;

    let mut table = String::from("K mode auc failure\n");
    for &k in &k_list {
        let tess = Tessellation::new(k)?;
        let mut tc = TrainConfig::new(k);
        tc.iterations = cfg.get_usize("iterations", tc.iterations)?;
        tc.warmup_iters = cfg.get_usize("warmup_iters", tc.warmup_iters)?;
        tc.base_lr = cfg.get_f64("base_lr", tc.base_lr)?;
        tc.warmup_lr = cfg.get_f64("warmup_lr", tc.warmup_lr)?;
        tc.poly_power = cfg.get_f64("poly_power", tc.poly_power)?;
        tc.batch_size = cfg.get_usize("batch_size", tc.batch_size)?;
        tc.crop = cfg.get_usize("crop", tc.crop)?;
        tc.seed = cfg.get_u64("seed", tc.seed)?;
        tc.validate()?;
        let samples = load_train_split(&dataset, "train", tess)?;
        println!("ablate: training K = {k} (w_reg {})", tc.w_reg);
        let (net, log) = train(&samples, &tc)?;
        let kdir = out.join(format!("k{k}"));
        std::fs::create_dir_all(&kdir)?;
        save_checkpoint(&net, &kdir.join("checkpoint.drn"))?;
        let log_text: String = log.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(kdir.join("train.log"), log_text)?;
        for (mode, tag) in [(DecodeMode::Full, "full"), (DecodeMode::ClassificationOnly, "cls")] {
            let preds = infer_fields(&net, &test, mode)?;
            let report = eval_fields(&preds, &test, &mesh, &atlas, &settings)?;
            table.push_str(&format!(
                "{k} {tag} {:.4} {:.2}\n",
                report.landmark_auc, report.landmark_failure_rate
            ));
        }
    }
    std::fs::write(out.join("ablate_table.txt"), &table)?;
    print!("{table}");
    Ok(super::EXIT_OK)
}
