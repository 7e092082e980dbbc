use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use super::config::RunConfig;
use super::{CliError, CliResult, Stage};
use crate::data::{
    augment_dataset, generate_phantoms, list_images, load_dataset, preprocess, read_gray, read_mask,
    resize_bilinear, resize_sample, rotate_image, rotate_mask, rotated_id, split_and_shuffle, write_gray8, write_mask,
    write_phantoms, zscore, DataSet, DatasetLayout, Sample, Target,
};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::eval::{binarize, evaluate_set};
use crate::model::{Model, ModelConfig, TrainingMeta};
use crate::train::fit;
use crate::viz::{annotation, overlay_filename, panel_filename, render_overlay, render_panel, save_png, OverlaySpec};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PANEL_DIR: &str = "panels";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resize, augment the training split, then z-score every sample.
pub fn prepare_training_data(cfg: &RunConfig, dataset: &DataSet) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let size = cfg.model.image_size;
    let split = split_and_shuffle(dataset, cfg.data.train_fraction, cfg.seed)?;
    let resized = DataSet {
        samples: split.samples.iter().map(|s| resize_sample(s, size)).collect::<Result<_>>()?,
        ..split
    };
    let augmented = augment_dataset(&resized, cfg.data.rotation_step)?;
    let norm = |samples: Vec<&Sample>| samples.into_iter().map(|s| preprocess(s, size)).collect::<Result<Vec<_>>>();
    Ok((norm(augmented.train())?, norm(augmented.test())?))
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub epochs_run: usize,
    pub best_loss: f64,
}

pub fn train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    cfg.validate().map_err(CliError::at(Stage::Config))?;
    let data_dir = cfg
        .data
        .data_dir
        .as_ref()
        .ok_or_else(|| CliError::new(Stage::Config, Error::config("data.data_dir", "no dataset directory given")))?;
    let dataset = load_dataset(data_dir, cfg.data.target).map_err(CliError::at(Stage::Data))?;
    let (train_set, test_set) = prepare_training_data(cfg, &dataset).map_err(CliError::at(Stage::Data))?;
    log::info!("{} training samples after augmentation, {} held out", train_set.len(), test_set.len());

    let out = &cfg.out_dir;
    create_dir(out).map_err(CliError::at(Stage::Output))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_json().map_err(CliError::at(Stage::Output))?)
        .map_err(CliError::at(Stage::Output))?;

    let mut model = Model::<f32>::build(cfg.model.clone(), &mut crate::seeded_rng(cfg.seed))
        .map_err(CliError::at(Stage::Config))?;
    let refs: Vec<&Sample> = train_set.iter().collect();
    let checkpoint = out.join(CHECKPOINT_FILE);
    let meta = |epoch: usize, best_loss: Option<f64>| TrainingMeta {
        epoch,
        best_loss,
        seed: Some(cfg.seed),
        train_fraction: Some(cfg.data.train_fraction),
        target: Some(cfg.data.target.to_string()),
    };
    let report = match fit(&mut model, &refs, &cfg.train, None) {
        Ok(r) => r,
        Err(e) => {
            // the model holds the best weights seen before the failure
            model.save(&checkpoint, meta(0, None)).map_err(CliError::at(Stage::Output))?;
            return Err(CliError::new(Stage::Training, e));
        }
    };
    report.write_csv(&out.join(TRAIN_LOG_FILE)).map_err(CliError::at(Stage::Output))?;
    model
        .save(&checkpoint, meta(report.best_epoch, Some(report.best_loss)))
        .map_err(CliError::at(Stage::Output))?;
    Ok(TrainOutcome { checkpoint, epochs_run: report.records.len(), best_loss: report.best_loss })
}

fn load_model(checkpoint: &Path, expected: Option<&ModelConfig>) -> CliResult<(Model<f32>, TrainingMeta)> {
    let (model, meta) = Model::<f32>::load(checkpoint, None).map_err(CliError::at(Stage::Checkpoint))?;
    if let Some(cfg) = expected {
        if cfg.image_size != model.config().image_size {
            return Err(CliError::new(
                Stage::Checkpoint,
                Error::Format(format!(
                    "checkpoint expects {0}×{0} inputs but the configuration asks for {1}×{1}",
                    model.config().image_size,
                    cfg.image_size
                )),
            ));
        }
        if cfg != model.config() {
            return Err(CliError::new(
                Stage::Checkpoint,
                Error::Format("checkpoint architecture differs from the configuration".into()),
            ));
        }
    }
    Ok((model, meta))
}

/// 16-bit probability map: `round(p · 65535)`.
pub fn quantize_probabilities(prob: &Tensor<f32>) -> Vec<u16> {
    prob.data().iter().map(|&p| (p.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).collect()
}

pub fn read_probability_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_luma16();
    let (w, h) = img.dimensions();
    dequantize_probabilities(img.as_raw(), h as usize, w as usize)
}

pub fn dequantize_probabilities(q: &[u16], h: usize, w: usize) -> Result<Tensor<f32>> {
    Tensor::new(vec![1, h, w], q.iter().map(|&v| (v as f64 / 65535.0) as f32).collect())
}

pub fn probability_filename(stem: &str) -> String {
    format!("{stem}_prob.png")
}

pub fn mask_filename(stem: &str) -> String {
    format!("{stem}_mask.png")
}

/// Writes `<stem>_prob.png` and `<stem>_mask.png` for each input image.
pub fn predict(
    checkpoint: &Path,
    input: &Path,
    threshold: f64,
    out: &Path,
    expected: Option<&ModelConfig>,
) -> CliResult<usize> {
    binarize(&Tensor::<f32>::zeros(vec![1]), threshold).map_err(CliError::at(Stage::Config))?;
    let (model, _) = load_model(checkpoint, expected)?;
    let files = if input.is_dir() {
        list_images(input).map_err(CliError::at(Stage::Data))?
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(CliError::new(Stage::Data, Error::EmptyDataset(format!("no images in {}", input.display()))));
    }
    create_dir(out).map_err(CliError::at(Stage::Output))?;
    let size = model.config().image_size;
    for path in &files {
        let image = read_gray(path).map_err(CliError::at(Stage::Data))?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let step = || -> Result<()> {
            let (normalized, _) = zscore(&resize_bilinear(&image, size)?)?;
            let prob = crate::eval::Segmenter::probabilities(&model, &normalized)?;
            let prob = if (h, w) == (size, size) { prob } else { resize_to(&prob, h, w)? };
            let q = quantize_probabilities(&prob);
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let prob_path = out.join(probability_filename(stem));
            ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, q.clone())
                .expect("buffer matches dimensions")
                .save_with_format(&prob_path, image::ImageFormat::Png)
                .map_err(|source| Error::Image { path: prob_path, source })?;
            // the mask derives from the stored 16-bit values so the two files agree exactly
            let mask = binarize(&dequantize_probabilities(&q, h, w)?, threshold)?;
            write_mask(&mask, &out.join(mask_filename(stem)))
        };
        step().map_err(CliError::at(Stage::Output))?;
    }
    Ok(files.len())
}

/// Bilinear resize of a single plane to `h × w`.
fn resize_to(prob: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (sh, sw) = (prob.shape()[1], prob.shape()[2]);
    let src = prob.data();
    let tap = |d: usize, from: usize, to: usize| {
        let s = ((d as f32 + 0.5) * from as f32 / to as f32 - 0.5).clamp(0.0, (from - 1) as f32);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(from - 1), s - lo as f32)
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1, fy) = tap(y, sh, h);
        for x in 0..w {
            let (x0, x1, fx) = tap(x, sw, w);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(vec![1, h, w], out)
}

pub struct EvaluateOutcome {
    pub report: crate::eval::MetricsReport,
}

/// Scores the checkpoint on its held-out split and renders a panel per image.
pub fn evaluate(
    checkpoint: &Path,
    data_dir: &Path,
    target: Target,
    threshold: f64,
    out: &Path,
) -> CliResult<EvaluateOutcome> {
    binarize(&Tensor::<f32>::zeros(vec![1]), threshold).map_err(CliError::at(Stage::Config))?;
    let (model, meta) = load_model(checkpoint, None)?;
    if let Some(t) = meta.target.as_deref() {
        if t != target.as_str() {
            log::warn!("checkpoint was trained for `{t}` but is evaluated on `{target}`");
        }
    }
    let dataset = load_dataset(data_dir, target).map_err(CliError::at(Stage::Data))?;
    let size = model.config().image_size;
    let test: Vec<Sample> = match (meta.seed, meta.train_fraction) {
        (Some(seed), Some(frac)) => {
            let split = split_and_shuffle(&dataset, frac, seed).map_err(CliError::at(Stage::Data))?;
            split.test().into_iter().cloned().collect()
        }
        _ => {
            log::warn!("checkpoint records no split; evaluating every image");
            dataset.samples
        }
    };
    if test.is_empty() {
        return Err(CliError::new(Stage::Data, Error::EmptyDataset("test split is empty".into())));
    }
    let test: Vec<Sample> = test.iter().map(|s| preprocess(s, size)).collect::<Result<_>>().map_err(CliError::at(Stage::Data))?;
    let refs: Vec<&Sample> = test.iter().collect();
    let evaluation = evaluate_set(&model, &refs, target, threshold).map_err(CliError::at(Stage::Data))?;

    let panels = out.join(PANEL_DIR);
    create_dir(&panels).map_err(CliError::at(Stage::Output))?;
    let report = evaluation.report;
    write_text(&out.join(METRICS_FILE), &report.to_csv()).map_err(CliError::at(Stage::Output))?;
    write_text(&out.join(SUMMARY_FILE), &report.summary_table()).map_err(CliError::at(Stage::Output))?;
    let spec = OverlaySpec::default();
    for ((sample, prob), row) in test.iter().zip(&evaluation.probabilities).zip(&report.images) {
        let render = || -> Result<()> {
            let pred = binarize(prob, threshold)?;
            let overlay = render_overlay(&pred, &sample.mask, &spec)?;
            save_png(&overlay, &panels.join(overlay_filename(&sample.id, target)))?;
            let panel = render_panel(&sample.image, &sample.mask, &pred, &overlay, &annotation(&row.metrics), &spec)?;
            save_png(&panel, &panels.join(panel_filename(&sample.id, target)))
        };
        render().map_err(CliError::at(Stage::Output))?;
    }
    Ok(EvaluateOutcome { report })
}

pub fn synth(n: usize, size: usize, seed: u64, out: &Path) -> CliResult<usize> {
    let phantoms = generate_phantoms(n, size, seed).map_err(CliError::at(Stage::Config))?;
    write_phantoms(&phantoms, out).map_err(CliError::at(Stage::Output))?;
    Ok(phantoms.len())
}

/// Writes every rotation of every image (and of its masks) into `out`.
pub fn augment(data_dir: &Path, step: u32, out: &Path) -> CliResult<usize> {
    if step == 0 || 360 % step != 0 {
        return Err(CliError::new(Stage::Config, Error::config("step", format!("{step} is not a positive divisor of 360"))));
    }
    let src = DatasetLayout::new(data_dir);
    let dst = DatasetLayout::new(out);
    let files = list_images(&src.images()).map_err(CliError::at(Stage::Data))?;
    if files.is_empty() {
        return Err(CliError::new(Stage::Data, Error::EmptyDataset(format!("no images in {}", src.images().display()))));
    }
    let targets: Vec<Target> = [Target::Icm, Target::Te].into_iter().filter(|t| src.masks(*t).is_dir()).collect();
    dst.create().map_err(CliError::at(Stage::Output))?;
    let mut written = 0;
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let image = read_gray(&path).map_err(CliError::at(Stage::Data))?;
        let mut masks = Vec::new();
        for &t in &targets {
            let mask_path = src.masks(t).join(format!("{stem}.png"));
            let mask_path = if mask_path.is_file() {
                mask_path
            } else {
                let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("png");
                src.masks(t).join(format!("{stem}.{ext}"))
            };
            masks.push((t, read_mask(&mask_path).map_err(CliError::at(Stage::Data))?));
        }
        for k in 0..360 / step {
            let degrees = k * step;
            let file = format!("{}.png", rotated_id(&stem, degrees));
            let rotated = rotate_image(&image, degrees as i64).map_err(CliError::at(Stage::Config))?;
            write_gray8(&rotated, &dst.images().join(&file)).map_err(CliError::at(Stage::Output))?;
            for (t, mask) in &masks {
                let r = rotate_mask(mask, degrees as i64).map_err(CliError::at(Stage::Config))?;
                write_mask(&r, &dst.masks(*t).join(&file)).map_err(CliError::at(Stage::Output))?;
            }
            written += 1;
        }
    }
    Ok(written)
}
