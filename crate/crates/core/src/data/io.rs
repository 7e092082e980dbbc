use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use super::{DataSet, Provenance, Sample, Target};
use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_DIR: &str = "images";
const EXTENSIONS: [&str; 5] = ["png", "pgm", "bmp", "pnm", "ppm"];

/// Paths of a dataset directory: `images/`, `masks_icm/`, `masks_te/`.
#[derive(Clone, Debug)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetLayout { root: root.into() }
    }

    pub fn images(&self) -> PathBuf {
        self.root.join(IMAGE_DIR)
    }

    pub fn masks(&self, target: Target) -> PathBuf {
        self.root.join(target.mask_dir())
    }

    pub fn create(&self) -> Result<()> {
        for dir in [self.images(), self.masks(Target::Icm), self.masks(Target::Te)] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

fn has_image_ext(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files of a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && has_image_ext(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads any supported image as 8-bit grayscale scaled to `[0, 1]`, shaped `[1, H, W]`.
pub fn read_gray(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
    Tensor::new(vec![1, h as usize, w as usize], data)
}

/// Reads a mask; any pixel above 127 is foreground.
pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| if p.0[0] > 127 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![1, h as usize, w as usize], data)
}

fn gray_image(t: &Tensor<f32>, f: impl Fn(f32) -> u8) -> Result<GrayImage> {
    if t.rank() != 3 || t.shape()[0] != 1 {
        return Err(Error::dim(format!("expected [1,H,W], got {:?}", t.shape())));
    }
    let (h, w) = (t.shape()[1] as u32, t.shape()[2] as u32);
    Ok(GrayImage::from_fn(w, h, |x, y| {
        Luma([f(t.data()[(y * w + x) as usize])])
    }))
}

fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a `[1, H, W]` tensor with values in `[0, 1]` as 8-bit grayscale PNG.
pub fn write_gray8(t: &Tensor<f32>, path: &Path) -> Result<()> {
    save_png(
        &gray_image(t, |v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)?,
        path,
    )
}

/// Writes a binary mask as `{0, 255}` PNG.
pub fn write_mask(t: &Tensor<f32>, path: &Path) -> Result<()> {
    save_png(&gray_image(t, |v| if v >= 0.5 { 255 } else { 0 })?, path)
}

fn find_mask(dir: &Path, stem: &str, preferred_ext: Option<&str>) -> Option<PathBuf> {
    preferred_ext
        .into_iter()
        .chain(EXTENSIONS)
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Loads `<dir>/images/*` paired with same-stem masks of `target`.
pub fn load_dataset(dir: impl AsRef<Path>, target: Target) -> Result<DataSet> {
    let layout = DatasetLayout::new(dir.as_ref());
    let images_dir = layout.images();
    let masks_dir = layout.masks(target);
    if !masks_dir.is_dir() {
        return Err(Error::io(
            &masks_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "mask directory not found"),
        ));
    }
    let files = list_images(&images_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no images in {}",
            images_dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(files.len());
    for path in files {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let ext = path.extension().and_then(|e| e.to_str());
        let mask_path = find_mask(&masks_dir, &stem, ext).ok_or_else(|| Error::Pairing {
            stem: stem.clone(),
            dir: masks_dir.clone(),
        })?;
        let image = read_gray(&path)?;
        let mask = read_mask(&mask_path)?;
        samples.push(Sample::new(stem, image, mask, Provenance::Original)?);
    }
    log::info!("loaded {} {target} samples from {}", samples.len(), layout.root.display());
    Ok(DataSet::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
        GrayImage::from_fn(w, h, |x, y| Luma([f(x, y)])).save(path).unwrap();
    }

    #[test]
    fn masks_are_binarized_at_127() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        layout.create().unwrap();
        write_raw(&layout.images().join("a.png"), 4, 2, |x, _| x as u8 * 60);
        write_raw(&layout.masks(Target::Icm).join("a.png"), 4, 2, |x, y| {
            if (x + y) % 2 == 0 { 255 } else { 0 }
        });
        write_raw(&layout.images().join("b.pgm"), 4, 2, |_, _| 9);
        write_raw(&layout.masks(Target::Icm).join("b.png"), 4, 2, |x, _| [0, 127, 128, 200][x as usize]);

        let ds = load_dataset(dir.path(), Target::Icm).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].foreground(), 4);
        assert_eq!(ds.samples[0].mask.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.samples[1].mask.data()[..4], [0.0, 0.0, 1.0, 1.0]);
        assert!((ds.samples[0].image.data()[1] - 60.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn missing_mask_names_the_stem() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        layout.create().unwrap();
        write_raw(&layout.images().join("embryo_17.png"), 2, 2, |_, _| 0);
        match load_dataset(dir.path(), Target::Te) {
            Err(Error::Pairing { stem, .. }) => assert_eq!(stem, "embryo_17"),
            other => panic!("expected pairing error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        DatasetLayout::new(dir.path()).create().unwrap();
        assert!(matches!(load_dataset(dir.path(), Target::Icm), Err(Error::EmptyDataset(_))));
        let bare = tempfile::tempdir().unwrap();
        match load_dataset(bare.path(), Target::Icm) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("masks_icm")),
            other => panic!("expected i/o error, got {other:?}"),
        }
    }
}
