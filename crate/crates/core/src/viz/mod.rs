//! Colour overlays comparing a predicted mask with ground truth, and
//! four-tile verification panels.

mod font;

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::Target;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::eval::Metrics;

pub use font::{draw_text, text_width};

pub const GUTTER: u32 = 4;
const PANEL_BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const TEXT_COLOR: Rgb<u8> = Rgb([0, 0, 0]);

/// Overlay colours; all four must differ.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlaySpec {
    pub background: Rgb<u8>,
    pub truth: Rgb<u8>,
    pub prediction: Rgb<u8>,
    pub contour: Rgb<u8>,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        OverlaySpec {
            background: Rgb([0, 139, 139]),
            truth: Rgb([144, 238, 144]),
            prediction: Rgb([255, 255, 0]),
            contour: Rgb([255, 0, 0]),
        }
    }
}

/// Height and width of a single-plane mask or image (`[H, W]` or `[1, H, W]`).
fn plane_dims(t: &Tensor<f32>) -> Result<(usize, usize)> {
    match t.shape() {
        &[h, w] | &[1, h, w] => Ok((h, w)),
        s => Err(Error::dim(format!("expected a single [H,W] plane, got {s:?}"))),
    }
}

fn binary(t: &Tensor<f32>, what: &str) -> Result<Vec<bool>> {
    t.data()
        .iter()
        .map(|&v| match v {
            1.0 => Ok(true),
            0.0 => Ok(false),
            v => Err(Error::param(format!("{what} mask holds non-binary value {v}"))),
        })
        .collect()
}

/// Foreground pixels with at least one background 8-neighbour; pixels
/// beyond the border count as background.
pub fn contour(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize]
    };
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            mask[i]
                && (-1..=1).any(|dy| (-1..=1).any(|dx| (dy, dx) != (0, 0) && !at(y + dy, x + dx)))
        })
        .collect()
}

/// Colours each pixel by precedence: truth contour, prediction, truth only,
/// background.
pub fn render_overlay(pred: &Tensor<f32>, truth: &Tensor<f32>, spec: &OverlaySpec) -> Result<RgbImage> {
    let (h, w) = plane_dims(truth)?;
    if plane_dims(pred)? != (h, w) {
        return Err(Error::dim(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.shape(),
            truth.shape()
        )));
    }
    let (p, g) = (binary(pred, "prediction")?, binary(truth, "ground truth")?);
    let edge = contour(&g, h, w);
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        if edge[i] {
            spec.contour
        } else if p[i] {
            spec.prediction
        } else if g[i] {
            spec.truth
        } else {
            spec.background
        }
    }))
}

/// `JI 97.9%, DC 99.1%`
pub fn annotation(m: &Metrics) -> String {
    format!("JI {:.1}%, DC {:.1}%", m.jaccard * 100.0, m.dice * 100.0)
}

/// Min-max stretch of an arbitrary real image to 8-bit gray.
fn gray_tile(t: &Tensor<f32>) -> Result<RgbImage> {
    let (h, w) = plane_dims(t)?;
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = t.data()[y as usize * w + x as usize];
        let g = (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
        Rgb([g, g, g])
    }))
}

fn prediction_tile(pred: &Tensor<f32>, spec: &OverlaySpec) -> Result<RgbImage> {
    let (h, w) = plane_dims(pred)?;
    let p = binary(pred, "prediction")?;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        if p[y as usize * w + x as usize] { spec.prediction } else { spec.background }
    }))
}

pub fn text_scale(tile_width: u32) -> u32 {
    (tile_width / 128).clamp(1, 4)
}

/// Original, ground truth, prediction and overlay side by side, with the
/// annotation in a strip underneath.
pub fn render_panel(
    original: &Tensor<f32>,
    truth: &Tensor<f32>,
    pred: &Tensor<f32>,
    overlay: &RgbImage,
    annotation: &str,
    spec: &OverlaySpec,
) -> Result<RgbImage> {
    let (h, w) = plane_dims(original)?;
    for t in [truth, pred] {
        if plane_dims(t)? != (h, w) {
            return Err(Error::dim(format!("panel tile {:?} differs from {h}×{w}", t.shape())));
        }
    }
    if overlay.dimensions() != (w as u32, h as u32) {
        return Err(Error::dim(format!("overlay {:?} differs from {h}×{w}", overlay.dimensions())));
    }
    let tiles = [gray_tile(original)?, gray_tile(truth)?, prediction_tile(pred, spec)?, overlay.clone()];
    let (w, h) = (w as u32, h as u32);
    let scale = text_scale(w);
    let strip = (font::GLYPH_HEIGHT + 4) * scale;
    let mut panel = RgbImage::from_pixel(4 * w + 3 * GUTTER, h + strip, PANEL_BACKGROUND);
    for (k, tile) in tiles.iter().enumerate() {
        image::imageops::replace(&mut panel, tile, (k as u32 * (w + GUTTER)) as i64, 0);
    }
    draw_text(&mut panel, annotation, 3 * (w + GUTTER), h + 2 * scale, scale, TEXT_COLOR);
    Ok(panel)
}

pub fn overlay_filename(id: &str, target: Target) -> String {
    format!("{id}_{target}_overlay.png")
}

pub fn panel_filename(id: &str, target: Target) -> String {
    format!("{id}_{target}_panel.png")
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(size: usize, r: f64) -> Tensor<f32> {
        let c = (size as f64 - 1.0) / 2.0;
        Tensor::from_fn(vec![1, size, size], |i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            ((x * x + y * y).sqrt() < r) as u8 as f32
        })
    }

    fn count(img: &RgbImage, c: Rgb<u8>) -> usize {
        img.pixels().filter(|&&p| p == c).count()
    }

    #[test]
    fn perfect_overlap_has_no_green() {
        let spec = OverlaySpec::default();
        let m = disk(20, 6.0);
        let img = render_overlay(&m, &m, &spec).unwrap();
        assert_eq!(count(&img, spec.truth), 0);
        let fg = m.data().iter().filter(|&&v| v == 1.0).count();
        let red = count(&img, spec.contour);
        assert!(red > 0);
        assert_eq!(count(&img, spec.prediction), fg - red);
        assert_eq!(count(&img, spec.background), 400 - fg);
    }

    #[test]
    fn empty_prediction_shows_truth_in_green() {
        let spec = OverlaySpec::default();
        let m = disk(20, 6.0);
        let img = render_overlay(&Tensor::zeros(vec![1, 20, 20]), &m, &spec).unwrap();
        assert_eq!(count(&img, spec.prediction), 0);
        let fg = m.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(count(&img, spec.truth) + count(&img, spec.contour), fg);
    }

    #[test]
    fn contour_of_a_filled_square_is_its_rim() {
        let mut m = vec![false; 36];
        for y in 1..5 {
            for x in 1..5 {
                m[y * 6 + x] = true;
            }
        }
        let c = contour(&m, 6, 6);
        assert_eq!(c.iter().filter(|&&v| v).count(), 12);
        assert!(!c[2 * 6 + 2] && !c[3 * 6 + 3]);
        // touching the border counts as an edge
        assert!(contour(&[true; 9], 3, 3).iter().filter(|&&v| v).count() == 8);
    }

    #[test]
    fn panel_layout_and_annotation() {
        let spec = OverlaySpec::default();
        let m = disk(32, 9.0);
        let overlay = render_overlay(&m, &m, &spec).unwrap();
        let text = annotation(&Metrics { jaccard: 0.979, dice: 0.991, ..Default::default() });
        assert_eq!(text, "JI 97.9%, DC 99.1%");
        let panel = render_panel(&m, &m, &m, &overlay, &text, &spec).unwrap();
        assert_eq!(panel.width(), 4 * 32 + 3 * GUTTER);
        assert!(panel.height() > 32);
        assert!(count(&panel, TEXT_COLOR) > 0);
        let again = render_panel(&m, &m, &m, &overlay, &text, &spec).unwrap();
        assert_eq!(panel, again);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let spec = OverlaySpec::default();
        let r = render_overlay(&Tensor::zeros(vec![1, 4, 4]), &Tensor::zeros(vec![1, 4, 5]), &spec);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
