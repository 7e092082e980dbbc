use super::Sample;
use crate::engine::Tensor;
use crate::error::{Error, Result};

const STD_FLOOR: f32 = 1e-8;

/// Resizes every channel of a `[C, H, W]` image to `size × size` with
/// pixel-centre-aligned bilinear interpolation.
pub fn resize_bilinear(image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(image)?;
    if h == size && w == size {
        return Ok(image.clone());
    }
    let sy = h as f32 / size as f32;
    let sx = w as f32 / size as f32;
    let taps = |dst: usize, scale: f32, extent: usize| {
        let src = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f32);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(extent - 1);
        (lo, hi, src - lo as f32)
    };
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..size {
            let (y0, y1, fy) = taps(y, sy, h);
            for x in 0..size {
                let (x0, x1, fx) = taps(x, sx, w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Nearest-neighbour resize; the source pixel is the one containing the
/// destination pixel centre.
pub fn resize_nearest(mask: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(mask)?;
    if h == size && w == size {
        return Ok(mask.clone());
    }
    let pick = |dst: usize, extent: usize| ((2 * dst + 1) * extent / (2 * size)).min(extent - 1);
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let plane = &mask.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..size {
            let row = pick(y, h) * w;
            for x in 0..size {
                out.push(plane[row + pick(x, w)]);
            }
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Per-channel z-score. Returns the normalized image and whether any
/// channel hit the standard-deviation floor.
pub fn zscore(image: &Tensor<f32>) -> Result<(Tensor<f32>, bool)> {
    let (c, h, w) = dims3(image)?;
    let plane = h * w;
    let mut out = image.clone();
    let mut floored = false;
    for ch in 0..c {
        let values = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        let n = plane as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let mut std = var.sqrt() as f32;
        if std < STD_FLOOR {
            std = STD_FLOOR;
            floored = true;
        }
        for v in values.iter_mut() {
            *v = ((*v as f64 - mean) as f32) / std;
        }
    }
    Ok((out, floored))
}

/// Bilinear image and nearest-neighbour mask resize to `size × size`.
pub fn resize_sample(sample: &Sample, size: usize) -> Result<Sample> {
    if sample.image.is_empty() || size == 0 {
        return Err(Error::param("resizing needs a non-empty image and size"));
    }
    Ok(Sample {
        image: resize_bilinear(&sample.image, size)?,
        mask: resize_nearest(&sample.mask, size)?,
        ..sample.clone()
    })
}

/// Resizes to `size × size` and z-scores the image.
pub fn preprocess(sample: &Sample, size: usize) -> Result<Sample> {
    let resized = resize_sample(sample, size)?;
    let (image, floored) = zscore(&resized.image)?;
    if floored {
        log::warn!("sample `{}` has (near-)zero variance; std floored at {STD_FLOOR}", sample.id);
    }
    Ok(Sample { image, ..resized })
}

fn dims3(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::dim(format!("expected [C,H,W], got {s:?}"))),
    }
}
