use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::io::{write_gray8, write_mask, DatasetLayout};
use super::{DataSet, Provenance, Sample, Target};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::SeededRng;

const NOISE_STD: f64 = 0.02;

/// One synthetic blastocyst-like image with exact masks for both regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub id: String,
    /// `[1, S, S]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub icm: Tensor<f32>,
    pub te: Tensor<f32>,
}

impl Phantom {
    pub fn mask(&self, target: Target) -> &Tensor<f32> {
        match target {
            Target::Icm => &self.icm,
            Target::Te => &self.te,
        }
    }
}

/// Rotated ellipse in normalized form: `r < 1` inside.
#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn new(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Self {
        Ellipse { cx, cy, a, b, cos: angle.cos(), sin: angle.sin() }
    }

    fn radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (self.cos * dx + self.sin * dy) / self.a;
        let v = (-self.sin * dx + self.cos * dy) / self.b;
        (u * u + v * v).sqrt()
    }

    /// Approximate signed distance in pixels (negative inside).
    fn distance(&self, x: f64, y: f64) -> f64 {
        (self.radius(x, y) - 1.0) * self.a.min(self.b)
    }
}

fn smoothstep_inside(distance: f64) -> f64 {
    // one-pixel soft edge
    (0.5 - distance).clamp(0.0, 1.0)
}

fn one_phantom(index: usize, size: usize, rng: &mut SeededRng) -> Result<Phantom> {
    let s = size as f64;
    let c = (s - 1.0) / 2.0;
    let a = rng.gen_range(0.36..0.42) * s;
    let b = a * rng.gen_range(0.8..1.0);
    let angle = rng.gen_range(0.0..PI);
    let jitter = 0.03 * s;
    let (cx, cy) = (c + rng.gen_range(-jitter..jitter), c + rng.gen_range(-jitter..jitter));
    let outer = Ellipse::new(cx, cy, a, b, angle);
    let t = rng.gen_range(0.06..0.09) * s;
    let inner = Ellipse::new(cx, cy, a - t, b - t, angle);
    let halo = Ellipse::new(cx, cy, a + 0.04 * s, b + 0.04 * s, angle);

    // ICM blob hugs the inner wall of the ring at a random bearing
    let phi = rng.gen_range(0.0..2.0 * PI);
    let (ia, ib) = (inner.a, inner.b);
    let (ux, uy) = (phi.cos() * ia, phi.sin() * ib);
    let wall = (cx + angle.cos() * ux - angle.sin() * uy, cy + angle.sin() * ux + angle.cos() * uy);
    let blob_a = rng.gen_range(0.42..0.52) * ia;
    let blob_b = blob_a * rng.gen_range(0.65..0.85);
    let towards = (cy - wall.1).atan2(cx - wall.0);
    let depth = 0.6 * blob_a;
    let blob = Ellipse::new(
        wall.0 + towards.cos() * depth,
        wall.1 + towards.sin() * depth,
        blob_a,
        blob_b,
        towards,
    );

    let freq = rng.gen_range(0.35..0.55);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, NOISE_STD).map_err(|e| Error::param(e.to_string()))?;

    let n = size * size;
    let (mut image, mut icm, mut te) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (x, y) = ((i % size) as f64, (i / size) as f64);
        let in_outer = outer.radius(x, y) < 1.0;
        let in_inner = inner.radius(x, y) < 1.0;
        let in_blob = blob.radius(x, y) < 1.0;
        let is_te = in_outer && !in_inner;
        let is_icm = in_blob && in_inner;
        te.push(is_te as u8 as f32);
        icm.push(is_icm as u8 as f32);

        let w_outer = smoothstep_inside(outer.distance(x, y));
        let w_inner = smoothstep_inside(inner.distance(x, y));
        let w_blob = smoothstep_inside(blob.distance(x, y)) * w_inner;
        let w_halo = smoothstep_inside(halo.distance(x, y) / 3.0);
        let te_texture = 0.08 * ((x * freq + phase).sin() * (y * freq - phase).cos());
        let icm_texture = 0.06 * ((x + y) * 0.9 + phase).sin();

        let background = 0.2 + 0.05 * w_halo;
        let ring = 0.55 + te_texture;
        let cavity = 0.3;
        let mass = 0.8 + icm_texture;
        let inside = cavity * (1.0 - w_blob) + mass * w_blob;
        let body = ring * (1.0 - w_inner) + inside * w_inner;
        let v = background * (1.0 - w_outer) + body * w_outer + noise.sample(rng);
        image.push(v.clamp(0.0, 1.0) as f32);
    }
    Ok(Phantom {
        id: format!("phantom_{index:04}"),
        image: Tensor::new(vec![1, size, size], image)?,
        icm: Tensor::new(vec![1, size, size], icm)?,
        te: Tensor::new(vec![1, size, size], te)?,
    })
}

/// `n` phantoms of `size × size`, deterministic per seed.
pub fn generate_phantoms(n: usize, size: usize, seed: u64) -> Result<Vec<Phantom>> {
    if n == 0 {
        return Err(Error::param("phantom count must be at least 1"));
    }
    if size == 0 || size % 16 != 0 {
        return Err(Error::param(format!("phantom size {size} must be a positive multiple of 16")));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    (0..n).map(|i| one_phantom(i, size, &mut rng)).collect()
}

/// Phantoms as a dataset with `target` masks.
pub fn phantom_dataset(n: usize, size: usize, seed: u64, target: Target) -> Result<DataSet> {
    let samples = generate_phantoms(n, size, seed)?
        .into_iter()
        .map(|p| Sample::new(p.id.clone(), p.image.clone(), p.mask(target).clone(), Provenance::Synthetic))
        .collect::<Result<_>>()?;
    Ok(DataSet { seed, ..DataSet::new(samples) })
}

/// Writes phantoms in the on-disk dataset layout as 8-bit PNGs.
pub fn write_phantoms(phantoms: &[Phantom], dir: &Path) -> Result<()> {
    let layout = DatasetLayout::new(dir);
    layout.create()?;
    for p in phantoms {
        let file = format!("{}.png", p.id);
        write_gray8(&p.image, &layout.images().join(&file))?;
        write_mask(&p.icm, &layout.masks(Target::Icm).join(&file))?;
        write_mask(&p.te, &layout.masks(Target::Te).join(&file))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fraction(mask: &Tensor<f32>) -> f64 {
        mask.data().iter().map(|&v| v as f64).sum::<f64>() / mask.len() as f64
    }

    #[test]
    fn masks_are_disjoint_and_icm_is_interior() {
        for p in generate_phantoms(6, 64, 9).unwrap() {
            assert!(p.icm.data().iter().zip(p.te.data()).all(|(&i, &t)| i * t == 0.0));
            assert!(fraction(&p.icm) > 0.01, "{} has an empty ICM", p.id);
            assert!(p.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn ring_fraction_stays_in_band() {
        for p in generate_phantoms(10, 128, 4).unwrap() {
            let f = fraction(&p.te);
            assert!((0.10..=0.30).contains(&f), "TE fraction {f}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        assert_eq!(generate_phantoms(3, 32, 1).unwrap(), generate_phantoms(3, 32, 1).unwrap());
        assert_ne!(generate_phantoms(1, 32, 1).unwrap(), generate_phantoms(1, 32, 2).unwrap());
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(generate_phantoms(0, 64, 0), Err(Error::Parameter(_))));
        assert!(matches!(generate_phantoms(2, 60, 0), Err(Error::Parameter(_))));
    }
}
