use super::{DataSet, Partition, Provenance, Sample};
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Cosine and sine of a whole-degree angle, exact at multiples of 90°.
fn exact_trig(degrees: i64) -> (f64, f64) {
    match degrees.rem_euclid(360) {
        0 => (1.0, 0.0),
        90 => (0.0, 1.0),
        180 => (-1.0, 0.0),
        270 => (0.0, -1.0),
        d => {
            let r = (d as f64).to_radians();
            (r.cos(), r.sin())
        }
    }
}

/// For each destination pixel, the source coordinate under a rotation by
/// `degrees` about the image centre.
fn source_coords(size: usize, degrees: i64) -> impl Iterator<Item = (f64, f64)> {
    let (cos, sin) = exact_trig(degrees);
    let c = (size as f64 - 1.0) / 2.0;
    (0..size * size).map(move |i| {
        let dy = (i / size) as f64 - c;
        let dx = (i % size) as f64 - c;
        (c + cos * dx + sin * dy, c - sin * dx + cos * dy)
    })
}

fn square_dims(t: &Tensor<f32>) -> Result<(usize, usize)> {
    match t.shape() {
        &[c, h, w] if h == w => Ok((c, h)),
        s => Err(Error::param(format!("rotation needs a square [C,S,S] tensor, got {s:?}"))),
    }
}

/// Bilinear rotation about the centre; samples falling outside the source are zero.
pub fn rotate_image(image: &Tensor<f32>, degrees: i64) -> Result<Tensor<f32>> {
    let (c, s) = square_dims(image)?;
    if degrees.rem_euclid(360) == 0 {
        return Ok(image.clone());
    }
    let coords: Vec<(f64, f64)> = source_coords(s, degrees).collect();
    let mut out = Vec::with_capacity(c * s * s);
    for ch in 0..c {
        let plane = &image.data()[ch * s * s..(ch + 1) * s * s];
        let at = |y: i64, x: i64| {
            if y < 0 || x < 0 || y >= s as i64 || x >= s as i64 {
                0.0
            } else {
                plane[y as usize * s + x as usize] as f64
            }
        };
        for &(sx, sy) in &coords {
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + at(y0, x0 + 1) * fx * (1.0 - fy)
                + at(y0 + 1, x0) * (1.0 - fx) * fy
                + at(y0 + 1, x0 + 1) * fx * fy;
            out.push(v as f32);
        }
    }
    Tensor::new(vec![c, s, s], out)
}

/// Nearest-neighbour rotation of a mask (stays exactly binary).
pub fn rotate_mask(mask: &Tensor<f32>, degrees: i64) -> Result<Tensor<f32>> {
    let (c, s) = square_dims(mask)?;
    if degrees.rem_euclid(360) == 0 {
        return Ok(mask.clone());
    }
    let coords: Vec<(f64, f64)> = source_coords(s, degrees).collect();
    let mut out = Vec::with_capacity(c * s * s);
    for ch in 0..c {
        let plane = &mask.data()[ch * s * s..(ch + 1) * s * s];
        for &(sx, sy) in &coords {
            let (x, y) = (sx.round(), sy.round());
            let inside = x >= 0.0 && y >= 0.0 && x < s as f64 && y < s as f64;
            out.push(if inside { plane[y as usize * s + x as usize] } else { 0.0 });
        }
    }
    Tensor::new(vec![c, s, s], out)
}

/// Id of the `degrees` rotation of `origin`; the 0° copy keeps the original id.
pub fn rotated_id(origin: &str, degrees: u32) -> String {
    if degrees % 360 == 0 {
        origin.to_string()
    } else {
        format!("{origin}_r{degrees:03}")
    }
}

pub fn rotate_sample(sample: &Sample, degrees: u32) -> Result<Sample> {
    if degrees % 360 == 0 {
        return Ok(sample.clone());
    }
    Ok(Sample {
        id: rotated_id(&sample.origin, degrees),
        origin: sample.origin.clone(),
        image: rotate_image(&sample.image, degrees as i64)?,
        mask: rotate_mask(&sample.mask, degrees as i64)?,
        provenance: Provenance::Rotated { degrees },
    })
}

/// All rotations `0°, step, 2·step, …` below 360°; the 0° entry is the
/// sample itself.
pub fn augment_rotations(sample: &Sample, step_degrees: u32) -> Result<Vec<Sample>> {
    if step_degrees == 0 || 360 % step_degrees != 0 {
        return Err(Error::param(format!(
            "rotation step {step_degrees}° must be a positive divisor of 360"
        )));
    }
    square_dims(&sample.image)?;
    (0..360 / step_degrees)
        .map(|k| rotate_sample(sample, k * step_degrees))
        .collect()
}

/// Replaces every training sample by its rotations; test samples are left
/// unaugmented.
pub fn augment_dataset(dataset: &DataSet, step_degrees: u32) -> Result<DataSet> {
    let mut samples = Vec::new();
    for s in &dataset.samples {
        if dataset.partition_of(s) == Some(Partition::Train) {
            samples.extend(augment_rotations(s, step_degrees)?);
        } else {
            samples.push(s.clone());
        }
    }
    Ok(DataSet {
        samples,
        assignment: dataset.assignment.clone(),
        seed: dataset.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(size: usize) -> Sample {
        let image = Tensor::from_fn(vec![1, size, size], |i| ((i * 31) % 17) as f32 / 17.0);
        let mask = Tensor::from_fn(vec![1, size, size], |i| {
            let (y, x) = (i / size, i % size);
            (x > size / 3 && y < size / 2 + 3 && x + y > size / 2) as u8 as f32
        });
        Sample::new("s", image, mask, Provenance::Original).unwrap()
    }

    #[test]
    fn thirty_six_rotations_with_identity_first() {
        let s = sample(32);
        let all = augment_rotations(&s, 10).unwrap();
        assert_eq!(all.len(), 36);
        assert_eq!(all[0], s);
        assert!(all.iter().all(|r| r.origin == "s"));
        assert_eq!(all[35].provenance, Provenance::Rotated { degrees: 350 });
    }

    #[test]
    fn right_angle_rotation_is_an_exact_array_rotation() {
        for size in [15, 16] {
            let s = sample(size);
            let r = rotate_mask(&s.mask, 90).unwrap();
            // array oracle: out[y][x] = in[S−1−x][y]
            for y in 0..size {
                for x in 0..size {
                    assert_eq!(r.data()[y * size + x], s.mask.data()[(size - 1 - x) * size + y]);
                }
            }
            let img = rotate_image(&s.image, 90).unwrap();
            for y in 0..size {
                for x in 0..size {
                    assert_eq!(img.data()[y * size + x], s.image.data()[(size - 1 - x) * size + y]);
                }
            }
        }
    }

    #[test]
    fn invalid_steps_and_shapes() {
        let s = sample(8);
        assert!(matches!(augment_rotations(&s, 7), Err(Error::Parameter(_))));
        assert!(matches!(augment_rotations(&s, 0), Err(Error::Parameter(_))));
        let wide = Sample::new(
            "w",
            Tensor::zeros(vec![1, 4, 6]),
            Tensor::zeros(vec![1, 4, 6]),
            Provenance::Original,
        )
        .unwrap();
        assert!(matches!(augment_rotations(&wide, 10), Err(Error::Parameter(_))));
    }
}
