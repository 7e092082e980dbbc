//! Convolution kernels: im2col lowering onto GEMM, for plain/dilated
//! convolution and its transpose.
//!
//! Every batch-level routine parallelizes across samples only. Per-sample
//! weight gradients are reduced in sample order, so results are bitwise
//! independent of the thread count.

use rayon::prelude::*;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps `ceil(input / stride)` pixels; zero padding split evenly,
    /// the odd pixel going to the bottom/right.
    Same,
    /// No padding.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
        }
    }
}

impl Conv2dOptions {
    pub fn same() -> Self {
        Self::default()
    }

    pub fn dilated(dilation: usize) -> Self {
        Conv2dOptions {
            dilation,
            ..Self::default()
        }
    }

    pub fn valid(stride: usize) -> Self {
        Conv2dOptions {
            stride,
            dilation: 1,
            padding: Padding::Valid,
        }
    }
}

/// Resolved sliding-window geometry over one `channels × height × width` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_extent(
    input: usize,
    kernel: usize,
    opts: &Conv2dOptions,
    axis: &str,
) -> Result<(usize, usize)> {
    let effective = (kernel - 1) * opts.dilation + 1;
    match opts.padding {
        Padding::Valid => {
            if effective > input {
                return Err(Error::dim(format!(
                    "effective kernel {axis} {effective} exceeds input {axis} {input}"
                )));
            }
            Ok(((input - effective) / opts.stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(opts.stride);
            let total = ((out - 1) * opts.stride + effective).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

impl Geometry {
    pub fn resolve(
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        opts: &Conv2dOptions,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 {
            return Err(Error::param("kernel extents must be at least 1"));
        }
        if opts.dilation == 0 {
            return Err(Error::param("dilation must be at least 1"));
        }
        if opts.stride == 0 {
            return Err(Error::param("stride must be positive"));
        }
        let (out_h, pad_top) = out_extent(height, kernel_h, opts, "height")?;
        let (out_w, pad_left) = out_extent(width, kernel_w, opts, "width")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::dim("convolution produces an empty output"));
        }
        Ok(Geometry {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride: opts.stride,
            dilation: opts.dilation,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// A 1×1 unit-stride window: the column matrix is the image itself.
    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1
            && self.kernel_w == 1
            && self.stride == 1
            && self.pad_top == 0
            && self.pad_left == 0
            && self.out_h == self.height
            && self.out_w == self.width
    }

    /// Range of output columns whose input column `ox*stride + offset` is in bounds.
    fn valid_span(&self, offset: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let w = self.width as isize;
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        let hi = if w - 1 - offset < 0 {
            0
        } else {
            ((w - 1 - offset) / s + 1).min(self.out_w as isize)
        };
        let lo = lo.min(self.out_w as isize);
        (lo as usize, hi.max(lo) as usize)
    }

    fn row_offsets(&self, ki: usize, kj: usize) -> (isize, isize) {
        (
            (ki * self.dilation) as isize - self.pad_top as isize,
            (kj * self.dilation) as isize - self.pad_left as isize,
        )
    }
}

/// Lowers one image into its `(C·kh·kw) × (out_h·out_w)` column matrix.
pub fn im2col<T: Real>(image: &[T], g: &Geometry, cols: &mut [T]) {
    let n = g.col_cols();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let src_plane = &image[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (dy, dx) = g.row_offsets(ki, kj);
                let (lo, hi) = g.valid_span(dx);
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = (oy * g.stride) as isize + dy;
                    if iy < 0 || iy >= g.height as isize || lo >= hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src_plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = (lo as isize + dx) as usize;
                        out_row[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                    } else {
                        for (ox, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src_row[(((ox + lo) * g.stride) as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a column matrix back onto an image.
pub fn col2im<T: Real>(cols: &[T], g: &Geometry, image: &mut [T]) {
    let n = g.col_cols();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let dst_plane = &mut image[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * n..(row + 1) * n];
                let (dy, dx) = g.row_offsets(ki, kj);
                let (lo, hi) = g.valid_span(dx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride) as isize + dy;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let in_row =
                        &mut dst_plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let col_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in lo..hi {
                        let ix = (ox * g.stride) as isize + dx;
                        in_row[ix as usize] = in_row[ix as usize] + col_row[ox];
                    }
                }
            }
        }
    }
}

fn with_cols<T: Real, R>(image: &[T], g: &Geometry, f: impl FnOnce(&[T]) -> R) -> R {
    if g.is_pointwise() {
        f(image)
    } else {
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        im2col(image, g, &mut cols);
        f(&cols)
    }
}

fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            *a = *a + p;
        }
    }
    acc
}

fn bias_grad<T: Real>(grad_out: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (b * channels + c) * plane;
            *acc = *acc + grad_out[start..start + plane].iter().copied().sum::<T>();
        }
    }
    db
}

/// Checks operand shapes of a forward convolution and resolves its geometry.
pub fn conv2d_geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: &Conv2dOptions,
) -> Result<Geometry> {
    let [_, cin, h, w] = input.dims4()?;
    let [cout, wcin, kh, kw] = weight.dims4()?;
    if cin != wcin {
        return Err(Error::dim(format!(
            "input has {cin} channels but weight expects {wcin}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {cout} output channels",
                b.shape()
            )));
        }
    }
    Geometry::resolve(cin, h, w, kh, kw, opts)
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &Geometry,
) -> Tensor<T> {
    let batch = input.shape()[0];
    let cout = weight.shape()[0];
    let k = g.col_rows();
    let n = g.col_cols();
    let mut out = vec![T::zero(); batch * cout * n];
    out.par_chunks_mut(cout * n)
        .zip(input.data().par_chunks(g.image_len()))
        .for_each(|(y, x)| {
            with_cols(x, g, |cols| {
                T::gemm(cout, k, n, weight.data(), false, cols, false, y, false)
            });
            if let Some(b) = bias {
                for (c, plane) in y.chunks_mut(n).enumerate() {
                    let bc = b.data()[c];
                    plane.iter_mut().for_each(|v| *v = *v + bc);
                }
            }
        });
    Tensor::new(vec![batch, cout, g.out_h, g.out_w], out).expect("conv output shape")
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    g: &Geometry,
    need: [bool; 3],
) -> ConvGrads<T> {
    let batch = input.shape()[0];
    let cout = weight.shape()[0];
    let k = g.col_rows();
    let n = g.col_cols();
    let [need_x, need_w, need_b] = need;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = input
        .data()
        .par_chunks(g.image_len())
        .zip(grad_out.par_chunks(cout * n))
        .map(|(x, dy)| {
            let dw = need_w.then(|| {
                with_cols(x, g, |cols| {
                    let mut dw = vec![T::zero(); cout * k];
                    T::gemm(cout, n, k, dy, false, cols, true, &mut dw, false);
                    dw
                })
            });
            let dx = need_x.then(|| {
                let mut dcols = vec![T::zero(); k * n];
                T::gemm(k, cout, n, weight.data(), true, dy, false, &mut dcols, false);
                if g.is_pointwise() {
                    dcols
                } else {
                    let mut dx = vec![T::zero(); g.image_len()];
                    col2im(&dcols, g, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let (dxs, dws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    ConvGrads {
        input: need_x.then(|| dxs.into_iter().flatten().flatten().collect()),
        weight: need_w.then(|| sum_in_order(dws.into_iter().flatten().collect(), cout * k)),
        bias: need_b.then(|| bias_grad(grad_out, batch, cout, n)),
    }
}

/// Geometry of a transposed convolution, expressed as the forward convolution
/// it is the adjoint of: the "image" is the transposed output and the
/// "columns" index the transposed input.
pub fn conv_transpose2d_geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Geometry> {
    if stride == 0 {
        return Err(Error::param("transposed convolution stride must be positive"));
    }
    let [_, cin, h, w] = input.dims4()?;
    let [wcin, cout, kh, kw] = weight.dims4()?;
    if cin != wcin {
        return Err(Error::dim(format!(
            "input has {cin} channels but transposed weight expects {wcin}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {cout} output channels",
                b.shape()
            )));
        }
    }
    Ok(Geometry {
        channels: cout,
        height: (h - 1) * stride + kh,
        width: (w - 1) * stride + kw,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        dilation: 1,
        pad_top: 0,
        pad_left: 0,
        out_h: h,
        out_w: w,
    })
}

pub fn conv_transpose2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &Geometry,
) -> Tensor<T> {
    let batch = input.shape()[0];
    let cin = input.shape()[1];
    let rows = g.col_rows();
    let n = g.col_cols();
    let plane = g.height * g.width;
    let mut out = vec![T::zero(); batch * g.image_len()];
    out.par_chunks_mut(g.image_len())
        .zip(input.data().par_chunks(cin * n))
        .for_each(|(y, x)| {
            let mut cols = vec![T::zero(); rows * n];
            T::gemm(rows, cin, n, weight.data(), true, x, false, &mut cols, false);
            col2im(&cols, g, y);
            if let Some(b) = bias {
                for (c, p) in y.chunks_mut(plane).enumerate() {
                    let bc = b.data()[c];
                    p.iter_mut().for_each(|v| *v = *v + bc);
                }
            }
        });
    Tensor::new(vec![batch, g.channels, g.height, g.width], out).expect("transposed output shape")
}

pub fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    g: &Geometry,
    need: [bool; 3],
) -> ConvGrads<T> {
    let batch = input.shape()[0];
    let cin = input.shape()[1];
    let rows = g.col_rows();
    let n = g.col_cols();
    let [need_x, need_w, need_b] = need;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = input
        .data()
        .par_chunks(cin * n)
        .zip(grad_out.par_chunks(g.image_len()))
        .map(|(x, dy)| {
            let mut dcols = vec![T::zero(); rows * n];
            im2col(dy, g, &mut dcols);
            let dx = need_x.then(|| {
                let mut dx = vec![T::zero(); cin * n];
                T::gemm(cin, rows, n, weight.data(), false, &dcols, false, &mut dx, false);
                dx
            });
            let dw = need_w.then(|| {
                let mut dw = vec![T::zero(); cin * rows];
                T::gemm(cin, n, rows, x, false, &dcols, true, &mut dw, false);
                dw
            });
            (dx, dw)
        })
        .collect();

    let (dxs, dws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    ConvGrads {
        input: need_x.then(|| dxs.into_iter().flatten().flatten().collect()),
        weight: need_w.then(|| sum_in_order(dws.into_iter().flatten().collect(), cin * rows)),
        bias: need_b.then(|| bias_grad(grad_out, batch, g.channels, g.height * g.width)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation with holes.
    fn naive_conv(
        x: &[f64],
        (c, h, w): (usize, usize, usize),
        wt: &[f64],
        (co, kh, kw): (usize, usize, usize),
        g: &Geometry,
    ) -> Vec<f64> {
        let mut out = vec![0.0; co * g.out_h * g.out_w];
        for o in 0..co {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * g.stride + ki * g.dilation) as isize
                                    - g.pad_top as isize;
                                let ix = (ox * g.stride + kj * g.dilation) as isize
                                    - g.pad_left as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[(ci * h + iy as usize) * w + ix as usize]
                                        * wt[((o * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                    }
                    out[(o * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn lowering_matches_nested_loops_across_geometries() {
        let shapes = [
            (2, 7, 9, 3, 3, 3, Conv2dOptions::dilated(2)),
            (1, 9, 9, 1, 3, 3, Conv2dOptions::dilated(4)),
            (3, 8, 6, 2, 3, 3, Conv2dOptions { stride: 2, dilation: 1, padding: Padding::Same }),
            (2, 8, 8, 3, 2, 2, Conv2dOptions::valid(2)),
            (2, 5, 5, 4, 1, 1, Conv2dOptions::same()),
            (1, 6, 7, 2, 3, 2, Conv2dOptions::valid(1)),
        ];
        for (c, h, w, co, kh, kw, opts) in shapes {
            let x = Tensor::<f64>::from_fn(vec![1, c, h, w], |i| ((i * 37 % 11) as f64) - 5.0);
            let wt = Tensor::<f64>::from_fn(vec![co, c, kh, kw], |i| ((i * 7 % 5) as f64) * 0.5 - 1.0);
            let g = conv2d_geometry(&x, &wt, None, &opts).unwrap();
            let fast = conv2d_forward(&x, &wt, None, &g);
            let slow = naive_conv(x.data(), (c, h, w), wt.data(), (co, kh, kw), &g);
            assert_eq!(fast.data(), &slow[..], "{opts:?}");
        }
    }

    #[test]
    fn same_padding_preserves_extent_for_all_bottleneck_rates() {
        for d in [1, 2, 4, 8] {
            for size in [4, 16, 17, 32] {
                let g = Geometry::resolve(1, size, size, 3, 3, &Conv2dOptions::dilated(d)).unwrap();
                assert_eq!((g.out_h, g.out_w), (size, size));
            }
        }
    }

    #[test]
    fn valid_window_larger_than_input_is_rejected() {
        let err = Geometry::resolve(1, 4, 4, 3, 3, &Conv2dOptions {
            stride: 1,
            dilation: 2,
            padding: Padding::Valid,
        });
        assert!(matches!(err, Err(Error::Dimension(_))));
    }
}
