//! Dense 64-bit building blocks: channel-major volumes, 3x3/1x1 convolution
//! via im2col + GEMM, nearest-neighbour upsampling, channel concatenation and
//! the rectifier, each with its backward pass.

use serde::{Deserialize, Serialize};

use crate::tensor::RealImage;

/// Multi-channel real image stored `[channel][row][col]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    /// Stack images as channels; all must share dims.
    pub fn from_images(images: &[RealImage]) -> Self {
        let (rows, cols) = images[0].dims();
        let mut data = Vec::with_capacity(images.len() * rows * cols);
        for im in images {
            assert_eq!(im.dims(), (rows, cols), "channel dims differ");
            data.extend_from_slice(im.data());
        }
        Self {
            channels: images.len(),
            rows,
            cols,
            data,
        }
    }

    pub fn to_images(&self) -> Vec<RealImage> {
        self.data
            .chunks(self.plane())
            .map(|c| RealImage::from_vec(self.rows, self.cols, c.to_vec()).expect("plane size"))
            .collect()
    }

    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.rows, self.cols]
    }
}

/// `C = A·B (+ C if accumulate)`, with A `m x k` and B `k x n` given in
/// row-major storage, optionally transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above cover every index reachable
    // through the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convolution geometry with "same" zero padding (`k / 2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn n_weights(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.c_out
    }

    pub fn out_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        let pad = self.k / 2;
        (
            (rows + 2 * pad - self.k) / self.stride + 1,
            (cols + 2 * pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Volume) -> Vec<f64> {
        let (oh, ow) = self.out_dims(x.rows, x.cols);
        let pad = (self.k / 2) as isize;
        let kk = self.k * self.k;
        let mut cols = vec![0.0; self.c_in * kk * oh * ow];
        for ci in 0..self.c_in {
            let src = x.channel(ci);
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * kk + ky * self.k + kx) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= x.rows as isize {
                            continue;
                        }
                        let base = iy as usize * x.cols;
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < x.cols as isize {
                                *d = src[base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], rows: usize, width: usize) -> Volume {
        let (oh, ow) = self.out_dims(rows, width);
        let pad = (self.k / 2) as isize;
        let kk = self.k * self.k;
        let mut x = Volume::zeros(self.c_in, rows, width);
        for ci in 0..self.c_in {
            let dst = x.channel_mut(ci);
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * kk + ky * self.k + kx) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= rows as isize {
                            continue;
                        }
                        let base = iy as usize * width;
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < width as isize {
                                dst[base + ix as usize] += cols[row + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Saved state of one convolution for its backward pass.
pub(crate) struct ConvCache {
    cols: Vec<f64>,
    in_rows: usize,
    in_cols: usize,
    /// Rectifier mask of the output, when the layer is followed by ReLU.
    active: Option<Vec<bool>>,
}

/// `params` holds `c_out x (c_in k k)` weights followed by `c_out` biases.
pub(crate) fn conv_forward(spec: &ConvSpec, params: &[f64], x: &Volume, relu: bool) -> (Volume, ConvCache) {
    assert_eq!(x.channels, spec.c_in, "conv input channels");
    let (oh, ow) = spec.out_dims(x.rows, x.cols);
    let cols = spec.im2col(x);
    let (w, b) = params.split_at(spec.n_weights());
    let mut y = Volume::zeros(spec.c_out, oh, ow);
    for (co, &bias) in b.iter().enumerate() {
        y.channel_mut(co).fill(bias);
    }
    gemm(spec.c_out, spec.c_in * spec.k * spec.k, oh * ow, w, false, &cols, false, &mut y.data, true);
    let active = relu.then(|| {
        let mask: Vec<bool> = y.data.iter().map(|&v| v > 0.0).collect();
        for (v, &m) in y.data.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        mask
    });
    (
        y,
        ConvCache {
            cols,
            in_rows: x.rows,
            in_cols: x.cols,
            active,
        },
    )
}

/// Accumulates parameter gradients into `grad` and returns the input gradient
/// (skipped when `need_input_grad` is false).
pub(crate) fn conv_backward(
    spec: &ConvSpec,
    params: &[f64],
    cache: &ConvCache,
    mut dy: Volume,
    grad: &mut [f64],
    need_input_grad: bool,
) -> Option<Volume> {
    if let Some(mask) = &cache.active {
        for (g, &m) in dy.data.iter_mut().zip(mask) {
            if !m {
                *g = 0.0;
            }
        }
    }
    let ckk = spec.c_in * spec.k * spec.k;
    let npix = dy.plane();
    let (gw, gb) = grad.split_at_mut(spec.n_weights());
    gemm(spec.c_out, npix, ckk, &dy.data, false, &cache.cols, true, gw, true);
    for (co, g) in gb.iter_mut().enumerate() {
        *g += dy.channel(co).iter().sum::<f64>();
    }
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![0.0; ckk * npix];
    gemm(ckk, spec.c_out, npix, &params[..spec.n_weights()], true, &dy.data, false, &mut dcols, false);
    Some(spec.col2im(&dcols, cache.in_rows, cache.in_cols))
}

pub(crate) fn upsample2(x: &Volume) -> Volume {
    let mut y = Volume::zeros(x.channels, x.rows * 2, x.cols * 2);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = y.channel_mut(c);
        for r in 0..x.rows * 2 {
            for q in 0..x.cols * 2 {
                dst[r * x.cols * 2 + q] = src[(r / 2) * x.cols + q / 2];
            }
        }
    }
    y
}

pub(crate) fn upsample2_backward(dy: &Volume) -> Volume {
    let (rows, cols) = (dy.rows / 2, dy.cols / 2);
    let mut dx = Volume::zeros(dy.channels, rows, cols);
    for c in 0..dy.channels {
        let src = dy.channel(c);
        let dst = dx.channel_mut(c);
        for r in 0..dy.rows {
            for q in 0..dy.cols {
                dst[(r / 2) * cols + q / 2] += src[r * dy.cols + q];
            }
        }
    }
    dx
}

pub(crate) fn concat(a: &Volume, b: &Volume) -> Volume {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "concat dims");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Volume {
        channels: a.channels + b.channels,
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

pub(crate) fn split(v: Volume, first: usize) -> (Volume, Volume) {
    let at = first * v.plane();
    let mut data = v.data;
    let rest = data.split_off(at);
    (
        Volume {
            channels: first,
            rows: v.rows,
            cols: v.cols,
            data,
        },
        Volume {
            channels: v.channels - first,
            rows: v.rows,
            cols: v.cols,
            data: rest,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(c: usize, r: usize, w: usize, rng: &mut ChaCha8Rng) -> Volume {
        Volume {
            channels: c,
            rows: r,
            cols: w,
            data: (0..c * r * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Direct nested-loop convolution.
    fn conv_direct(spec: &ConvSpec, params: &[f64], x: &Volume) -> Volume {
        let (oh, ow) = spec.out_dims(x.rows, x.cols);
        let pad = (spec.k / 2) as isize;
        let mut y = Volume::zeros(spec.c_out, oh, ow);
        for co in 0..spec.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = params[spec.n_weights() + co];
                    for ci in 0..spec.c_in {
                        for ky in 0..spec.k {
                            for kx in 0..spec.k {
                                let iy = (oy * spec.stride + ky) as isize - pad;
                                let ix = (ox * spec.stride + kx) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= x.rows as isize || ix >= x.cols as isize {
                                    continue;
                                }
                                let w = params[((co * spec.c_in + ci) * spec.k + ky) * spec.k + kx];
                                acc += w * x.channel(ci)[iy as usize * x.cols + ix as usize];
                            }
                        }
                    }
                    y.channel_mut(co)[oy * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [
            ConvSpec { c_in: 3, c_out: 4, k: 3, stride: 1 },
            ConvSpec { c_in: 2, c_out: 5, k: 3, stride: 2 },
            ConvSpec { c_in: 4, c_out: 2, k: 1, stride: 1 },
        ] {
            let x = random_volume(spec.c_in, 8, 6, &mut rng);
            let p: Vec<f64> = (0..spec.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (y, _) = conv_forward(&spec, &p, &x, false);
            let d = conv_direct(&spec, &p, &x);
            assert_eq!(y.shape(), d.shape());
            for (a, b) in y.data.iter().zip(&d.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ConvSpec { c_in: 2, c_out: 1, k: 3, stride: 2 };
        let x = random_volume(2, 8, 8, &mut rng);
        let cols = spec.im2col(&x);
        let z: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = cols.iter().zip(&z).map(|(a, b)| a * b).sum();
        let back = spec.col2im(&z, 8, 8);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upsample_adjoint_and_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_volume(2, 3, 4, &mut rng);
        let z = random_volume(2, 6, 8, &mut rng);
        let lhs: f64 = upsample2(&x).data.iter().zip(&z.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&upsample2_backward(&z).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let a = random_volume(2, 3, 3, &mut rng);
        let b = random_volume(3, 3, 3, &mut rng);
        let (a2, b2) = split(concat(&a, &b), 2);
        assert_eq!((a2, b2), (a, b));
    }
}
