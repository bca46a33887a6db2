//! Complex image model shared by every stage of the toolkit.
//!
//! Images are stored row-major. Centering convention used everywhere: for an
//! axis of length `n` the DC sample sits at index `n / 2` (integer division),
//! and padding/cropping put any odd leftover row or column on the high-index
//! side.

mod container;
mod fft;

pub use container::{
    load_stack, read_container, save_stack, write_container, ContainerError, Dtype, Payload,
    StackMetadata, CONTAINER_VERSION, STACK_MAGIC,
};
pub use fft::{fft2_centered, ifft2_centered};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("expected {expected:?}-domain data, got {actual:?}")]
    WrongDomain { expected: Domain, actual: Domain },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("target {target_rows}x{target_cols} incompatible with input {rows}x{cols}: {reason}")]
    BadTargetSize {
        rows: usize,
        cols: usize,
        target_rows: usize,
        target_cols: usize,
        reason: &'static str,
    },
    #[error("invalid stack: {0}")]
    InvalidStack(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    Kspace,
}

impl Domain {
    pub fn flipped(self) -> Domain {
        match self {
            Domain::Image => Domain::Kspace,
            Domain::Kspace => Domain::Image,
        }
    }
}

/// Index of the DC sample for an axis of length `n`.
#[inline]
pub fn center_index(n: usize) -> usize {
    n / 2
}

/// Offset at which an `inner`-long axis sits inside an `outer`-long one so
/// that both DC samples coincide.
#[inline]
pub fn center_offset(outer: usize, inner: usize) -> usize {
    center_index(outer) - center_index(inner)
}

/// A 2D complex image or k-space plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
    domain: Domain,
}

impl ComplexImage {
    pub fn zeros(rows: usize, cols: usize, domain: Domain) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
            domain,
        }
    }

    pub fn from_vec(
        rows: usize,
        cols: usize,
        data: Vec<Complex64>,
        domain: Domain,
    ) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            domain,
        })
    }

    /// Real image embedded as a complex image with zero imaginary part.
    pub fn from_real(img: &RealImage, domain: Domain) -> Self {
        Self {
            rows: img.rows(),
            cols: img.cols(),
            data: img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            domain,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn magnitude(&self) -> RealImage {
        RealImage {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * factor).collect(),
            domain: self.domain,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub(crate) fn check_finite(&self) -> Result<(), TensorError> {
        match self
            .data
            .iter()
            .position(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            Some(index) => Err(TensorError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub(crate) fn expect_domain(&self, expected: Domain) -> Result<(), TensorError> {
        if self.domain != expected {
            return Err(TensorError::WrongDomain {
                expected,
                actual: self.domain,
            });
        }
        Ok(())
    }
}

/// Embed `img` centered in a larger zero plane (k-space interpolation).
pub fn zero_pad_center(
    img: &ComplexImage,
    out_rows: usize,
    out_cols: usize,
) -> Result<ComplexImage, TensorError> {
    img.expect_domain(Domain::Kspace)?;
    if out_rows < img.rows || out_cols < img.cols {
        return Err(TensorError::BadTargetSize {
            rows: img.rows,
            cols: img.cols,
            target_rows: out_rows,
            target_cols: out_cols,
            reason: "padding target smaller than input",
        });
    }
    let r0 = center_offset(out_rows, img.rows);
    let c0 = center_offset(out_cols, img.cols);
    let mut out = ComplexImage::zeros(out_rows, out_cols, Domain::Kspace);
    for r in 0..img.rows {
        let src = &img.data[r * img.cols..(r + 1) * img.cols];
        let start = (r + r0) * out_cols + c0;
        out.data[start..start + img.cols].copy_from_slice(src);
    }
    Ok(out)
}

/// Extract the centered `rows` x `cols` block; inverse of [`zero_pad_center`].
pub fn crop_center(
    ksp: &ComplexImage,
    rows: usize,
    cols: usize,
) -> Result<ComplexImage, TensorError> {
    if rows > ksp.rows || cols > ksp.cols {
        return Err(TensorError::BadTargetSize {
            rows: ksp.rows,
            cols: ksp.cols,
            target_rows: rows,
            target_cols: cols,
            reason: "crop target larger than input",
        });
    }
    let r0 = center_offset(ksp.rows, rows);
    let c0 = center_offset(ksp.cols, cols);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let start = (r + r0) * ksp.cols + c0;
        data.extend_from_slice(&ksp.data[start..start + cols]);
    }
    Ok(ComplexImage {
        rows,
        cols,
        data,
        domain: ksp.domain,
    })
}

/// Real-valued image, used for magnitude/coil-combined outputs and maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Multi-coil images for a ladder of spectral bins, indexed `[bin][coil]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiSpectralStack {
    n_bins: usize,
    n_coils: usize,
    bin_centers_khz: Vec<f64>,
    images: Vec<ComplexImage>,
}

impl MultiSpectralStack {
    /// `images` is flattened bin-major: `images[bin * n_coils + coil]`.
    pub fn new(
        bin_centers_khz: Vec<f64>,
        n_coils: usize,
        images: Vec<ComplexImage>,
    ) -> Result<Self, TensorError> {
        let n_bins = bin_centers_khz.len();
        if n_bins == 0 || n_coils == 0 {
            return Err(TensorError::InvalidStack(
                "stack needs at least one bin and one coil".into(),
            ));
        }
        if images.len() != n_bins * n_coils {
            return Err(TensorError::InvalidStack(format!(
                "expected {} images, got {}",
                n_bins * n_coils,
                images.len()
            )));
        }
        check_uniform_spacing(&bin_centers_khz)?;
        let (rows, cols, domain) = (images[0].rows, images[0].cols, images[0].domain);
        if images
            .iter()
            .any(|im| im.rows != rows || im.cols != cols || im.domain != domain)
        {
            return Err(TensorError::InvalidStack(
                "images differ in dims or domain".into(),
            ));
        }
        Ok(Self {
            n_bins,
            n_coils,
            bin_centers_khz,
            images,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn rows(&self) -> usize {
        self.images[0].rows
    }

    pub fn cols(&self) -> usize {
        self.images[0].cols
    }

    pub fn domain(&self) -> Domain {
        self.images[0].domain
    }

    pub fn bin_centers_khz(&self) -> &[f64] {
        &self.bin_centers_khz
    }

    /// Uniform bin spacing in kHz, `None` for a single-bin stack.
    pub fn bin_spacing_khz(&self) -> Option<f64> {
        (self.n_bins > 1).then(|| self.bin_centers_khz[1] - self.bin_centers_khz[0])
    }

    pub fn image(&self, bin: usize, coil: usize) -> &ComplexImage {
        &self.images[bin * self.n_coils + coil]
    }

    pub fn bin(&self, bin: usize) -> &[ComplexImage] {
        &self.images[bin * self.n_coils..(bin + 1) * self.n_coils]
    }

    pub fn images(&self) -> &[ComplexImage] {
        &self.images
    }

    pub fn into_images(self) -> Vec<ComplexImage> {
        self.images
    }

    /// Apply `f` to every image, keeping the bin layout.
    pub fn try_map<E>(
        &self,
        f: impl Fn(&ComplexImage) -> Result<ComplexImage, E>,
    ) -> Result<Self, E>
    where
        E: From<TensorError>,
    {
        let images = self.images.iter().map(f).collect::<Result<Vec<_>, E>>()?;
        Ok(Self::new(self.bin_centers_khz.clone(), self.n_coils, images)?)
    }
}

/// Evenly spaced bin centers symmetric about 0 kHz.
pub fn symmetric_bin_centers(n_bins: usize, spacing_khz: f64) -> Vec<f64> {
    let mid = (n_bins as f64 - 1.0) / 2.0;
    (0..n_bins)
        .map(|b| (b as f64 - mid) * spacing_khz)
        .collect()
}

fn check_uniform_spacing(centers: &[f64]) -> Result<(), TensorError> {
    if centers.iter().any(|c| !c.is_finite()) {
        return Err(TensorError::InvalidStack("non-finite bin center".into()));
    }
    if centers.len() < 2 {
        return Ok(());
    }
    let step = centers[1] - centers[0];
    if step <= 0.0 {
        return Err(TensorError::InvalidStack(
            "bin centers must be strictly increasing".into(),
        ));
    }
    let tol = 1e-9 * step.abs().max(1.0);
    for w in centers.windows(2) {
        if ((w[1] - w[0]) - step).abs() > tol {
            return Err(TensorError::InvalidStack(
                "bin centers must be uniformly spaced".into(),
            ));
        }
    }
    Ok(())
}
