//! Non-learned reconstructions: zero-filled and apodized-ACS inverse
//! transforms, parallel-imaging fill, homodyne partial Fourier and RSOS
//! combination, assembled into the reference / CR-VR / CR-ZReplace paths.
//!
//! Per conventional bin the order is fixed: mask the acquired samples, PI
//! fill, homodyne per coil, coil RSOS, then optional k-space zero-padding to
//! the output matrix.

mod grappa;
mod homodyne;

pub use grappa::{pi_interpolate, KernelGeometry, PiSettings};
pub use homodyne::homodyne_recon;

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{partial_fourier_rows, Mask, SamplingError, SamplingPlan, Scheme};
use crate::tensor::{
    center_index, crop_center, fft2_centered, ifft2_centered, read_container, write_container,
    zero_pad_center, ComplexImage, ContainerError, Domain, Dtype, MultiSpectralStack, Payload,
    RealImage, StackMetadata, TensorError,
};

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("ACS region too small: {0}")]
    AcsTooSmall(String),
    #[error("homodyne needs a non-zero partial Fourier overscan")]
    NoPhaseReference,
    #[error("homodyne needs a contiguous low-ky partial Fourier mask")]
    NotPartialFourier,
    #[error("method {0:?} is not a conventional reconstruction")]
    UnsupportedMethod(Method),
    #[error("linear solve failed: {0}")]
    Linalg(String),
    #[error("bad reconstruction file: {0}")]
    File(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Reference,
    CrVr,
    CrZreplace,
    DlVr,
    DlZreplace,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Reference,
        Method::CrVr,
        Method::CrZreplace,
        Method::DlVr,
        Method::DlZreplace,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Reference => "REFERENCE",
            Method::CrVr => "CR_VR",
            Method::CrZreplace => "CR_ZREPLACE",
            Method::DlVr => "DL_VR",
            Method::DlZreplace => "DL_ZREPLACE",
        }
    }

    pub fn from_label(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconOptions {
    /// Gaussian apodization sigma as a fraction of each ACS dimension.
    pub apod_sigma_fraction: f64,
    pub kernel: KernelGeometry,
    pub lambda: f64,
    /// Output matrix; `None` keeps the acquisition matrix.
    pub output_dims: Option<[usize; 2]>,
}

impl Default for ReconOptions {
    fn default() -> Self {
        Self {
            apod_sigma_fraction: 0.25,
            kernel: KernelGeometry::default(),
            lambda: 1e-4,
            output_dims: None,
        }
    }
}

/// Coil-combined magnitude images for every bin.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconOutput {
    pub method: Method,
    pub bin_centers_khz: Vec<f64>,
    pub bins: Vec<RealImage>,
    pub provenance: String,
}

impl ReconOutput {
    pub fn dims(&self) -> (usize, usize) {
        self.bins[0].dims()
    }

    /// Bin-combined composite image.
    pub fn combined(&self) -> RealImage {
        rsos_bins(&self.bins)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReconError> {
        let (rows, cols) = self.dims();
        let mut extra = serde_json::Map::new();
        extra.insert("method".into(), self.method.label().into());
        let meta = StackMetadata {
            n_bins: self.bins.len(),
            n_coils: 1,
            rows,
            cols,
            domain: Domain::Image,
            bin_centers_khz: self.bin_centers_khz.clone(),
            provenance: self.provenance.clone(),
            dtype: Dtype::Float32,
            extra,
        };
        let payload = Payload::Real(self.bins.iter().flat_map(|b| b.data().to_vec()).collect());
        let mut bytes = Vec::new();
        write_container(&mut bytes, &meta, &payload)?;
        fs::write(path, bytes).map_err(ContainerError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReconError> {
        let bytes = fs::read(path).map_err(ContainerError::from)?;
        let (meta, payload) = read_container(&bytes)?;
        let Payload::Real(values) = payload else {
            return Err(ReconError::File("payload is not real-valued".into()));
        };
        let method = meta
            .extra
            .get("method")
            .and_then(|v| v.as_str())
            .and_then(Method::from_label)
            .ok_or_else(|| ReconError::File("missing or unknown method label".into()))?;
        let plane = meta.rows * meta.cols;
        let bins = values
            .chunks(plane)
            .map(|c| RealImage::from_vec(meta.rows, meta.cols, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            method,
            bin_centers_khz: meta.bin_centers_khz,
            bins,
            provenance: meta.provenance,
        })
    }
}

/// Zero the unsampled entries and inverse transform.
pub fn zero_fill_recon(ksp: &ComplexImage, mask: &Mask) -> Result<ComplexImage, ReconError> {
    Ok(ifft2_centered(&apply_mask(ksp, mask)?)?)
}

pub fn apply_mask(ksp: &ComplexImage, mask: &Mask) -> Result<ComplexImage, ReconError> {
    if ksp.dims() != mask.dims() {
        return Err(ReconError::DimMismatch(format!(
            "k-space {:?} vs mask {:?}",
            ksp.dims(),
            mask.dims()
        )));
    }
    let mut out = ksp.clone();
    for (v, &s) in out.data_mut().iter_mut().zip(mask.data()) {
        if !s {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// Separable Gaussian window over an `n`-sample axis, 1 at the DC index.
pub fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = center_index(n) as f64;
    (0..n)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Low-resolution image from the Gaussian-apodized central ACS block.
pub fn apodized_acs_recon(
    ksp: &ComplexImage,
    acs: [usize; 2],
    sigma_fraction: f64,
) -> Result<ComplexImage, ReconError> {
    let (rows, cols) = ksp.dims();
    let mut block = crop_center(ksp, acs[0], acs[1])?;
    let wy = gaussian_window(acs[0], sigma_fraction * acs[0] as f64);
    let wz = gaussian_window(acs[1], sigma_fraction * acs[1] as f64);
    for r in 0..acs[0] {
        for c in 0..acs[1] {
            let v = block.get(r, c) * (wy[r] * wz[c]);
            block.set(r, c, v);
        }
    }
    Ok(ifft2_centered(&zero_pad_center(&block, rows, cols)?)?)
}

pub fn rsos_coils(coils: &[ComplexImage]) -> Result<RealImage, ReconError> {
    let Some(first) = coils.first() else {
        return Err(ReconError::DimMismatch("no coil images".into()));
    };
    let (rows, cols) = first.dims();
    let mut acc = vec![0.0; rows * cols];
    for coil in coils {
        if coil.dims() != (rows, cols) {
            return Err(ReconError::DimMismatch("coil dims differ".into()));
        }
        for (a, z) in acc.iter_mut().zip(coil.data()) {
            *a += z.norm_sqr();
        }
    }
    Ok(RealImage::from_vec(rows, cols, acc.into_iter().map(f64::sqrt).collect())?)
}

/// RSOS over real images (coil-level homodyne output or bin images).
pub fn rsos_real(images: &[RealImage]) -> RealImage {
    let (rows, cols) = images[0].dims();
    let mut acc = vec![0.0; rows * cols];
    for im in images {
        assert_eq!(im.dims(), (rows, cols), "image dims differ");
        for (a, v) in acc.iter_mut().zip(im.data()) {
            *a += v * v;
        }
    }
    RealImage::from_vec(rows, cols, acc.into_iter().map(f64::sqrt).collect()).expect("shape")
}

/// Square-root sum of squares across spectral bins.
pub fn rsos_bins(bins: &[RealImage]) -> RealImage {
    rsos_real(bins)
}

/// Interpolate a magnitude image onto a larger matrix by k-space zero-filling.
pub fn upsample_magnitude(img: &RealImage, dims: [usize; 2]) -> Result<RealImage, ReconError> {
    if img.dims() == (dims[0], dims[1]) {
        return Ok(img.clone());
    }
    let k = fft2_centered(&ComplexImage::from_real(img, Domain::Image))?;
    let padded = zero_pad_center(&k, dims[0], dims[1])?;
    let scale = ((dims[0] * dims[1]) as f64 / (img.rows() * img.cols()) as f64).sqrt();
    Ok(ifft2_centered(&padded)?.magnitude().map(|v| v * scale))
}

/// PI fill then homodyne per coil, then coil RSOS.
fn conventional_bin(
    coils: &[ComplexImage],
    mask: &Mask,
    plan: &SamplingPlan,
    opts: &ReconOptions,
) -> Result<RealImage, ReconError> {
    let params = &plan.params;
    let masked = coils
        .iter()
        .map(|k| apply_mask(k, mask))
        .collect::<Result<Vec<_>, _>>()?;
    let filled = pi_interpolate(
        &masked,
        mask,
        &PiSettings {
            accel: params.accel,
            acs: params.acs,
            kernel: opts.kernel,
            lambda: opts.lambda,
        },
    )?;
    let rows = partial_fourier_rows(params.matrix[0], params.pf_overscan)?;
    let per_coil = filled
        .iter()
        .map(|k| homodyne_recon(k, &rows))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rsos_real(&per_coil))
}

fn acs_bin(
    coils: &[ComplexImage],
    plan: &SamplingPlan,
    opts: &ReconOptions,
) -> Result<RealImage, ReconError> {
    let images = coils
        .iter()
        .map(|k| apodized_acs_recon(k, plan.params.acs, opts.apod_sigma_fraction))
        .collect::<Result<Vec<_>, _>>()?;
    rsos_coils(&images)
}

/// Conventional reconstruction of a k-space stack under `plan`.
pub fn reconstruct(
    plan: &SamplingPlan,
    ksp: &MultiSpectralStack,
    method: Method,
    opts: &ReconOptions,
) -> Result<ReconOutput, ReconError> {
    if !matches!(method, Method::Reference | Method::CrVr | Method::CrZreplace) {
        return Err(ReconError::UnsupportedMethod(method));
    }
    if ksp.domain() != Domain::Kspace {
        return Err(TensorError::WrongDomain {
            expected: Domain::Kspace,
            actual: ksp.domain(),
        }
        .into());
    }
    let [ky, kz] = plan.params.matrix;
    if (ksp.rows(), ksp.cols()) != (ky, kz) || ksp.n_bins() != plan.n_bins() {
        return Err(ReconError::DimMismatch(format!(
            "plan {} bins {ky}x{kz}, stack {} bins {}x{}",
            plan.n_bins(),
            ksp.n_bins(),
            ksp.rows(),
            ksp.cols()
        )));
    }
    let full = plan.params.full_scheme_mask()?;
    let out_dims = opts.output_dims.unwrap_or([ky, kz]);

    let bins = (0..plan.n_bins())
        .into_par_iter()
        .map(|b| {
            let coils = ksp.bin(b);
            let img = match (method, plan.schemes[b]) {
                (Method::Reference, _) => conventional_bin(coils, &full, plan, opts)?,
                (_, Scheme::FullScheme) => conventional_bin(coils, &plan.masks[b], plan, opts)?,
                (Method::CrVr, Scheme::AcsOnly) => acs_bin(coils, plan, opts)?,
                _ => RealImage::zeros(ky, kz),
            };
            upsample_magnitude(&img, out_dims)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ReconOutput {
        method,
        bin_centers_khz: ksp.bin_centers_khz().to_vec(),
        bins,
        provenance: format!(
            "{} from {} bins, acs {}x{}, accel {}x{}, pf overscan {}",
            method.label(),
            plan.n_bins(),
            plan.params.acs[0],
            plan.params.acs[1],
            plan.params.accel[0],
            plan.params.accel[1],
            plan.params.pf_overscan
        ),
    })
}

/// REFERENCE, CR_VR and CR_ZREPLACE of one stack, computing the shared
/// fully sampled bins once.
pub fn reconstruct_conventional(
    plan: &SamplingPlan,
    ksp: &MultiSpectralStack,
    opts: &ReconOptions,
) -> Result<[ReconOutput; 3], ReconError> {
    let reference = reconstruct(plan, ksp, Method::Reference, opts)?;
    let [ky, kz] = plan.params.matrix;
    let out_dims = opts.output_dims.unwrap_or([ky, kz]);
    let acs_bins = plan
        .bins_with(Scheme::AcsOnly)
        .into_par_iter()
        .map(|b| Ok((b, upsample_magnitude(&acs_bin(ksp.bin(b), plan, opts)?, out_dims)?)))
        .collect::<Result<Vec<_>, ReconError>>()?;
    let mut cr_vr = reference.clone();
    let mut cr_zreplace = reference.clone();
    for (b, img) in acs_bins {
        cr_vr.bins[b] = img;
        cr_zreplace.bins[b] = RealImage::zeros(out_dims[0], out_dims[1]);
    }
    let relabel = |mut o: ReconOutput, m: Method| {
        o.provenance = o.provenance.replacen(Method::Reference.label(), m.label(), 1);
        o.method = m;
        o
    };
    Ok([
        reference,
        relabel(cr_vr, Method::CrVr),
        relabel(cr_zreplace, Method::CrZreplace),
    ])
}
