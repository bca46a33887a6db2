//! Synthetic anatomy with a metal-induced off-resonance field, spectral-bin
//! excitation and multi-coil k-space simulation.
//!
//! Pixel coordinates are `[row, col]` with pixel centers on integers. The
//! static field points along the row axis, so the dipole angle is measured
//! from that axis.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{
    center_index, fft2_centered, ComplexImage, Domain, MultiSpectralStack, RealImage,
    TensorError,
};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("shape '{0}' lies entirely outside the image")]
    ShapeOutOfBounds(String),
    #[error("edge segment {0} has an endpoint outside the image")]
    SegmentOutOfBounds(usize),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    #[serde(default)]
    pub angle_deg: f64,
    pub intensity: f64,
    #[serde(default)]
    pub label: String,
}

impl Ellipse {
    pub fn contains(&self, r: f64, c: f64) -> bool {
        let (s, co) = self.angle_deg.to_radians().sin_cos();
        let (dr, dc) = (r - self.center[0], c - self.center[1]);
        let u = dr * co + dc * s;
        let v = -dr * s + dc * co;
        (u / self.semi_axes[0]).powi(2) + (v / self.semi_axes[1]).powi(2) <= 1.0
    }

    fn outside(&self, rows: usize, cols: usize) -> bool {
        let reach = self.semi_axes[0].max(self.semi_axes[1]);
        self.center[0] + reach < -0.5
            || self.center[0] - reach > rows as f64 - 0.5
            || self.center[1] + reach < -0.5
            || self.center[1] - reach > cols as f64 - 0.5
    }
}

/// Circular metal implant producing a dipole-like field perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Implant {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude_khz: f64,
}

impl Implant {
    /// Unclamped field offset in kHz at displacement `(dr, dc)` from the
    /// implant center; zero inside the implant.
    pub fn dipole_offset_khz(&self, dr: f64, dc: f64) -> f64 {
        let r2 = dr * dr + dc * dc;
        if r2 < self.radius * self.radius {
            return 0.0;
        }
        let r = r2.sqrt();
        let cos2 = dr * dr / r2;
        self.amplitude_khz * self.radius.powi(3) * (3.0 * cos2 - 1.0) / (r2 * r)
    }

    pub fn contains(&self, r: f64, c: f64) -> bool {
        let (dr, dc) = (r - self.center[0], c - self.center[1]);
        dr * dr + dc * dc < self.radius * self.radius
    }
}

/// Straight line between two pixel coordinates crossing a tissue boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        ((self.p1[0] - self.p0[0]).powi(2) + (self.p1[1] - self.p0[1]).powi(2)).sqrt()
    }

    pub fn in_bounds(&self, rows: usize, cols: usize) -> bool {
        let ok = |p: [f64; 2]| {
            p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (rows - 1) as f64 && p[1] <= (cols - 1) as f64
        };
        ok(self.p0) && ok(self.p1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anatomy {
    Knee,
    Hip,
}

impl Anatomy {
    pub fn as_str(self) -> &'static str {
        match self {
            Anatomy::Knee => "knee",
            Anatomy::Hip => "hip",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    /// Painted in order; later shapes overwrite earlier ones.
    pub shapes: Vec<Ellipse>,
    pub implant: Implant,
    pub field_span_khz: f64,
    pub n_coils: usize,
    /// k-space noise std relative to the largest DC magnitude.
    pub noise_sigma: f64,
    #[serde(default)]
    pub edge_segments: Vec<LineSegment>,
    /// Relative amplitude of the smooth seeded intensity texture.
    #[serde(default = "default_texture")]
    pub texture: f64,
}

fn default_texture() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomTruth {
    pub proton_density: RealImage,
    pub off_resonance_khz: RealImage,
    pub coil_maps: Vec<ComplexImage>,
    pub edge_segments: Vec<LineSegment>,
}

const SUPERSAMPLE: usize = 3;

pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<PhantomTruth, PhantomError> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows == 0 || cols == 0 {
        return Err(PhantomError::InvalidSpec("empty image".into()));
    }
    if spec.n_coils == 0 {
        return Err(PhantomError::InvalidSpec("need at least one coil".into()));
    }
    if !(spec.field_span_khz > 0.0) || !(spec.implant.radius > 0.0) {
        return Err(PhantomError::InvalidSpec(
            "field span and implant radius must be positive".into(),
        ));
    }
    if spec.noise_sigma < 0.0 {
        return Err(PhantomError::InvalidSpec("negative noise level".into()));
    }
    for shape in &spec.shapes {
        if shape.outside(rows, cols) {
            return Err(PhantomError::ShapeOutOfBounds(shape.label.clone()));
        }
    }
    for (i, seg) in spec.edge_segments.iter().enumerate() {
        if !seg.in_bounds(rows, cols) {
            return Err(PhantomError::SegmentOutOfBounds(i));
        }
    }

    let texture = SmoothTexture::new(seed, rows, cols);
    let ss = SUPERSAMPLE as f64;
    let proton_density = RealImage::from_fn(rows, cols, |r, c| {
        let mut acc = 0.0;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let y = r as f64 + (i as f64 + 0.5) / ss - 0.5;
                let x = c as f64 + (j as f64 + 0.5) / ss - 0.5;
                if spec.implant.contains(y, x) {
                    continue;
                }
                let value = spec
                    .shapes
                    .iter()
                    .rev()
                    .find(|s| s.contains(y, x))
                    .map_or(0.0, |s| s.intensity);
                acc += value;
            }
        }
        let pd = acc / (ss * ss);
        if pd > 0.0 {
            (pd * (1.0 + spec.texture * texture.at(r, c))).clamp(0.0, 1.0)
        } else {
            0.0
        }
    });

    let off_resonance_khz = RealImage::from_fn(rows, cols, |r, c| {
        let dr = r as f64 - spec.implant.center[0];
        let dc = c as f64 - spec.implant.center[1];
        spec.implant
            .dipole_offset_khz(dr, dc)
            .clamp(-spec.field_span_khz, spec.field_span_khz)
    });

    Ok(PhantomTruth {
        proton_density,
        off_resonance_khz,
        coil_maps: coil_sensitivities(spec.n_coils, rows, cols),
        edge_segments: spec.edge_segments.clone(),
    })
}

/// Low-frequency cosine mixture in [-1, 1] driven by the seed.
struct SmoothTexture {
    terms: Vec<(f64, f64, f64, f64)>,
    rows: f64,
    cols: f64,
}

impl SmoothTexture {
    fn new(seed: u64, rows: usize, cols: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_0a11);
        let terms = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.1..0.25),
                )
            })
            .collect();
        Self {
            terms,
            rows: rows as f64,
            cols: cols as f64,
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        let (y, x) = (r as f64 / self.rows, c as f64 / self.cols);
        self.terms
            .iter()
            .map(|&(fy, fx, ph, a)| a * (2.0 * PI * (fy * y + fx * x) + ph).cos())
            .sum()
    }
}

/// Gaussian spectral excitation profile with unit peak and the given FWHM.
pub fn bin_profile(delta_f_khz: f64, fwhm_khz: f64) -> f64 {
    (-4.0 * LN_2 * delta_f_khz * delta_f_khz / (fwhm_khz * fwhm_khz)).exp()
}

/// Smooth coil maps placed around the image border and RSOS-normalized to 1.
pub fn coil_sensitivities(n_coils: usize, rows: usize, cols: usize) -> Vec<ComplexImage> {
    let (cr, cc) = (center_index(rows) as f64, center_index(cols) as f64);
    let size = rows.max(cols) as f64;
    let ring = 0.6 * size;
    let width = 0.55 * size;
    let raw: Vec<Vec<Complex64>> = (0..n_coils)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / n_coils as f64 + PI / 4.0;
            let (pr, pc) = (cr + ring * theta.sin(), cc + ring * theta.cos());
            let (a, b) = (0.6 * theta.cos(), 0.6 * theta.sin());
            let offset = PI * k as f64 / n_coils as f64;
            let mut map = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    let d2 = (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2);
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    let (y, x) = ((r as f64 - cr) / size, (c as f64 - cc) / size);
                    let phase = offset + a * y + b * x + 0.3 * x * y;
                    map.push(Complex64::from_polar(mag, phase));
                }
            }
            map
        })
        .collect();

    let mut maps: Vec<Vec<Complex64>> = raw.clone();
    for p in 0..rows * cols {
        let norm = raw.iter().map(|m| m[p].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m[p] /= norm;
        }
    }
    maps.into_iter()
        .map(|m| ComplexImage::from_vec(rows, cols, m, Domain::Image).expect("shape"))
        .collect()
}

/// Coil-resolved image-domain bin images: `coil * PD * profile(df - center)`.
pub fn simulate_bins(
    truth: &PhantomTruth,
    bin_centers_khz: &[f64],
    fwhm_khz: f64,
) -> Result<MultiSpectralStack, PhantomError> {
    let (rows, cols) = truth.proton_density.dims();
    let pd = truth.proton_density.data();
    let df = truth.off_resonance_khz.data();
    let mut images = Vec::with_capacity(bin_centers_khz.len() * truth.coil_maps.len());
    for &center in bin_centers_khz {
        let weighted: Vec<f64> = pd
            .iter()
            .zip(df)
            .map(|(&p, &f)| p * bin_profile(f - center, fwhm_khz))
            .collect();
        for coil in &truth.coil_maps {
            let data = coil
                .data()
                .iter()
                .zip(&weighted)
                .map(|(s, &w)| s * w)
                .collect();
            images.push(ComplexImage::from_vec(rows, cols, data, Domain::Image)?);
        }
    }
    Ok(MultiSpectralStack::new(
        bin_centers_khz.to_vec(),
        truth.coil_maps.len(),
        images,
    )?)
}

/// Transform every bin/coil image to k-space and add circular complex
/// Gaussian noise of std `noise_sigma * max|DC|`.
pub fn to_kspace(
    stack: &MultiSpectralStack,
    noise_sigma: f64,
    seed: u64,
) -> Result<MultiSpectralStack, PhantomError> {
    let clean = stack.try_map(|im| fft2_centered(im).map_err(PhantomError::from))?;
    if noise_sigma == 0.0 {
        return Ok(clean);
    }
    let (dr, dc) = (center_index(clean.rows()), center_index(clean.cols()));
    let max_dc = clean
        .images()
        .iter()
        .map(|k| k.get(dr, dc).norm())
        .fold(0.0, f64::max);
    let std = noise_sigma * max_dc / 2f64.sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = clean.into_images();
    for k in images.iter_mut() {
        for z in k.data_mut() {
            *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(MultiSpectralStack::new(
        stack.bin_centers_khz().to_vec(),
        stack.n_coils(),
        images,
    )?)
}

/// Parameters for randomized knee-like and hip-like phantoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAnatomy {
    pub rows: usize,
    pub cols: usize,
    pub n_coils: usize,
    pub noise_sigma: f64,
    pub field_span_khz: f64,
}

impl SyntheticAnatomy {
    /// Randomized phantom of the given anatomy; slice geometry jitters with `rng`.
    pub fn sample(&self, anatomy: Anatomy, rng: &mut impl Rng) -> PhantomSpec {
        match anatomy {
            Anatomy::Knee => self.knee(rng),
            Anatomy::Hip => self.hip(rng),
        }
    }

    fn jitter(rng: &mut impl Rng, amount: f64) -> f64 {
        rng.random_range(-amount..=amount)
    }

    fn knee(&self, rng: &mut impl Rng) -> PhantomSpec {
        let (h, w) = (self.rows as f64, self.cols as f64);
        let j = |rng: &mut _, a| Self::jitter(rng, a);
        let limb = Ellipse {
            center: [0.5 * h + j(rng, 0.02) * h, 0.5 * w + j(rng, 0.02) * w],
            semi_axes: [0.44 * h, (0.36 + j(rng, 0.03)) * w],
            angle_deg: j(rng, 4.0),
            intensity: 0.55 + j(rng, 0.05),
            label: "muscle".into(),
        };
        let fat = Ellipse {
            center: [0.32 * h + j(rng, 0.02) * h, 0.5 * w + j(rng, 0.03) * w],
            semi_axes: [(0.14 + j(rng, 0.02)) * h, (0.26 + j(rng, 0.02)) * w],
            angle_deg: j(rng, 6.0),
            intensity: 0.95,
            label: "prefemoral fat".into(),
        };
        let femur = Ellipse {
            center: [0.42 * h + j(rng, 0.02) * h, 0.5 * w + j(rng, 0.02) * w],
            semi_axes: [(0.12 + j(rng, 0.01)) * h, (0.16 + j(rng, 0.015)) * w],
            angle_deg: j(rng, 8.0),
            intensity: 0.32 + j(rng, 0.04),
            label: "femur".into(),
        };
        let tibia = Ellipse {
            center: [0.72 * h + j(rng, 0.02) * h, 0.5 * w + j(rng, 0.02) * w],
            semi_axes: [(0.1 + j(rng, 0.01)) * h, (0.15 + j(rng, 0.01)) * w],
            angle_deg: j(rng, 6.0),
            intensity: 0.38 + j(rng, 0.04),
            label: "tibia".into(),
        };
        let implant = Implant {
            center: [
                femur.center[0] + 0.55 * femur.semi_axes[0] + j(rng, 0.02) * h,
                femur.center[1] + j(rng, 0.06) * w,
            ],
            radius: (0.06 + j(rng, 0.01)) * h.min(w),
            amplitude_khz: rng.random_range(3.0..6.0),
        };
        // anterior femoral border against the fat pad
        let edge = boundary_crossing(&femur, -0.5 * PI + j(rng, 0.35), 4.0);
        PhantomSpec {
            rows: self.rows,
            cols: self.cols,
            shapes: vec![limb, fat, femur, tibia],
            implant,
            field_span_khz: self.field_span_khz,
            n_coils: self.n_coils,
            noise_sigma: self.noise_sigma,
            edge_segments: vec![edge],
            texture: default_texture(),
        }
    }

    fn hip(&self, rng: &mut impl Rng) -> PhantomSpec {
        let (h, w) = (self.rows as f64, self.cols as f64);
        let j = |rng: &mut _, a| Self::jitter(rng, a);
        let pelvis = Ellipse {
            center: [0.5 * h + j(rng, 0.02) * h, 0.5 * w + j(rng, 0.02) * w],
            semi_axes: [0.45 * h, (0.42 + j(rng, 0.02)) * w],
            angle_deg: j(rng, 4.0),
            intensity: 0.6 + j(rng, 0.05),
            label: "soft tissue".into(),
        };
        let fat = Ellipse {
            center: [0.38 * h + j(rng, 0.02) * h, 0.45 * w + j(rng, 0.02) * w],
            semi_axes: [(0.2 + j(rng, 0.02)) * h, (0.24 + j(rng, 0.02)) * w],
            angle_deg: j(rng, 10.0),
            intensity: 0.9,
            label: "periarticular fat".into(),
        };
        let head_r = (0.11 + j(rng, 0.01)) * h.min(w);
        let head = Ellipse {
            center: [0.36 * h + j(rng, 0.02) * h, 0.42 * w + j(rng, 0.02) * w],
            semi_axes: [head_r, head_r],
            angle_deg: 0.0,
            intensity: 0.3 + j(rng, 0.04),
            label: "femoral head".into(),
        };
        let shaft = Ellipse {
            center: [0.68 * h + j(rng, 0.02) * h, 0.5 * w + j(rng, 0.02) * w],
            semi_axes: [0.22 * h, (0.08 + j(rng, 0.01)) * w],
            angle_deg: 12.0 + j(rng, 6.0),
            intensity: 0.35 + j(rng, 0.04),
            label: "femoral shaft".into(),
        };
        let implant = Implant {
            center: [
                0.5 * (head.center[0] + shaft.center[0]) + j(rng, 0.02) * h,
                0.5 * (head.center[1] + shaft.center[1]) + j(rng, 0.02) * w,
            ],
            radius: (0.065 + j(rng, 0.01)) * h.min(w),
            amplitude_khz: rng.random_range(3.5..6.5),
        };
        // across the border of the femoral head
        let edge = boundary_crossing(&head, 0.75 * PI + j(rng, 0.3), 4.0);
        PhantomSpec {
            rows: self.rows,
            cols: self.cols,
            shapes: vec![pelvis, fat, head, shaft],
            implant,
            field_span_khz: self.field_span_khz,
            n_coils: self.n_coils,
            noise_sigma: self.noise_sigma,
            edge_segments: vec![edge],
            texture: default_texture(),
        }
    }
}

/// Segment of half-length `half_len` crossing the ellipse border along its
/// outward normal at parametric angle `t` (0 = +col axis, PI/2 = +row axis).
fn boundary_crossing(e: &Ellipse, t: f64, half_len: f64) -> LineSegment {
    let (s, c) = e.angle_deg.to_radians().sin_cos();
    let (a, b) = (e.semi_axes[0], e.semi_axes[1]);
    // ellipse-local point (u along rows, v along cols)
    let (u, v) = (a * t.sin(), b * t.cos());
    let (nu, nv) = (t.sin() / a, t.cos() / b);
    let n = (nu * nu + nv * nv).sqrt();
    let (nu, nv) = (nu / n, nv / n);
    // inverse of the rotation used in `contains`
    let to_img = |u: f64, v: f64| (u * c - v * s, u * s + v * c);
    let (pr, pc) = to_img(u, v);
    let (nr, nc) = to_img(nu, nv);
    let (pr, pc) = (e.center[0] + pr, e.center[1] + pc);
    LineSegment {
        p0: [pr - half_len * nr, pc - half_len * nc],
        p1: [pr + half_len * nr, pc + half_len * nc],
    }
}
