//! Autocalibrated k-space interpolation (GRAPPA-style) for uniform 2D
//! lattice undersampling.
//!
//! For every missing offset `(dy, dz)` inside an `Ry x Rz` cell, the missing
//! multi-coil sample is a shift-invariant linear combination of the acquired
//! lattice neighbours of all coils. Weights are fit on every kernel instance
//! that fits inside the ACS block by ridge-regularized least squares.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ReconError;
use crate::sampling::Mask;
use crate::tensor::{center_index, center_offset, ComplexImage};

/// Number of acquired lattice sources along `ky` and `kz`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelGeometry {
    pub sources_y: usize,
    pub sources_z: usize,
}

impl Default for KernelGeometry {
    fn default() -> Self {
        Self {
            sources_y: 5,
            sources_z: 4,
        }
    }
}

impl KernelGeometry {
    /// Source offsets relative to the lattice point at the top-left of a cell.
    fn offsets(&self, accel: [usize; 2]) -> Vec<(isize, isize)> {
        let (ry, rz) = (accel[0] as isize, accel[1] as isize);
        let hy = (self.sources_y as isize - 1) / 2;
        let hz = (self.sources_z as isize - 1) / 2;
        let mut out = Vec::with_capacity(self.sources_y * self.sources_z);
        for j in 0..self.sources_y as isize {
            for i in 0..self.sources_z as isize {
                out.push(((j - hy) * ry, (i - hz) * rz));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PiSettings {
    pub accel: [usize; 2],
    pub acs: [usize; 2],
    pub kernel: KernelGeometry,
    /// Ridge weight relative to the mean diagonal of the normal matrix.
    pub lambda: f64,
}

/// Fill lattice-missing samples of every coil. Acquired samples pass through
/// unchanged; only positions inside the bounding box of acquired samples are
/// synthesized.
pub fn pi_interpolate(
    coils: &[ComplexImage],
    sampled: &Mask,
    settings: &PiSettings,
) -> Result<Vec<ComplexImage>, ReconError> {
    let Some(first) = coils.first() else {
        return Err(ReconError::DimMismatch("no coils".into()));
    };
    let (ky, kz) = first.dims();
    if coils.iter().any(|c| c.dims() != (ky, kz)) || sampled.dims() != (ky, kz) {
        return Err(ReconError::DimMismatch(
            "coil images and mask must share dims".into(),
        ));
    }
    let [ry, rz] = settings.accel;
    if ry == 0 || rz == 0 {
        return Err(ReconError::DimMismatch("acceleration must be >= 1".into()));
    }
    if ry == 1 && rz == 1 {
        return Ok(coils.to_vec());
    }
    if settings.acs[0] > ky || settings.acs[1] > kz {
        return Err(ReconError::AcsTooSmall("ACS larger than matrix".into()));
    }

    let nc = coils.len();
    let offsets = settings.kernel.offsets(settings.accel);
    if offsets.len() > 64 {
        return Err(ReconError::DimMismatch("kernel has more than 64 sources".into()));
    }
    let n_src = offsets.len() * nc;
    let targets: Vec<(isize, isize)> = (0..ry as isize)
        .flat_map(|dy| (0..rz as isize).map(move |dz| (dy, dz)))
        .filter(|&t| t != (0, 0))
        .collect();

    let acs_r = center_offset(ky, settings.acs[0]) as isize;
    let acs_c = center_offset(kz, settings.acs[1]) as isize;
    let (acs_h, acs_w) = (settings.acs[0] as isize, settings.acs[1] as isize);

    let (min_dy, max_dy) = extent(offsets.iter().map(|o| o.0), ry as isize - 1);
    let (min_dz, max_dz) = extent(offsets.iter().map(|o| o.1), rz as isize - 1);

    // normal equations per target: (A^H A, A^H B) over all ACS instances
    let mut calib = Vec::with_capacity(targets.len());
    for &(ty, tz) in &targets {
        let mut rows_a: Vec<Complex64> = Vec::new();
        let mut rows_b: Vec<Complex64> = Vec::new();
        let mut n_inst = 0usize;
        for y0 in (acs_r - min_dy)..(acs_r + acs_h - max_dy) {
            for z0 in (acs_c - min_dz)..(acs_c + acs_w - max_dz) {
                for &(oy, oz) in &offsets {
                    for coil in coils {
                        rows_a.push(coil.get((y0 + oy) as usize, (z0 + oz) as usize));
                    }
                }
                for coil in coils {
                    rows_b.push(coil.get((y0 + ty) as usize, (z0 + tz) as usize));
                }
                n_inst += 1;
            }
        }
        if n_inst == 0 {
            return Err(ReconError::AcsTooSmall(format!(
                "ACS {}x{} cannot hold a {}x{} kernel at {}x{} acceleration",
                settings.acs[0],
                settings.acs[1],
                settings.kernel.sources_y,
                settings.kernel.sources_z,
                ry,
                rz
            )));
        }
        let a = DMatrix::from_row_slice(n_inst, n_src, &rows_a);
        let b = DMatrix::from_row_slice(n_inst, nc, &rows_b);
        let ah = a.adjoint();
        calib.push((&ah * &a, &ah * &b));
    }

    // fill region: bounding box of acquired samples
    let (mut r_lo, mut r_hi, mut c_lo, mut c_hi) = (ky, 0, kz, 0);
    for r in 0..ky {
        for c in 0..kz {
            if sampled.get(r, c) {
                r_lo = r_lo.min(r);
                r_hi = r_hi.max(r);
                c_lo = c_lo.min(c);
                c_hi = c_hi.max(c);
            }
        }
    }
    let mut out: Vec<ComplexImage> = coils
        .iter()
        .map(|c| {
            let mut k = c.clone();
            for (v, &s) in k.data_mut().iter_mut().zip(sampled.data()) {
                if !s {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            k
        })
        .collect();
    if r_lo > r_hi {
        return Ok(out);
    }

    // Near the matrix and partial Fourier edges some sources are missing;
    // those positions get a kernel refit on the available sources only.
    let mut weights: BTreeMap<(usize, u64), DMatrix<Complex64>> = BTreeMap::new();
    let (oy, oz) = (
        (center_index(ky) % ry) as isize,
        (center_index(kz) % rz) as isize,
    );
    let mut src = Vec::with_capacity(n_src);
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            if sampled.get(r, c) {
                continue;
            }
            let ty = (r as isize - oy).rem_euclid(ry as isize);
            let tz = (c as isize - oz).rem_euclid(rz as isize);
            if (ty, tz) == (0, 0) {
                continue;
            }
            let t = targets.iter().position(|&x| x == (ty, tz)).unwrap();
            let (y0, z0) = (r as isize - ty, c as isize - tz);
            let mut pattern = 0u64;
            src.clear();
            for (si, &(dy, dz)) in offsets.iter().enumerate() {
                let (y, z) = (y0 + dy, z0 + dz);
                let inside = y >= 0 && z >= 0 && (y as usize) < ky && (z as usize) < kz;
                if inside && sampled.get(y as usize, z as usize) {
                    pattern |= 1 << si;
                    src.extend(coils.iter().map(|k| k.get(y as usize, z as usize)));
                }
            }
            if pattern == 0 {
                continue;
            }
            let w = match weights.entry((t, pattern)) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    let (normal, rhs) = &calib[t];
                    let keep: Vec<usize> = (0..offsets.len())
                        .filter(|si| pattern & (1 << si) != 0)
                        .flat_map(|si| si * nc..(si + 1) * nc)
                        .collect();
                    let sub = normal.select_rows(&keep).select_columns(&keep);
                    e.insert(solve_ridge(sub, &rhs.select_rows(&keep), settings.lambda)?)
                }
            };
            for (ci, coil) in out.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, s) in src.iter().enumerate() {
                    acc += s * w[(k, ci)];
                }
                coil.set(r, c, acc);
            }
        }
    }
    Ok(out)
}

fn extent(values: impl Iterator<Item = isize>, target_max: isize) -> (isize, isize) {
    let (mut lo, mut hi) = (0isize, target_max);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Solve `(A^H A + lambda * mean(diag) * I) W = A^H B` given the normal
/// matrix and right-hand side.
fn solve_ridge(
    mut normal: DMatrix<Complex64>,
    rhs: &DMatrix<Complex64>,
    lambda: f64,
) -> Result<DMatrix<Complex64>, ReconError> {
    let n = normal.nrows();
    let mean_diag = (0..n).map(|i| normal[(i, i)].re).sum::<f64>() / n as f64;
    let ridge = lambda * mean_diag;
    for i in 0..n {
        normal[(i, i)] += Complex64::new(ridge, 0.0);
    }
    if let Some(chol) = normal.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    // singular without a usable ridge: fall back to a pseudo-inverse
    let svd = nalgebra::linalg::SVD::<Complex64, Dyn, Dyn>::new(normal, true, true);
    svd.solve(rhs, 1e-12 * mean_diag.max(f64::MIN_POSITIVE))
        .map_err(|e| ReconError::Linalg(e.to_string()))
}
