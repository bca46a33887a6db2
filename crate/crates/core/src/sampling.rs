//! Phase-encode sampling masks and the acquisition-time model.
//!
//! Masks live on the `(ky, kz)` phase-encode plane using the same centering
//! convention as [`crate::tensor`]: DC at `(ky / 2, kz / 2)`. Partial Fourier
//! keeps the low-`ky` half plus `pf_overscan` rows past DC.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{
    center_index, center_offset, read_container, write_container, ContainerError, Domain, Dtype,
    Payload, StackMetadata,
};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid acquisition parameters: {0}")]
    InvalidParams(String),
    #[error("variable-resolution sampling needs exactly 2 concatenations, got {0}")]
    ConcatenationCount(usize),
    #[error("variable-resolution sampling needs an even number of bins, got {0}")]
    OddBinCount(usize),
    #[error("bad plan file: {0}")]
    PlanFile(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Boolean sampling pattern over `(ky, kz)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn is_superset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| a || !b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask dims differ");
        Mask {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

fn check_acs(ky: usize, kz: usize, acs: [usize; 2]) -> Result<(), SamplingError> {
    if acs[0] > ky || acs[1] > kz {
        return Err(SamplingError::InvalidParams(format!(
            "ACS {}x{} larger than matrix {ky}x{kz}",
            acs[0], acs[1]
        )));
    }
    Ok(())
}

/// Centered ACS block only.
pub fn acs_only_mask(ky: usize, kz: usize, acs: [usize; 2]) -> Result<Mask, SamplingError> {
    check_acs(ky, kz, acs)?;
    let (r0, c0) = (center_offset(ky, acs[0]), center_offset(kz, acs[1]));
    Ok(Mask::from_fn(ky, kz, |r, c| {
        (r0..r0 + acs[0]).contains(&r) && (c0..c0 + acs[1]).contains(&c)
    }))
}

/// Uniform `ry` x `rz` lattice anchored on DC, plus the fully sampled ACS block.
pub fn uniform_accel_mask(
    ky: usize,
    kz: usize,
    ry: usize,
    rz: usize,
    acs: [usize; 2],
) -> Result<Mask, SamplingError> {
    if ry == 0 || rz == 0 {
        return Err(SamplingError::InvalidParams(
            "acceleration factors must be >= 1".into(),
        ));
    }
    let (oy, oz) = (center_index(ky) % ry, center_index(kz) % rz);
    let lattice = Mask::from_fn(ky, kz, |r, c| r % ry == oy && c % rz == oz);
    Ok(lattice.union(&acs_only_mask(ky, kz, acs)?))
}

/// Rows `0 .. ky/2 + overscan` sampled.
pub fn partial_fourier_rows(ky: usize, overscan: usize) -> Result<Vec<bool>, SamplingError> {
    if overscan > ky - center_index(ky) {
        return Err(SamplingError::InvalidParams(format!(
            "overscan {overscan} exceeds half of {ky} rows"
        )));
    }
    let limit = center_index(ky) + overscan;
    Ok((0..ky).map(|r| r < limit).collect())
}

/// [`partial_fourier_rows`] broadcast over `kz`.
pub fn partial_fourier_mask(ky: usize, kz: usize, overscan: usize) -> Result<Mask, SamplingError> {
    let rows = partial_fourier_rows(ky, overscan)?;
    Ok(Mask::from_fn(ky, kz, |r, _| rows[r]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    FullScheme,
    AcsOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionParams {
    pub tr_seconds: f64,
    pub etl: usize,
    pub n_concat: usize,
    pub n_bins: usize,
    /// `(ky, kz)` phase-encode matrix.
    pub matrix: [usize; 2],
    /// `(Ry, Rz)` acceleration.
    pub accel: [usize; 2],
    pub pf_overscan: usize,
    pub acs: [usize; 2],
}

impl Default for AcquisitionParams {
    /// Typical proton-density knee protocol.
    fn default() -> Self {
        Self {
            tr_seconds: 4.0,
            etl: 32,
            n_concat: 2,
            n_bins: 24,
            matrix: [256, 32],
            accel: [2, 2],
            pf_overscan: 8,
            acs: [16, 16],
        }
    }
}

impl AcquisitionParams {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: String| Err(SamplingError::InvalidParams(m));
        if !(self.tr_seconds >= 0.0) {
            return bad("TR must be non-negative".into());
        }
        if self.etl == 0 || self.n_concat == 0 || self.n_bins == 0 {
            return bad("ETL, concatenations and bins must be positive".into());
        }
        if self.n_bins % self.n_concat != 0 {
            return bad(format!(
                "{} bins not divisible by {} concatenations",
                self.n_bins, self.n_concat
            ));
        }
        if self.accel[0] == 0 || self.accel[1] == 0 {
            return bad("acceleration factors must be >= 1".into());
        }
        let [ky, kz] = self.matrix;
        check_acs(ky, kz, self.acs)?;
        if self.pf_overscan > ky - center_index(ky) {
            return bad("partial Fourier overscan exceeds half the matrix".into());
        }
        // The auto-calibration block has to survive the partial Fourier cut.
        let acs_last = center_offset(ky, self.acs[0]) + self.acs[0];
        if acs_last > center_index(ky) + self.pf_overscan {
            return bad(format!(
                "ACS block ({} rows) extends past the partial Fourier overscan ({})",
                self.acs[0], self.pf_overscan
            ));
        }
        Ok(())
    }

    /// Conventional mask: accelerated lattice and ACS, cut by partial Fourier.
    pub fn full_scheme_mask(&self) -> Result<Mask, SamplingError> {
        self.validate()?;
        let [ky, kz] = self.matrix;
        let accel = uniform_accel_mask(ky, kz, self.accel[0], self.accel[1], self.acs)?;
        Ok(accel.intersection(&partial_fourier_mask(ky, kz, self.pf_overscan)?))
    }

    pub fn acs_mask(&self) -> Result<Mask, SamplingError> {
        acs_only_mask(self.matrix[0], self.matrix[1], self.acs)
    }
}

/// Per-bin sampling for one acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    pub params: AcquisitionParams,
    pub schemes: Vec<Scheme>,
    pub masks: Vec<Mask>,
}

impl SamplingPlan {
    pub fn n_bins(&self) -> usize {
        self.schemes.len()
    }

    pub fn bins_with(&self, scheme: Scheme) -> Vec<usize> {
        self.schemes
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == scheme)
            .map(|(b, _)| b)
            .collect()
    }

    pub fn total_sampled(&self) -> usize {
        self.masks.iter().map(Mask::count).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SamplingError> {
        let [ky, kz] = self.params.matrix;
        let mut extra = serde_json::Map::new();
        extra.insert("schemes".into(), serde_json::to_value(&self.schemes).unwrap());
        extra.insert("params".into(), serde_json::to_value(&self.params).unwrap());
        let meta = StackMetadata {
            n_bins: self.n_bins(),
            n_coils: 1,
            rows: ky,
            cols: kz,
            domain: Domain::Kspace,
            bin_centers_khz: (0..self.n_bins()).map(|b| b as f64).collect(),
            provenance: "sampling plan".into(),
            dtype: Dtype::U8,
            extra,
        };
        let payload = Payload::Mask(
            self.masks
                .iter()
                .flat_map(|m| m.data().iter().copied())
                .collect(),
        );
        let mut bytes = Vec::new();
        write_container(&mut bytes, &meta, &payload)?;
        fs::write(path, bytes).map_err(ContainerError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SamplingError> {
        let bytes = fs::read(path).map_err(ContainerError::from)?;
        let (meta, payload) = read_container(&bytes)?;
        let Payload::Mask(bits) = payload else {
            return Err(SamplingError::PlanFile("payload is not a mask".into()));
        };
        let field = |k: &str| {
            meta.extra
                .get(k)
                .cloned()
                .ok_or_else(|| SamplingError::PlanFile(format!("missing '{k}'")))
        };
        let schemes: Vec<Scheme> = serde_json::from_value(field("schemes")?)
            .map_err(|e| SamplingError::PlanFile(e.to_string()))?;
        let params: AcquisitionParams = serde_json::from_value(field("params")?)
            .map_err(|e| SamplingError::PlanFile(e.to_string()))?;
        let plane = meta.rows * meta.cols;
        let masks = bits
            .chunks(plane)
            .map(|chunk| Mask {
                rows: meta.rows,
                cols: meta.cols,
                data: chunk.to_vec(),
            })
            .collect::<Vec<_>>();
        if masks.len() != schemes.len() {
            return Err(SamplingError::PlanFile("scheme/mask count mismatch".into()));
        }
        Ok(Self {
            params,
            schemes,
            masks,
        })
    }
}

/// VR plan: first-concatenation bins (even 0-based index, i.e. odd bin
/// numbers) get the conventional scheme, the others ACS only.
pub fn build_vr_plan(params: &AcquisitionParams) -> Result<SamplingPlan, SamplingError> {
    if params.n_bins % 2 != 0 {
        return Err(SamplingError::OddBinCount(params.n_bins));
    }
    if params.n_concat != 2 {
        return Err(SamplingError::ConcatenationCount(params.n_concat));
    }
    params.validate()?;
    let full = params.full_scheme_mask()?;
    let acs = params.acs_mask()?;
    let schemes: Vec<Scheme> = (0..params.n_bins)
        .map(|b| {
            if b % 2 == 0 {
                Scheme::FullScheme
            } else {
                Scheme::AcsOnly
            }
        })
        .collect();
    let masks = schemes
        .iter()
        .map(|s| match s {
            Scheme::FullScheme => full.clone(),
            Scheme::AcsOnly => acs.clone(),
        })
        .collect();
    Ok(SamplingPlan {
        params: params.clone(),
        schemes,
        masks,
    })
}

/// Every bin on the conventional scheme.
pub fn build_conventional_plan(params: &AcquisitionParams) -> Result<SamplingPlan, SamplingError> {
    let full = params.full_scheme_mask()?;
    Ok(SamplingPlan {
        params: params.clone(),
        schemes: vec![Scheme::FullScheme; params.n_bins],
        masks: vec![full; params.n_bins],
    })
}

/// Echo trains needed to cover the mask, one phase encode per echo.
pub fn shots_required(mask: &Mask, etl: usize) -> usize {
    assert!(etl >= 1, "echo train length must be positive");
    mask.count().div_ceil(etl)
}

pub fn conventional_time(tr_seconds: f64, shots: usize, n_concat: usize) -> f64 {
    tr_seconds * shots as f64 * n_concat as f64
}

pub fn vr_time(tr_seconds: f64, n_concat: usize, shots: usize, acs_shots: usize) -> f64 {
    tr_seconds * (n_concat as f64 / 2.0) * (shots + acs_shots) as f64
}

pub fn efficiency_from_shots(shots: usize, acs_shots: usize) -> f64 {
    1.0 - vr_time(1.0, 2, shots, acs_shots) / conventional_time(1.0, shots, 2)
}

pub fn scan_time_conventional(params: &AcquisitionParams) -> Result<f64, SamplingError> {
    let shots = shots_required(&params.full_scheme_mask()?, params.etl);
    Ok(conventional_time(params.tr_seconds, shots, params.n_concat))
}

pub fn scan_time_vr(params: &AcquisitionParams) -> Result<f64, SamplingError> {
    if params.n_concat % 2 != 0 {
        return Err(SamplingError::InvalidParams(format!(
            "VR timing needs an even concatenation count, got {}",
            params.n_concat
        )));
    }
    let shots = shots_required(&params.full_scheme_mask()?, params.etl);
    let acs_shots = shots_required(&params.acs_mask()?, params.etl);
    Ok(vr_time(params.tr_seconds, params.n_concat, shots, acs_shots))
}

/// Fractional scan-time saving of VR over conventional sampling.
pub fn efficiency_gain(params: &AcquisitionParams) -> Result<f64, SamplingError> {
    let conventional = scan_time_conventional(params)?;
    if conventional == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - scan_time_vr(params)? / conventional)
}
