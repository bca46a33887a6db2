use num_complex::Complex64;

use super::ReconError;
use crate::tensor::{center_index, ifft2_centered, ComplexImage, RealImage};

/// Homodyne partial Fourier reconstruction along rows (`ky`).
///
/// `sampled_rows` must be a prefix `0 .. ky/2 + overscan`. The symmetric
/// band `|k| < overscan` gives the low-resolution phase; the asymmetric data
/// are weighted by a linear ramp from 2 (k <= -overscan) to 0 (k >= overscan)
/// and the demodulated real part is returned. A fully sampled axis degenerates
/// to the magnitude image.
pub fn homodyne_recon(ksp: &ComplexImage, sampled_rows: &[bool]) -> Result<RealImage, ReconError> {
    let (rows, cols) = ksp.dims();
    if sampled_rows.len() != rows {
        return Err(ReconError::DimMismatch(format!(
            "{} row flags for {rows} rows",
            sampled_rows.len()
        )));
    }
    let n_sampled = sampled_rows.iter().take_while(|&&s| s).count();
    if sampled_rows[n_sampled..].iter().any(|&s| s) {
        return Err(ReconError::NotPartialFourier);
    }
    let dc = center_index(rows);
    if n_sampled <= dc {
        return Err(ReconError::NoPhaseReference);
    }
    let overscan = n_sampled - dc;
    if n_sampled == rows {
        return Ok(ifft2_centered(ksp)?.magnitude());
    }

    let ov = overscan as f64;
    let mut weighted = ksp.clone();
    let mut low = ComplexImage::zeros(rows, cols, ksp.domain());
    for r in 0..rows {
        let k = r as f64 - dc as f64;
        // an even-length axis has an unpaired Nyquist row; keep it at unit weight
        let h = if rows % 2 == 0 && r == 0 {
            1.0
        } else if k <= -ov {
            2.0
        } else if k >= ov {
            0.0
        } else {
            1.0 - k / ov
        };
        let in_band = k.abs() < ov;
        for c in 0..cols {
            let v = if sampled_rows[r] { ksp.get(r, c) } else { Complex64::new(0.0, 0.0) };
            weighted.set(r, c, v * h);
            if in_band {
                low.set(r, c, v);
            }
        }
    }
    let full = ifft2_centered(&weighted)?;
    let phase_ref = ifft2_centered(&low)?;
    let data = full
        .data()
        .iter()
        .zip(phase_ref.data())
        .map(|(x, p)| {
            let n = p.norm();
            if n > 0.0 {
                (x * p.conj() / n).re
            } else {
                x.norm()
            }
        })
        .collect();
    Ok(RealImage::from_vec(rows, cols, data)?)
}
