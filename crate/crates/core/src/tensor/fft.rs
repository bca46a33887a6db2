use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::{center_index, ComplexImage, Domain, TensorError};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unitary centered 2D DFT, image -> k-space.
pub fn fft2_centered(img: &ComplexImage) -> Result<ComplexImage, TensorError> {
    img.expect_domain(Domain::Image)?;
    img.check_finite()?;
    Ok(centered_transform(img, FftDirection::Forward))
}

/// Unitary centered inverse 2D DFT, k-space -> image.
pub fn ifft2_centered(ksp: &ComplexImage) -> Result<ComplexImage, TensorError> {
    ksp.expect_domain(Domain::Kspace)?;
    ksp.check_finite()?;
    Ok(centered_transform(ksp, FftDirection::Inverse))
}

fn centered_transform(x: &ComplexImage, direction: FftDirection) -> ComplexImage {
    let (rows, cols) = x.dims();
    // ifftshift: the centered DC sample moves to index 0
    let mut buf = vec![Complex64::new(0.0, 0.0); rows * cols];
    let (hr, hc) = (center_index(rows), center_index(cols));
    for r in 0..rows {
        let sr = (r + hr) % rows;
        for c in 0..cols {
            buf[r * cols + c] = x.data()[sr * cols + (c + hc) % cols];
        }
    }

    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let row_fft = planner.plan_fft(cols, direction);
        row_fft.process(&mut buf);

        let col_fft = planner.plan_fft(rows, direction);
        let mut column = vec![Complex64::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = buf[r * cols + c];
            }
            col_fft.process(&mut column);
            for r in 0..rows {
                buf[r * cols + c] = column[r];
            }
        }
    });

    // fftshift back and apply 1/sqrt(N)
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        let dr = (r + hr) % rows;
        for c in 0..cols {
            out[dr * cols + (c + hc) % cols] = buf[r * cols + c] * scale;
        }
    }
    ComplexImage::from_vec(rows, cols, out, x.domain().flipped())
        .expect("transform preserves shape")
}
