//! Simulation, reconstruction and evaluation toolkit for variable-resolution
//! multi-spectral MRI near metal.
//!
//! The modules follow the data flow of an experiment:
//!
//! * [`phantom`] builds synthetic anatomy with a metal-induced off-resonance
//!   field and simulates multi-coil spectral-bin data.
//! * [`sampling`] produces conventional and variable-resolution (VR) k-space
//!   masks and the scan-time model.
//! * [`recon`] holds the non-learned reconstructions (parallel imaging,
//!   homodyne partial Fourier, apodized ACS, RSOS combination).
//! * [`learn`] is the encoder-decoder that infers full-resolution images for
//!   the ACS-only bins.
//! * [`metrics`] computes SSIM, PSNR, RESI and Mann-Whitney statistics.
//! * [`pipeline`] wires these together into dataset-level experiments.

pub mod learn;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod sampling;
pub mod tensor;

pub use tensor::{ComplexImage, Domain, MultiSpectralStack, RealImage};
