//! Dual-spectral fan-beam CT simulation and basis-material decomposition.
//!
//! The pipeline runs from analytic ellipse phantoms through a polychromatic
//! two-spectrum forward model to two decomposition methods: extended SART
//! (E-SART) and E-SART with a guided-filter step after each iteration.

pub mod error;
pub mod esart;
pub mod forward;
pub mod geometry;
pub mod guided_filter;
pub mod metrics;
pub mod phantom;
pub mod raster;
pub mod solver;
pub mod spectra;

pub use error::{Error, ErrorClass, Result};
pub use esart::{decompose_esart, Decomposition, DecompositionState, EsartConfig, IterationRecord};
pub use forward::{simulate_dual_scan, DualScan, NoiseConfig, PathIntegralSource};
pub use geometry::{CachePolicy, FanBeamGeometry, Projector};
pub use phantom::{EllipseSpec, Phantom};
pub use raster::{Image, Sinogram};
pub use solver::{composite_image, decompose_proposed, GuideSource, ProposedConfig};
pub use spectra::{BasisSet, SpectralModel, Spectrum};
