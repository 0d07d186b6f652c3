//! Sparse-view CT reconstruction under rigid motion.
//!
//! The image is a coordinate network (hash-grid, Fourier-feature or identity
//! encoding followed by a small MLP). Each projection view carries its own
//! rigid pose (angle plus 2D translation) and the network weights and the
//! poses are fitted jointly to the measured sinogram with an l1 loss and Adam.
//!
//! Besides the reconstruction itself the crate ships everything needed to run
//! the experiment end to end: analytic ellipse phantoms with closed-form line
//! integrals, a motion-corrupted sinogram simulator, filtered back-projection,
//! PSNR/SSIM and pose-recovery statistics, and simple on-disk formats.
//!
//! Coordinates live on the normalized square `[-1, 1]^2`. Pixel `(row, col)`
//! of an `N x N` grid has its center at
//! `x = -1 + (col + 0.5) * 2/N`, `y = 1 - (row + 0.5) * 2/N`.

pub mod analytic;
pub mod error;
pub mod field;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod par;
pub mod phantom;
pub mod projector;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{PoseSet, ProjectionPose};
pub use image::ImageGrid;
pub use projector::{DetectorGeometry, Sinogram};
