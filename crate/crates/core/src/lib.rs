//! Simulator for a twin Mach-Zehnder interferometer read out through a
//! Gaussian transverse pointer, plus the data pipeline that turns synthetic
//! camera frames into calibrated pointer-displacement measurements.
//!
//! The crate is organized around the stations of the experiment:
//!
//! * [`pathspace`] — finite path-mode states, the interferometer network and
//!   pre/post-selected weak values of path projectors.
//! * [`pointerlab`] — exact joint path⊗pointer dynamics with a Gaussian
//!   pointer, impulsive coupling at the L2 arm, post-selection and the
//!   weak/strong readout predictions.
//! * [`camera`] — a quantized 640-pixel line sensor with deterministic
//!   seeded noise and intensity-averaged centroid extraction.
//! * [`analysis`] — stage sweeps, calibration, crossing-point estimation,
//!   frame transforms, weak-value extraction and report emission.
//! * [`modular`] — a 1-D two-slit wavepacket model for translation-operator
//!   expectations, folded momentum distributions and free evolution.

pub mod analysis;
pub mod camera;
pub mod modular;
pub mod pathspace;
pub mod pointerlab;

pub use pathspace::{ClassId, Mode, NetworkConfig, PathState, PlaneId};
pub use pointerlab::{FidelityMode, GaussianPointer, PointerReport};
