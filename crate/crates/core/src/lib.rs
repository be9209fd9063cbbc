//! Tomography of stored atomic coherence through a gradient echo memory.
//!
//! A spin wave `S(x, y, z)` stored in an elongated atomic cloud is read out
//! under a longitudinal magnetic-field gradient. Each readout time `t_R`
//! selects one longitudinal wavevector `k_z = -2π β̄ t_R`, and a far-field
//! heterodyne camera resolves the transverse wavevector. This crate
//! synthesises that readout signal from a known spin wave, simulates the
//! balanced heterodyne camera, and inverts the signal back to `S` with
//! chirp, decay, bias-precession and diffraction compensation. Calibration
//! helpers recover the focus parameters, axis scales and decoherence
//! lifetimes from data.
//!
//! Units are SI throughout. Magnetic-field gradients are stored as cyclic
//! Zeeman-splitting gradients in Hz/m, so every phase formula carries an
//! explicit `2π`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod calibration;
pub mod constants;
pub mod error;
pub mod fft;
pub mod field;
pub mod forward;
pub mod gemt;
pub mod heterodyne;
pub mod optim;
pub mod physics;
pub mod reconstruct;
pub mod scenarios;

pub use error::{Error, Result};
pub use field::{
    kz_of_time, total_power, Axis3, AxisSpec, ComplexField3D, Direction, DomainTag, GridSpec, KSpaceSignal, RealField3D,
};
pub use forward::{ForwardMethod, ForwardOptions};
pub use heterodyne::{DetectorConfig, FramePair};
pub use physics::{CouplingParams, DecoherenceParams, PhysicsParams};
pub use reconstruct::{CalibParams, ReconstructOptions};

pub use num_complex::Complex64;
