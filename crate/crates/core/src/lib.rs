//! TX/RX location calibration for site-specific wireless ray tracing.
//!
//! GPS-logged transmitter and receiver positions carry meter-level errors that
//! misalign measured and simulated power delay profiles. This crate corrects
//! those errors by minimizing a multi-component PDP discrepancy over candidate
//! position adjustments, using alternating coarse-grid / fine-grid / Powell
//! optimization of each endpoint in turn.
//!
//! Module map:
//! - [`geo`]: WGS84 ↔ local Cartesian frame (azimuthal equidistant projection)
//! - [`scene`]: 2.5D environment (extruded polygon buildings, materials)
//! - [`raytrace`]: built-in image-method forward model + external simulator seam
//! - [`pdp`]: power delay profile synthesis, thresholding, peak analysis
//! - [`align`]: temporal alignment of simulated vs measured PDPs
//! - [`loss`]: peak / unmatched / shape / distance loss components
//! - [`optimizer`]: alternating three-stage calibration loop
//! - [`cli`]: run configuration, batch driver, result/trace emission

pub mod align;
pub mod cli;
pub mod geo;
pub mod loss;
pub mod optimizer;
pub mod pdp;
pub mod raytrace;
pub mod scene;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;
