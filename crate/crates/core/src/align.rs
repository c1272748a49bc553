//! Temporal alignment of simulated and measured PDPs.
//!
//! Two strategies: max-peak (difference of the maximum-power bin delays) and
//! multi-peak (integer-bin shift maximizing the normalized cross-correlation
//! of the dB-scale profiles). The multi-peak result is used when its
//! correlation exceeds 0.5, otherwise max-peak is the fallback.
//!
//! Shift convention: applying the returned `shift_ns` to the measured profile
//! (`apply_shift(meas, shift_ns)`) brings it onto the simulated timebase.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pdp::PowerDelayProfile;

/// Default correlation search window, ns.
pub const DEFAULT_WINDOW_NS: f64 = 500.0;

/// Correlation threshold above which the multi-peak shift is trusted.
pub const CORRELATION_THRESHOLD: f64 = 0.5;

/// Minimum bin overlap for a correlation estimate.
pub const MIN_OVERLAP_BINS: usize = 8;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("profile is empty")]
    EmptyProfile,
    #[error("profiles have mismatched bin widths ({0} ns vs {1} ns)")]
    GridMismatch(f64, f64),
    #[error("no shift in the window gives at least {MIN_OVERLAP_BINS} overlapping bins")]
    InsufficientOverlap,
    #[error("search window {0} ns must be > 0")]
    BadWindow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMethod {
    MaxPeak,
    MultiPeakCorrelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Signed shift to apply to the measured profile, ns.
    pub shift_ns: f64,
    pub method: AlignMethod,
    /// Achieved correlation coefficient; present for multi-peak only.
    pub correlation: Option<f64>,
}

/// Align on the maximum-power bins: shift = tau_sim_max - tau_meas_max.
pub fn align_max_peak(
    sim: &PowerDelayProfile,
    meas: &PowerDelayProfile,
) -> Result<AlignmentResult, AlignError> {
    let (si, _) = sim.max_bin().ok_or(AlignError::EmptyProfile)?;
    let (mi, _) = meas.max_bin().ok_or(AlignError::EmptyProfile)?;
    Ok(AlignmentResult {
        shift_ns: sim.delay_at(si) - meas.delay_at(mi),
        method: AlignMethod::MaxPeak,
        correlation: None,
    })
}

/// Absolute integer bin index of a profile's first bin on the common grid.
fn base_index(p: &PowerDelayProfile) -> i64 {
    (p.t0_ns / p.bin_width_ns).round() as i64
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Find the integer-bin shift of the measured profile maximizing the
/// normalized cross-correlation of the dB-scale (floor-clamped) profiles.
/// Ties break toward smaller |shift|.
pub fn align_multi_peak(
    sim: &PowerDelayProfile,
    meas: &PowerDelayProfile,
    window_ns: f64,
) -> Result<AlignmentResult, AlignError> {
    if !(window_ns > 0.0) {
        return Err(AlignError::BadWindow(window_ns));
    }
    if sim.max_bin().is_none() || meas.max_bin().is_none() {
        return Err(AlignError::EmptyProfile);
    }
    let w = sim.bin_width_ns;
    if (w - meas.bin_width_ns).abs() > 1e-9 * w.max(meas.bin_width_ns) {
        return Err(AlignError::GridMismatch(w, meas.bin_width_ns));
    }

    let sim_base = base_index(sim);
    let meas_base = base_index(meas);
    let window_bins = (window_ns / w).round() as i64;

    let mut best: Option<(f64, i64)> = None;
    for shift in -window_bins..=window_bins {
        // Require a minimum true overlap, then correlate over the union of
        // the two extents with missing bins clamped to the floor, so peaks
        // outside the overlap still count against a candidate shift.
        let m_base = meas_base + shift;
        let overlap = (sim_base + sim.len() as i64).min(m_base + meas.len() as i64)
            - sim_base.max(m_base);
        if overlap < MIN_OVERLAP_BINS as i64 {
            continue;
        }
        let lo = sim_base.min(m_base);
        let hi = (sim_base + sim.len() as i64).max(m_base + meas.len() as i64);
        let mut a = Vec::with_capacity((hi - lo) as usize);
        let mut b = Vec::with_capacity((hi - lo) as usize);
        for idx in lo..hi {
            let si = idx - sim_base;
            a.push(if (0..sim.len() as i64).contains(&si) {
                sim.power_dbm[si as usize]
            } else {
                sim.floor_dbm
            });
            let mi = idx - m_base;
            b.push(if (0..meas.len() as i64).contains(&mi) {
                meas.power_dbm[mi as usize]
            } else {
                meas.floor_dbm
            });
        }
        let corr = pearson(&a, &b);
        let better = match best {
            None => true,
            Some((bc, bs)) => {
                corr > bc
                    || (corr == bc && (shift.abs() < bs.abs() || (shift.abs() == bs.abs() && shift < bs)))
            }
        };
        if better {
            best = Some((corr, shift));
        }
    }
    let (correlation, shift) = best.ok_or(AlignError::InsufficientOverlap)?;
    Ok(AlignmentResult {
        shift_ns: shift as f64 * w,
        method: AlignMethod::MultiPeakCorrelation,
        correlation: Some(correlation),
    })
}

/// Multi-peak when its correlation exceeds 0.5, else max-peak.
pub fn select_alignment(
    sim: &PowerDelayProfile,
    meas: &PowerDelayProfile,
) -> Result<AlignmentResult, AlignError> {
    match align_multi_peak(sim, meas, DEFAULT_WINDOW_NS) {
        Ok(multi) if multi.correlation.unwrap_or(0.0) > CORRELATION_THRESHOLD => Ok(multi),
        Ok(_) | Err(AlignError::InsufficientOverlap) => align_max_peak(sim, meas),
        Err(e) => Err(e),
    }
}

/// Translate the profile's grid origin; bin values are unchanged.
/// Shifts are rounded to an integer multiple of the bin width.
pub fn apply_shift(p: &PowerDelayProfile, shift_ns: f64) -> PowerDelayProfile {
    let bins = (shift_ns / p.bin_width_ns).round();
    let mut out = p.clone();
    out.t0_ns += bins * p.bin_width_ns;
    out
}
