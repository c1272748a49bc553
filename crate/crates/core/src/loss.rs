//! Multi-component discrepancy between aligned simulated and measured PDPs.
//!
//! Components: peak matching (delay + normalized-power distance to the best
//! measured peak, exponentially weighted toward early arrivals), unmatched
//! peak-count penalty, dB-domain shape MSE over the significant-bin set, and
//! a quadratic regularizer on the position adjustments. Degenerate inputs map
//! to finite sentinel penalties so every candidate stays totally ordered.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{apply_shift, select_alignment, AlignError, AlignmentResult};
use crate::pdp::{detect_peaks, normalize_peak_powers, PeakList, PowerDelayProfile, SIGNIFICANCE_WINDOW_DB};

/// Sentinel when either profile has no significant peaks.
pub const PEAK_MISMATCH_PENALTY: f64 = 10.0;

/// Sentinel when the forward model produces no paths (outage).
pub const OUTAGE_PENALTY: f64 = 100.0;

/// Sentinel when the shape-loss bin sets are disjoint: the square of the
/// full 25 dB window.
pub const DISJOINT_SHAPE_PENALTY: f64 = 625.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("measured profile is empty")]
    EmptyMeasuredProfile,
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// Weights and scales of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the peak-based terms vs the shape term.
    pub alpha: f64,
    /// Weight of the distance regularizer.
    pub beta: f64,
    pub w_unmatched: f64,
    /// Reference delay of the early-arrival weighting, ns.
    pub tau_ref_ns: f64,
    /// Delay normalization making delay and power errors commensurate, ns.
    pub t_norm_ns: f64,
    /// Maximum allowed position adjustment, m.
    pub d_max_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.05,
            w_unmatched: 0.5,
            tau_ref_ns: 500.0,
            t_norm_ns: 100.0,
            d_max_m: 10.0,
        }
    }
}

/// All loss components plus the composite total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_peak: f64,
    pub l_unmatched: f64,
    pub l_shape: f64,
    pub l_distance: f64,
    pub total: f64,
    /// True when the simulated profile was an outage; the total is then
    /// `OUTAGE_PENALTY + beta * l_distance` rather than the composite formula.
    pub outage: bool,
}

impl LossBreakdown {
    /// Combine components per the composite formula:
    /// total = alpha*(l_peak + l_unmatched) + (1 - alpha)*l_shape + beta*l_distance.
    pub fn compose(
        l_peak: f64,
        l_unmatched: f64,
        l_shape: f64,
        l_distance: f64,
        weights: &LossWeights,
    ) -> LossBreakdown {
        let total = weights.alpha * (l_peak + l_unmatched)
            + (1.0 - weights.alpha) * l_shape
            + weights.beta * l_distance;
        LossBreakdown {
            l_peak,
            l_unmatched,
            l_shape,
            l_distance,
            total,
            outage: false,
        }
    }
}

/// Peak matching loss: each simulated peak pays the cost of its cheapest
/// measured counterpart, weighted by exp(-tau_sim/tau_ref); the sum is
/// averaged over the number of simulated peaks.
pub fn peak_matching_loss(
    sim_peaks: &PeakList,
    meas_peaks: &PeakList,
    weights: &LossWeights,
) -> f64 {
    if sim_peaks.is_empty() || meas_peaks.is_empty() {
        return PEAK_MISMATCH_PENALTY;
    }
    let sim_norm = normalize_peak_powers(sim_peaks);
    let meas_norm = normalize_peak_powers(meas_peaks);
    let mut sum = 0.0;
    for (i, sp) in sim_peaks.peaks.iter().enumerate() {
        let w = (-sp.delay_ns / weights.tau_ref_ns).exp();
        let mut best = f64::INFINITY;
        for (j, mp) in meas_peaks.peaks.iter().enumerate() {
            let cost = w
                * ((sp.delay_ns - mp.delay_ns).abs() / weights.t_norm_ns
                    + (sim_norm[i] - meas_norm[j]).abs());
            best = best.min(cost);
        }
        sum += best;
    }
    sum / sim_peaks.len() as f64
}

/// Relative peak-count mismatch: w_unmatched * |n_sim - n_meas| / max(n_sim, n_meas).
pub fn unmatched_peaks_penalty(n_sim: usize, n_meas: usize, weights: &LossWeights) -> f64 {
    let max = n_sim.max(n_meas);
    if max == 0 {
        return 0.0;
    }
    weights.w_unmatched * n_sim.abs_diff(n_meas) as f64 / max as f64
}

/// dB-domain shape MSE over the set R of bins where either profile, after
/// normalization to a 0 dB maximum, exceeds -25 dB. Bins of R where a
/// profile has no energy (or is below the window) clamp to -25 dB.
pub fn shape_loss(sim: &PowerDelayProfile, meas: &PowerDelayProfile) -> f64 {
    let (Some((_, sim_max)), Some((_, meas_max))) = (sim.max_bin(), meas.max_bin()) else {
        return DISJOINT_SHAPE_PENALTY;
    };
    let w = sim.bin_width_ns;
    let sim_base = (sim.t0_ns / w).round() as i64;
    let meas_base = (meas.t0_ns / meas.bin_width_ns).round() as i64;

    let normalized = |p: &PowerDelayProfile, max: f64, base: i64, idx: i64| -> Option<f64> {
        let i = idx - base;
        if i < 0 || i >= p.len() as i64 {
            return None;
        }
        let v = p.power_dbm[i as usize];
        if v <= p.floor_dbm {
            None
        } else {
            Some(v - max)
        }
    };

    // R lives on the common grid: the overlap of the two extents.
    let lo = sim_base.max(meas_base);
    let hi = (sim_base + sim.len() as i64).min(meas_base + meas.len() as i64);
    let mut sum = 0.0;
    let mut count = 0usize;
    for idx in lo..hi {
        let s = normalized(sim, sim_max, sim_base, idx);
        let m = normalized(meas, meas_max, meas_base, idx);
        let in_r = s.map_or(false, |v| v > -SIGNIFICANCE_WINDOW_DB)
            || m.map_or(false, |v| v > -SIGNIFICANCE_WINDOW_DB);
        if !in_r {
            continue;
        }
        let sv = s.unwrap_or(-SIGNIFICANCE_WINDOW_DB).max(-SIGNIFICANCE_WINDOW_DB);
        let mv = m.unwrap_or(-SIGNIFICANCE_WINDOW_DB).max(-SIGNIFICANCE_WINDOW_DB);
        sum += (sv - mv) * (sv - mv);
        count += 1;
    }
    if count == 0 {
        return DISJOINT_SHAPE_PENALTY;
    }
    sum / count as f64
}

/// Quadratic adjustment regularizer: (d_tx^2 + d_rx^2) / d_max^2.
pub fn distance_regularizer(d_tx_m: f64, d_rx_m: f64, weights: &LossWeights) -> f64 {
    (d_tx_m * d_tx_m + d_rx_m * d_rx_m) / (weights.d_max_m * weights.d_max_m)
}

/// Outage breakdown: a fixed penalty plus the regularizer, so the optimizer
/// still prefers smaller adjustments among outage candidates.
pub fn outage_loss(d_tx_m: f64, d_rx_m: f64, weights: &LossWeights) -> LossBreakdown {
    let l_distance = distance_regularizer(d_tx_m, d_rx_m, weights);
    LossBreakdown {
        l_peak: 0.0,
        l_unmatched: 0.0,
        l_shape: 0.0,
        l_distance,
        total: OUTAGE_PENALTY + weights.beta * l_distance,
        outage: true,
    }
}

/// Full composite loss: aligns the measured profile to the simulated one,
/// then evaluates every component.
pub fn composite_loss(
    sim: &PowerDelayProfile,
    meas: &PowerDelayProfile,
    d_tx_m: f64,
    d_rx_m: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    if meas.max_bin().is_none() {
        return Err(LossError::EmptyMeasuredProfile);
    }
    if sim.max_bin().is_none() {
        return Ok(outage_loss(d_tx_m, d_rx_m, weights));
    }
    let alignment: AlignmentResult = select_alignment(sim, meas)?;
    let meas_aligned = apply_shift(meas, alignment.shift_ns);

    let l_shape = shape_loss(sim, &meas_aligned);
    let sim_peaks = detect_peaks(sim);
    let meas_peaks = detect_peaks(&meas_aligned);
    let l_peak = peak_matching_loss(&sim_peaks, &meas_peaks, weights);
    let l_unmatched = unmatched_peaks_penalty(sim_peaks.len(), meas_peaks.len(), weights);
    let l_distance = distance_regularizer(d_tx_m, d_rx_m, weights);
    Ok(LossBreakdown::compose(l_peak, l_unmatched, l_shape, l_distance, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdp::{Peak, FLOOR_DBM};
    use rand::Rng;
    use rand::SeedableRng;

    fn profile(t0_ns: f64, values: &[f64]) -> PowerDelayProfile {
        PowerDelayProfile {
            t0_ns,
            bin_width_ns: 1.0,
            power_dbm: values.to_vec(),
            floor_dbm: FLOOR_DBM,
        }
    }

    fn peak(delay_ns: f64, power_dbm: f64) -> Peak {
        Peak {
            delay_ns,
            power_dbm,
            prominence_db: 5.0,
            bin_index: delay_ns as usize,
        }
    }

    #[test]
    fn identical_peak_lists_zero_loss() {
        let peaks = PeakList {
            peaks: vec![peak(10.0, -60.0), peak(40.0, -68.0), peak(90.0, -75.0)],
        };
        let l = peak_matching_loss(&peaks, &peaks, &LossWeights::default());
        assert_eq!(l, 0.0);
    }

    #[test]
    fn single_pair_100ns_offset_costs_one() {
        let sim = PeakList { peaks: vec![peak(0.0, -60.0)] };
        let meas = PeakList { peaks: vec![peak(100.0, -60.0)] };
        let l = peak_matching_loss(&sim, &meas, &LossWeights::default());
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn peak_loss_matches_brute_force_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let w = LossWeights::default();
        for _ in 0..20 {
            let sim = PeakList {
                peaks: (0..5)
                    .map(|_| peak(rng.gen_range(0.0..400.0), rng.gen_range(-85.0..-60.0)))
                    .collect(),
            };
            let meas = PeakList {
                peaks: (0..4)
                    .map(|_| peak(rng.gen_range(0.0..400.0), rng.gen_range(-85.0..-60.0)))
                    .collect(),
            };
            // Exhaustive double loop, written independently of the implementation.
            let sn = normalize_peak_powers(&sim);
            let mn = normalize_peak_powers(&meas);
            let mut total = 0.0;
            for i in 0..sim.len() {
                let mut costs: Vec<f64> = Vec::new();
                for j in 0..meas.len() {
                    let wi = (-sim.peaks[i].delay_ns / w.tau_ref_ns).exp();
                    costs.push(
                        wi * ((sim.peaks[i].delay_ns - meas.peaks[j].delay_ns).abs() / w.t_norm_ns
                            + (sn[i] - mn[j]).abs()),
                    );
                }
                total += costs.iter().cloned().fold(f64::INFINITY, f64::min);
            }
            let oracle = total / sim.len() as f64;
            let got = peak_matching_loss(&sim, &meas, &w);
            assert!((got - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_list_sentinel() {
        let some = PeakList { peaks: vec![peak(10.0, -60.0)] };
        let none = PeakList::default();
        let w = LossWeights::default();
        assert_eq!(peak_matching_loss(&some, &none, &w), PEAK_MISMATCH_PENALTY);
        assert_eq!(peak_matching_loss(&none, &some, &w), PEAK_MISMATCH_PENALTY);
    }

    #[test]
    fn unmatched_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(unmatched_peaks_penalty(7, 7, &w), 0.0);
        assert!((unmatched_peaks_penalty(4, 8, &w) - 0.25).abs() < 1e-15);
        assert!((unmatched_peaks_penalty(0, 5, &w) - 0.5).abs() < 1e-15);
        assert_eq!(unmatched_peaks_penalty(0, 0, &w), 0.0);
    }

    #[test]
    fn shape_identical_is_zero() {
        let p = profile(0.0, &[-60.0, -70.0, -75.0]);
        assert_eq!(shape_loss(&p, &p), 0.0);
    }

    #[test]
    fn shape_invariant_to_uniform_offset() {
        let p = profile(0.0, &[-60.0, -70.0, -75.0]);
        let q = profile(0.0, &[-48.0, -58.0, -63.0]);
        assert_eq!(shape_loss(&p, &q), 0.0);
    }

    #[test]
    fn shape_two_bin_hand_case() {
        let sim = profile(0.0, &[-50.0, -60.0]); // normalized (0, -10)
        let meas = profile(0.0, &[-40.0, -60.0]); // normalized (0, -20)
        let l = shape_loss(&sim, &meas);
        assert!((l - 50.0).abs() < 1e-12);
    }

    #[test]
    fn shape_symmetric() {
        let a = profile(0.0, &[-50.0, -62.0, -70.0, FLOOR_DBM]);
        let b = profile(1.0, &[-55.0, -61.0, -80.0]);
        assert_eq!(shape_loss(&a, &b), shape_loss(&b, &a));
    }

    #[test]
    fn shape_disjoint_supports_sentinel() {
        let a = profile(0.0, &[-60.0, -70.0]);
        let b = profile(10_000.0, &[-60.0, -70.0]);
        assert_eq!(shape_loss(&a, &b), DISJOINT_SHAPE_PENALTY);
    }

    #[test]
    fn regularizer_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(distance_regularizer(0.0, 0.0, &w), 0.0);
        assert!((distance_regularizer(10.0, 10.0, &w) - 2.0).abs() < 1e-15);
        assert!((distance_regularizer(3.0, 4.0, &w) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn regularizer_strictly_monotone() {
        let w = LossWeights::default();
        let base = distance_regularizer(2.0, 3.0, &w);
        assert!(distance_regularizer(2.5, 3.0, &w) > base);
        assert!(distance_regularizer(2.0, 3.5, &w) > base);
    }

    #[test]
    fn compose_arithmetic() {
        let w = LossWeights::default();
        let b = LossBreakdown::compose(1.0, 0.25, 50.0, 0.25, &w);
        assert!((b.total - 15.8875).abs() < 1e-12);
        // Invariant: total equals the composite formula.
        let recomputed = w.alpha * (b.l_peak + b.l_unmatched) + (1.0 - w.alpha) * b.l_shape + w.beta * b.l_distance;
        assert!((b.total - recomputed).abs() < 1e-12);
    }

    #[test]
    fn composite_identical_zero() {
        let mut v = vec![-95.0; 50];
        v[10] = -60.0;
        v[30] = -70.0;
        let p = profile(0.0, &v);
        let b = composite_loss(&p, &p, 0.0, 0.0, &LossWeights::default()).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.l_peak, 0.0);
        assert_eq!(b.l_shape, 0.0);
        assert_eq!(b.l_unmatched, 0.0);
        assert!(!b.outage);
    }

    #[test]
    fn composite_invariant_under_common_offset() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = LossWeights::default();
        for _ in 0..10 {
            let mut v = vec![-95.0; 60];
            for _ in 0..5 {
                let i = rng.gen_range(0..60);
                v[i] = rng.gen_range(-85.0..-60.0);
            }
            let mut m = vec![-95.0; 60];
            for _ in 0..5 {
                let i = rng.gen_range(0..60);
                m[i] = rng.gen_range(-85.0..-60.0);
            }
            let sim = profile(0.0, &v);
            let meas = profile(0.0, &m);
            let base = composite_loss(&sim, &meas, 1.0, 2.0, &w).unwrap();
            let off = 13.0;
            let sim_o = profile(0.0, &v.iter().map(|x| x + off).collect::<Vec<_>>());
            let meas_o = profile(0.0, &m.iter().map(|x| x + off).collect::<Vec<_>>());
            let shifted = composite_loss(&sim_o, &meas_o, 1.0, 2.0, &w).unwrap();
            assert!((base.total - shifted.total).abs() < 1e-9);
        }
    }

    #[test]
    fn outage_ordering() {
        let w = LossWeights::default();
        let near = outage_loss(1.0, 0.0, &w);
        let far = outage_loss(5.0, 5.0, &w);
        assert!(near.total < far.total);
        assert!(near.outage && far.outage);
        assert!(near.total > PEAK_MISMATCH_PENALTY);
    }
}
