//! Power delay profile synthesis, thresholding, and peak analysis.
//!
//! A PDP is a uniform delay grid of per-bin powers in dBm with a floor
//! sentinel for "no energy" bins. Path powers are deposited non-coherently
//! (linear power sum) into the bin containing each delay; small-scale fading
//! is assumed averaged out of the measured profiles this is compared against.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raytrace::PathList;

/// Sentinel for bins with no energy; below any physical value so dB
/// arithmetic stays total.
pub const FLOOR_DBM: f64 = -200.0;

/// Significance window below the profile maximum, dB.
pub const SIGNIFICANCE_WINDOW_DB: f64 = 25.0;

/// Minimum peak prominence: max(5% of the 25 dB window, 1 dB).
pub const MIN_PROMINENCE_DB: f64 = 1.25;

/// Minimum separation between retained peaks, bins.
pub const MIN_PEAK_BIN_SEPARATION: usize = 3;

/// Minimum temporal separation between retained peaks, ns.
pub const MIN_PEAK_SEPARATION_NS: f64 = 15.0;

/// Default bin width matching a 1 GHz sounder bandwidth, ns.
pub const DEFAULT_BIN_WIDTH_NS: f64 = 1.0;

/// Maximum measurable delay of the reference sounder, ns.
pub const MAX_MEASURABLE_DELAY_NS: f64 = 4094.0;

#[derive(Debug, Error)]
pub enum PdpError {
    #[error("path list is empty; no profile to synthesize")]
    EmptyPathList,
    #[error("all bins fall below the threshold {threshold_dbm} dBm")]
    AllBelowThreshold { threshold_dbm: f64 },
    #[error("profile is empty")]
    EmptyProfile,
    #[error("bin width {0} ns must be > 0")]
    BadBinWidth(f64),
    #[error("failed to read PDP file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("PDP file {path} line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
}

/// Uniform-grid power delay profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDelayProfile {
    /// Delay of the first bin, ns.
    pub t0_ns: f64,
    pub bin_width_ns: f64,
    /// Per-bin power, dBm; floor bins hold `floor_dbm`.
    pub power_dbm: Vec<f64>,
    pub floor_dbm: f64,
}

impl PowerDelayProfile {
    pub fn len(&self) -> usize {
        self.power_dbm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_dbm.iter().all(|&p| p <= self.floor_dbm)
    }

    pub fn delay_at(&self, bin: usize) -> f64 {
        self.t0_ns + bin as f64 * self.bin_width_ns
    }

    /// Index and power of the strongest bin (first on ties).
    pub fn max_bin(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &p) in self.power_dbm.iter().enumerate() {
            if p > self.floor_dbm && best.map_or(true, |(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        best
    }

    /// Total linear power (mW) over all non-floor bins.
    pub fn total_linear_power_mw(&self) -> f64 {
        self.power_dbm
            .iter()
            .filter(|&&p| p > self.floor_dbm)
            .map(|&p| 10f64.powf(p / 10.0))
            .sum()
    }

    /// Drop bins beyond `max_delay_ns` (sounder delay range clamp).
    pub fn clamp_extent(&self, max_delay_ns: f64) -> PowerDelayProfile {
        let mut out = self.clone();
        while let Some(last) = out.power_dbm.last() {
            let _ = last;
            let last_delay = out.t0_ns + (out.power_dbm.len() - 1) as f64 * out.bin_width_ns;
            if last_delay > max_delay_ns && out.power_dbm.len() > 1 {
                out.power_dbm.pop();
            } else {
                break;
            }
        }
        out
    }
}

/// Bin each path's linear power into a uniform delay grid.
///
/// Paths below `cutoff_dbm` are excluded; the grid spans
/// [min delay - bin, max delay + bin].
pub fn synthesize_pdp(
    paths: &PathList,
    bin_width_ns: f64,
    cutoff_dbm: f64,
) -> Result<PowerDelayProfile, PdpError> {
    if !(bin_width_ns > 0.0) {
        return Err(PdpError::BadBinWidth(bin_width_ns));
    }
    let kept: Vec<_> = paths
        .paths
        .iter()
        .filter(|p| p.power_dbm >= cutoff_dbm)
        .collect();
    if kept.is_empty() {
        return Err(PdpError::EmptyPathList);
    }
    let min_delay = kept.iter().map(|p| p.delay_ns).fold(f64::INFINITY, f64::min);
    let max_delay = kept.iter().map(|p| p.delay_ns).fold(f64::NEG_INFINITY, f64::max);
    let t0_ns = min_delay - bin_width_ns;
    let n_bins = (((max_delay + bin_width_ns) - t0_ns) / bin_width_ns).floor() as usize + 1;

    let mut linear = vec![0.0f64; n_bins];
    for p in kept {
        let idx = (((p.delay_ns - t0_ns) / bin_width_ns).floor() as usize).min(n_bins - 1);
        linear[idx] += 10f64.powf(p.power_dbm / 10.0);
    }
    let power_dbm = linear
        .into_iter()
        .map(|l| if l > 0.0 { 10.0 * l.log10() } else { FLOOR_DBM })
        .collect();
    Ok(PowerDelayProfile {
        t0_ns,
        bin_width_ns,
        power_dbm,
        floor_dbm: FLOOR_DBM,
    })
}

/// Convolve the profile with a Gaussian pulse of the given standard
/// deviation, in linear power. Emulates a sounder's finite bandwidth:
/// ideal ray impulses become smooth lobes, which keeps the shape
/// discrepancy continuous in the path delays. The grid is extended by
/// 4 sigma on each side; total linear power is preserved.
pub fn smooth_pdp(p: &PowerDelayProfile, sigma_ns: f64) -> PowerDelayProfile {
    if !(sigma_ns > 0.0) || p.is_empty() {
        return p.clone();
    }
    let bin = p.bin_width_ns;
    let half = (4.0 * sigma_ns / bin).ceil() as i64;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64 * bin / sigma_ns;
            (-0.5 * t * t).exp()
        })
        .collect();
    let norm: f64 = kernel.iter().sum();
    let n = p.len() as i64;
    let mut linear = vec![0.0f64; (n + 2 * half) as usize];
    for (i, &dbm) in p.power_dbm.iter().enumerate() {
        if dbm <= p.floor_dbm {
            continue;
        }
        let power = 10f64.powf(dbm / 10.0);
        for (j, &k) in kernel.iter().enumerate() {
            linear[i + j] += power * k / norm;
        }
    }
    let power_dbm = linear
        .into_iter()
        .map(|l| if l > 0.0 { 10.0 * l.log10() } else { p.floor_dbm })
        .collect();
    PowerDelayProfile {
        t0_ns: p.t0_ns - half as f64 * bin,
        bin_width_ns: bin,
        power_dbm,
        floor_dbm: p.floor_dbm,
    }
}

/// Apply the omni-PDP threshold: bins below
/// max(noise floor + 5 dB, peak - 25 dB) are set to floor.
pub fn threshold_pdp(
    p: &PowerDelayProfile,
    noise_floor_dbm: f64,
) -> Result<PowerDelayProfile, PdpError> {
    let (_, peak) = p.max_bin().ok_or(PdpError::EmptyProfile)?;
    let threshold = (noise_floor_dbm + 5.0).max(peak - SIGNIFICANCE_WINDOW_DB);
    let mut out = p.clone();
    let mut any = false;
    for v in out.power_dbm.iter_mut() {
        if *v < threshold {
            *v = out.floor_dbm;
        } else if *v > out.floor_dbm {
            any = true;
        }
    }
    if !any {
        return Err(PdpError::AllBelowThreshold { threshold_dbm: threshold });
    }
    Ok(out)
}

/// One significant multipath peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub delay_ns: f64,
    pub power_dbm: f64,
    pub prominence_db: f64,
    pub bin_index: usize,
}

/// Significant peaks sorted by ascending delay.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakList {
    pub peaks: Vec<Peak>,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

/// Prominence of a local maximum: height above the higher of the two minima
/// separating it from higher terrain (or the profile edge).
fn prominence(power: &[f64], i: usize) -> f64 {
    let p = power[i];
    let mut left_min = p;
    let mut j = i;
    while j > 0 {
        j -= 1;
        if power[j] > p {
            break;
        }
        left_min = left_min.min(power[j]);
    }
    let mut right_min = p;
    let mut j = i;
    while j + 1 < power.len() {
        j += 1;
        if power[j] > p {
            break;
        }
        right_min = right_min.min(power[j]);
    }
    p - left_min.max(right_min)
}

/// Detect significant peaks: within 25 dB of the maximum, prominence of at
/// least 1.25 dB, then prioritized by descending power and greedily filtered
/// to at least 3 bins and 15 ns from every retained peak.
pub fn detect_peaks(p: &PowerDelayProfile) -> PeakList {
    let Some((_, max_power)) = p.max_bin() else {
        return PeakList::default();
    };
    let power = &p.power_dbm;
    let n = power.len();

    let mut candidates = Vec::new();
    for i in 0..n {
        if power[i] <= p.floor_dbm {
            continue;
        }
        let left_ok = i == 0 || power[i] > power[i - 1];
        let right_ok = i + 1 == n || power[i] > power[i + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        if power[i] < max_power - SIGNIFICANCE_WINDOW_DB {
            continue;
        }
        let prom = prominence(power, i);
        if prom < MIN_PROMINENCE_DB {
            continue;
        }
        candidates.push(Peak {
            delay_ns: p.delay_at(i),
            power_dbm: power[i],
            prominence_db: prom,
            bin_index: i,
        });
    }

    // Priority order: strongest first, earlier delay on ties.
    candidates.sort_by(|a, b| {
        b.power_dbm
            .total_cmp(&a.power_dbm)
            .then(a.delay_ns.total_cmp(&b.delay_ns))
    });

    let mut retained: Vec<Peak> = Vec::new();
    for c in candidates {
        let far_enough = retained.iter().all(|r| {
            c.bin_index.abs_diff(r.bin_index) >= MIN_PEAK_BIN_SEPARATION
                && (c.delay_ns - r.delay_ns).abs() >= MIN_PEAK_SEPARATION_NS
        });
        if far_enough {
            retained.push(c);
        }
    }
    retained.sort_by(|a, b| a.delay_ns.total_cmp(&b.delay_ns));
    PeakList { peaks: retained }
}

/// Linear map of peak powers from [max - 25 dB, max] onto [0, 1].
pub fn normalize_peak_powers(peaks: &PeakList) -> Vec<f64> {
    let Some(max_power) = peaks
        .peaks
        .iter()
        .map(|p| p.power_dbm)
        .fold(None::<f64>, |acc, p| Some(acc.map_or(p, |a| a.max(p))))
    else {
        return Vec::new();
    };
    peaks
        .peaks
        .iter()
        .map(|p| (p.power_dbm - (max_power - SIGNIFICANCE_WINDOW_DB)) / SIGNIFICANCE_WINDOW_DB)
        .collect()
}

// --- Measured-PDP CSV interface ---

/// Load a measured PDP from CSV with header `delay_ns,power_dbm` and a
/// strictly increasing, uniformly spaced delay grid.
pub fn load_pdp_csv(path: &Path) -> Result<PowerDelayProfile, PdpError> {
    let text = std::fs::read_to_string(path).map_err(|source| PdpError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pdp_csv(&text, &path.display().to_string())
}

pub fn parse_pdp_csv(text: &str, origin: &str) -> Result<PowerDelayProfile, PdpError> {
    let fmt_err = |line: usize, message: String| PdpError::Format {
        path: origin.to_string(),
        line,
        message,
    };
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            if line != "delay_ns,power_dbm" {
                return Err(fmt_err(1, format!("expected header 'delay_ns,power_dbm', got '{line}'")));
            }
            continue;
        }
        let mut parts = line.split(',');
        let delay: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| fmt_err(lineno + 1, "bad delay field".to_string()))?;
        let power: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| fmt_err(lineno + 1, "bad power field".to_string()))?;
        if parts.next().is_some() {
            return Err(fmt_err(lineno + 1, "too many fields".to_string()));
        }
        rows.push((delay, power));
    }
    if rows.is_empty() {
        return Err(PdpError::EmptyProfile);
    }
    let bin_width_ns = if rows.len() >= 2 {
        rows[1].0 - rows[0].0
    } else {
        DEFAULT_BIN_WIDTH_NS
    };
    if !(bin_width_ns > 0.0) {
        return Err(fmt_err(3, "delays must be strictly increasing".to_string()));
    }
    for (i, w) in rows.windows(2).enumerate() {
        let step = w[1].0 - w[0].0;
        if (step - bin_width_ns).abs() > 1e-6 * bin_width_ns.max(1.0) {
            return Err(fmt_err(
                i + 3,
                format!("non-uniform delay spacing: {step} ns vs {bin_width_ns} ns"),
            ));
        }
    }
    let power_dbm = rows
        .iter()
        .map(|&(_, p)| if p <= FLOOR_DBM { FLOOR_DBM } else { p })
        .collect();
    Ok(PowerDelayProfile {
        t0_ns: rows[0].0,
        bin_width_ns,
        power_dbm,
        floor_dbm: FLOOR_DBM,
    })
}

/// Write a PDP in the measured-PDP CSV format (all bins, floor included).
pub fn write_pdp_csv(p: &PowerDelayProfile, out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "delay_ns,power_dbm")?;
    for (i, &v) in p.power_dbm.iter().enumerate() {
        writeln!(out, "{},{}", p.delay_at(i), v)?;
    }
    Ok(())
}
