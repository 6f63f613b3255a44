//! Temporal-stability statistics, peak detection and transition recovery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indices of local maxima of `series` strictly above `threshold`.
///
/// Peaks are taken greedily from largest to smallest; a candidate closer than
/// `min_separation` indices to an already accepted peak is dropped. The
/// result is sorted by index. Plateaus report their first index.
pub fn detect_peaks(series: &[f64], threshold: f64, min_separation: usize) -> Vec<usize> {
    let n = series.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = series[i];
            v > threshold && (i == 0 || series[i - 1] < v) && (i + 1 == n || series[i + 1] <= v)
        })
        .collect();
    candidates.sort_by(|&a, &b| series[b].total_cmp(&series[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| a.abs_diff(c) >= min_separation) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    accepted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    /// Ground-truth transitions matched by a detection within tolerance.
    pub matched: usize,
    pub truth: usize,
    /// Detections not matched to any ground-truth transition.
    pub spurious: usize,
    /// Fraction of ground-truth transitions matched (1 when there are none).
    pub recall: f64,
    /// `|detected − true|` for every match.
    pub errors: Vec<f64>,
}

impl RecoveryStats {
    /// Fraction of detections that matched (1 when nothing was detected).
    pub fn precision(&self) -> f64 {
        let detected = self.matched + self.spurious;
        if detected == 0 {
            1.0
        } else {
            self.matched as f64 / detected as f64
        }
    }

    pub fn mean_error(&self) -> f64 {
        if self.errors.is_empty() {
            0.0
        } else {
            self.errors.iter().sum::<f64>() / self.errors.len() as f64
        }
    }
}

/// One-to-one matching of detected against true transition times.
///
/// Pairs are assigned greedily by increasing distance, so each true
/// transition and each detection is used at most once.
pub fn transition_recovery(detected: &[f64], truth: &[f64], tolerance: f64) -> RecoveryStats {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &d) in detected.iter().enumerate() {
        for (j, &t) in truth.iter().enumerate() {
            let e = (d - t).abs();
            if e <= tolerance {
                pairs.push((e, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut errors = Vec::new();
    for (e, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            errors.push(e);
        }
    }
    let matched = errors.len();
    RecoveryStats {
        matched,
        truth: truth.len(),
        spurious: detected.len() - matched,
        recall: if truth.is_empty() { 1.0 } else { matched as f64 / truth.len() as f64 },
        errors,
    }
}

/// Mean and entropy (nats) of a non-negative series.
///
/// Entropy is taken over `p_i = x_i / Σ x`; an all-zero series has entropy 0.
pub fn stability_stats(series: &[f64]) -> Result<(f64, f64)> {
    if let Some(v) = series.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("stability series has negative or NaN entry {v}")));
    }
    if series.is_empty() {
        return Ok((0.0, 0.0));
    }
    let sum: f64 = series.iter().sum();
    let mean = sum / series.len() as f64;
    if sum == 0.0 {
        return Ok((mean, 0.0));
    }
    let entropy = series
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / sum;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0);
    Ok((mean, entropy))
}

/// Median (mean of the middle pair for even lengths); 0 for an empty slice.
pub fn median(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let mut v = series.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Peaks of a stability series: values above `median_factor × median`,
/// at least `min_separation` grid steps apart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakConfig {
    pub median_factor: f64,
    pub min_separation: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            median_factor: 10.0,
            min_separation: 3,
        }
    }
}

/// Multiplier applied to mean MSE values when reported.
pub const MEAN_REPORT_SCALE: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Midpoints of consecutive grid times.
    pub times: Vec<f64>,
    pub mse_series: Vec<f64>,
    pub mean_mse: f64,
    /// `mean_mse × MEAN_REPORT_SCALE`.
    pub mean_mse_scaled: f64,
    pub entropy: f64,
    pub peak_threshold: f64,
    pub peak_indices: Vec<usize>,
    pub detected_transitions: Vec<f64>,
    /// Mean of the series at the peaks (0 without peaks).
    pub on_peak_mean: f64,
    /// Mean of the series away from the peaks and their direct neighbours.
    pub off_peak_mean: f64,
    pub recovery: Option<RecoveryStats>,
}

impl StabilityReport {
    /// Builds the report for frames rendered at `grid`; `series[i]` is the
    /// MSE between frames `i` and `i + 1`.
    pub fn new(grid: &[f64], series: Vec<f64>, peaks: &PeakConfig, truth: Option<(&[f64], f64)>) -> Result<Self> {
        if grid.len() != series.len() + 1 {
            return Err(Error::invalid("stability series must have one entry per grid interval"));
        }
        let (mean_mse, entropy) = stability_stats(&series)?;
        let times: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let peak_threshold = peaks.median_factor * median(&series);
        let peak_indices = detect_peaks(&series, peak_threshold, peaks.min_separation);
        let detected_transitions: Vec<f64> = peak_indices.iter().map(|&i| times[i]).collect();
        let on: Vec<f64> = peak_indices.iter().map(|&i| series[i]).collect();
        let off: Vec<f64> = (0..series.len())
            .filter(|i| peak_indices.iter().all(|p| p.abs_diff(*i) > 1))
            .map(|i| series[i])
            .collect();
        let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Ok(Self {
            recovery: truth.map(|(t, tol)| transition_recovery(&detected_transitions, t, tol)),
            times,
            mean_mse,
            mean_mse_scaled: mean_mse * MEAN_REPORT_SCALE,
            entropy,
            peak_threshold,
            on_peak_mean: avg(&on),
            off_peak_mean: avg(&off),
            peak_indices,
            detected_transitions,
            mse_series: series,
        })
    }

    /// `time,mse` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mse\n");
        for (t, m) in self.times.iter().zip(&self.mse_series) {
            s.push_str(&format!("{t},{m}\n"));
        }
        s
    }
}
