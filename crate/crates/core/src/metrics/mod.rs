//! Image quality and temporal-stability metrics.

pub mod image;
pub mod stability;
pub mod temporal;

pub use image::{mse, psnr, psnr_from_mse, ssim};
pub use stability::{
    detect_peaks, median, stability_stats, transition_recovery, PeakConfig, RecoveryStats, StabilityReport,
    MEAN_REPORT_SCALE,
};
pub use temporal::{temporal_mse_series, time_grid, TimeSweep};
