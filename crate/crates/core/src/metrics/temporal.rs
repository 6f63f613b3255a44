//! Fixed-view, fixed-illumination time sweeps.

use crate::error::{Error, Result};
use crate::field::ChronoField;
use crate::metrics::image::mse;
use crate::render::{par_chunks, CachedView, Camera, Image, SamplingConfig};
use crate::scalar::Scalar;

/// `n` evenly spaced times covering `[0, 1]`.
pub fn time_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Frames of a time sweep and the MSE between consecutive frames.
#[derive(Clone, Debug)]
pub struct TimeSweep {
    pub grid: Vec<f64>,
    pub frames: Vec<Image>,
    pub mse_series: Vec<f64>,
}

/// Render `camera` at every time of `grid` with illumination `illum` and
/// return the consecutive-frame MSE series. Frames are rendered
/// deterministically (no sample jitter), spread over `threads` workers.
pub fn temporal_mse_series<T: Scalar>(
    field: &ChronoField<T>,
    camera: &Camera,
    illum: &[f64],
    grid: &[f64],
    sampling: &SamplingConfig,
    threads: usize,
) -> Result<TimeSweep> {
    if grid.len() < 2 {
        return Err(Error::invalid("a time sweep needs at least two grid points"));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("time grid must be sorted"));
    }
    let view = CachedView::new(field, camera, sampling, 1024)?;
    let frames = par_chunks(grid.len(), threads, |i| Ok(vec![view.render(field, grid[i], illum)?.image]))?;
    let mse_series = frames
        .windows(2)
        .map(|w| mse(&w[0], &w[1], None))
        .collect::<Result<Vec<f64>>>()?;
    Ok(TimeSweep {
        grid: grid.to_vec(),
        frames,
        mse_series,
    })
}
