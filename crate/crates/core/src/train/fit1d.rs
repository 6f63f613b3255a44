//! Fitting an MLP to a noisy piecewise-constant 1-D signal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::schedule::LrSchedule;
use crate::encoding::{Activation, TimeEncoding};
use crate::error::{Error, Result};
use crate::metrics::detect_peaks;
use crate::nn::{Mlp, MlpSpec, TimeEncoder};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::synth::ToySignal;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fit1dConfig {
    pub encoding: TimeEncoding,
    pub raw_passthrough: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub seed: u64,
    /// Learning-rate multipliers for the step transition points and
    /// steepnesses.
    pub u_lr_scale: f64,
    pub beta_lr_scale: f64,
    /// Project transition points back into the sampled time range after
    /// every update.
    pub clamp_transitions: bool,
    /// Steps sharper than this are transition candidates.
    pub beta_threshold: f64,
    /// Half-width (in time units) of the averaging window used to detect
    /// changes in the fitted function.
    pub change_half_window: f64,
}

impl Default for Fit1dConfig {
    fn default() -> Self {
        Self {
            encoding: TimeEncoding::Step { dim: 16 },
            raw_passthrough: false,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            epochs: 3000,
            lr: 1e-2,
            lr_final: 1e-4,
            seed: 0,
            u_lr_scale: 10.0,
            beta_lr_scale: 10.0,
            clamp_transitions: false,
            beta_threshold: 0.05,
            change_half_window: 0.0025,
        }
    }
}

/// Trained `t → y` predictor.
#[derive(Clone, Debug)]
pub struct Fit1dModel<T> {
    pub store: ParamStore<T>,
    pub encoder: TimeEncoder,
    pub mlp: Mlp,
}

impl<T: Scalar> Fit1dModel<T> {
    pub fn new(config: &Fit1dConfig, out_dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = TimeEncoder::new(&mut store, "time", config.encoding, config.raw_passthrough, &mut rng)?;
        if encoder.width() == 0 {
            return Err(Error::invalid("1-D fit needs time as an input"));
        }
        let mlp = Mlp::new(
            &mut store,
            "mlp",
            MlpSpec {
                in_dim: encoder.width(),
                hidden: config.hidden.clone(),
                out_dim: Some(out_dim),
                activation: config.activation,
                skip: None,
            },
            &mut rng,
        )?;
        Ok(Self { store, encoder, mlp })
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_width()
    }

    fn encode(&self, times: &[T]) -> Result<Tensor<T>> {
        let mut g = Graph::no_grad();
        let p = self.store.detached();
        Ok(self.encoder.encode(&mut g, &p, times)?.expect("time encoder has width"))
    }

    fn head(&self, enc: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::no_grad();
        Ok(self.mlp.forward(&mut g, &self.store.detached(), enc)?.into_vec())
    }

    /// Row-major `times.len() × out_dim` predictions.
    pub fn predict(&self, times: &[T]) -> Result<Vec<T>> {
        self.head(&self.encode(times)?)
    }

    /// Predictions with step `k` held at its pre-transition value 0.
    pub fn predict_without_step(&self, times: &[T], k: usize) -> Result<Vec<T>> {
        let enc = self.encode(times)?;
        let w = enc.cols();
        let mut data = enc.into_vec();
        for row in data.chunks_exact_mut(w) {
            row[k] = T::zero();
        }
        self.head(&Tensor::matrix(times.len(), w, data)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit1dReport {
    pub encoding: String,
    pub parameter_count: usize,
    pub final_loss: f64,
    /// Mean squared error against the clean function at the sample times.
    pub mse_to_clean: f64,
    /// Mean squared error against the noisy samples (the training loss).
    pub mse_to_noisy: f64,
    /// Transition times read off the learned steps (empty for other encodings).
    pub recovered_transitions: Vec<f64>,
    /// Change points found in the fitted function itself.
    pub detected_changes: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

/// Full-batch Adam fit of `config`'s network to `signal`.
pub fn fit_1d<T: Scalar>(signal: &ToySignal, config: &Fit1dConfig) -> Result<(Fit1dModel<T>, Fit1dReport)> {
    if signal.times.is_empty() {
        return Err(Error::invalid("signal has no samples"));
    }
    let dim = signal.dimension();
    let mut model = Fit1dModel::<T>::new(config, dim)?;
    let times: Vec<T> = signal.times.iter().map(|&t| T::lit(t)).collect();
    let n = times.len();
    let target = Tensor::matrix(n, dim, signal.values.iter().map(|&v| T::lit(v)).collect())?;
    let mut adam = AdamState::new(&model.store, AdamConfig::default());
    if let Some((u, b)) = model.encoder.step_params() {
        adam.set_lr_scale(u, config.u_lr_scale);
        adam.set_lr_scale(b, config.beta_lr_scale);
    }
    let schedule = LrSchedule {
        initial: config.lr,
        final_lr: config.lr_final,
        drop_fraction: 1.0,
        iterations: config.epochs,
    };
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let enc = model.encoder.encode(&mut g, &p, &times)?.expect("time encoder has width");
        let pred = model.mlp.forward(&mut g, &p, &enc)?;
        let diff = g.sub(&pred, &target)?;
        let sq = g.square(&diff)?;
        let loss = g.mean(&sq)?;
        loss_trace.push(loss.item()?.as_f64());
        let grads = g.backward(&loss)?;
        adam.step(&mut model.store, &p.gradients(&grads), schedule.at(epoch), None)?;
        if let (true, Some((u, _))) = (config.clamp_transitions, model.encoder.step_params()) {
            let (lo, hi) = (times[0], times[n - 1]);
            let clamped: Vec<T> = model.store.get(u).data().iter().map(|&v| v.max(lo).min(hi)).collect();
            model.store.set(u, Tensor::new(model.store.get(u).shape().to_vec(), clamped)?)?;
        }
    }

    let pred: Vec<f64> = model.predict(&times)?.iter().map(|v| v.as_f64()).collect();
    let clean = signal.clean_values();
    let mse = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    let recovered_transitions = recover_transitions(&model, signal, config.beta_threshold)?;
    let spacing = (signal.times[signal.times.len() - 1] - signal.times[0]) / (signal.times.len().max(2) - 1) as f64;
    let half_window = (config.change_half_window / spacing).round() as usize;
    let detected_changes = detect_function_changes(&pred, signal, half_window)?;
    let report = Fit1dReport {
        encoding: config.encoding.label(),
        parameter_count: model.store.num_scalars(),
        final_loss: mse(&pred, &signal.values),
        mse_to_clean: mse(&pred, &clean),
        mse_to_noisy: mse(&pred, &signal.values),
        recovered_transitions,
        detected_changes,
        loss_trace,
    };
    Ok((model, report))
}

fn max_channel_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Transition times encoded by the learned steps.
///
/// A step is a candidate when its steepness is below `beta_threshold` and
/// its transition point lies inside the sampled range; it is influential
/// when holding it at 0 moves the fit by more than the noise amplitude at
/// some sample. Influential steps closer than two sample spacings are one
/// transition, kept only if the fit changes by more than the noise amplitude
/// across it.
pub fn recover_transitions<T: Scalar>(model: &Fit1dModel<T>, signal: &ToySignal, beta_threshold: f64) -> Result<Vec<f64>> {
    let Some(step) = model.encoder.step_snapshot(&model.store) else {
        return Ok(Vec::new());
    };
    let times: Vec<T> = signal.times.iter().map(|&t| T::lit(t)).collect();
    let (t_lo, t_hi) = (signal.times[0], signal.times[signal.times.len() - 1]);
    let base: Vec<f64> = model.predict(&times)?.iter().map(|v| v.as_f64()).collect();
    let dim = model.out_dim();
    let amp = signal.noise_amplitude;

    let mut influential: Vec<(f64, f64)> = Vec::new();
    for (k, (&u, &b)) in step.u.iter().zip(step.beta().iter()).enumerate() {
        let (u, b) = (u.as_f64(), b.as_f64());
        if !(b < beta_threshold) || !(u > t_lo && u < t_hi) {
            continue;
        }
        let removed: Vec<f64> = model.predict_without_step(&times, k)?.iter().map(|v| v.as_f64()).collect();
        if max_channel_gap(&base, &removed) > amp {
            influential.push((u, b));
        }
    }
    influential.sort_by(|a, b| a.0.total_cmp(&b.0));

    let spacing = (t_hi - t_lo) / (signal.times.len() - 1).max(1) as f64;
    let merge = 2.0 * spacing;
    let mut clusters: Vec<Vec<(f64, f64)>> = Vec::new();
    for s in influential {
        match clusters.last_mut() {
            Some(c) if s.0 - c[c.len() - 1].0 <= merge => c.push(s),
            _ => clusters.push(vec![s]),
        }
    }
    // Net change of the fit across each cluster, measured two steepness
    // widths out but never past halfway to a neighbouring cluster.
    let sample_at = |t: f64| signal.times.partition_point(|&s| s < t).min(signal.times.len() - 1);
    let mut out = Vec::with_capacity(clusters.len());
    for (i, c) in clusters.iter().enumerate() {
        let (first, last) = (c[0].0, c[c.len() - 1].0);
        let mut reach = c.iter().map(|s| 2.0 * s.1).fold(0.0, f64::max);
        if i > 0 {
            reach = reach.min(0.5 * (first - clusters[i - 1].last().unwrap().0));
        }
        if let Some(next) = clusters.get(i + 1) {
            reach = reach.min(0.5 * (next[0].0 - last));
        }
        let reach = reach.max(spacing);
        let left = sample_at(first - reach).saturating_sub(1);
        let right = sample_at(last + reach);
        let jump = max_channel_gap(&base[left * dim..(left + 1) * dim], &base[right * dim..(right + 1) * dim]);
        if jump > amp {
            out.push(c.iter().map(|s| s.0).sum::<f64>() / c.len() as f64);
        }
    }
    Ok(out)
}

/// Sample gaps where the fitted function changes by more than the noise
/// amplitude.
///
/// The change across gap `i` is the largest channel difference between the
/// means of the `half_window` samples after and before it, so a step smeared
/// over a few samples still gives one peak. Peaks are kept at least
/// `max(3, half_window)` samples apart and reported as gap midpoints.
pub fn detect_function_changes(pred: &[f64], signal: &ToySignal, half_window: usize) -> Result<Vec<f64>> {
    let dim = signal.dimension();
    let n = signal.times.len();
    if pred.len() != n * dim {
        return Err(Error::invalid("prediction length does not match signal"));
    }
    let h = half_window.max(1);
    let mean = |lo: usize, hi: usize, c: usize| (lo..hi).map(|j| pred[j * dim + c]).sum::<f64>() / (hi - lo) as f64;
    let diffs: Vec<f64> = (0..n.saturating_sub(1))
        .map(|i| {
            let (lo, hi) = ((i + 1).saturating_sub(h), (i + 1 + h).min(n));
            (0..dim)
                .map(|c| (mean(i + 1, hi, c) - mean(lo, i + 1, c)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mids: Vec<f64> = signal.times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Ok(detect_peaks(&diffs, signal.noise_amplitude, h.max(3))
        .into_iter()
        .map(|i| mids[i])
        .collect())
}
