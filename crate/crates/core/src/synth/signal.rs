//! Noisy piecewise-constant signals with known change points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySignalSpec {
    pub num_segments: usize,
    pub value_range: [f64; 2],
    /// Half-width of the uniform noise.
    pub noise_amplitude: f64,
    pub num_samples: usize,
    /// Output channels; each transition changes one channel.
    pub dimension: usize,
    /// Segment values are drawn from this many evenly spaced levels.
    pub levels: usize,
    pub seed: u64,
}

impl Default for ToySignalSpec {
    fn default() -> Self {
        Self {
            num_segments: 4,
            value_range: [0.0, 1.0],
            noise_amplitude: 0.1,
            num_samples: 200,
            dimension: 1,
            levels: 5,
            seed: 0,
        }
    }
}

impl ToySignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_segments == 0 {
            return Err(Error::invalid("signal needs at least one segment"));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(Error::invalid("noise amplitude must be non-negative"));
        }
        if self.num_samples == 0 || self.dimension == 0 {
            return Err(Error::invalid("signal needs samples and at least one channel"));
        }
        if self.levels < 2 || !(self.value_range[0] < self.value_range[1]) {
            return Err(Error::invalid("signal needs >= 2 levels over a non-empty value range"));
        }
        Ok(())
    }

    /// Minimum spacing between transitions (and from the ends of `[0, 1]`).
    pub fn min_separation(&self) -> f64 {
        1.0 / (4.0 * self.num_segments as f64)
    }
}

/// Exact piecewise-constant function; `t` equal to a transition time belongs
/// to the segment on its left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    pub transitions: Vec<f64>,
    /// `segments × dimension`.
    pub values: Vec<Vec<f64>>,
}

impl PiecewiseConstant {
    pub fn segment(&self, t: f64) -> usize {
        self.transitions.partition_point(|&u| u < t)
    }

    pub fn eval(&self, t: f64) -> &[f64] {
        &self.values[self.segment(t)]
    }

    pub fn dimension(&self) -> usize {
        self.values[0].len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySignal {
    pub times: Vec<f64>,
    /// `num_samples × dimension`, row-major.
    pub values: Vec<f64>,
    pub clean: PiecewiseConstant,
    pub noise_amplitude: f64,
}

impl ToySignal {
    pub fn dimension(&self) -> usize {
        self.clean.dimension()
    }

    pub fn transitions(&self) -> &[f64] {
        &self.clean.transitions
    }

    /// Noise-free values at the sample times, row-major.
    pub fn clean_values(&self) -> Vec<f64> {
        self.times.iter().flat_map(|&t| self.clean.eval(t).to_vec()).collect()
    }
}

/// Samples `y = clean(t) + U(−a, a)` at evenly spaced times `(i + ½)/N`.
pub fn generate_1d_signal(spec: &ToySignalSpec) -> Result<ToySignal> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_trans = spec.num_segments - 1;
    let sep = spec.min_separation();

    // n transitions leave n + 1 gaps, each at least `sep` wide; spread the
    // remaining slack with sorted uniforms.
    let slack = 1.0 - (n_trans + 1) as f64 * sep;
    let mut cuts: Vec<f64> = (0..n_trans).map(|_| rng.random::<f64>() * slack).collect();
    cuts.sort_by(f64::total_cmp);
    let transitions: Vec<f64> = cuts.iter().enumerate().map(|(i, c)| c + (i + 1) as f64 * sep).collect();

    let [lo, hi] = spec.value_range;
    let level = |k: usize| lo + (hi - lo) * k as f64 / (spec.levels - 1) as f64;
    let mut current: Vec<usize> = (0..spec.dimension).map(|_| rng.random_range(0..spec.levels)).collect();
    let mut values = vec![current.iter().map(|&k| level(k)).collect::<Vec<_>>()];
    for _ in 0..n_trans {
        let ch = rng.random_range(0..spec.dimension);
        let mut next = rng.random_range(0..spec.levels - 1);
        if next >= current[ch] {
            next += 1;
        }
        current[ch] = next;
        values.push(current.iter().map(|&k| level(k)).collect());
    }
    let clean = PiecewiseConstant { transitions, values };

    let a = spec.noise_amplitude;
    let times: Vec<f64> = (0..spec.num_samples)
        .map(|i| (i as f64 + 0.5) / spec.num_samples as f64)
        .collect();
    let mut samples = Vec::with_capacity(spec.num_samples * spec.dimension);
    for &t in &times {
        for &v in clean.eval(t) {
            let noise = if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
            samples.push(v + noise);
        }
    }
    Ok(ToySignal {
        times,
        values: samples,
        clean,
        noise_amplitude: a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_samples_lie_on_clean_function() {
        let spec = ToySignalSpec {
            noise_amplitude: 0.0,
            ..Default::default()
        };
        let s = generate_1d_signal(&spec).unwrap();
        assert_eq!(s.values, s.clean_values());
    }

    #[test]
    fn single_segment_is_constant() {
        let spec = ToySignalSpec {
            num_segments: 1,
            ..Default::default()
        };
        let s = generate_1d_signal(&spec).unwrap();
        assert!(s.transitions().is_empty());
        let first = s.clean.eval(0.0).to_vec();
        assert!(s.times.iter().all(|&t| s.clean.eval(t) == first.as_slice()));
    }

    #[test]
    fn ninety_six_transitions() {
        let spec = ToySignalSpec {
            num_segments: 97,
            num_samples: 4000,
            dimension: 16,
            seed: 3,
            ..Default::default()
        };
        let s = generate_1d_signal(&spec).unwrap();
        let tr = s.transitions();
        assert_eq!(tr.len(), 96);
        assert!(tr.windows(2).all(|w| w[1] - w[0] >= spec.min_separation() - 1e-12));
        assert!(tr[0] >= spec.min_separation() - 1e-12 && tr[95] <= 1.0 - spec.min_separation() + 1e-12);
    }

    #[test]
    fn every_transition_changes_some_channel() {
        let spec = ToySignalSpec {
            num_segments: 30,
            dimension: 4,
            seed: 9,
            ..Default::default()
        };
        let s = generate_1d_signal(&spec).unwrap();
        for w in s.clean.values.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = ToySignalSpec::default();
        assert_eq!(generate_1d_signal(&spec).unwrap(), generate_1d_signal(&spec).unwrap());
        let other = ToySignalSpec { seed: 1, ..spec };
        assert_ne!(generate_1d_signal(&other).unwrap().values, generate_1d_signal(&ToySignalSpec::default()).unwrap().values);
    }

    #[test]
    fn boundary_time_belongs_to_left_segment() {
        let pc = PiecewiseConstant {
            transitions: vec![0.5],
            values: vec![vec![0.0], vec![1.0]],
        };
        assert_eq!(pc.eval(0.5), &[0.0]);
        assert_eq!(pc.eval(0.5000001), &[1.0]);
    }
}
