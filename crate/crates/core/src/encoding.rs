//! Time and coordinate encodings.
//!
//! The learnable step encoding maps normalized time through a bank of smooth
//! steps, one per transition point `u_k` with steepness `β_k`. The other
//! encodings are the baselines it is compared against.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// Floor added to `softplus(beta_raw)` so the effective steepness stays positive.
pub const BETA_FLOOR: f64 = 1e-4;
/// Initial steepness of every step.
pub const BETA_INIT: f64 = 0.3;

/// Smooth approximation of the unit step at `u` with steepness `beta`.
///
/// Both branches meet at `½` when `t = u` with matching slope `1/(2β)`.
pub fn smooth_step<T: Scalar>(t: T, u: T, beta: T) -> Result<T> {
    if !(beta > T::zero()) {
        return Err(Error::invalid(format!("step steepness must be positive, got {beta}")));
    }
    let z = t - u;
    let half = T::lit(0.5);
    Ok(if z <= T::zero() {
        half * (z / beta).exp()
    } else {
        T::one() - half * (-z / beta).exp()
    })
}

/// The discontinuous step the smooth version approximates: `0` for `t ≤ u`, else `1`.
pub fn hard_step<T: Scalar>(t: T, u: T) -> T {
    if t <= u {
        T::zero()
    } else {
        T::one()
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softplus_inverse<T: Scalar>(y: T) -> T {
    // y = log(1 + e^x)  =>  x = log(e^y − 1) = y + log(1 − e^{−y})
    y + (-(-y).exp()).ln_1p()
}

/// Learnable transition points and pre-activation steepnesses of `H(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEncodingParams<T> {
    pub u: Vec<T>,
    pub beta_raw: Vec<T>,
}

impl<T: Scalar> StepEncodingParams<T> {
    /// `u ~ U[0, 1)`, every `β` at its initial value.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("step encoding dimension must be >= 1"));
        }
        let u = (0..dim).map(|_| T::lit(rng.random::<f64>())).collect();
        Ok(Self {
            u,
            beta_raw: vec![Self::raw_for_beta(T::lit(BETA_INIT)); dim],
        })
    }

    pub fn from_parts(u: Vec<T>, beta: &[T]) -> Result<Self> {
        if u.is_empty() || u.len() != beta.len() {
            return Err(Error::invalid("step encoding needs matching, non-empty u and beta"));
        }
        if beta.iter().any(|&b| !(b > T::lit(BETA_FLOOR))) {
            return Err(Error::invalid("beta must exceed the steepness floor"));
        }
        Ok(Self {
            u,
            beta_raw: beta.iter().map(|&b| Self::raw_for_beta(b)).collect(),
        })
    }

    /// Pre-activation value whose effective steepness is `beta`.
    pub fn raw_for_beta(beta: T) -> T {
        softplus_inverse(beta - T::lit(BETA_FLOOR))
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Effective steepness `softplus(beta_raw) + 1e-4`.
    pub fn beta(&self) -> Vec<T> {
        self.beta_raw.iter().map(|&r| softplus(r) + T::lit(BETA_FLOOR)).collect()
    }
}

/// `H(t)`: element `k` is `smooth_step(t, u_k, β_k)`.
pub fn step_encode<T: Scalar>(t: T, params: &StepEncodingParams<T>) -> Result<Vec<T>> {
    params
        .u
        .iter()
        .zip(params.beta())
        .map(|(&u, b)| smooth_step(t, u, b))
        .collect()
}

/// Differentiable `H(t)` for a column of times `t (N×1)` → `N×M`.
pub fn step_encode_graph<T: Scalar>(
    g: &mut Graph<T>,
    t: &Tensor<T>,
    u: &Tensor<T>,
    beta_raw: &Tensor<T>,
) -> Result<Tensor<T>> {
    let sp = g.softplus(beta_raw)?;
    let beta = g.add_scalar(&sp, T::lit(BETA_FLOOR))?;
    g.smooth_step(t, u, &beta)
}

/// Frequency encoding `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L−1}πx), cos(2^{L−1}πx)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionalEncodingConfig {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl PositionalEncodingConfig {
    pub fn new(num_frequencies: usize, include_input: bool) -> Self {
        Self {
            num_frequencies,
            include_input,
        }
    }

    pub fn width(&self, in_dim: usize) -> usize {
        in_dim * (2 * self.num_frequencies + usize::from(self.include_input))
    }
}

pub fn positional_encode<T: Scalar>(x: &[T], config: &PositionalEncodingConfig) -> Vec<T> {
    let mut out = Vec::with_capacity(config.width(x.len()));
    positional_encode_into(x, config, &mut out);
    out
}

fn positional_encode_into<T: Scalar>(x: &[T], config: &PositionalEncodingConfig, out: &mut Vec<T>) {
    let pi = T::lit(std::f64::consts::PI);
    for &v in x {
        if config.include_input {
            out.push(v);
        }
        let mut freq = pi;
        for _ in 0..config.num_frequencies {
            let (s, c) = (freq * v).sin_cos();
            out.push(s);
            out.push(c);
            freq = freq + freq;
        }
    }
}

/// Encode each row of an `N×D` tensor, giving a constant `N×width(D)` tensor.
pub fn positional_encode_rows<T: Scalar>(x: &Tensor<T>, config: &PositionalEncodingConfig) -> Result<Tensor<T>> {
    let d = x.cols();
    let w = config.width(d);
    let mut out = Vec::with_capacity(x.rows() * w);
    for r in 0..x.rows() {
        positional_encode_into(x.row(r), config, &mut out);
    }
    Tensor::matrix(x.rows(), w, out)
}

/// Piecewise-constant learned codes over half-open time bins `[e_i, e_{i+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTimeTable<T> {
    bin_edges: Vec<T>,
    codes: Vec<Vec<T>>,
}

impl<T: Scalar> LatentTimeTable<T> {
    /// `bin_edges` must be strictly increasing with one more entry than `codes`.
    pub fn new(bin_edges: Vec<T>, codes: Vec<Vec<T>>) -> Result<Self> {
        if codes.is_empty() || bin_edges.len() != codes.len() + 1 {
            return Err(Error::invalid("latent table needs n+1 edges for n >= 1 codes"));
        }
        if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("latent bin edges must be strictly increasing"));
        }
        Ok(Self { bin_edges, codes })
    }

    /// `bins` equal-width bins over `[0, 1]`.
    pub fn uniform_edges(bins: usize) -> Vec<T> {
        (0..=bins).map(|i| T::lit(i as f64 / bins as f64)).collect()
    }

    pub fn num_bins(&self) -> usize {
        self.codes.len()
    }

    pub fn bin_index(&self, t: T) -> usize {
        bin_index(&self.bin_edges, t)
    }

    pub fn encode(&self, t: T) -> &[T] {
        &self.codes[self.bin_index(t)]
    }
}

/// Bin containing `t` for sorted `edges`; outside values clamp to the end bins
/// and a value on an interior edge belongs to the bin on its right.
pub fn bin_index<T: Scalar>(edges: &[T], t: T) -> usize {
    let bins = edges.len().saturating_sub(1).max(1);
    let right = edges[1..edges.len() - 1].partition_point(|&e| e <= t);
    right.min(bins - 1)
}

/// Code lookup for a batch of times; gradient reaches only the selected rows.
pub fn latent_encode_graph<T: Scalar>(
    g: &mut Graph<T>,
    times: &[T],
    edges: &[T],
    codes: &Tensor<T>,
) -> Result<Tensor<T>> {
    let index: Vec<usize> = times.iter().map(|&t| bin_index(edges, t)).collect();
    g.gather_rows(codes, Arc::new(index))
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    Relu,
    /// `sin(ω x)`.
    Siren { omega: f64 },
    /// `exp(−x² / (2a²))`.
    Gaussian { width: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Relu
    }
}

impl Activation {
    pub const SIREN_OMEGA: f64 = 30.0;
    pub const GAUSSIAN_WIDTH: f64 = 0.1;

    pub fn siren() -> Self {
        Activation::Siren {
            omega: Self::SIREN_OMEGA,
        }
    }

    pub fn gaussian(width: f64) -> Result<Self> {
        let a = Activation::Gaussian { width };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::Gaussian { width } if width == 0.0 || !width.is_finite() => {
                Err(Error::invalid("gaussian activation width must be non-zero"))
            }
            Activation::Siren { omega } if !omega.is_finite() => Err(Error::invalid("siren frequency must be finite")),
            _ => Ok(()),
        }
    }

    pub fn apply<T: Scalar>(&self, x: T) -> T {
        match *self {
            Activation::Relu => x.max(T::zero()),
            Activation::Siren { omega } => (T::lit(omega) * x).sin(),
            Activation::Gaussian { width } => (-(x * x) / T::lit(2.0 * width * width)).exp(),
        }
    }

    pub fn apply_graph<T: Scalar>(&self, g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.validate()?;
        match *self {
            Activation::Relu => g.relu(x),
            Activation::Siren { omega } => {
                let s = g.scale(x, T::lit(omega))?;
                g.sin(&s)
            }
            Activation::Gaussian { width } => {
                let sq = g.square(x)?;
                let s = g.scale(&sq, T::lit(-1.0 / (2.0 * width * width)))?;
                g.exp(&s)
            }
        }
    }
}

/// How (and whether) time enters a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeEncoding {
    /// Time is not an input at all.
    Disabled,
    /// Raw normalized time as a single input.
    Raw,
    /// Learnable step bank of dimension `dim`.
    Step { dim: usize },
    /// Frequency encoding of time.
    Positional { num_frequencies: usize },
    /// One learned code per equal-width time bin.
    Latent { bins: usize, dim: usize },
}

impl TimeEncoding {
    /// Output width (excluding any raw-time passthrough).
    pub fn width(&self) -> usize {
        match *self {
            TimeEncoding::Disabled => 0,
            TimeEncoding::Raw => 1,
            TimeEncoding::Step { dim } => dim,
            TimeEncoding::Positional { num_frequencies } => 2 * num_frequencies,
            TimeEncoding::Latent { dim, .. } => dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeEncoding::Step { dim: 0 } => Err(Error::invalid("step encoding dimension must be >= 1")),
            TimeEncoding::Latent { bins: 0, .. } | TimeEncoding::Latent { dim: 0, .. } => {
                Err(Error::invalid("latent table needs at least one bin and one channel"))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            TimeEncoding::Disabled => "disabled".into(),
            TimeEncoding::Raw => "raw".into(),
            TimeEncoding::Step { dim } => format!("step{dim}"),
            TimeEncoding::Positional { num_frequencies } => format!("positional{num_frequencies}"),
            TimeEncoding::Latent { bins, dim } => format!("latent{bins}x{dim}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_step_reference_values() {
        assert_eq!(smooth_step(0.4, 0.4, 0.3).unwrap(), 0.5);
        let b = 0.07;
        // t − u = β  →  1 − e⁻¹/2
        assert_abs_diff_eq!(smooth_step(0.2 + b, 0.2, b).unwrap(), 1.0 - (-1.0f64).exp() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(smooth_step(0.2 + b, 0.2, b).unwrap(), 0.8161, epsilon = 1e-4);
        // t − u = −10β  →  e⁻¹⁰/2
        let v = smooth_step(0.5 - 10.0 * b, 0.5, b).unwrap();
        assert_abs_diff_eq!(v, (-10.0f64).exp() / 2.0, epsilon = 1e-15);
        assert!((v - 2.27e-5).abs() < 1e-7);
    }

    #[test]
    fn smooth_step_rejects_non_positive_beta() {
        assert!(smooth_step(0.1, 0.2, 0.0).is_err());
        assert!(smooth_step(0.1, 0.2, -1.0).is_err());
    }

    #[test]
    fn one_sided_slopes_match_at_transition() {
        let (u, b, h) = (0.3, 0.2, 1e-7);
        let left = (smooth_step(u, u, b).unwrap() - smooth_step(u - h, u, b).unwrap()) / h;
        let right = (smooth_step(u + h, u, b).unwrap() - smooth_step(u, u, b).unwrap()) / h;
        assert_abs_diff_eq!(left, 1.0 / (2.0 * b), epsilon = 1e-5);
        assert_abs_diff_eq!(right, 1.0 / (2.0 * b), epsilon = 1e-5);
    }

    #[test]
    fn step_encode_examples() {
        let p = StepEncodingParams::from_parts(vec![0.2, 0.5, 0.8], &[0.3, 0.3, 0.3]).unwrap();
        let h = step_encode(0.2, &p).unwrap();
        assert_eq!(h[0], 0.5);
        assert_eq!(h.len(), 3);

        let sharp = StepEncodingParams::from_parts(vec![0.5], &[1.0001e-4]).unwrap();
        let hi: f64 = step_encode(0.6, &sharp).unwrap()[0];
        let lo: f64 = step_encode(0.4, &sharp).unwrap()[0];
        assert!((hi - 1.0).abs() < 1e-10 && lo.abs() < 1e-10);
    }

    #[test]
    fn init_follows_documented_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = StepEncodingParams::<f64>::init(64, &mut rng).unwrap();
        assert!(p.u.iter().all(|&u| (0.0..1.0).contains(&u)));
        for b in p.beta() {
            assert_abs_diff_eq!(b, BETA_INIT, epsilon = 1e-12);
        }
        assert!(StepEncodingParams::<f64>::init(0, &mut rng).is_err());
    }

    #[test]
    fn positional_encoding_examples() {
        let cfg = PositionalEncodingConfig::new(2, false);
        let v = positional_encode(&[0.0f64], &cfg);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0]);

        let v = positional_encode(&[1.0f64], &PositionalEncodingConfig::new(1, false));
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], -1.0, epsilon = 1e-15);

        let v = positional_encode(&[0.3f64], &PositionalEncodingConfig::new(15, false));
        assert_eq!(v.len(), 30);
        for l in 0..15 {
            let arg = 2f64.powi(l) * std::f64::consts::PI * 0.3;
            assert_abs_diff_eq!(v[2 * l as usize], arg.sin(), epsilon = 1e-9);
            assert_abs_diff_eq!(v[2 * l as usize + 1], arg.cos(), epsilon = 1e-9);
        }

        let with_input = PositionalEncodingConfig::new(3, true);
        assert_eq!(with_input.width(3), 21);
        assert_eq!(positional_encode(&[0.1f64, 0.2, 0.3], &with_input)[0], 0.1);
    }

    #[test]
    fn latent_table_binning() {
        let single = LatentTimeTable::new(vec![0.0, 1.0], vec![vec![7.0f64, 8.0]]).unwrap();
        for t in [-1.0, 0.0, 0.5, 1.0, 3.0] {
            assert_eq!(single.encode(t), &[7.0, 8.0]);
        }
        let codes = (0..4).map(|i| vec![i as f64]).collect();
        let four = LatentTimeTable::new(LatentTimeTable::uniform_edges(4), codes).unwrap();
        assert_eq!(four.bin_index(0.6), 2);
        assert_eq!(four.bin_index(0.5), 2, "interior edge goes right");
        assert_eq!(four.bin_index(0.25), 1);
        assert_eq!(four.bin_index(-0.2), 0);
        assert_eq!(four.bin_index(1.0), 3);
        assert_eq!(four.bin_index(1.7), 3);
        assert!(LatentTimeTable::new(vec![0.0, 0.0], vec![vec![1.0f64]]).is_err());
    }

    #[test]
    fn latent_gradient_reaches_only_selected_code() {
        let mut g = Graph::new();
        let codes = g.leaf(&Tensor::<f64>::matrix(4, 2, vec![0.0; 8]).unwrap());
        let edges = LatentTimeTable::<f64>::uniform_edges(4);
        let out = latent_encode_graph(&mut g, &[0.6], &edges, &codes).unwrap();
        let s = g.sum(&out).unwrap();
        let grad = g.backward(&s).unwrap().wrt(&codes);
        assert_eq!(grad.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn activation_variants() {
        assert_eq!(Activation::siren().apply(0.0f64), 0.0);
        assert_eq!(Activation::gaussian(1.0).unwrap().apply(0.0f64), 1.0);
        assert!(Activation::gaussian(0.0).is_err());
        assert_eq!(Activation::Relu.apply(-2.0f64), 0.0);

        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(2.0f64));
        let y = Activation::Relu.apply_graph(&mut g, &x).unwrap();
        let grads = g.backward(&y).unwrap();
        assert_eq!(grads.wrt(&x).item().unwrap(), 1.0);
    }

    #[test]
    fn encoding_widths_are_config_functions() {
        assert_eq!(TimeEncoding::Disabled.width(), 0);
        assert_eq!(TimeEncoding::Raw.width(), 1);
        assert_eq!(TimeEncoding::Step { dim: 16 }.width(), 16);
        assert_eq!(TimeEncoding::Positional { num_frequencies: 15 }.width(), 30);
        assert_eq!(TimeEncoding::Latent { bins: 8, dim: 4 }.width(), 4);
    }

    #[test]
    fn graph_step_encoding_matches_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = StepEncodingParams::<f64>::init(5, &mut rng).unwrap();
        let mut g = Graph::no_grad();
        let t = Tensor::from_f64(vec![2, 1], &[0.1, 0.77]).unwrap();
        let u = Tensor::new(vec![1, 5], p.u.clone()).unwrap();
        let br = Tensor::new(vec![1, 5], p.beta_raw.clone()).unwrap();
        let h = step_encode_graph(&mut g, &t, &u, &br).unwrap();
        for (row, tv) in [0.1, 0.77].iter().enumerate() {
            let want = step_encode(*tv, &p).unwrap();
            for k in 0..5 {
                assert_abs_diff_eq!(h.row(row)[k], want[k], epsilon = 1e-15);
            }
        }
    }
}
