//! Fully connected layers and the shared time-input encoder.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    latent_encode_graph, positional_encode_rows, step_encode_graph, Activation, LatentTimeTable,
    PositionalEncodingConfig, StepEncodingParams, TimeEncoding,
};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect()
}

/// Affine layer `x·W + b` with `W: in×out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Register a layer whose weights are drawn from `U(−bound, bound)`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::matrix(in_dim, out_dim, uniform(rng, in_dim * out_dim, bound))?,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![1, out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = g.matmul(x, p.get(self.weight))?;
        g.add_row(&y, p.get(self.bias))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub in_dim: usize,
    /// Widths of the hidden layers, each followed by the activation.
    pub hidden: Vec<usize>,
    /// Linear output head; `None` returns the last hidden activation.
    pub out_dim: Option<usize>,
    pub activation: Activation,
    /// Hidden layer index whose input is concatenated with the network input.
    pub skip: Option<usize>,
}

/// Multilayer perceptron with an optional input skip connection.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    hidden: Vec<Linear>,
    head: Option<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: MlpSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.activation.validate()?;
        if let Some(s) = spec.skip {
            if s == 0 || s >= spec.hidden.len() {
                return Err(Error::invalid(format!("skip layer {s} outside 1..{}", spec.hidden.len())));
            }
        }
        let mut hidden = Vec::with_capacity(spec.hidden.len());
        let mut width = spec.in_dim;
        for (i, &out) in spec.hidden.iter().enumerate() {
            let fan_in = if spec.skip == Some(i) { width + spec.in_dim } else { width };
            let bound = match spec.activation {
                Activation::Relu => (6.0 / fan_in.max(1) as f64).sqrt(),
                Activation::Siren { .. } if i == 0 => 1.0 / fan_in.max(1) as f64,
                Activation::Siren { omega } => (6.0 / fan_in.max(1) as f64).sqrt() / omega,
                Activation::Gaussian { .. } => (6.0 / (fan_in + out).max(1) as f64).sqrt(),
            };
            hidden.push(Linear::new(store, &format!("{name}.l{i}"), fan_in, out, bound, rng)?);
            width = out;
        }
        let head = match spec.out_dim {
            Some(out) => {
                let bound = (6.0 / (width + out).max(1) as f64).sqrt();
                Some(Linear::new(store, &format!("{name}.out"), width, out, bound, rng)?)
            }
            None => None,
        };
        Ok(Self { spec, hidden, head })
    }

    pub fn out_width(&self) -> usize {
        self.spec
            .out_dim
            .unwrap_or_else(|| self.spec.hidden.last().copied().unwrap_or(self.spec.in_dim))
    }

    pub fn layers(&self) -> &[Linear] {
        &self.hidden
    }

    pub fn head(&self) -> Option<&Linear> {
        self.head.as_ref()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_from(g, p, x, None)
    }

    /// Forward pass where the first layer's pre-activation gets `extra`
    /// added before the activation (used to inject per-ray terms).
    pub fn forward_from<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound<T>,
        x: &Tensor<T>,
        extra: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        if x.cols() != self.spec.in_dim {
            return Err(Error::Shape {
                op: "mlp input",
                lhs: x.shape().to_vec(),
                rhs: vec![x.rows(), self.spec.in_dim],
            });
        }
        if self.hidden.is_empty() {
            return match &self.head {
                Some(head) => head.forward(g, p, x),
                None => Ok(x.clone()),
            };
        }
        let pre = self.first_preactivation(g, p, x)?;
        let pre = match extra {
            Some(e) => g.add(&pre, e)?,
            None => pre,
        };
        self.forward_after_first(g, p, x, &pre)
    }

    /// Affine part of the first hidden layer (the network's own input only).
    pub fn first_preactivation<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.hidden.first() {
            Some(layer) => layer.forward(g, p, x),
            None => Err(Error::invalid("network has no hidden layer")),
        }
    }

    /// Everything after the first layer's pre-activation; `x` is needed again
    /// only for a skip connection.
    pub fn forward_after_first<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound<T>,
        x: &Tensor<T>,
        pre: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut h = self.spec.activation.apply_graph(g, pre)?;
        for (i, layer) in self.hidden.iter().enumerate().skip(1) {
            let input = if self.spec.skip == Some(i) { g.concat(&[&h, x], 1)? } else { h };
            let pre = layer.forward(g, p, &input)?;
            h = self.spec.activation.apply_graph(g, &pre)?;
        }
        match &self.head {
            Some(head) => head.forward(g, p, &h),
            None => Ok(h),
        }
    }
}

/// Parameters and configuration turning normalized times into network inputs.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub kind: TimeEncoding,
    /// Append raw `t` next to the encoding.
    pub raw_passthrough: bool,
    step: Option<(ParamId, ParamId)>,
    latent: Option<(ParamId, Vec<f64>)>,
}

impl TimeEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: TimeEncoding,
        raw_passthrough: bool,
        rng: &mut R,
    ) -> Result<Self> {
        kind.validate()?;
        let mut step = None;
        let mut latent = None;
        match kind {
            TimeEncoding::Step { dim } => {
                let init = StepEncodingParams::<T>::init(dim, rng)?;
                let u = store.add(format!("{name}.u"), Tensor::matrix(1, dim, init.u)?)?;
                let b = store.add(format!("{name}.beta_raw"), Tensor::matrix(1, dim, init.beta_raw)?)?;
                step = Some((u, b));
            }
            TimeEncoding::Latent { bins, dim } => {
                let codes = uniform(rng, bins * dim, 0.1);
                let id = store.add(format!("{name}.codes"), Tensor::matrix(bins, dim, codes)?)?;
                latent = Some((id, LatentTimeTable::<f64>::uniform_edges(bins)));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            raw_passthrough,
            step,
            latent,
        })
    }

    pub fn width(&self) -> usize {
        self.kind.width() + usize::from(self.raw_passthrough && !matches!(self.kind, TimeEncoding::Raw))
    }

    /// Transition-point and raw-steepness parameters of a step encoder.
    pub fn step_params(&self) -> Option<(ParamId, ParamId)> {
        self.step
    }

    /// Current `H` parameters read from the store.
    pub fn step_snapshot<T: Scalar>(&self, store: &ParamStore<T>) -> Option<StepEncodingParams<T>> {
        self.step.map(|(u, b)| StepEncodingParams {
            u: store.get(u).to_vec(),
            beta_raw: store.get(b).to_vec(),
        })
    }

    /// `times.len() × width` encoding, or `None` when time is not an input.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<T>, times: &[T]) -> Result<Option<Tensor<T>>> {
        let n = times.len();
        let t_col = Tensor::matrix(n, 1, times.to_vec())?;
        let encoded = match self.kind {
            TimeEncoding::Disabled => None,
            TimeEncoding::Raw => Some(t_col.clone()),
            TimeEncoding::Step { .. } => {
                let (u, b) = self.step.expect("step params registered");
                Some(step_encode_graph(g, &t_col, p.get(u), p.get(b))?)
            }
            TimeEncoding::Positional { num_frequencies } => Some(positional_encode_rows(
                &t_col,
                &PositionalEncodingConfig::new(num_frequencies, false),
            )?),
            TimeEncoding::Latent { .. } => {
                let (id, edges) = self.latent.as_ref().expect("latent codes registered");
                let edges: Vec<T> = edges.iter().map(|&e| T::lit(e)).collect();
                Some(latent_encode_graph(g, times, &edges, p.get(*id))?)
            }
        };
        match (encoded, self.raw_passthrough) {
            (Some(e), true) if !matches!(self.kind, TimeEncoding::Raw) => Ok(Some(g.concat(&[&e, &t_col], 1)?)),
            (None, true) => Ok(Some(t_col)),
            (e, _) => Ok(e),
        }
    }
}

/// Index vector repeating each of `groups` ids `per_group` times.
pub fn repeat_index(groups: usize, per_group: usize) -> Arc<Vec<usize>> {
    Arc::new((0..groups).flat_map(|r| std::iter::repeat_n(r, per_group)).collect())
}
