//! Gradient checks of every differentiable graph op.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradient_check, GradCheckReport, Graph, Tensor};
use crate::error::Result;

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: OpFn,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid shape")
}

/// Values bounded away from zero (for kinks of relu / |·|).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

/// Reduce `y` to a scalar with fixed pseudo-random weights so that every
/// output element carries a distinct upstream gradient.
fn probe(g: &mut Graph<f64>, y: &Tensor<f64>) -> Result<Tensor<f64>> {
    let n = y.len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let w = Tensor::new(y.shape().to_vec(), w)?;
    let p = g.mul(y, &w)?;
    g.sum(&p)
}

macro_rules! case {
    ($name:expr, [$($input:expr),*], |$g:ident, $v:ident| $body:expr) => {
        Case {
            name: $name,
            inputs: vec![$($input),*],
            f: Box::new(move |$g: &mut Graph<f64>, $v: &[Tensor<f64>]| {
                let y = $body?;
                probe($g, &y)
            }),
        }
    };
}

fn cases(seed: u64) -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    let gather_idx = Arc::new(vec![2, 0, 2, 1, 3]);
    let taps_idx = Arc::new(vec![[0u32, 1, 2, 3], [1, 1, 4, 0], [5, 2, 3, 4]]);
    let taps_w = Arc::new(vec![[0.1, 0.2, 0.3, 0.4], [0.25, 0.25, 0.4, 0.1], [0.7, 0.1, 0.1, 0.1]]);
    let delta = Arc::new((0..12).map(|_| r.random_range(0.05..0.4)).collect::<Vec<f64>>());
    vec![
        case!("add", [uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.add(&v[0], &v[1])),
        case!("sub", [uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.sub(&v[0], &v[1])),
        case!("mul", [uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.mul(&v[0], &v[1])),
        case!("add_row", [uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[1, 4], -1.0, 1.0)], |g, v| g.add_row(&v[0], &v[1])),
        case!("matmul", [uniform(r, &[3, 5], -1.0, 1.0), uniform(r, &[5, 2], -1.0, 1.0)], |g, v| g.matmul(&v[0], &v[1])),
        case!("exp", [uniform(r, &[2, 3], -2.0, 1.0)], |g, v| g.exp(&v[0])),
        case!("ln", [uniform(r, &[2, 3], 0.3, 3.0)], |g, v| g.ln(&v[0])),
        case!("sin", [uniform(r, &[2, 3], -3.0, 3.0)], |g, v| g.sin(&v[0])),
        case!("cos", [uniform(r, &[2, 3], -3.0, 3.0)], |g, v| g.cos(&v[0])),
        case!("relu", [away_from_zero(r, &[3, 3])], |g, v| g.relu(&v[0])),
        case!("sigmoid", [uniform(r, &[2, 3], -4.0, 4.0)], |g, v| g.sigmoid(&v[0])),
        case!("softplus", [uniform(r, &[2, 3], -4.0, 4.0)], |g, v| g.softplus(&v[0])),
        case!("neg", [uniform(r, &[2, 3], -1.0, 1.0)], |g, v| g.neg(&v[0])),
        case!("square", [uniform(r, &[2, 3], -1.0, 1.0)], |g, v| g.square(&v[0])),
        case!("scale", [uniform(r, &[2, 3], -1.0, 1.0)], |g, v| g.scale(&v[0], -1.7)),
        case!("add_scalar", [uniform(r, &[2, 3], -1.0, 1.0)], |g, v| g.add_scalar(&v[0], 0.4)),
        case!("mul_scalar", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[1], 0.5, 2.0)], |g, v| g.mul_scalar(&v[0], &v[1])),
        case!("concat_rows", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[1, 3], -1.0, 1.0)], |g, v| g.concat(&[&v[0], &v[1]], 0)),
        case!("concat_cols", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 2], -1.0, 1.0)], |g, v| g.concat(&[&v[0], &v[1]], 1)),
        case!("slice_cols", [uniform(r, &[3, 5], -1.0, 1.0)], |g, v| g.slice_cols(&v[0], 1, 4)),
        case!("slice_rows", [uniform(r, &[5, 2], -1.0, 1.0)], |g, v| g.slice_rows(&v[0], 1, 3)),
        case!("gather_rows", [uniform(r, &[4, 3], -1.0, 1.0)], |g, v| g.gather_rows(&v[0], gather_idx.clone())),
        case!("sum", [uniform(r, &[2, 3], -1.0, 1.0)], |g, v| g.sum(&v[0])),
        case!("mean", [uniform(r, &[2, 3], -1.0, 1.0)], |g, v| g.mean(&v[0])),
        case!("reshape", [uniform(r, &[2, 3], -1.0, 1.0)], |g, v| g.reshape(&v[0], vec![3, 2])),
        case!(
            "smooth_step",
            [uniform(r, &[5, 1], 0.0, 1.0), Tensor::new(vec![1, 3], vec![0.15, 0.5, 0.83]).expect("shape"), uniform(r, &[1, 3], 0.05, 0.4)],
            |g, v| g.smooth_step(&v[0], &v[1], &v[2])
        ),
        case!("interp_rows", [uniform(r, &[6, 2], -1.0, 1.0)], |g, v| g.interp_rows(&v[0], taps_idx.clone(), taps_w.clone())),
        case!("render_weights", [uniform(r, &[3, 4], 0.0, 3.0)], |g, v| g.render_weights(&v[0], delta.clone())),
        case!("composite", [uniform(r, &[3, 4], 0.0, 0.3), uniform(r, &[12, 3], 0.0, 1.0)], |g, v| g.composite(&v[0], &v[1])),
    ]
}

/// Central-difference check of every op at `tolerance` (max relative error).
pub fn op_gradient_suite(seed: u64, tolerance: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    cases(seed)
        .into_iter()
        .map(|c| Ok((c.name, gradient_check(&c.f, &c.inputs, 1e-6, tolerance)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for (name, rep) in op_gradient_suite(0, 1e-4).unwrap() {
            assert!(rep.passed(), "{name}: {}", rep.max_rel_error());
        }
    }
}
