use super::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gradient magnitude below which errors are measured absolutely.
const REL_FLOOR: f64 = 1e-3;

/// Agreement between analytic and central-difference gradients for one input.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub worst_element: usize,
    pub analytic_finite: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// Inputs whose error exceeds the tolerance or whose gradient is non-finite.
    pub fn failures(&self) -> Vec<usize> {
        self.params
            .iter()
            .filter(|p| !p.analytic_finite || !(p.max_rel_error <= self.tolerance))
            .map(|p| p.index)
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compare reverse-mode gradients of the scalar `f` against central
/// differences with the given `step`.
///
/// `f` receives the inputs attached to the graph it is handed; for the
/// finite-difference evaluations it receives detached copies on a
/// non-recording graph. Errors are `|a − n| / max(|a|, |n|, 1e-3)`.
pub fn gradient_check<T, F>(f: F, inputs: &[Tensor<T>], step: T, tolerance: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Tensor<T>]) -> Result<Tensor<T>>,
{
    if !(step > T::zero()) {
        return Err(Error::invalid("gradient check step must be positive"));
    }
    let mut graph = Graph::new();
    let attached: Vec<Tensor<T>> = inputs.iter().map(|t| graph.leaf(t)).collect();
    let root = f(&mut graph, &attached)?;
    if root.len() != 1 {
        return Err(Error::Shape {
            op: "gradient_check",
            lhs: root.shape().to_vec(),
            rhs: vec![1],
        });
    }
    let grads = graph.backward(&root)?;

    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::no_grad();
        Ok(f(&mut g, values)?.item()?.as_f64())
    };

    let mut params = Vec::with_capacity(inputs.len());
    for (index, (input, leaf)) in inputs.iter().zip(&attached).enumerate() {
        let analytic = grads.wrt(leaf);
        let analytic_finite = analytic.all_finite();
        let mut max_rel_error = 0.0f64;
        let mut worst_element = 0;
        if analytic_finite {
            for e in 0..input.len() {
                let mut plus = input.to_vec();
                let mut minus = input.to_vec();
                plus[e] = plus[e] + step;
                minus[e] = minus[e] - step;
                let mut vals: Vec<Tensor<T>> = inputs.iter().map(Tensor::detach).collect();
                vals[index] = Tensor::new(input.shape().to_vec(), plus)?;
                let fp = eval(&vals)?;
                vals[index] = Tensor::new(input.shape().to_vec(), minus)?;
                let fm = eval(&vals)?;
                let numeric = (fp - fm) / (2.0 * step.as_f64());
                let a = analytic.data()[e].as_f64();
                let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
                let err = (a - numeric).abs() / denom;
                if !(err <= max_rel_error) {
                    max_rel_error = err;
                    worst_element = e;
                }
            }
        } else {
            max_rel_error = f64::INFINITY;
        }
        params.push(ParamCheck {
            index,
            max_rel_error,
            worst_element,
            analytic_finite,
        });
    }
    Ok(GradCheckReport { params, tolerance })
}
