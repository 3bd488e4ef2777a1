//! Dense `f64` tensors and tape-based reverse-mode differentiation.
//!
//! Every trainable computation in the crate is a composition of the
//! primitives in [`Primitive`]; [`grad_check`] compares the tape's gradients
//! against central finite differences.

mod kernels;
mod tape;
mod tensor;

pub use kernels::{zoh_gain, ZOH_LIMIT};
#[allow(unused_imports)]
pub(crate) use kernels::{sigmoid, softplus};
pub use tape::{Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// A recorded evaluation: the tape plus the handles of its inputs and output.
#[derive(Clone, Debug)]
pub struct Trace {
    pub tape: Tape,
    pub inputs: Vec<Var>,
    pub output: Var,
}

impl Trace {
    pub fn output_value(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    /// Gradients of `seed . output` with respect to each input, in input order.
    pub fn backward(&self, seed: &Tensor) -> Result<Vec<Tensor>> {
        let grads = self.tape.backward(self.output, seed)?;
        Ok(self.inputs.iter().map(|&v| grads.wrt(v)).collect())
    }

    /// Recomputes the trace from its (possibly replaced) inputs.
    pub fn reevaluate(&mut self) -> Result<&Tensor> {
        self.tape.reevaluate()?;
        Ok(self.tape.value(self.output))
    }
}

/// Runs `graph` on a fresh tape with `inputs` registered as trainable leaves.
pub fn forward_eval<F>(graph: F, inputs: &[Tensor]) -> Result<(Tensor, Trace)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    for (i, t) in inputs.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("input {i}")));
        }
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let output = graph(&mut tape, &vars)?;
    let value = tape.value(output).clone();
    Ok((value, Trace { tape, inputs: vars, output }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat coordinate)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Finite-difference formula used by [`grad_check_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(p + e) - f(p - e)) / 2e`, error O(e^2).
    Central,
    /// `(8 (f(p + e) - f(p - e)) - (f(p + 2e) - f(p - 2e))) / 12e`, error O(e^4).
    FivePoint,
}

/// Compares tape gradients of a scalar-valued `graph` with central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps`, coordinate by coordinate.
pub fn grad_check<F>(graph: F, params: &[Tensor], epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(graph, params, epsilon, tolerance, Stencil::Central)
}

/// [`grad_check`] with a choice of difference formula.
pub fn grad_check_with<F>(
    graph: F,
    params: &[Tensor],
    epsilon: f64,
    tolerance: f64,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let (out, trace) = forward_eval(&graph, params)?;
    if out.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar output, got shape {:?}",
            out.shape()
        )));
    }
    let analytic = trace.backward(&Tensor::full(out.shape(), 1.0))?;
    let eval = |ps: &[Tensor]| -> Result<f64> { forward_eval(&graph, ps)?.0.item() };

    let mut work: Vec<Tensor> = params.to_vec();
    let at = |i: usize, j: usize, x: f64, work: &mut Vec<Tensor>| -> Result<f64> {
        work[i].data_mut()[j] = x;
        eval(work)
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
        pass: true,
    };
    for i in 0..params.len() {
        for j in 0..params[i].len() {
            let orig = params[i].data()[j];
            let d1 = at(i, j, orig + epsilon, &mut work)? - at(i, j, orig - epsilon, &mut work)?;
            let numeric = match stencil {
                Stencil::Central => d1 / (2.0 * epsilon),
                Stencil::FivePoint => {
                    let d2 = at(i, j, orig + 2.0 * epsilon, &mut work)?
                        - at(i, j, orig - 2.0 * epsilon, &mut work)?;
                    (8.0 * d1 - d2) / (12.0 * epsilon)
                }
            };
            work[i].data_mut()[j] = orig;
            let err = relative_error(analytic[i].data()[j], numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((i, j));
                report.worst_values = (analytic[i].data()[j], numeric);
            }
        }
    }
    report.pass = report.max_rel_err <= tolerance;
    Ok(report)
}
