//! Central finite-difference verification of reverse-mode gradients.
//!
//! Relative error per component is `|a - n| / max(1e-8, |a| + |n|)` where `a`
//! is the analytic and `n` the numeric derivative. Always runs in `f64`.

mod suite;

pub use suite::{model_suite, op_suite, run_suite, suite_config, SuiteEntry, SUITE_TOLERANCE};

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Input (or parameter) position of the worst component.
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub components: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_relative_error: 0.0,
            worst_input: 0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            components: 0,
        }
    }

    fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) -> Result<()> {
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite(format!("gradient of input {input} at index {index}")));
        }
        let err = relative_error(analytic, numeric);
        self.components += 1;
        if err > self.max_relative_error || self.components == 1 {
            self.max_relative_error = err;
            self.worst_input = input;
            self.worst_index = index;
            self.analytic = analytic;
            self.numeric = numeric;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / DENOM_FLOOR.max(analytic.abs() + numeric.abs())
}

/// Checks `f` at `point`. `f` receives one trainable leaf per input tensor and
/// must return a single-element value.
#[allow(clippy::needless_range_loop)]
pub fn grad_check<F>(f: F, point: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.input(t.clone().requires_grad())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::empty();
    let mut work: Vec<Tensor<f64>> = point.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let zeros = vec![0.0; point[i].len()];
        let analytic = grads.get(*v).unwrap_or(&zeros).to_vec();
        for j in 0..point[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            report.record(i, j, analytic[j], (up - down) / (2.0 * h))?;
        }
    }
    Ok(report)
}

/// Checks the gradient of a loss built from parameters in `params`. `f` must
/// bind parameters through [`Tape::param`] and be a pure function of their
/// values.
#[allow(clippy::needless_range_loop)]
pub fn grad_check_params<F>(params: &mut ParamStore<f64>, mut f: F, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    scalar_of(&tape, out)?;
    tape.backward_into(out, params)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        .collect();
    params.zero_grad();

    let mut report = GradCheckReport::empty();
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + h;
            let mut t = Tape::new();
            let o = f(&mut t, params)?;
            let up = scalar_of(&t, o)?;
            params.get_mut(id).data_mut()[j] = orig - h;
            let mut t = Tape::new();
            let o = f(&mut t, params)?;
            let down = scalar_of(&t, o)?;
            params.get_mut(id).data_mut()[j] = orig;
            report.record(i, j, analytic[i][j], (up - down) / (2.0 * h))?;
        }
    }
    Ok(report)
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::shape("grad_check", format!("function must be scalar, got shape {:?}", t.shape())));
    }
    let s = t.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(s)
}
