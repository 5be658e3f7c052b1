//! Central finite-difference gradient checks.
//!
//! The numeric side only ever reads forward values, so it stays independent
//! of every backward rule it is used to verify.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

/// Magnitude below which gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor label, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, label: &str, idx: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((label.to_string(), idx, analytic, numeric));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks `d f / d inputs` where `f` builds a scalar from leaf vars.
pub fn check_inputs<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let x0 = t.data()[j];
            work[ti].data_mut()[j] = x0 + eps;
            let fp = eval(&work)?;
            work[ti].data_mut()[j] = x0 - eps;
            let fm = eval(&work)?;
            work[ti].data_mut()[j] = x0;
            report.record(&format!("input{ti}"), j, analytic[ti][j], (fp - fm) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar loss with respect to every trainable
/// parameter entry. Frozen padding rows are skipped.
pub fn check_params<F>(store: &ParamStore, loss: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(store, &mut tape)?;
    tape.backward(out)?;
    let grads = tape.param_grads();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(s, &mut tape)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for id in store.ids() {
        let value = store.get(id);
        let cols = *value.shape().last().unwrap();
        let frozen = store.frozen_row(id);
        for j in 0..value.len() {
            if frozen == Some(j / cols) {
                continue;
            }
            let x0 = value.data()[j];
            work.get_mut(id).data_mut()[j] = x0 + eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[j] = x0 - eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[j] = x0;
            let a = grads.get(id).map_or(0.0, |g| g[j]);
            report.record(store.name(id), j, a, (fp - fm) / (2.0 * eps));
        }
    }
    Ok(report)
}
