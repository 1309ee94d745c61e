use super::params::{ParamVars, Params};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares tape gradients of `f` at `params` against central differences
/// with step `h`.
///
/// The relative error of one entry is
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`; the report
/// carries the maximum over all entries.
pub fn grad_check<F>(params: &Params, h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamVars<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars = params.register(&tape);
    let loss = f(&tape, &vars)?;
    let analytic = tape.backward(loss)?.into_named();

    let eval = |p: &Params| -> Result<f64> {
        let tape = Tape::new();
        let vars = p.register(&tape);
        Ok(f(&tape, &vars)?.item())
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).map_or(0, |t| t.len());
        for i in 0..n {
            let orig = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[&name].data()[i];
            let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
