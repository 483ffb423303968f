use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{RadarError, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are judged on absolute error.
    pub denom_floor: f64,
    /// Check at most this many entries per tensor (evenly strided).
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            denom_floor: 1e-7,
            max_entries_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Compares the tape gradient of a scalar loss against central differences.
///
/// `loss` builds the forward computation for the given parameter values and
/// returns the scalar output. It must be deterministic: the harness evaluates
/// it twice at the base point and refuses to continue if the values differ.
pub fn finite_diff_check<F>(
    params: &ParamStore<f64>,
    loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var,
{
    let eval = |p: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let out = loss(p, &mut tape);
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let out = loss(params, &mut tape);
    let base = tape.scalar(out);
    if eval(params).to_bits() != base.to_bits() {
        return Err(RadarError::Precondition(
            "loss is not deterministic; disable dropout and sampling".into(),
        ));
    }
    let grads = tape.backward(out).for_store(params);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = params.clone();
    for id in params.ids() {
        let n = params.get(id).len();
        let stride = match opts.max_entries_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let numeric = central_difference(&mut probe, id, i, opts.step, &eval);
            let analytic = grads[id.index()].data()[i];
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(opts.denom_floor);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

fn central_difference(
    probe: &mut ParamStore<f64>,
    id: ParamId,
    i: usize,
    h: f64,
    eval: &impl Fn(&ParamStore<f64>) -> f64,
) -> f64 {
    let orig = probe.get(id).data()[i];
    probe.get_mut(id).data_mut()[i] = orig + h;
    let plus = eval(probe);
    probe.get_mut(id).data_mut()[i] = orig - h;
    let minus = eval(probe);
    probe.get_mut(id).data_mut()[i] = orig;
    (plus - minus) / (2.0 * h)
}
