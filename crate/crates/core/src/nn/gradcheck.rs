//! Central finite-difference check of tape gradients.

use super::params::ParamSet;
use super::tape::{Bound, Tape, Var};
use crate::error::Result;

/// Outcome of one check.
///
/// `rel_error` is the norm-wise relative error of the whole gradient
/// vector, `|g_a - g_n| / max(|g_a|, |g_n|)`. Per-tensor figures are kept
/// for diagnostics; on an f32 substrate they are dominated by rounding
/// noise whenever a tensor's gradient is tiny.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub rel_error: f64,
    /// Distance of the nearest relu/abs input from its kink at the
    /// unperturbed point.
    pub kink_margin: f32,
    /// Perturbed evaluations in which some relu/abs input changed sign.
    /// A difference taken across a kink does not estimate the derivative,
    /// so a report with crossings says nothing about the backward pass.
    pub kink_crossings: usize,
    pub evaluations: usize,
    /// `(name, relative error, analytic gradient norm)` per tensor.
    pub per_param: Vec<(String, f64, f64)>,
}

/// Compares analytic gradients of the scalar built by `build` against
/// central differences with step `h`. The effective step is measured after
/// rounding `p +- h` to f32, and the loss is read back at f64 precision.
pub fn check_gradients<F>(params: &ParamSet, h: f32, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &Bound) -> Result<Var>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    check_gradients_for(params, &all, h, build)
}

/// As [`check_gradients`], restricted to the parameter tensors at `which`.
/// Useful when a loss stops gradients on purpose along some paths.
pub fn check_gradients_for<F>(params: &ParamSet, which: &[usize], h: f32, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &Bound) -> Result<Var>,
{
    let (analytic, kink_margin, sides) = {
        let mut tape = Tape::new();
        let p = tape.bind(params);
        let loss = build(&mut tape, &p)?;
        (tape.backward(loss)?.for_bound(&p), tape.kink_margin(), tape.kink_sides())
    };
    let eval = |set: &ParamSet| -> Result<(f64, bool)> {
        let mut tape = Tape::new();
        let p = tape.bind(set);
        let loss = build(&mut tape, &p)?;
        Ok((tape.scalar_f64(loss), tape.kink_sides() != sides))
    };
    let mut work = params.clone();
    let mut report =
        GradCheckReport { rel_error: 0.0, kink_margin, kink_crossings: 0, evaluations: 0, per_param: Vec::new() };
    let (mut diff_all, mut a_all, mut n_all) = (0.0f64, 0.0f64, 0.0f64);
    for &k in which {
        let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..params.tensors()[k].len() {
            let orig = params.tensors()[k].data()[j];
            let (up, down) = (orig + h, orig - h);
            work.tensors_mut()[k].data_mut()[j] = up;
            let (f_up, crossed_up) = eval(&work)?;
            work.tensors_mut()[k].data_mut()[j] = down;
            let (f_down, crossed_down) = eval(&work)?;
            work.tensors_mut()[k].data_mut()[j] = orig;
            report.evaluations += 2;
            report.kink_crossings += crossed_up as usize + crossed_down as usize;
            let numeric = (f_up - f_down) / (up as f64 - down as f64);
            let a = analytic[k].data()[j] as f64;
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        report.per_param.push((params.names()[k].clone(), ratio(diff2, a2, n2), a2.sqrt()));
        diff_all += diff2;
        a_all += a2;
        n_all += n2;
    }
    report.rel_error = ratio(diff_all, a_all, n_all);
    Ok(report)
}

fn ratio(diff2: f64, a2: f64, n2: f64) -> f64 {
    let scale = a2.sqrt().max(n2.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff2.sqrt() / scale
    }
}
