//! Finite-difference verification of reverse-mode gradients.

use super::{Result, Tape, Tensor, TensorError, Var};

/// Gradients smaller than this are compared on an absolute scale; otherwise
/// a true zero against central-difference round-off would read as a huge
/// relative error.
const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input, element) of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub pass: bool,
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], track: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(track)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(TensorError::Usage(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    Ok((tape, vars, out))
}

/// Value of `f` and its reverse-mode gradient with respect to each input.
pub fn analytic_gradient<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = evaluate(f, inputs, true)?;
    let value = tape.value(out).data()[0];
    let grads = tape.backward(out, &Tensor::full(tape.value(out).shape().to_vec(), 1.0))?;
    let per_input = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    Ok((value, per_input))
}

/// Central differences `(f(x+h) − f(x−h)) / 2h`, one element at a time.
pub fn numerical_gradient<F>(f: &F, inputs: &[Tensor<f64>], step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..work.len() {
        let mut g = Vec::with_capacity(work[i].numel());
        for j in 0..work[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let (tape, _, o) = evaluate(f, &work, false)?;
            let plus = tape.value(o).data()[0];
            work[i].data_mut()[j] = orig - step;
            let (tape, _, o) = evaluate(f, &work, false)?;
            let minus = tape.value(o).data()[0];
            work[i].data_mut()[j] = orig;
            g.push((plus - minus) / (2.0 * step));
        }
        out.push(g);
    }
    Ok(out)
}

pub fn compare_gradients(analytic: &[Vec<f64>], numeric: &[Vec<f64>], tol: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        checked: 0,
        tol,
        pass: true,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&a, &n)) in a.iter().zip(n).enumerate() {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(MAGNITUDE_FLOOR);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || !rel.is_finite() {
                report.max_rel_err = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report.pass = report.max_rel_err.is_finite() && report.max_rel_err <= tol;
    report
}

/// Checks the reverse-mode gradient of scalar `f` against central
/// differences in double precision.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(TensorError::Usage("grad_check inputs must be finite".into()));
    }
    let (_, analytic) = analytic_gradient(&f, inputs)?;
    let numeric = numerical_gradient(&f, inputs, step)?;
    Ok(compare_gradients(&analytic, &numeric, tol))
}
