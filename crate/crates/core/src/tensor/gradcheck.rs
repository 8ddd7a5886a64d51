//! Central finite-difference verification of tape gradients.

use rayon::prelude::*;

use super::{Float, ParamId, ParameterStore, Result, Tape, Tensor, Var};

/// Denominator floor for relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: Float = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: Float,
    /// Tensor (input index or parameter name) and flat coordinate of the worst error.
    pub worst: Option<(String, usize)>,
    pub per_tensor: Vec<(String, Float)>,
    pub checked: usize,
    pub tol: Float,
    pub passed: bool,
    /// Set when the function was not finite at a probe point.
    pub failure: Option<String>,
}

pub fn rel_err(analytic: Float, numeric: Float) -> Float {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Largest relative error between two gradient vectors and where it occurs.
pub fn check_gradients(analytic: &[Float], numeric: &[Float]) -> (Float, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .enumerate()
        .fold((0.0, 0), |(best, at), (i, e)| if e > best { (e, i) } else { (best, at) })
}

fn central(plus: Float, minus: Float, eps: Float) -> Float {
    (plus - minus) / (2.0 * eps)
}

fn assemble(mut per_tensor: Vec<(String, Float, usize)>, checked: usize, tol: Float) -> GradCheckReport {
    let worst = per_tensor
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i);
    let max_rel_err = worst.map_or(0.0, |i| per_tensor[i].1);
    let worst = worst.map(|i| (per_tensor[i].0.clone(), per_tensor[i].2));
    GradCheckReport {
        max_rel_err,
        worst,
        per_tensor: per_tensor.drain(..).map(|(n, e, _)| (n, e)).collect(),
        checked,
        tol,
        passed: max_rel_err <= tol,
        failure: None,
    }
}

fn failed(msg: String, tol: Float) -> GradCheckReport {
    GradCheckReport {
        max_rel_err: Float::INFINITY,
        worst: None,
        per_tensor: Vec::new(),
        checked: 0,
        tol,
        passed: false,
        failure: Some(msg),
    }
}

/// Checks `f`'s tape gradients with respect to each tensor in `point`.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: Float, tol: Float) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let inputs: Vec<Var> = point.iter().map(|t| tape.input(t.clone())).collect();
    let loss = match f(&mut tape, &inputs) {
        Ok(l) => l,
        Err(e) => return Ok(failed(format!("forward failed at the base point: {e}"), tol)),
    };
    let grads = tape.backward(loss)?;
    let eval = |pt: &[Tensor]| -> std::result::Result<Float, String> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pt.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs).map_err(|e| e.to_string())?;
        let v = t.value(l).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err("non-finite value".into())
        }
    };
    let mut per_tensor = Vec::new();
    let mut checked = 0;
    for (i, v) in inputs.iter().enumerate() {
        let n = point[i].numel();
        let analytic = grads.wrt(*v).map_or_else(|| vec![0.0; n], <[Float]>::to_vec);
        let mut numeric = vec![0.0; n];
        let mut pt = point.to_vec();
        for j in 0..n {
            let orig = pt[i].data()[j];
            pt[i].data_mut()[j] = orig + eps;
            let plus = eval(&pt);
            pt[i].data_mut()[j] = orig - eps;
            let minus = eval(&pt);
            pt[i].data_mut()[j] = orig;
            match (plus, minus) {
                (Ok(p), Ok(m)) => numeric[j] = central(p, m, eps),
                (Err(e), _) | (_, Err(e)) => {
                    return Ok(failed(format!("input {i} coordinate {j}: {e}"), tol));
                }
            }
        }
        let (err, at) = check_gradients(&analytic, &numeric);
        per_tensor.push((format!("input{i}"), err, at));
        checked += n;
    }
    Ok(assemble(per_tensor, checked, tol))
}

/// Checks the gradient of `f` with respect to every parameter in `store`.
///
/// `corrupt` perturbs the analytic gradient of one parameter before the
/// comparison; it exists to prove the checker can fail.
pub fn grad_check_params<F>(
    store: &ParameterStore,
    f: F,
    eps: Float,
    tol: Float,
    corrupt: Option<ParamId>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var> + Sync,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let loss = match f(&mut tape) {
            Ok(l) => l,
            Err(e) => return Ok(failed(format!("forward failed at the base point: {e}"), tol)),
        };
        tape.backward(loss)?.into_params()
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let results: Vec<std::result::Result<(String, Float, usize, usize), String>> = ids
        .par_iter()
        .map(|&id| {
            let mut local = store.clone();
            let n = local.get(id).numel();
            let mut grad = analytic.get(id).map_or_else(|| vec![0.0; n], <[Float]>::to_vec);
            if corrupt == Some(id) {
                grad[0] = grad[0] * 1.5 + 0.01;
            }
            let mut numeric = vec![0.0; n];
            for j in 0..n {
                let orig = local.get(id).data()[j];
                let mut probe = |delta: Float| -> std::result::Result<Float, String> {
                    local.get_mut(id).data_mut()[j] = orig + delta;
                    let mut tape = Tape::with_params(&local);
                    let l = f(&mut tape).map_err(|e| e.to_string())?;
                    let v = tape.value(l).item();
                    v.is_finite().then_some(v).ok_or_else(|| "non-finite value".to_string())
                };
                let plus = probe(eps);
                let minus = probe(-eps);
                local.get_mut(id).data_mut()[j] = orig;
                numeric[j] = central(
                    plus.map_err(|e| format!("{} coordinate {j}: {e}", store.name(id)))?,
                    minus.map_err(|e| format!("{} coordinate {j}: {e}", store.name(id)))?,
                    eps,
                );
            }
            let (err, at) = check_gradients(&grad, &numeric);
            Ok((store.name(id).to_string(), err, at, n))
        })
        .collect();
    let mut per_tensor = Vec::with_capacity(results.len());
    let mut checked = 0;
    for r in results {
        match r {
            Ok((name, err, at, n)) => {
                per_tensor.push((name, err, at));
                checked += n;
            }
            Err(msg) => return Ok(failed(msg, tol)),
        }
    }
    Ok(assemble(per_tensor, checked, tol))
}
