//! Bellman operators for the integrated (`W`) and expected (`EV`) value
//! function formulations, their Fréchet derivatives, choice probabilities and
//! the maps between the two formulations.
//!
//! With extreme value type I shocks both operators reduce to log-sum-exp
//! expressions over the choice-specific values
//!
//! ```text
//! v_j(x) = u(j, x) + beta * (F(j) W)(x)     (W formulation)
//! v_j(x) = u(j, x) + beta * EV_j(x)          (EV formulation)
//! ```
//!
//! `Lambda(W)(x) = lse_j v_j(x)` and `Gamma(EV)_a = F(a) lse_j v_j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{lse, CCPMatrix, EVStack, ModelSpec, WVector};

/// `Lambda'` at a given `W`: `beta * sum_j diag(P_j) F(j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaDerivative(DMatrix<f64>);

/// `Gamma'` at a given `EV`: block `(a, j)` is `beta * F(a) diag(P_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaDerivative(DMatrix<f64>);

macro_rules! derivative_accessors {
    ($ty:ident) => {
        impl $ty {
            pub fn matrix(&self) -> &DMatrix<f64> {
                &self.0
            }

            pub fn into_matrix(self) -> DMatrix<f64> {
                self.0
            }

            pub fn row_sums(&self) -> DVector<f64> {
                self.0.column_sum()
            }
        }
    };
}

derivative_accessors!(LambdaDerivative);
derivative_accessors!(GammaDerivative);

fn check_w(spec: &ModelSpec, w: &WVector) -> Result<()> {
    Error::check_len("W", spec.n_states(), w.len())
}

fn check_ev(spec: &ModelSpec, ev: &EVStack) -> Result<()> {
    Error::check_len("EV blocks", spec.n_choices(), ev.n_choices())?;
    Error::check_len("EV block length", spec.n_states(), ev.n_states())
}

/// `J x |X|` matrix of `u(j, x) + beta (F(j) W)(x)`.
pub(crate) fn choice_values_w(spec: &ModelSpec, w: &DVector<f64>) -> DMatrix<f64> {
    let mut v = spec.utility().clone();
    let beta = spec.beta();
    for (j, f) in spec.transitions().iter().enumerate() {
        let fw = f * w;
        for x in 0..spec.n_states() {
            v[(j, x)] += beta * fw[x];
        }
    }
    v
}

/// `J x |X|` matrix of `u(j, x) + beta EV_j(x)` from a flat block-by-choice
/// stack.
pub(crate) fn choice_values_ev(spec: &ModelSpec, ev: &DVector<f64>) -> DMatrix<f64> {
    let n = spec.n_states();
    let beta = spec.beta();
    let mut v = spec.utility().clone();
    for j in 0..spec.n_choices() {
        for x in 0..n {
            v[(j, x)] += beta * ev[j * n + x];
        }
    }
    v
}

/// Column-wise log-sum-exp of a `J x |X|` value matrix.
pub(crate) fn expected_max(v: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(v.ncols(), v.column_iter().map(|c| lse(c.iter().copied())))
}

/// Column-wise softmax of a `J x |X|` value matrix.
pub(crate) fn softmax_columns(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = v.clone();
    for mut col in p.column_iter_mut() {
        let max = col.max();
        col.apply(|e| *e = (*e - max).exp());
        let total = col.sum();
        col /= total;
    }
    p
}

/// Stacks `F(j) m` for every choice into a flat block-by-choice vector.
pub(crate) fn stack_transitions(spec: &ModelSpec, m: &DVector<f64>) -> DVector<f64> {
    let n = spec.n_states();
    let mut out = DVector::zeros(n * spec.n_choices());
    for (j, f) in spec.transitions().iter().enumerate() {
        out.rows_mut(j * n, n).gemv(1.0, f, m, 0.0);
    }
    out
}

pub(crate) fn lambda_raw(spec: &ModelSpec, w: &DVector<f64>) -> DVector<f64> {
    expected_max(&choice_values_w(spec, w))
}

pub(crate) fn gamma_raw(spec: &ModelSpec, ev: &DVector<f64>) -> DVector<f64> {
    // The inner log-sum-exp is evaluated once and shared by every block.
    let m = expected_max(&choice_values_ev(spec, ev));
    stack_transitions(spec, &m)
}

pub(crate) fn lambda_derivative_from_ccp(spec: &ModelSpec, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = spec.n_states();
    let beta = spec.beta();
    let mut d = DMatrix::zeros(n, n);
    for (j, f) in spec.transitions().iter().enumerate() {
        for y in 0..n {
            let fcol = f.column(y);
            let mut dcol = d.column_mut(y);
            for x in 0..n {
                dcol[x] += beta * p[(j, x)] * fcol[x];
            }
        }
    }
    d
}

pub(crate) fn gamma_derivative_from_ccp(spec: &ModelSpec, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = spec.n_states();
    let nj = spec.n_choices();
    let beta = spec.beta();
    let mut d = DMatrix::zeros(n * nj, n * nj);
    for j in 0..nj {
        for y in 0..n {
            let scale = beta * p[(j, y)];
            let mut dcol = d.column_mut(j * n + y);
            for (a, f) in spec.transitions().iter().enumerate() {
                let fcol = f.column(y);
                for x in 0..n {
                    dcol[a * n + x] = scale * fcol[x];
                }
            }
        }
    }
    d
}

/// `Lambda(W)(x) = lse_j [u(j, x) + beta (F(j) W)(x)]`.
pub fn apply_lambda(spec: &ModelSpec, w: &WVector) -> Result<WVector> {
    check_w(spec, w)?;
    Ok(WVector::from_raw(lambda_raw(spec, w.values())))
}

/// `Gamma(EV)_a = F(a) lse_j [u(j) + beta EV_j]` for every choice `a`.
pub fn apply_gamma(spec: &ModelSpec, ev: &EVStack) -> Result<EVStack> {
    check_ev(spec, ev)?;
    Ok(EVStack::from_raw(spec.n_choices(), gamma_raw(spec, ev.values())))
}

pub fn ccp_from_w(spec: &ModelSpec, w: &WVector) -> Result<CCPMatrix> {
    check_w(spec, w)?;
    Ok(CCPMatrix::from_raw(softmax_columns(&choice_values_w(spec, w.values()))))
}

pub fn ccp_from_ev(spec: &ModelSpec, ev: &EVStack) -> Result<CCPMatrix> {
    check_ev(spec, ev)?;
    Ok(CCPMatrix::from_raw(softmax_columns(&choice_values_ev(
        spec,
        ev.values(),
    ))))
}

/// Entry `[x, y]` is `beta * sum_j P(j, x) F(j)[x, y]`: each `F(j)` has its
/// rows scaled by the probability of choosing `j` in that row's state.
pub fn frechet_lambda(spec: &ModelSpec, w: &WVector) -> Result<LambdaDerivative> {
    let p = ccp_from_w(spec, w)?;
    Ok(LambdaDerivative(lambda_derivative_from_ccp(spec, p.probs())))
}

/// Entry `[(a, x), (j, y)]` is `beta * F(a)[x, y] * P(j, y)`: block row `a`
/// repeats `F(a)` across every choice column block, and column `(j, y)` is
/// scaled by the stacked probability `P(j, y)`.
pub fn frechet_gamma(spec: &ModelSpec, ev: &EVStack) -> Result<GammaDerivative> {
    let p = ccp_from_ev(spec, ev)?;
    Ok(GammaDerivative(gamma_derivative_from_ccp(spec, p.probs())))
}

/// Block `j` is `F(j) W`.
pub fn ev_from_w(spec: &ModelSpec, w: &WVector) -> Result<EVStack> {
    check_w(spec, w)?;
    Ok(EVStack::from_raw(spec.n_choices(), stack_transitions(spec, w.values())))
}

/// `W(x) = lse_j [u(j, x) + beta EV_j(x)]`.
pub fn w_from_ev(spec: &ModelSpec, ev: &EVStack) -> Result<WVector> {
    check_ev(spec, ev)?;
    Ok(WVector::from_raw(expected_max(&choice_values_ev(spec, ev.values()))))
}
