use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `(I - derivative) delta = residual` with a dense LU factorization
/// (partial pivoting) and returns `delta`.
pub fn solve_shifted(derivative: &DMatrix<f64>, residual: &DVector<f64>) -> Result<DVector<f64>> {
    let n = residual.len();
    Error::check_len("Newton system", n, derivative.nrows())?;
    Error::check_len("Newton system", n, derivative.ncols())?;
    let mut a = -derivative;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let lu = MatRef::from_column_major_slice(a.as_slice(), n, n).partial_piv_lu();
    let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| residual[i]);
    lu.solve_in_place(rhs.as_mut());
    let delta = DVector::from_fn(n, |i, _| rhs[(i, 0)]);
    if delta.iter().all(|v| v.is_finite()) {
        Ok(delta)
    } else {
        Err(Error::Singular { size: n })
    }
}

/// One Newton update `x - (I - derivative)^{-1} (x - tx)`.
pub fn newton_update(x: &DVector<f64>, tx: &DVector<f64>, derivative: &DMatrix<f64>) -> Result<DVector<f64>> {
    let residual = x - tx;
    Ok(x - solve_shifted(derivative, &residual)?)
}

pub(crate) fn sup_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
