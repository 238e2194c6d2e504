//! Equality-constraint systems `x = T(x)` that a constrained likelihood
//! formulation would carry, one per formulation, with their sizes and the
//! sparsity of `I - T'` at the solved point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_model, ModelSpec};
use crate::solvers::{operator_derivative, poly_solve, Formulation, SolveOptions};

/// Entries with magnitude at or below this count as structural zeros.
pub const NNZ_THRESHOLD: f64 = 1e-15;

#[derive(Clone, Debug)]
pub struct ConstraintSystem<'a> {
    spec: &'a ModelSpec,
    pub formulation: Formulation,
    pub n_constraints: usize,
    pub jacobian_dims: (usize, usize),
    /// Nonzeros of `I - T'` at `solved_point`.
    pub jacobian_nnz: usize,
    pub solved_point: DVector<f64>,
}

impl ConstraintSystem<'_> {
    /// `x - T(x)`.
    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_len("constraint iterate", self.n_constraints, x.len())?;
        let tx = match self.formulation {
            Formulation::W => crate::operators::lambda_raw(self.spec, x),
            Formulation::EV => crate::operators::gamma_raw(self.spec, x),
        };
        Ok(x - tx)
    }

    /// Nonzeros of `I - T'(x)`.
    pub fn jacobian_nnz_at(&self, x: &DVector<f64>) -> Result<usize> {
        Error::check_len("constraint iterate", self.n_constraints, x.len())?;
        Ok(jacobian_nnz(self.spec, self.formulation, x))
    }
}

fn jacobian_nnz(spec: &ModelSpec, formulation: Formulation, x: &DVector<f64>) -> usize {
    let d = operator_derivative(spec, formulation, x);
    let mut nnz = 0;
    for (c, col) in d.column_iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            let entry = if r == c { 1.0 - v } else { -v };
            if entry.abs() > NNZ_THRESHOLD {
                nnz += 1;
            }
        }
    }
    nnz
}

/// Builds the constraint system of one formulation, solving the model to
/// measure Jacobian structure at the fixed point.
pub fn build_constraints(spec: &ModelSpec, formulation: Formulation) -> Result<ConstraintSystem<'_>> {
    validate_model(spec).into_result()?;
    let n = match formulation {
        Formulation::W => spec.n_states(),
        Formulation::EV => spec.n_choices() * spec.n_states(),
    };
    let opts = SolveOptions {
        record_trace: false,
        ..Default::default()
    };
    let solved_point = poly_solve(spec, formulation, &opts)?.solution.values().clone();
    let jacobian_nnz = jacobian_nnz(spec, formulation, &solved_point);
    Ok(ConstraintSystem {
        spec,
        formulation,
        n_constraints: n,
        jacobian_dims: (n, n),
        jacobian_nnz,
        solved_point,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub n_constraints: usize,
    pub jacobian_nnz: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemComparison {
    pub formulation_w: SystemSummary,
    pub formulation_ev: SystemSummary,
    /// EV constraints per W constraint; always `J`.
    pub ratio_constraints: f64,
    pub ratio_nnz: f64,
}

pub fn compare_systems(spec: &ModelSpec) -> Result<SystemComparison> {
    let w = build_constraints(spec, Formulation::W)?;
    let ev = build_constraints(spec, Formulation::EV)?;
    Ok(SystemComparison {
        ratio_constraints: ev.n_constraints as f64 / w.n_constraints as f64,
        ratio_nnz: ev.jacobian_nnz as f64 / w.jacobian_nnz as f64,
        formulation_w: SystemSummary {
            n_constraints: w.n_constraints,
            jacobian_nnz: w.jacobian_nnz,
        },
        formulation_ev: SystemSummary {
            n_constraints: ev.n_constraints,
            jacobian_nnz: ev.jacobian_nnz,
        },
    })
}
