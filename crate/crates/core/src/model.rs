//! Discrete model primitives and the value-function containers shared by the
//! operators and solvers.
//!
//! A model has `n_states` observed states and `n_choices` alternatives. Shocks
//! are i.i.d. extreme value type I and additive, so they never appear as data:
//! only their closed forms (log-sum-exp, softmax) are used downstream.

use std::fmt;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on transition row sums and CCP column sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Flow utilities, controlled transitions and the discount factor.
///
/// Shapes are checked at construction. Value-level invariants (stochastic
/// rows, `beta` range, finite utilities) are reported by [`validate_model`]
/// rather than enforced, so a malformed model can still be loaded and
/// inspected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    n_states: usize,
    n_choices: usize,
    beta: f64,
    /// `n_choices x n_states`, entry `(j, x)` is `u(j, x)`.
    utility: DMatrix<f64>,
    /// One `n_states x n_states` matrix per choice, entry `[x, y]` is
    /// `Pr(x' = y | x, j)`.
    transitions: Vec<DMatrix<f64>>,
}

impl ModelSpec {
    pub fn new(beta: f64, utility: DMatrix<f64>, transitions: Vec<DMatrix<f64>>) -> Result<Self> {
        let n_choices = utility.nrows();
        let n_states = utility.ncols();
        if n_choices == 0 || n_states == 0 {
            return Err(Error::domain("model needs at least one state and one choice"));
        }
        Error::check_len("transition matrices", n_choices, transitions.len())?;
        for f in &transitions {
            Error::check_len("transition rows", n_states, f.nrows())?;
            Error::check_len("transition columns", n_states, f.ncols())?;
        }
        Ok(Self {
            n_states,
            n_choices,
            beta,
            utility,
            transitions,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_choices(&self) -> usize {
        self.n_choices
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn utility(&self) -> &DMatrix<f64> {
        &self.utility
    }

    /// Transition matrix of choice `j` (0-based).
    pub fn transition(&self, j: usize) -> &DMatrix<f64> {
        &self.transitions[j]
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    /// Returns a copy of the model with a different discount factor.
    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }
}

#[derive(Serialize, Deserialize)]
struct RawModelSpec {
    n_states: usize,
    n_choices: usize,
    beta: f64,
    utility: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    Error::check_len(what, nrows, rows.len())?;
    for row in rows {
        Error::check_len(what, ncols, row.len())?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawModelSpec) -> Result<Self> {
        let utility = rows_to_matrix(&raw.utility, raw.n_choices, raw.n_states, "utility")?;
        Error::check_len("transitions", raw.n_choices, raw.transitions.len())?;
        let transitions = raw
            .transitions
            .iter()
            .map(|f| rows_to_matrix(f, raw.n_states, raw.n_states, "transition matrix"))
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(raw.beta, utility, transitions)
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(spec: ModelSpec) -> Self {
        RawModelSpec {
            n_states: spec.n_states,
            n_choices: spec.n_choices,
            beta: spec.beta,
            utility: matrix_to_rows(&spec.utility),
            transitions: spec.transitions.iter().map(matrix_to_rows).collect(),
        }
    }
}

/// Integrated value function `W(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WVector(DVector<f64>);

impl WVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(Error::domain("W contains non-finite entries"))
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(n_states: usize) -> Self {
        Self(DVector::zeros(n_states))
    }

    pub fn constant(n_states: usize, value: f64) -> Self {
        Self(DVector::from_element(n_states, value))
    }

    pub(crate) fn from_raw(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// Expected value functions `EV_j(x)` stored block-by-choice: flat index
/// `(j, x)` is `j * n_states + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct EVStack {
    n_choices: usize,
    values: DVector<f64>,
}

impl EVStack {
    pub fn new(n_choices: usize, values: DVector<f64>) -> Result<Self> {
        if n_choices == 0 || values.len() % n_choices != 0 {
            return Err(Error::domain(format!(
                "EV length {} is not a multiple of {n_choices} choices",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("EV contains non-finite entries"));
        }
        Ok(Self { n_choices, values })
    }

    pub fn from_blocks(blocks: &[DVector<f64>]) -> Result<Self> {
        let n = blocks.first().map_or(0, |b| b.len());
        for b in blocks {
            Error::check_len("EV block", n, b.len())?;
        }
        let flat: Vec<f64> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
        Self::new(blocks.len(), DVector::from_vec(flat))
    }

    pub fn zeros(n_choices: usize, n_states: usize) -> Self {
        Self {
            n_choices,
            values: DVector::zeros(n_choices * n_states),
        }
    }

    pub(crate) fn from_raw(n_choices: usize, values: DVector<f64>) -> Self {
        Self { n_choices, values }
    }

    pub fn n_choices(&self) -> usize {
        self.n_choices
    }

    pub fn n_states(&self) -> usize {
        self.values.len() / self.n_choices
    }

    pub fn block(&self, j: usize) -> DVectorView<'_, f64> {
        let n = self.n_states();
        self.values.rows(j * n, n)
    }

    /// `n_states x n_choices` view; column `j` is block `j`.
    pub fn as_matrix(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(self.values.as_slice(), self.n_states(), self.n_choices)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.values
    }
}

/// Conditional choice probabilities, `n_choices x n_states`.
#[derive(Clone, Debug, PartialEq)]
pub struct CCPMatrix(DMatrix<f64>);

impl CCPMatrix {
    pub(crate) fn from_raw(probs: DMatrix<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, choice: usize, state: usize) -> f64 {
        self.0[(choice, state)]
    }

    pub fn n_choices(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.0.ncols()
    }

    /// Largest absolute entrywise difference.
    pub fn sup_distance(&self, other: &CCPMatrix) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

/// Shift-stable `log(sum(exp(v)))`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::domain("logsumexp of an empty vector"));
    }
    Ok(lse(v.iter().copied()))
}

pub(crate) fn lse(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = v.map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// One breached invariant of a [`ModelSpec`]. Choices print 1-based as
/// `F(1)..F(J)`; states and rows are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Beta(f64),
    Utility {
        choice: usize,
        state: usize,
        value: f64,
    },
    TransitionEntry {
        choice: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    RowSum {
        choice: usize,
        row: usize,
        sum: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Beta(b) => write!(f, "beta not in [0,1): {b}"),
            Violation::Utility { choice, state, value } => {
                write!(f, "utility u({}, {state}) is not finite: {value}", choice + 1)
            }
            Violation::TransitionEntry {
                choice,
                row,
                col,
                value,
            } => write!(f, "entry [{row}, {col}] of F({}) outside [0,1]: {value}", choice + 1),
            Violation::RowSum { choice, row, sum } => {
                write!(f, "row {row} of F({}) sums to {sum}", choice + 1)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Converts a failed report into a domain error listing every violation.
    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        Err(Error::Domain(msgs.join("; ")))
    }
}

pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let mut violations = Vec::new();
    if !(0.0..1.0).contains(&spec.beta) {
        violations.push(Violation::Beta(spec.beta));
    }
    for choice in 0..spec.n_choices {
        for state in 0..spec.n_states {
            let value = spec.utility[(choice, state)];
            if !value.is_finite() {
                violations.push(Violation::Utility { choice, state, value });
            }
        }
    }
    for (choice, f) in spec.transitions.iter().enumerate() {
        for row in 0..f.nrows() {
            let mut sum = 0.0;
            for col in 0..f.ncols() {
                let value = f[(row, col)];
                if !(0.0..=1.0).contains(&value) {
                    violations.push(Violation::TransitionEntry {
                        choice,
                        row,
                        col,
                        value,
                    });
                }
                sum += value;
            }
            if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                violations.push(Violation::RowSum { choice, row, sum });
            }
        }
    }
    ValidationReport { violations }
}
