//! Successive approximations, Newton–Kantorovich steps and the hybrid
//! VFI-then-Newton solver for both formulations.
//!
//! Newton steps solve the residual system `(I - T)(x) = 0`:
//!
//! ```text
//! x_{k+1} = x_k - (I - T'(x_k))^{-1} (x_k - T(x_k))
//! ```
//!
//! The `W` system is `|X| x |X|`; the `EV` system is `J|X| x J|X|`. Both are
//! factored densely from scratch at every step.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{newton_update, sup_distance};
use crate::model::{lse, validate_model, CCPMatrix, EVStack, ModelSpec, WVector, STOCHASTIC_TOL};
use crate::operators::{
    ccp_from_ev, ccp_from_w, choice_values_ev, choice_values_w, gamma_derivative_from_ccp, gamma_raw,
    lambda_derivative_from_ccp, lambda_raw, softmax_columns,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formulation {
    #[serde(rename = "w")]
    W,
    #[serde(rename = "ev")]
    EV,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::W => "W",
            Formulation::EV => "EV",
        })
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w" => Ok(Formulation::W),
            "ev" => Ok(Formulation::EV),
            other => Err(Error::domain(format!("unknown formulation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "VFI")]
    Vfi,
    Newton,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Vfi => "VFI",
            Method::Newton => "Newton",
        })
    }
}

/// When the hybrid solver hands over from successive approximations to
/// Newton steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SwitchRule {
    /// After exactly this many VFI iterations. `FixedCount(0)` is pure Newton.
    FixedCount(usize),
    /// Once the observed contraction ratio `d_k / d_{k-1}` is within this
    /// distance of `beta`.
    ContractionRatio(f64),
    /// As soon as the iterate change drops below `threshold`, or after
    /// `max_vfi` iterations, whichever comes first.
    DiffOrCount { threshold: f64, max_vfi: usize },
}

impl Default for SwitchRule {
    fn default() -> Self {
        SwitchRule::DiffOrCount {
            threshold: 1.0,
            max_vfi: 20,
        }
    }
}

impl SwitchRule {
    fn fires(&self, vfi_done: usize, diffs: &[f64], beta: f64) -> bool {
        match *self {
            SwitchRule::FixedCount(k) => vfi_done >= k,
            SwitchRule::ContractionRatio(tol) => match diffs {
                [.., prev, last] if *prev > 0.0 => ((last / prev) - beta).abs() <= tol,
                _ => false,
            },
            SwitchRule::DiffOrCount { threshold, max_vfi } => {
                vfi_done >= max_vfi || diffs.last().is_some_and(|d| *d < threshold)
            }
        }
    }
}

/// Both tolerances are raised to `ROUNDING_ULPS * eps * |x|_inf` when that is
/// larger, since no f64 iterate can resolve differences below it.
pub const ROUNDING_ULPS: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    /// Sup-norm bound on the change between successive iterates.
    pub tol_fixed_point: f64,
    /// Sup-norm bound on `x - T(x)`.
    pub tol_residual: f64,
    pub max_iters: usize,
    pub switch_rule: SwitchRule,
    pub record_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_fixed_point: 1e-13,
            tol_residual: 1e-12,
            max_iters: 1000,
            switch_rule: SwitchRule::default(),
            record_trace: true,
        }
    }
}

impl SolveOptions {
    fn check(&self) -> Result<()> {
        if !(self.tol_fixed_point > 0.0 && self.tol_residual > 0.0) {
            return Err(Error::domain("tolerances must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::domain("max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub method: Method,
    pub sup_diff: f64,
    pub residual: f64,
    pub step_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_CSV_HEADER: &str = "k,method,sup_diff,residual,step_time_s";

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn sup_diffs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sup_diff).collect()
    }

    /// Rows produced by Newton steps, in order.
    pub fn newton_rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.method == Method::Newton)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e}",
                r.k, r.method, r.sup_diff, r.residual, r.step_time_s
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// Current point of either formulation.
#[derive(Clone, Debug, PartialEq)]
pub enum Iterate {
    W(WVector),
    EV(EVStack),
}

impl Iterate {
    pub fn zeros(spec: &ModelSpec, formulation: Formulation) -> Self {
        match formulation {
            Formulation::W => Iterate::W(WVector::zeros(spec.n_states())),
            Formulation::EV => Iterate::EV(EVStack::zeros(spec.n_choices(), spec.n_states())),
        }
    }

    pub fn formulation(&self) -> Formulation {
        match self {
            Iterate::W(_) => Formulation::W,
            Iterate::EV(_) => Formulation::EV,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        match self {
            Iterate::W(w) => w.values(),
            Iterate::EV(ev) => ev.values(),
        }
    }

    pub fn as_w(&self) -> Option<&WVector> {
        match self {
            Iterate::W(w) => Some(w),
            Iterate::EV(_) => None,
        }
    }

    pub fn as_ev(&self) -> Option<&EVStack> {
        match self {
            Iterate::EV(ev) => Some(ev),
            Iterate::W(_) => None,
        }
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        match self {
            Iterate::W(w) => Error::check_len("W", spec.n_states(), w.len()),
            Iterate::EV(ev) => {
                Error::check_len("EV blocks", spec.n_choices(), ev.n_choices())?;
                Error::check_len("EV block length", spec.n_states(), ev.n_states())
            }
        }
    }

    fn rebuild(formulation: Formulation, n_choices: usize, values: DVector<f64>) -> Self {
        match formulation {
            Formulation::W => Iterate::W(WVector::from_raw(values)),
            Formulation::EV => Iterate::EV(EVStack::from_raw(n_choices, values)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub solution: Iterate,
    pub converged: bool,
    pub iterations: usize,
    pub trace: SolveTrace,
    pub ccp: CCPMatrix,
}

fn operator(spec: &ModelSpec, formulation: Formulation, x: &DVector<f64>) -> DVector<f64> {
    match formulation {
        Formulation::W => lambda_raw(spec, x),
        Formulation::EV => gamma_raw(spec, x),
    }
}

/// Derivative of the operator at `x`, built from the CCPs at `x`.
pub(crate) fn operator_derivative(spec: &ModelSpec, formulation: Formulation, x: &DVector<f64>) -> DMatrix<f64> {
    match formulation {
        Formulation::W => lambda_derivative_from_ccp(spec, &softmax_columns(&choice_values_w(spec, x))),
        Formulation::EV => gamma_derivative_from_ccp(spec, &softmax_columns(&choice_values_ev(spec, x))),
    }
}

fn newton_raw(spec: &ModelSpec, formulation: Formulation, x: &DVector<f64>) -> Result<DVector<f64>> {
    let tx = operator(spec, formulation, x);
    let d = operator_derivative(spec, formulation, x);
    newton_update(x, &tx, &d)
}

/// One Newton step on `W - Lambda(W) = 0` using an `|X| x |X|` LU solve.
pub fn newton_step_w(spec: &ModelSpec, w: &WVector) -> Result<WVector> {
    Error::check_len("W", spec.n_states(), w.len())?;
    Ok(WVector::from_raw(newton_raw(spec, Formulation::W, w.values())?))
}

/// One Newton step on `EV - Gamma(EV) = 0` using a `J|X| x J|X|` LU solve.
pub fn newton_step_ev(spec: &ModelSpec, ev: &EVStack) -> Result<EVStack> {
    Error::check_len("EV blocks", spec.n_choices(), ev.n_choices())?;
    Error::check_len("EV block length", spec.n_states(), ev.n_states())?;
    Ok(EVStack::from_raw(
        spec.n_choices(),
        newton_raw(spec, Formulation::EV, ev.values())?,
    ))
}

enum Schedule {
    VfiOnly,
    Hybrid(SwitchRule),
}

struct RunOutcome {
    x: DVector<f64>,
    converged: bool,
    iterations: usize,
    trace: SolveTrace,
}

/// Shared iteration loop. `op` evaluates the operator, `step` takes a Newton
/// step.
fn run<Op, Step>(
    x0: DVector<f64>,
    op: Op,
    step: Step,
    beta: f64,
    schedule: Schedule,
    opts: &SolveOptions,
) -> Result<RunOutcome>
where
    Op: Fn(&DVector<f64>) -> DVector<f64>,
    Step: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    opts.check()?;
    let mut x = x0;
    let mut tx = op(&x);
    let mut trace = SolveTrace::default();
    let mut diffs: Vec<f64> = Vec::new();
    let mut method = Method::Vfi;
    let mut vfi_done = 0;
    let mut last_newton_diff: Option<f64> = None;
    let mut converged = false;
    let mut k = 0;

    while k < opts.max_iters {
        if method == Method::Vfi {
            if let Schedule::Hybrid(rule) = schedule {
                if rule.fires(vfi_done, &diffs, beta) {
                    method = Method::Newton;
                }
            }
        }
        k += 1;
        let start = Instant::now();
        let x_new = match method {
            Method::Vfi => tx,
            Method::Newton => step(&x)?,
        };
        if !x_new.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { iteration: k });
        }
        let tx_new = op(&x_new);
        if !tx_new.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { iteration: k });
        }
        let sup_diff = sup_distance(&x_new, &x);
        let residual = sup_distance(&x_new, &tx_new);
        let floor = ROUNDING_ULPS * f64::EPSILON * x_new.amax();
        let (tol_fp, tol_res) = (opts.tol_fixed_point.max(floor), opts.tol_residual.max(floor));
        let step_time_s = start.elapsed().as_secs_f64();
        if opts.record_trace {
            trace.rows.push(TraceRow {
                k,
                method,
                sup_diff,
                residual,
                step_time_s,
            });
        }
        x = x_new;
        tx = tx_new;
        diffs.push(sup_diff);

        match method {
            Method::Vfi => {
                vfi_done += 1;
                if sup_diff <= tol_fp {
                    converged = residual <= tol_res;
                    break;
                }
            }
            Method::Newton => {
                // Stop on a negligible step, or once the residual is within
                // tolerance and the steps no longer shrink (rounding floor).
                let stalled = last_newton_diff.is_some_and(|prev| sup_diff >= prev);
                if sup_diff <= tol_fp || (residual <= tol_res && stalled) {
                    converged = residual <= tol_res;
                    break;
                }
                last_newton_diff = Some(sup_diff);
            }
        }
    }

    Ok(RunOutcome {
        x,
        converged,
        iterations: k,
        trace,
    })
}

fn finish(spec: &ModelSpec, formulation: Formulation, out: RunOutcome) -> Result<SolveResult> {
    let solution = Iterate::rebuild(formulation, spec.n_choices(), out.x);
    let ccp = match &solution {
        Iterate::W(w) => ccp_from_w(spec, w)?,
        Iterate::EV(ev) => ccp_from_ev(spec, ev)?,
    };
    Ok(SolveResult {
        solution,
        converged: out.converged,
        iterations: out.iterations,
        trace: out.trace,
        ccp,
    })
}

/// Successive approximations `x_{k+1} = T(x_k)` until the iterate change is
/// within `tol_fixed_point` or `max_iters` is reached.
pub fn vfi(spec: &ModelSpec, start: &Iterate, opts: &SolveOptions) -> Result<SolveResult> {
    validate_model(spec).into_result()?;
    start.check(spec)?;
    let f = start.formulation();
    let out = run(
        start.values().clone(),
        |x| operator(spec, f, x),
        |x| newton_raw(spec, f, x),
        spec.beta(),
        Schedule::VfiOnly,
        opts,
    )?;
    finish(spec, f, out)
}

/// Hybrid solve from the zero iterate: VFI until the switch rule fires, then
/// Newton steps.
pub fn poly_solve(spec: &ModelSpec, formulation: Formulation, opts: &SolveOptions) -> Result<SolveResult> {
    poly_solve_from(spec, &Iterate::zeros(spec, formulation), opts)
}

pub fn poly_solve_from(spec: &ModelSpec, start: &Iterate, opts: &SolveOptions) -> Result<SolveResult> {
    validate_model(spec).into_result()?;
    start.check(spec)?;
    let f = start.formulation();
    let out = run(
        start.values().clone(),
        |x| operator(spec, f, x),
        |x| newton_raw(spec, f, x),
        spec.beta(),
        Schedule::Hybrid(opts.switch_rule),
        opts,
    )?;
    finish(spec, f, out)
}

/// Checks the regenerative structure the reduced step relies on: two
/// choices, and every row of the replacement transition equal to row 0 of
/// the keep transition, so that `EV_2(x) = EV_1(0)` for all `x`.
fn check_reduced_bus(spec: &ModelSpec) -> Result<()> {
    if spec.n_choices() != 2 {
        return Err(Error::domain(format!(
            "reduced bus step needs 2 choices, model has {}",
            spec.n_choices()
        )));
    }
    let keep = spec.transition(0);
    let replace = spec.transition(1);
    for x in 0..spec.n_states() {
        for y in 0..spec.n_states() {
            if (replace[(x, y)] - keep[(0, y)]).abs() > STOCHASTIC_TOL {
                return Err(Error::domain(
                    "replacement transition rows must all equal row 0 of the keep transition",
                ));
            }
        }
    }
    Ok(())
}

/// `m(x) = lse(u_1(x) + beta e(x), u_2(x) + beta e(0))` for the reduced
/// iterate `e = EV_1`, with the CCPs of the same values.
fn reduced_values(spec: &ModelSpec, e: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = spec.n_states();
    let beta = spec.beta();
    let u = spec.utility();
    let v = DMatrix::from_fn(2, n, |j, x| {
        if j == 0 {
            u[(0, x)] + beta * e[x]
        } else {
            u[(1, x)] + beta * e[0]
        }
    });
    let m = DVector::from_iterator(n, v.column_iter().map(|c| lse(c.iter().copied())));
    (m, softmax_columns(&v))
}

fn reduced_operator_raw(spec: &ModelSpec, e: &DVector<f64>) -> DVector<f64> {
    spec.transition(0) * reduced_values(spec, e).0
}

/// Reduced operator `e -> F(1) m(e)` on the keep block alone.
pub fn reduced_bus_operator(spec: &ModelSpec, ev1: &WVector) -> Result<WVector> {
    check_reduced_bus(spec)?;
    Error::check_len("EV_1", spec.n_states(), ev1.len())?;
    Ok(WVector::from_raw(reduced_operator_raw(spec, ev1.values())))
}

/// Jacobian of the reduced operator:
/// `beta * (F(1)[x, y] P_1(y) + [y = 0] sum_z F(1)[x, z] P_2(z))`.
fn reduced_derivative(spec: &ModelSpec, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = spec.n_states();
    let beta = spec.beta();
    let keep = spec.transition(0);
    let mut d = DMatrix::from_fn(n, n, |x, y| beta * keep[(x, y)] * p[(0, y)]);
    let p_replace = p.row(1).transpose();
    let to_zero = keep * p_replace;
    for x in 0..n {
        d[(x, 0)] += beta * to_zero[x];
    }
    d
}

fn reduced_newton_raw(spec: &ModelSpec, e: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, p) = reduced_values(spec, e);
    let te = spec.transition(0) * m;
    newton_update(e, &te, &reduced_derivative(spec, &p))
}

/// One Newton step on the `|X|`-dimensional keep-block system of a bus model
/// whose replacement transition restarts the keep process from state 0.
pub fn newton_step_reduced_bus(spec: &ModelSpec, ev1: &WVector) -> Result<WVector> {
    check_reduced_bus(spec)?;
    Error::check_len("EV_1", spec.n_states(), ev1.len())?;
    Ok(WVector::from_raw(reduced_newton_raw(spec, ev1.values())?))
}

/// Rebuilds the full stack from the keep block: `EV_2(x) = EV_1(0)`.
pub fn expand_reduced_bus(spec: &ModelSpec, ev1: &WVector) -> Result<EVStack> {
    check_reduced_bus(spec)?;
    Error::check_len("EV_1", spec.n_states(), ev1.len())?;
    let replace = DVector::from_element(ev1.len(), ev1.values()[0]);
    EVStack::from_blocks(&[ev1.values().clone(), replace])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSolve {
    pub ev1: WVector,
    pub converged: bool,
    pub iterations: usize,
    pub trace: SolveTrace,
}

/// Hybrid solve of the reduced bus system from `EV_1 = 0`.
pub fn solve_reduced_bus(spec: &ModelSpec, opts: &SolveOptions) -> Result<ReducedSolve> {
    validate_model(spec).into_result()?;
    check_reduced_bus(spec)?;
    let out = run(
        DVector::zeros(spec.n_states()),
        |e| reduced_operator_raw(spec, e),
        |e| reduced_newton_raw(spec, e),
        spec.beta(),
        Schedule::Hybrid(opts.switch_rule),
        opts,
    )?;
    Ok(ReducedSolve {
        ev1: WVector::from_raw(out.x),
        converged: out.converged,
        iterations: out.iterations,
        trace: out.trace,
    })
}
