//! Timing harness comparing Newton steps of the two formulations, and the
//! convergence-trace driver.
//!
//! Two quantities are timed per formulation at a common warm start:
//!
//! * **step**: forming `I - T'`, factoring it and applying the update
//!   `x - (I - T')^{-1} (x - T(x))`, given a precomputed derivative and
//!   residual;
//! * **total**: one complete Newton iteration, i.e. operator evaluation,
//!   choice probabilities, derivative assembly and the step.
//!
//! Each reported time is the minimum over `reps` repetitions.

use std::io::{self, Write};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_shifted;
use crate::model::{ModelSpec, WVector};
use crate::models::{build_bus_model, build_storable_goods_model, BusModelConfig, StorableGoodsConfig};
use crate::operators::{ev_from_w, gamma_raw, lambda_raw};
use crate::solvers::{operator_derivative, poly_solve, Formulation, SolveOptions, SolveResult};

/// Minimum wall time of one timed batch; short kernels are repeated until a
/// batch reaches it.
const MIN_BATCH_SECS: f64 = 2e-3;
const MAX_BATCH: usize = 100_000;

/// VFI iterations from zero used as the common warm start.
pub const WARM_START_VFI: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Bus,
    Storable,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelFamily::Bus => "bus",
            ModelFamily::Storable => "storable",
        })
    }
}

/// Model template whose state count is set per benchmark cell.
#[derive(Clone, Debug, PartialEq)]
pub enum BenchModel {
    Bus(BusModelConfig),
    Storable(StorableGoodsConfig),
}

impl BenchModel {
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Bus => BenchModel::Bus(BusModelConfig::default()),
            ModelFamily::Storable => BenchModel::Storable(StorableGoodsConfig::default()),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            BenchModel::Bus(_) => ModelFamily::Bus,
            BenchModel::Storable(_) => ModelFamily::Storable,
        }
    }

    pub fn build(&self, n_states: usize) -> Result<ModelSpec> {
        match self {
            BenchModel::Bus(cfg) => build_bus_model(&BusModelConfig {
                n_states,
                ..cfg.clone()
            }),
            BenchModel::Storable(cfg) => {
                if n_states == 0 || n_states % cfg.price_levels != 0 {
                    return Err(Error::domain(format!(
                        "storable model size {n_states} is not a positive multiple of {} price levels",
                        cfg.price_levels
                    )));
                }
                build_storable_goods_model(&StorableGoodsConfig {
                    inventory_levels: n_states / cfg.price_levels,
                    ..cfg.clone()
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: ModelFamily,
    pub n_states: usize,
    pub n_choices: usize,
    pub reps: usize,
    pub time_step_ev_s: f64,
    pub time_step_w_s: f64,
    pub time_total_ev_s: f64,
    pub time_total_w_s: f64,
    /// EV step time over W step time.
    pub ratio_step: f64,
    /// EV total time over W total time.
    pub ratio_total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub const BENCH_CSV_HEADER: &str =
    "model,n_states,n_choices,reps,time_step_ev_s,time_step_w_s,time_total_ev_s,time_total_w_s,ratio_step,ratio_total";

impl BenchReport {
    pub fn row(&self, n_states: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.n_states == n_states)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{BENCH_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:e},{:e},{:e},{:e},{},{}",
                r.model,
                r.n_states,
                r.n_choices,
                r.reps,
                r.time_step_ev_s,
                r.time_step_w_s,
                r.time_total_ev_s,
                r.time_total_w_s,
                r.ratio_step,
                r.ratio_total
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

/// Minimum over `reps` of the per-call time of `f`, batching calls so that
/// each timed batch lasts at least [`MIN_BATCH_SECS`].
fn time_min<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<f64> {
    let start = Instant::now();
    f()?;
    let single = start.elapsed().as_secs_f64();
    let batch = if single >= MIN_BATCH_SECS {
        1
    } else {
        ((MIN_BATCH_SECS / single.max(1e-9)).ceil() as usize).clamp(1, MAX_BATCH)
    };
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..batch {
            f()?;
        }
        best = best.min(start.elapsed().as_secs_f64() / batch as f64);
    }
    Ok(best)
}

fn time_formulation(spec: &ModelSpec, formulation: Formulation, x: &DVector<f64>, reps: usize) -> Result<(f64, f64)> {
    let op = |v: &DVector<f64>| match formulation {
        Formulation::W => lambda_raw(spec, v),
        Formulation::EV => gamma_raw(spec, v),
    };
    let derivative = operator_derivative(spec, formulation, x);
    let residual = x - op(x);
    let step = time_min(reps, || {
        let next = x - solve_shifted(&derivative, &residual)?;
        std::hint::black_box(next);
        Ok(())
    })?;
    let total = time_min(reps, || {
        let tx = op(x);
        let d = operator_derivative(spec, formulation, x);
        let next = x - solve_shifted(&d, &(x - tx))?;
        std::hint::black_box(next);
        Ok(())
    })?;
    Ok((step, total))
}

/// Times one Newton iteration of both formulations for every size.
pub fn bench_newton(model: &BenchModel, sizes: &[usize], reps: usize) -> Result<BenchReport> {
    if reps < 3 {
        return Err(Error::domain(format!("reps must be at least 3, got {reps}")));
    }
    if sizes.is_empty() {
        return Err(Error::domain("no sizes given"));
    }
    let mut report = BenchReport::default();
    for &n in sizes {
        let spec = model.build(n)?;
        let mut w = WVector::zeros(n);
        for _ in 0..WARM_START_VFI {
            w = WVector::from_raw(lambda_raw(&spec, w.values()));
        }
        let ev = ev_from_w(&spec, &w)?;
        let (step_w, total_w) = time_formulation(&spec, Formulation::W, w.values(), reps)?;
        let (step_ev, total_ev) = time_formulation(&spec, Formulation::EV, ev.values(), reps)?;
        report.rows.push(BenchRow {
            model: model.family(),
            n_states: n,
            n_choices: spec.n_choices(),
            reps,
            time_step_ev_s: step_ev,
            time_step_w_s: step_w,
            time_total_ev_s: total_ev,
            time_total_w_s: total_w,
            ratio_step: step_ev / step_w,
            ratio_total: total_ev / total_w,
        });
    }
    Ok(report)
}

/// Hybrid solve with the trace switched on.
pub fn trace_convergence(spec: &ModelSpec, formulation: Formulation, opts: &SolveOptions) -> Result<SolveResult> {
    let opts = SolveOptions {
        record_trace: true,
        ..opts.clone()
    };
    poly_solve(spec, formulation, &opts)
}
