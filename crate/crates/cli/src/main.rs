use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ddc_core::harness::{bench_newton, BenchModel, ModelFamily};
use ddc_core::mpec::compare_systems;
use ddc_core::{
    build_bus_model, build_storable_goods_model, bus_ev2_diagnostics, poly_solve, validate_model, vfi, BusModelConfig,
    BusVariant, Formulation, Iterate, ModelSpec, SolveOptions, StorableGoodsConfig, SwitchRule,
};

const EXIT_INVALID: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "ddc", version, about = "Solve and benchmark dynamic discrete choice models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// `bus`, `storable`, or `json:PATH` to load a serialized model.
#[derive(Clone, Debug)]
enum ModelArg {
    Bus,
    Storable,
    Json(PathBuf),
}

impl FromStr for ModelArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bus" => Ok(ModelArg::Bus),
            "storable" => Ok(ModelArg::Storable),
            _ => match s.strip_prefix("json:") {
                Some(path) if !path.is_empty() => Ok(ModelArg::Json(PathBuf::from(path))),
                _ => Err(format!("expected bus, storable or json:PATH, got {s:?}")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulationArg {
    W,
    Ev,
}

impl From<FormulationArg> for Formulation {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::W => Formulation::W,
            FormulationArg::Ev => Formulation::EV,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Vfi,
    Newton,
    Hybrid,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Bus,
    Storable,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    Corrected,
    RustOriginalFaulty,
}

impl From<VariantArg> for BusVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Corrected => BusVariant::Corrected,
            VariantArg::RustOriginalFaulty => BusVariant::RustOriginalFaulty,
        }
    }
}

#[derive(clap::Args, Debug)]
struct ModelOpts {
    /// bus, storable, or json:PATH
    #[arg(long)]
    model: ModelArg,
    /// Number of states for the built-in models (storable: multiple of 2).
    #[arg(long)]
    n_states: Option<usize>,
    /// Override the discount factor of a built-in model.
    #[arg(long)]
    beta: Option<f64>,
    /// Replacement transition of the bus model.
    #[arg(long, value_enum, default_value = "corrected")]
    variant: VariantArg,
}

impl ModelOpts {
    fn load(&self) -> Result<ModelSpec> {
        let spec = match &self.model {
            ModelArg::Bus => {
                let mut cfg = BusModelConfig {
                    variant: self.variant.into(),
                    ..BusModelConfig::default()
                };
                if let Some(n) = self.n_states {
                    cfg.n_states = n;
                }
                if let Some(b) = self.beta {
                    cfg.beta = b;
                }
                build_bus_model(&cfg)?
            }
            ModelArg::Storable => {
                let mut cfg = match self.n_states {
                    Some(n) => StorableGoodsConfig::with_states(n)?,
                    None => StorableGoodsConfig::default(),
                };
                if let Some(b) = self.beta {
                    cfg.beta = b;
                }
                build_storable_goods_model(&cfg)?
            }
            ModelArg::Json(path) => {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let spec: ModelSpec = serde_json::from_reader(std::io::BufReader::new(file))
                    .with_context(|| format!("parsing {}", path.display()))?;
                match self.beta {
                    Some(b) => spec.with_beta(b),
                    None => spec,
                }
            }
        };
        validate_model(&spec).into_result()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model and optionally write the convergence trace and solution.
    Solve {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, value_enum)]
        formulation: FormulationArg,
        /// vfi: successive approximations only; newton: Newton from the zero
        /// iterate; hybrid: VFI until the switch rule fires, then Newton.
        #[arg(long, value_enum, default_value = "hybrid")]
        method: MethodArg,
        /// Sup-norm tolerance on both the iterate change and the residual
        /// (defaults: 1e-13 on the change, 1e-12 on the residual).
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
        /// Trace CSV: k,method,sup_diff,residual,step_time_s
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time Newton steps of the EV and W formulations across model sizes.
    #[command(
        long_about = "Time Newton steps of the EV and W formulations across model sizes.\n\n\
        Both formulations start from the same point: five value-function iterations on W from zero, \
        mapped to EV through EV_j = F(j) W.\n\n\
        step:  forming I - T', its dense LU factorization and applying x - (I - T')^{-1}(x - T(x)), \
        given a precomputed derivative and residual.\n\
        total: one full Newton iteration: Bellman operator evaluation, choice probabilities, \
        derivative assembly and the step. Model construction is excluded.\n\n\
        Each time is the minimum over --reps repetitions; ratios are EV time / W time."
    )]
    Bench {
        #[arg(long, value_enum)]
        model: FamilyArg,
        /// Comma-separated state counts, e.g. 10,100,200
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count constraints and Jacobian nonzeros of both equilibrium-constraint
    /// systems.
    MpecStats {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a bus model in EV form and check whether EV_2(x) = EV_1(0).
    DiagnoseBus {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long)]
        n_states: usize,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct SolveOutput {
    formulation: Formulation,
    converged: bool,
    iterations: usize,
    solution: Vec<f64>,
    /// `ccp[j][x]`
    ccp: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct DiagnoseOutput {
    variant: BusVariant,
    n_states: usize,
    converged: bool,
    ev2_constant: bool,
    identity_holds: bool,
    gap: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Returns whether the run converged.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve {
            model,
            formulation,
            method,
            tol,
            max_iters,
            trace,
            out,
        } => {
            let spec = model.load()?;
            let formulation = Formulation::from(formulation);
            let mut opts = SolveOptions {
                max_iters,
                ..SolveOptions::default()
            };
            if let Some(t) = tol {
                if !(t > 0.0) {
                    bail!("--tol must be positive");
                }
                opts.tol_fixed_point = t;
                opts.tol_residual = t;
            }
            let start = Iterate::zeros(&spec, formulation);
            let result = match method {
                MethodArg::Vfi => vfi(&spec, &start, &opts)?,
                MethodArg::Newton => poly_solve(
                    &spec,
                    formulation,
                    &SolveOptions {
                        switch_rule: SwitchRule::FixedCount(0),
                        ..opts
                    },
                )?,
                MethodArg::Hybrid => poly_solve(&spec, formulation, &opts)?,
            };
            if let Some(path) = trace {
                let mut w = create(&path)?;
                result.trace.write_csv(&mut w)?;
                w.flush()?;
            }
            if let Some(path) = out {
                let ccp = result.ccp.probs();
                let output = SolveOutput {
                    formulation,
                    converged: result.converged,
                    iterations: result.iterations,
                    solution: result.solution.values().iter().copied().collect(),
                    ccp: ccp.row_iter().map(|r| r.iter().copied().collect()).collect(),
                };
                write_json(&path, &output)?;
            }
            let last = result.trace.last().map(|r| r.residual).unwrap_or(f64::NAN);
            eprintln!(
                "{formulation}: converged={} iterations={} residual={last:e}",
                result.converged, result.iterations
            );
            Ok(result.converged)
        }
        Command::Bench {
            model,
            sizes,
            reps,
            out,
        } => {
            let family = match model {
                FamilyArg::Bus => ModelFamily::Bus,
                FamilyArg::Storable => ModelFamily::Storable,
            };
            let report = bench_newton(&BenchModel::default_for(family), &sizes, reps)?;
            let mut w = create(&out)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            for r in &report.rows {
                eprintln!(
                    "{} |X|={:>5}  step EV/W = {:>6.2}  total EV/W = {:>6.2}",
                    r.model, r.n_states, r.ratio_step, r.ratio_total
                );
            }
            Ok(true)
        }
        Command::MpecStats { model, out } => {
            let spec = model.load()?;
            let report = compare_systems(&spec)?;
            write_json(&out, &report)?;
            Ok(true)
        }
        Command::DiagnoseBus {
            variant,
            n_states,
            beta,
            out,
        } => {
            let mut cfg = BusModelConfig {
                n_states,
                variant: variant.into(),
                ..BusModelConfig::default()
            };
            if let Some(b) = beta {
                cfg.beta = b;
            }
            let spec = build_bus_model(&cfg)?;
            let solved = poly_solve(&spec, Formulation::EV, &SolveOptions::default())?;
            let ev = solved.solution.as_ev().expect("EV formulation yields an EV stack");
            let diag = bus_ev2_diagnostics(&spec, ev)?;
            write_json(
                &out,
                &DiagnoseOutput {
                    variant: cfg.variant,
                    n_states,
                    converged: solved.converged,
                    ev2_constant: diag.ev2_constant,
                    identity_holds: diag.identity_holds,
                    gap: diag.gap,
                },
            )?;
            Ok(solved.converged)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
