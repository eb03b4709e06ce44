//! `blp`: analyze one-parameter bilevel programs from the command line.
//!
//! Every invocation prints exactly one JSON document on standard output.
//! Exit codes: 0 verdict computed, 1 verdict computed with inconclusive
//! elements (or corpus mismatches), 2 usage or input error, 3 numerical
//! failure.

use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use blp_core::calmness::{
    estimate_peb_modulus, estimate_uwsm_modulus, verify_partial_calmness, Condition,
    ModulusVerdict,
};
use blp_core::classify::{classify_point, classify_simplicity, SimplicityCase};
use blp_core::continuation::{
    solve_bilevel, solve_lower_global, trace_branch, value_function, TraceOptions,
};
use blp_core::corpus;
use blp_core::csvio::{curve_table, samples_table, trace_table, Table};
use blp_core::problem::{load_problem, BilevelProblem, Tolerances};
use blp_core::stationarity::{cross_validate, mpcc_licq, MpccMultiplier, Verdict};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "blp",
    version,
    about = "Classification, multiplier structure, branch tracing, error-bound and calmness \
             verification, and optimality checks for one-parameter bilevel programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Problem source plus tolerance overrides, shared by every verb that
/// analyzes a single instance.
#[derive(Args)]
struct ProblemArgs {
    /// Problem file path, or builtin:<name> for a shipped instance.
    #[arg(long)]
    problem: String,

    #[command(flatten)]
    tol: TolArgs,
}

#[derive(Args)]
struct TolArgs {
    /// Override the active-set width.
    #[arg(long)]
    tol_act: Option<f64>,
    /// Override the relative singular-value cutoff for rank decisions.
    #[arg(long)]
    tol_rank: Option<f64>,
    /// Override the vanishing-multiplier threshold.
    #[arg(long)]
    tol_mult: Option<f64>,
    /// Override the eigenvalue degeneracy threshold.
    #[arg(long)]
    tol_eig: Option<f64>,
    /// Override the residual acceptance threshold.
    #[arg(long)]
    tol_res: Option<f64>,
    /// Override the per-axis grid resolution of the global search.
    #[arg(long)]
    tol_grid: Option<usize>,
    /// Override the number of extra random starts in the global search.
    #[arg(long)]
    tol_multistart: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a lower-level stationary point and the simplicity of its
    /// parameter value.
    Classify {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        /// Comma-separated coordinates of the point, e.g. --y 0,-1.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        y: Vec<f64>,
    },

    /// Trace the stationary branch through a point until an event.
    Trace {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        y: Vec<f64>,
        /// Full-length multiplier start (fitted by least squares if omitted).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        u: Option<Vec<f64>>,
        /// Freeze these active indices instead of detecting them.
        #[arg(long, value_delimiter = ',')]
        active: Option<Vec<usize>>,
        #[arg(long, allow_negative_numbers = true)]
        x_end: f64,
        /// Base predictor step in x.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Write the traced points as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Solve the lower level globally at one parameter value.
    SolveLower {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
    },

    /// Sample the optimal-value function on a uniform parameter grid.
    ValueFunction {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x_lo: f64,
        #[arg(long, allow_negative_numbers = true)]
        x_hi: f64,
        #[arg(long, default_value_t = 101)]
        n: usize,
        /// Write the sampled curve as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Estimate a partial-error-bound or weak-sharp-minimum modulus by
    /// sampling near a reference solution.
    VerifyPeb {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        y: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Largest admitted optimality gap (graph metric only).
        #[arg(long, default_value_t = f64::INFINITY)]
        v_max: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// graph: distance to the solution graph over Fritz-John samples.
        /// solution: distance to S(x) over the chosen condition set.
        #[arg(long, default_value = "graph")]
        metric: String,
        /// Condition set for the solution metric: b-surrogate, kkt, fj, gc, or f.
        #[arg(long, default_value = "fj")]
        condition: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-sample ratio log as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Check the partial-calmness inequality at a penalty weight.
    VerifyCalmness {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        y: Vec<f64>,
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Stationary set to sample: kkt or fj.
        #[arg(long, default_value = "kkt")]
        condition: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Check bilevel optimality in the direct and implicit forms and
    /// cross-validate the two verdicts.
    CheckStationarity {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        y: Vec<f64>,
    },

    /// Assemble the MPCC-LICQ block matrix at a multiplier and report its
    /// column rank.
    MpccLicq {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        y: Vec<f64>,
        /// kkt or fj.
        #[arg(long, default_value = "kkt")]
        variant: String,
        /// Full-length multiplier vector (entries of inactive constraints 0).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        u: Vec<f64>,
        /// Abnormal component, required by the fj variant.
        #[arg(long, allow_negative_numbers = true)]
        u0: Option<f64>,
    },

    /// Solve the bilevel program over the declared search box.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
    },

    /// Run every built-in corpus expectation and report the outcomes.
    Corpus {
        #[command(flatten)]
        tol: TolArgs,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }
}

impl From<blp_core::Error> for Failure {
    fn from(e: blp_core::Error) -> Failure {
        let code = match &e {
            blp_core::Error::Inconclusive(_) => 1,
            blp_core::Error::Numerical(_) | blp_core::Error::Eval(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn apply_tol_values(t: &mut Tolerances, tol: &TolArgs) {
    if let Some(v) = tol.tol_act {
        t.act = v;
    }
    if let Some(v) = tol.tol_rank {
        t.rank = v;
    }
    if let Some(v) = tol.tol_mult {
        t.mult = v;
    }
    if let Some(v) = tol.tol_eig {
        t.eig = v;
    }
    if let Some(v) = tol.tol_res {
        t.res = v;
    }
    if let Some(v) = tol.tol_grid {
        t.grid = v;
    }
    if let Some(v) = tol.tol_multistart {
        t.multistart = v;
    }
}

fn apply_tol(p: &mut BilevelProblem, tol: &TolArgs) -> Result<(), Failure> {
    apply_tol_values(&mut p.tol, tol);
    p.tol.validate()?;
    Ok(())
}

fn load(args: &ProblemArgs) -> Result<BilevelProblem, Failure> {
    let text = match args.problem.strip_prefix("builtin:") {
        Some(name) => corpus::builtin(name)
            .map(str::to_string)
            .ok_or_else(|| Failure::usage(format!("unknown builtin problem `{name}`")))?,
        None => fs::read_to_string(&args.problem)
            .map_err(|e| Failure::usage(format!("cannot read {}: {e}", args.problem)))?,
    };
    let mut p = load_problem(&text)?;
    apply_tol(&mut p, &args.tol)?;
    Ok(p)
}

fn write_csv(path: &PathBuf, table: &Table) -> Result<(), Failure> {
    let file = fs::File::create(path)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", path.display())))?;
    table
        .write(std::io::BufWriter::new(file))
        .map_err(|e| Failure { code: 3, message: format!("write {}: {e}", path.display()) })
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn run(cli: Cli) -> Result<(Value, i32), Failure> {
    match cli.command {
        Command::Classify { problem, x, y } => {
            let p = load(&problem)?;
            let point = classify_point(&p, x, &y)?;
            let simplicity = classify_simplicity(&p, x, Some(&y))?;
            let case = match &simplicity.case {
                SimplicityCase::CaseI => "I",
                SimplicityCase::CaseII { .. } => "II",
                SimplicityCase::NotSimple { .. } => "not simple",
            };
            let doc = json!({
                "verb": "classify",
                "problem": problem.problem,
                "x": x,
                "y": y,
                "type": point.point_type.label(),
                "case": case,
                "point": to_value(&point),
                "simplicity": to_value(&simplicity),
            });
            Ok((doc, 0))
        }

        Command::Trace { problem, x, y, u, active, x_end, step, out } => {
            let p = load(&problem)?;
            let opts = TraceOptions { x_end, step, active };
            let trace = trace_branch(&p, x, &y, u.as_deref(), &opts)?;
            if let Some(path) = &out {
                write_csv(path, &trace_table(&trace.points, p.m, p.p))?;
            }
            let doc = json!({
                "verb": "trace",
                "problem": problem.problem,
                "x": x,
                "x_end": x_end,
                "points": trace.points.len(),
                "trace": to_value(&trace),
            });
            Ok((doc, 0))
        }

        Command::SolveLower { problem, x } => {
            let p = load(&problem)?;
            let sol = solve_lower_global(&p, x)?;
            let doc = json!({
                "verb": "solve-lower",
                "problem": problem.problem,
                "x": x,
                "solution": to_value(&sol),
            });
            Ok((doc, 0))
        }

        Command::ValueFunction { problem, x_lo, x_hi, n, out } => {
            let p = load(&problem)?;
            let samples = value_function(&p, x_lo, x_hi, n)?;
            if let Some(path) = &out {
                write_csv(path, &curve_table(&samples, p.m))?;
            }
            let doc = json!({
                "verb": "value-function",
                "problem": problem.problem,
                "n": samples.len(),
                "samples": to_value(&samples),
            });
            Ok((doc, 0))
        }

        Command::VerifyPeb {
            problem,
            x,
            y,
            radius,
            v_max,
            samples,
            metric,
            condition,
            seed,
            out,
        } => {
            let p = load(&problem)?;
            let cond = Condition::from_str(&condition).map_err(Failure::usage)?;
            let report = match metric.as_str() {
                "graph" => {
                    if cond != Condition::Fj {
                        return Err(Failure::usage(
                            "the graph metric estimates the Fritz-John partial error bound; \
                             use --metric solution to vary the condition set",
                        ));
                    }
                    estimate_peb_modulus(&p, x, &y, radius, v_max, samples, seed)?
                }
                "solution" => estimate_uwsm_modulus(&p, x, &y, radius, samples, cond, seed)?,
                other => {
                    return Err(Failure::usage(format!(
                        "unknown metric `{other}` (expected graph or solution)"
                    )))
                }
            };
            if let Some(path) = &out {
                write_csv(path, &samples_table(&report, p.m))?;
            }
            // A sampled method can only suspect unboundedness, never prove
            // it, so that verdict counts as inconclusive.
            let code = match report.verdict {
                ModulusVerdict::UnboundedSuspect { .. } => 1,
                _ => 0,
            };
            let doc = json!({
                "verb": "verify-peb",
                "problem": problem.problem,
                "report": to_value(&report),
            });
            Ok((doc, code))
        }

        Command::VerifyCalmness { problem, x, y, mu, radius, samples, condition, seed } => {
            let p = load(&problem)?;
            let cond = Condition::from_str(&condition).map_err(Failure::usage)?;
            let report = verify_partial_calmness(&p, x, &y, mu, radius, samples, cond, seed)?;
            let doc = json!({
                "verb": "verify-calmness",
                "problem": problem.problem,
                "report": to_value(&report),
            });
            Ok((doc, 0))
        }

        Command::CheckStationarity { problem, x, y } => {
            let p = load(&problem)?;
            let cv = cross_validate(&p, x, &y)?;
            let inconclusive = cv.direct.verdict == Verdict::Inconclusive
                || cv.implicit.verdict == Verdict::Inconclusive;
            let code = if inconclusive || !cv.agreement { 1 } else { 0 };
            let doc = json!({
                "verb": "check-stationarity",
                "problem": problem.problem,
                "x": x,
                "y": y,
                "report": to_value(&cv),
            });
            Ok((doc, code))
        }

        Command::MpccLicq { problem, x, y, variant, u, u0 } => {
            let p = load(&problem)?;
            let mult = match variant.as_str() {
                "kkt" => MpccMultiplier::Kkt(u),
                "fj" => MpccMultiplier::Fj {
                    u0: u0.ok_or_else(|| Failure::usage("the fj variant requires --u0"))?,
                    u,
                },
                other => {
                    return Err(Failure::usage(format!(
                        "unknown variant `{other}` (expected kkt or fj)"
                    )))
                }
            };
            let report = mpcc_licq(&p, x, &y, &mult)?;
            let doc = json!({
                "verb": "mpcc-licq",
                "problem": problem.problem,
                "x": x,
                "y": y,
                "report": to_value(&report),
            });
            Ok((doc, 0))
        }

        Command::Solve { problem } => {
            let p = load(&problem)?;
            let sol = solve_bilevel(&p)?;
            let doc = json!({
                "verb": "solve",
                "problem": problem.problem,
                "solution": to_value(&sol),
            });
            Ok((doc, 0))
        }

        Command::Corpus { tol } => {
            let mut probe = Tolerances::default();
            apply_tol_values(&mut probe, &tol);
            probe.validate()?;
            let outcomes = corpus::corpus_check_with(&|p| apply_tol_values(&mut p.tol, &tol));
            let failed: Vec<&corpus::CorpusOutcome> =
                outcomes.iter().filter(|o| !o.passed).collect();
            let code = if failed.is_empty() { 0 } else { 1 };
            let doc = json!({
                "verb": "corpus",
                "total": outcomes.len(),
                "failed": failed.len(),
                "failures": to_value(&failed),
                "outcomes": to_value(&outcomes),
            });
            Ok((doc, code))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let (doc, code) = match run(cli) {
        Ok(pair) => pair,
        Err(f) => (json!({ "error": f.message }), f.code),
    };
    println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    std::process::exit(code);
}
