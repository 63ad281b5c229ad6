//! `platoon-stab`: string-stability analysis, frequency sweeps, chain
//! simulation and trace monitoring for platoon controllers.
//!
//! Exit codes: 0 success/pass, 1 I/O, 2 validation or parse, 3 numeric
//! divergence, 4 monitor verdict fail. Results go to stdout or `--out` and
//! are CSV or JSON; diagnostics go to stderr as one JSON object per line.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use platoon_core::frequency::{self, GridScale, StabilityConstraint, SweepSummary, TransferFunction};
use platoon_core::model::{ControllerSpec, ControllerType, ErrorModel, ModelError, ModelKind};
use platoon_core::monitor::{self, MonitorError, Outcome, PlannedViolation, Violation};
use platoon_core::sim::{self, AttenuationReport, Input, SimConfig, SimError};
use platoon_core::{error_model, Execution};

#[derive(Parser)]
#[command(name = "platoon-stab", version, about = "String-stability toolkit for vehicle platoon controllers")]
struct Cli {
    /// Run on a single thread even when built with parallel support.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report error-model coefficients, transfer function and stability condition.
    Analyze {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Evaluate the frequency response on a grid and emit CSV.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        omega_min: f64,
        #[arg(long)]
        omega_max: f64,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, value_enum, default_value_t = Scale::Log)]
        scale: Scale,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a sinusoidal disturbance propagating down the platoon.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Vehicles in the chain; defaults to the spec's n.
        #[arg(long)]
        n: Option<usize>,
        /// Disturbance frequency, rad/s.
        #[arg(long)]
        omega: f64,
        /// Amplitude of z_1 in chain mode, of the leader force (N) in state-space mode.
        #[arg(long, default_value_t = 1.0)]
        amp: f64,
        /// Seconds; chosen from the transient decay rate when omitted.
        #[arg(long)]
        duration: Option<f64>,
        /// Step size in seconds, or `auto`.
        #[arg(long, default_value = "auto")]
        dt: StepSize,
        /// Leading fraction of the run excluded from amplitude measurement.
        #[arg(long)]
        discard: Option<f64>,
        #[arg(long, value_enum, default_value_t = Mode::Chain)]
        mode: Mode,
        /// Desired inter-vehicle spacing for state-space mode, m.
        #[arg(long, default_value_t = 10.0)]
        spacing: f64,
        /// Trajectory CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Attenuation report JSON destination; stderr when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check a line-delimited JSON trace against G(P1) ∧ G(P2).
    Monitor {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Generate a seeded trace, optionally with planned violations.
    GenTrace {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        len: usize,
        #[arg(long)]
        spec: PathBuf,
        /// `INDEX:P1` or `INDEX:P2`; repeatable.
        #[arg(long = "violate")]
        violations: Vec<PlannedViolation>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Log,
    Linear,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    /// Cascade of spacing-error equations driven at z_1.
    Chain,
    /// Full position/velocity dynamics (constant-spacing unidirectional only).
    StateSpace,
}

#[derive(Clone, Copy)]
enum StepSize {
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for StepSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(StepSize::Auto);
        }
        s.parse().map(StepSize::Fixed).map_err(|_| format!("expected `auto` or a number, got {s:?}"))
    }
}

/// A failed command, carrying its exit code.
enum Failure {
    Io(String),
    Invalid(String),
    Diverged(String),
    /// Monitor verdict was Fail; the verdict itself is already on stdout.
    Violated,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::Violated => 4,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Divergence { .. } => Failure::Diverged(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<MonitorError> for Failure {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn io_error(path: Option<&Path>, e: io::Error) -> Failure {
    match path {
        Some(p) => Failure::Io(format!("{}: {e}", p.display())),
        None => Failure::Io(e.to_string()),
    }
}

fn read_spec(path: &Path) -> Result<ControllerSpec, Failure> {
    let text = fs::read(path).map_err(|e| io_error(Some(path), e))?;
    serde_json::from_slice(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

/// Buffered file, or stdout when `path` is `None`.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(Some(p), e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit<F>(path: Option<&Path>, write: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let mut out = sink(path)?;
    write(&mut out).and_then(|_| out.flush()).map_err(|e| io_error(path, e))
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    emit(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        out.write_all(b"\n")
    })
}

fn stderr_json(value: &serde_json::Value) {
    let _ = writeln!(io::stderr().lock(), "{value}");
}

#[derive(Serialize)]
struct TransferReport {
    expression: String,
    #[serde(flatten)]
    coefficients: TransferFunction,
}

#[derive(Serialize)]
struct Analysis {
    model: &'static str,
    spec: ControllerSpec,
    coefficients: ErrorModel,
    transfer_function: TransferReport,
    constraint: StabilityConstraint,
    critical_frequencies: Vec<f64>,
    /// `[lo, hi]` pairs; `null` marks an unbounded upper end.
    stable_intervals: Vec<(f64, Option<f64>)>,
    unstable_intervals: Vec<(f64, Option<f64>)>,
    /// √(2k/m), present for the constant-spacing unidirectional model only.
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold_omega: Option<f64>,
    condition: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

fn intervals(v: Vec<(f64, f64)>) -> Vec<(f64, Option<f64>)> {
    v.into_iter().map(|(lo, hi)| (lo, hi.is_finite().then_some(hi))).collect()
}

fn analyze(spec: &ControllerSpec) -> Result<Analysis, Failure> {
    let model = error_model(spec)?;
    let kind = spec.kind()?;
    let tf = frequency::transfer_function(&model);
    let q = frequency::stability_constraint(&model);
    let critical = frequency::critical_frequencies(&q);
    let p = &spec.params;

    let (threshold_omega, condition) = if kind == ModelKind::UniCs {
        let bound = 2.0 * p.k / p.m;
        (Some(bound.sqrt()), format!("stable iff ω² > 2k/m = {bound}"))
    } else {
        let text = match critical.as_slice() {
            [] if q.holds(1.0) => "stable at every ω > 0".to_string(),
            [] => "unstable at every ω > 0".to_string(),
            _ => {
                let list: Vec<String> = q
                    .stable_intervals()
                    .iter()
                    .map(|(lo, hi)| if hi.is_finite() { format!("{lo} < ω < {hi}") } else { format!("ω > {lo}") })
                    .collect();
                if list.is_empty() {
                    "unstable at every ω > 0 except isolated points".to_string()
                } else {
                    format!("stable iff {}", list.join(" or "))
                }
            }
        };
        (None, format!("Q(ω²) = ω⁴ + αω² + β > 0 with α = {}, β = {}; {text}", q.alpha, q.beta))
    };

    let mut notes = Vec::new();
    if spec.controller_type == ControllerType::NonAutonomous {
        notes.push(
            "non-autonomous controller: the single non-autonomous model (control_clcv) is selected; \
             configuration and strategy do not affect its coefficients"
                .to_string(),
        );
    }

    Ok(Analysis {
        model: kind.name(),
        spec: *spec,
        coefficients: model,
        transfer_function: TransferReport { expression: tf.to_string(), coefficients: tf },
        constraint: q,
        critical_frequencies: critical,
        stable_intervals: intervals(q.stable_intervals()),
        unstable_intervals: intervals(q.unstable_intervals()),
        threshold_omega,
        condition,
        notes,
    })
}

type CsvWriter = Box<dyn FnOnce(&mut dyn Write) -> io::Result<()>>;

#[derive(Serialize)]
struct SimulationReport {
    model: &'static str,
    mode: &'static str,
    vehicles: usize,
    omega: f64,
    amplitude: f64,
    dt: f64,
    duration: f64,
    discard: f64,
    /// Analytic per-stage gain |H(iω)|.
    predicted_gain: f64,
    predicted_stable: bool,
    #[serde(flatten)]
    measured: AttenuationReport,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    spec: &ControllerSpec,
    n: Option<usize>,
    omega: f64,
    amp: f64,
    duration: Option<f64>,
    dt: StepSize,
    discard: Option<f64>,
    mode: Mode,
    spacing: f64,
    out: Option<&Path>,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let model = error_model(spec)?;
    let kind = spec.kind()?;
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Failure::Invalid(format!("omega must be positive and finite, got {omega}")));
    }
    let n = match n {
        Some(n) => n,
        None => usize::try_from(spec.params.n).map_err(|_| Failure::Invalid("n too large".into()))?,
    };
    if n < 2 {
        return Err(Failure::Invalid(format!("simulation needs at least 2 vehicles, got {n}")));
    }
    if mode == Mode::StateSpace && kind != ModelKind::UniCs {
        return Err(Failure::Invalid(format!(
            "state-space mode supports control_uni_cs only, spec selects {}",
            kind.name()
        )));
    }

    // the leader force reaches z_1 through one more stage than the chain input
    let stages = if mode == Mode::StateSpace { n } else { n - 1 };
    let mut cfg = SimConfig::for_frequency(&model, omega, amp, stages);
    if let StepSize::Fixed(h) = dt {
        cfg.dt = h;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    if let Some(f) = discard {
        cfg.discard = f;
    }
    let cfg = SimConfig { input: Input::Sinusoid { amplitude: amp, omega }, ..cfg };

    let (measured, csv): (AttenuationReport, CsvWriter) = match mode {
        Mode::Chain => {
            let traj = sim::simulate_chain(&model, n, &cfg)?;
            let rep = sim::attenuation_report(&traj, &cfg)?;
            (rep, Box::new(move |w| traj.write_csv(w)))
        }
        Mode::StateSpace => {
            let params = platoon_core::PlatoonParams { n: n as u64, ..spec.params };
            let traj = sim::simulate_state_space_uni_cs(&params, &cfg, spacing)?;
            let rep = sim::attenuation_report(&traj.spacing_errors(), &cfg)?;
            (rep, Box::new(move |w| traj.write_csv(w)))
        }
    };
    let h = frequency::frequency_response(&frequency::transfer_function(&model), omega)
        .map_err(|e| Failure::Invalid(e.to_string()))?
        .magnitude;
    let summary = SimulationReport {
        model: kind.name(),
        mode: match mode {
            Mode::Chain => "chain",
            Mode::StateSpace => "state_space",
        },
        vehicles: n,
        omega,
        amplitude: amp,
        dt: cfg.dt,
        duration: cfg.duration,
        discard: cfg.discard,
        predicted_gain: h,
        predicted_stable: h < 1.0,
        measured,
    };

    emit(out, csv)?;
    match report {
        Some(p) => emit_json(Some(p), &summary),
        None => {
            stderr_json(&serde_json::to_value(&summary).expect("report serializes"));
            Ok(())
        }
    }
}

/// Verdict without wall-clock time, so stdout is reproducible.
#[derive(Serialize)]
struct VerdictOut<'a> {
    outcome: Outcome,
    first_violation: &'a Option<Violation>,
    events: usize,
    p1_failures: usize,
    p2_failures: usize,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Analyze { spec } => emit_json(None, &analyze(&read_spec(&spec)?)?),
        Command::Sweep { spec, omega_min, omega_max, points, scale, out } => {
            let model = error_model(&read_spec(&spec)?)?;
            let scale = match scale {
                Scale::Log => GridScale::Log,
                Scale::Linear => GridScale::Linear,
            };
            let bad = |e: frequency::FrequencyError| Failure::Invalid(e.to_string());
            let grid = frequency::frequency_grid(omega_min, omega_max, points, scale).map_err(bad)?;
            let rows = frequency::sweep(&model, &grid, exec).map_err(bad)?;
            emit(out.as_deref(), |w| frequency::write_sweep_csv(w, &rows))?;
            let summary: SweepSummary = frequency::summarize(&model, &rows);
            stderr_json(&serde_json::to_value(summary).expect("summary serializes"));
            Ok(())
        }
        Command::Simulate { spec, n, omega, amp, duration, dt, discard, mode, spacing, out, report } => simulate(
            &read_spec(&spec)?,
            n,
            omega,
            amp,
            duration,
            dt,
            discard,
            mode,
            spacing,
            out.as_deref(),
            report.as_deref(),
        ),
        Command::Monitor { trace } => {
            let start = Instant::now();
            let trace = monitor::read_trace(&trace, exec)?;
            let v = monitor::run_monitor_with(&trace, exec);
            let seconds = start.elapsed().as_secs_f64();
            let out = VerdictOut {
                outcome: v.outcome,
                first_violation: &v.first_violation,
                events: v.events,
                p1_failures: v.p1_failures,
                p2_failures: v.p2_failures,
            };
            emit_json(None, &out)?;
            stderr_json(&json!({ "seconds": seconds, "check_seconds": v.seconds }));
            match v.outcome {
                Outcome::Pass => Ok(()),
                Outcome::Fail => Err(Failure::Violated),
            }
        }
        Command::GenTrace { seed, len, spec, violations, out } => {
            let trace = monitor::generate_trace(seed, len, &read_spec(&spec)?, &violations)?;
            emit(out.as_deref(), |w| monitor::write_trace(w, &trace))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Io(msg) | Failure::Invalid(msg) | Failure::Diverged(msg) => {
                    stderr_json(&json!({ "error": msg, "exit_code": f.code() }))
                }
                Failure::Violated => {}
            }
            ExitCode::from(f.code())
        }
    }
}
