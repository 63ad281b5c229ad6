//! Time-domain simulation of platoon spacing errors.
//!
//! Two entry points are provided and can be cross-checked:
//!
//! - [`simulate_chain`] integrates the cascade of identical error stages
//!   `z_i'' = -a1 z_i' - a0 z_i + b1 z_{i-1}' + b0 z_{i-1}` for `i = 2..n`,
//!   with `z_1` an exogenous input signal.
//! - [`simulate_state_space_uni_cs`] integrates positions and velocities of
//!   every vehicle under constant-spacing unidirectional control, driven by a
//!   force on the leader. Its spacing errors obey the same cascade.
//!
//! Both use classical fixed-step RK4 and start from rest.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::model::{ErrorModel, PlatoonParams};
use crate::par::{self, Execution};

/// Amplitudes below this are treated as zero when forming ratios.
pub const DEGENERATE_AMPLITUDE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("state diverged (non-finite) at t = {t}")]
    Divergence { t: f64 },
    #[error("reference amplitude of z_{channel} is {amplitude:e}; ratio undefined")]
    Degenerate { channel: usize, amplitude: f64 },
}

/// Samples of a signal and its derivative on a uniform grid starting at t = 0,
/// interpolated with cubic Hermite polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    dt: f64,
    values: Vec<f64>,
    derivatives: Vec<f64>,
}

impl SampledSignal {
    pub fn new(dt: f64, values: Vec<f64>, derivatives: Vec<f64>) -> Result<Self, SimError> {
        if !(dt > 0.0) || values.len() != derivatives.len() || values.len() < 2 {
            return Err(SimError::Config("sampled signal needs dt > 0 and ≥ 2 matching samples".into()));
        }
        Ok(SampledSignal { dt, values, derivatives })
    }

    pub fn duration(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let x = (t / self.dt).max(0.0);
        let last = self.values.len() - 2;
        let i = (x.floor() as usize).min(last);
        (i, x - i as f64)
    }

    fn value(&self, t: f64) -> f64 {
        let (i, s) = self.locate(t);
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.derivatives[i] * self.dt, self.derivatives[i + 1] * self.dt);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1
    }

    fn derivative(&self, t: f64) -> f64 {
        let (i, s) = self.locate(t);
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.derivatives[i] * self.dt, self.derivatives[i + 1] * self.dt);
        let s2 = s * s;
        ((6.0 * s2 - 6.0 * s) * p0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * p1
            + (3.0 * s2 - 2.0 * s) * m1)
            / self.dt
    }
}

/// Exogenous signal. For [`simulate_chain`] it is `z_1` in meters; for
/// [`simulate_state_space_uni_cs`] it is the leader force in newtons.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Zero,
    Constant(f64),
    Sinusoid { amplitude: f64, omega: f64 },
    Sampled(SampledSignal),
}

impl Input {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Input::Zero => 0.0,
            Input::Constant(v) => *v,
            Input::Sinusoid { amplitude, omega } => amplitude * (omega * t).sin(),
            Input::Sampled(s) => s.value(t),
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Input::Zero | Input::Constant(_) => 0.0,
            Input::Sinusoid { amplitude, omega } => amplitude * omega * (omega * t).cos(),
            Input::Sampled(s) => s.derivative(t),
        }
    }

    fn omega(&self) -> Option<f64> {
        match self {
            Input::Sinusoid { omega, .. } => Some(*omega),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Step size, s.
    pub dt: f64,
    /// Total simulated time, s.
    pub duration: f64,
    pub input: Input,
    /// Leading fraction of the run ignored for steady-state measurement.
    pub discard: f64,
}

impl SimConfig {
    pub const DEFAULT_DISCARD: f64 = 0.7;

    pub fn new(dt: f64, duration: f64, input: Input) -> Self {
        SimConfig { dt, duration, input, discard: Self::DEFAULT_DISCARD }
    }

    /// `min(2π/(200 ω_in), 1/(20 √a0))`; the first term is dropped without a sinusoidal input.
    pub fn auto_dt(model: &ErrorModel, input: &Input) -> f64 {
        let natural = 1.0 / (20.0 * model.a0.sqrt());
        match input.omega() {
            Some(w) if w > 0.0 => natural.min(2.0 * PI / (200.0 * w)),
            _ => natural,
        }
    }

    /// Sinusoidal run long enough that start-up transients of a cascade with
    /// `stages` error stages are negligible in the retained window, which in
    /// turn spans at least 20 input periods.
    ///
    /// Transient content near the resonance is amplified by up to the peak
    /// gain at every stage while the steady state scales with `|H(iω)|`, so
    /// the decay target tightens by `(peak / |H(iω)|)^stages`.
    pub fn for_frequency(model: &ErrorModel, omega: f64, amplitude: f64, stages: usize) -> Self {
        let input = Input::Sinusoid { amplitude, omega };
        let dt = Self::auto_dt(model, &input);
        let discard = Self::DEFAULT_DISCARD;
        let stages = stages.max(1);
        let gain = |w: f64| {
            let (n, d) = (
                model.b0 * model.b0 + model.b1 * model.b1 * w * w,
                (model.a0 - w * w).powi(2) + model.a1 * model.a1 * w * w,
            );
            (n / d).sqrt()
        };
        let natural = model.a0.sqrt();
        let peak =
            (0..=400).map(|i| gain(natural * 10f64.powf(-2.0 + 4.0 * i as f64 / 400.0))).fold(gain(0.0), f64::max);
        let excess = (peak / gain(omega)).max(1.0).powi(stages as i32);
        let settle = settling_time(model, stages, 1e-6 / excess);
        let periods = 20.0 * 2.0 * PI / omega / (1.0 - discard);
        let duration = (settle / discard).max(periods).max(100.0 * dt);
        SimConfig { dt, duration, input, discard }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= 100.0 * self.dt) || !self.duration.is_finite() {
            return Err(SimError::Config(format!(
                "duration {} must be at least 100·dt = {}",
                self.duration,
                100.0 * self.dt
            )));
        }
        if !(0.0..1.0).contains(&self.discard) {
            return Err(SimError::Config(format!("discard fraction {} not in [0, 1)", self.discard)));
        }
        if let Input::Sampled(s) = &self.input {
            if s.duration() + 0.5 * self.dt < self.duration {
                return Err(SimError::Config("sampled input shorter than the run".into()));
            }
        }
        Ok(())
    }
}

/// Time for the slowest mode of a `stages`-deep cascade to fall below `tol`.
fn settling_time(model: &ErrorModel, stages: usize, tol: f64) -> f64 {
    let disc = model.a1 * model.a1 - 4.0 * model.a0;
    let sigma = if disc > 0.0 { 0.5 * (model.a1 - disc.sqrt()) } else { 0.5 * model.a1 };
    // repeated poles of multiplicity `stages` decay like the Poisson tail
    // Σ_{j<stages} x^j/j! · e^{-x}, x = σt
    let mut x = 0.0f64;
    loop {
        x += 0.25;
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for j in 1..stages {
            term *= x / j as f64;
            sum += term;
        }
        if sum * (-x).exp() < tol || x > 1e4 {
            return x / sigma;
        }
    }
}

/// Borrowed view of one simulation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainState<'a> {
    pub t: f64,
    /// `z_1..z_n`; index 0 is the input channel.
    pub z: &'a [f64],
    pub zdot: &'a [f64],
}

/// Spacing errors `z_1..z_n` at every step, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrajectory {
    n: usize,
    dt: f64,
    z: Vec<f64>,
    zdot: Vec<f64>,
}

impl ChainTrajectory {
    pub fn channels(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.z.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn state(&self, step: usize) -> ChainState<'_> {
        let r = step * self.n..(step + 1) * self.n;
        ChainState { t: self.time(step), z: &self.z[r.clone()], zdot: &self.zdot[r] }
    }

    /// Channel `i` (0-based, so `i = 0` is `z_1`) over time.
    pub fn z(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.z.iter().skip(i).step_by(self.n).copied()
    }

    pub fn zdot(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.zdot.iter().skip(i).step_by(self.n).copied()
    }

    /// `t,z_1,...,z_n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "t")?;
        for i in 1..=self.n {
            write!(out, ",z_{i}")?;
        }
        writeln!(out)?;
        for step in 0..self.len() {
            let s = self.state(step);
            write!(out, "{}", s.t)?;
            for z in s.z {
                write!(out, ",{z}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

/// Classical RK4 step for `y' = f(t, y)` using caller-provided scratch.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Rk4 { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }

    fn step<F: Fn(f64, &[f64], &mut [f64])>(&mut self, f: &F, t: f64, dt: f64, y: &mut [f64]) {
        let h2 = 0.5 * dt;
        f(t, y, &mut self.k1);
        for (tmp, (y, k)) in self.tmp.iter_mut().zip(y.iter().zip(&self.k1)) {
            *tmp = y + h2 * k;
        }
        f(t + h2, &self.tmp, &mut self.k2);
        for (tmp, (y, k)) in self.tmp.iter_mut().zip(y.iter().zip(&self.k2)) {
            *tmp = y + h2 * k;
        }
        f(t + h2, &self.tmp, &mut self.k3);
        for (tmp, (y, k)) in self.tmp.iter_mut().zip(y.iter().zip(&self.k3)) {
            *tmp = y + dt * k;
        }
        f(t + dt, &self.tmp, &mut self.k4);
        let ks = self.k1.iter().zip(&self.k2).zip(self.k3.iter().zip(&self.k4));
        for (y, ((k1, k2), (k3, k4))) in y.iter_mut().zip(ks) {
            *y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
}

/// Integrates the error cascade for `n` channels from zero initial conditions.
pub fn simulate_chain(model: &ErrorModel, n: usize, cfg: &SimConfig) -> Result<ChainTrajectory, SimError> {
    if n < 2 {
        return Err(SimError::Config(format!("need at least 2 channels, got {n}")));
    }
    cfg.validate()?;
    let ErrorModel { a0, a1, b0, b1 } = *model;
    let input = &cfg.input;
    let stages = n - 1;
    // y = [z_2, z_2', z_3, z_3', ...]
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (mut up, mut up_dot) = (input.value(t), input.derivative(t));
        for j in 0..stages {
            let (z, zd) = (y[2 * j], y[2 * j + 1]);
            dy[2 * j] = zd;
            dy[2 * j + 1] = -a1 * zd - a0 * z + b1 * up_dot + b0 * up;
            up = z;
            up_dot = zd;
        }
    };

    let steps = cfg.steps();
    let mut traj = ChainTrajectory {
        n,
        dt: cfg.dt,
        z: Vec::with_capacity((steps + 1) * n),
        zdot: Vec::with_capacity((steps + 1) * n),
    };
    let mut y = vec![0.0; 2 * stages];
    let mut rk = Rk4::new(2 * stages);
    let record = |traj: &mut ChainTrajectory, t: f64, y: &[f64]| {
        traj.z.push(input.value(t));
        traj.zdot.push(input.derivative(t));
        for j in 0..stages {
            traj.z.push(y[2 * j]);
            traj.zdot.push(y[2 * j + 1]);
        }
    };
    record(&mut traj, 0.0, &y);
    for step in 0..steps {
        let t = step as f64 * cfg.dt;
        rk.step(&rhs, t, cfg.dt, &mut y);
        let t_next = (step + 1) as f64 * cfg.dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Divergence { t: t_next });
        }
        record(&mut traj, t_next, &y);
    }
    Ok(traj)
}

/// Positions and velocities of every vehicle, plus the leader force.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceTrajectory {
    n: usize,
    dt: f64,
    spacing: f64,
    x: Vec<f64>,
    v: Vec<f64>,
    u: Vec<f64>,
}

impl StateSpaceTrajectory {
    pub fn vehicles(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Positions at `step`, leader first.
    pub fn positions(&self, step: usize) -> &[f64] {
        &self.x[step * self.n..(step + 1) * self.n]
    }

    pub fn velocities(&self, step: usize) -> &[f64] {
        &self.v[step * self.n..(step + 1) * self.n]
    }

    pub fn leader_force(&self, step: usize) -> f64 {
        self.u[step]
    }

    /// `z_i = x_i − x_{i+1} − d` for `i = 1..n−1`.
    pub fn spacing_errors(&self) -> ChainTrajectory {
        let ch = self.n - 1;
        let mut z = Vec::with_capacity(self.len() * ch);
        let mut zdot = Vec::with_capacity(self.len() * ch);
        for step in 0..self.len() {
            let (x, v) = (self.positions(step), self.velocities(step));
            for i in 0..ch {
                z.push(x[i] - x[i + 1] - self.spacing);
                zdot.push(v[i] - v[i + 1]);
            }
        }
        ChainTrajectory { n: ch, dt: self.dt, z, zdot }
    }

    /// `t,x_1,v_1,...,x_n,v_n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "t")?;
        for i in 1..=self.n {
            write!(out, ",x_{i},v_{i}")?;
        }
        writeln!(out)?;
        for step in 0..self.len() {
            write!(out, "{}", self.time(step))?;
            for (x, v) in self.positions(step).iter().zip(self.velocities(step)) {
                write!(out, ",{x},{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

/// Integrates the 2n-dimensional constant-spacing unidirectional dynamics:
///
/// ```text
/// x_i' = v_i
/// v_1' = u(t) / m
/// v_j' = k/m (x_{j-1} − x_j − d) + c/m (v_{j-1} − v_j),   j ≥ 2
/// ```
///
/// `cfg.input` is the leader force `u(t)` in newtons. Vehicles start at rest
/// with gap `spacing` (the desired spacing `d`).
pub fn simulate_state_space_uni_cs(
    p: &PlatoonParams,
    cfg: &SimConfig,
    spacing: f64,
) -> Result<StateSpaceTrajectory, SimError> {
    p.validate().map_err(|e| SimError::Config(e.to_string()))?;
    cfg.validate()?;
    if !spacing.is_finite() {
        return Err(SimError::Config(format!("spacing must be finite, got {spacing}")));
    }
    let n = usize::try_from(p.n).map_err(|_| SimError::Config("vehicle count too large".into()))?;
    let (km, cm, inv_m) = (p.k / p.m, p.c / p.m, 1.0 / p.m);
    let force = &cfg.input;
    // y = [x_1..x_n, v_1..v_n]
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, v) = y.split_at(n);
        let (dx, dv) = dy.split_at_mut(n);
        dx.copy_from_slice(v);
        dv[0] = force.value(t) * inv_m;
        for j in 1..n {
            dv[j] = km * (x[j - 1] - x[j] - spacing) + cm * (v[j - 1] - v[j]);
        }
    };

    let steps = cfg.steps();
    let mut y = vec![0.0; 2 * n];
    for (i, x) in y[..n].iter_mut().enumerate() {
        *x = 0.0 - i as f64 * spacing;
    }
    let mut traj = StateSpaceTrajectory {
        n,
        dt: cfg.dt,
        spacing,
        x: Vec::with_capacity((steps + 1) * n),
        v: Vec::with_capacity((steps + 1) * n),
        u: Vec::with_capacity(steps + 1),
    };
    let record = |traj: &mut StateSpaceTrajectory, t: f64, y: &[f64]| {
        traj.x.extend_from_slice(&y[..n]);
        traj.v.extend_from_slice(&y[n..]);
        traj.u.push(force.value(t));
    };
    record(&mut traj, 0.0, &y);
    let mut rk = Rk4::new(2 * n);
    for step in 0..steps {
        rk.step(&rhs, step as f64 * cfg.dt, cfg.dt, &mut y);
        let t_next = (step + 1) as f64 * cfg.dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Divergence { t: t_next });
        }
        record(&mut traj, t_next, &y);
    }
    Ok(traj)
}

/// Steady-state amplitude ratios between adjacent spacing errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttenuationReport {
    /// `max|z_i|` over the retained window, `i = 1..n`.
    pub amplitudes: Vec<f64>,
    /// `ratios[j] = amplitudes[j+1] / amplitudes[j]`, i.e. `z_2/z_1, z_3/z_2, ...`.
    pub ratios: Vec<f64>,
    /// Every ratio below one.
    pub attenuating: bool,
    pub window_start: f64,
}

/// Compares `max|z|` over the final `1 − cfg.discard` of the run.
pub fn attenuation_report(traj: &ChainTrajectory, cfg: &SimConfig) -> Result<AttenuationReport, SimError> {
    let total = traj.len().saturating_sub(1);
    let first = ((cfg.discard * total as f64).ceil() as usize).min(total);
    if traj.len() < 2 || first > total {
        return Err(SimError::Config("retained window is empty".into()));
    }
    let window_start = traj.time(first);
    let amplitudes: Vec<f64> =
        (0..traj.channels()).map(|i| traj.z(i).skip(first).fold(0.0f64, |acc, z| acc.max(z.abs()))).collect();
    let mut ratios = Vec::with_capacity(amplitudes.len() - 1);
    for (j, pair) in amplitudes.windows(2).enumerate() {
        if pair[0] < DEGENERATE_AMPLITUDE {
            return Err(SimError::Degenerate { channel: j + 1, amplitude: pair[0] });
        }
        ratios.push(pair[1] / pair[0]);
    }
    let attenuating = ratios.iter().all(|r| *r < 1.0);
    Ok(AttenuationReport { amplitudes, ratios, attenuating, window_start })
}

/// Steady-state single-stage gain `max|z_2| / max|z_1|` for each input
/// frequency, simulated independently (and in parallel when enabled).
pub fn measured_gains(model: &ErrorModel, omegas: &[f64], exec: Execution) -> Result<Vec<f64>, SimError> {
    par::map(exec, omegas, |&w| {
        let cfg = SimConfig::for_frequency(model, w, 1.0, 1);
        let traj = simulate_chain(model, 2, &cfg)?;
        Ok(attenuation_report(&traj, &cfg)?.ratios[0])
    })
    .into_iter()
    .collect()
}
