//! Offline runtime verification of controller executions.
//!
//! An execution is a list of events, each carrying the full parameter tuple
//! and a disturbance frequency ω. The contract is `G(P1) ∧ G(P2)`:
//!
//! - **P1**: the parameters form a valid platoon;
//! - **P2**: `0 < ω ∧ Q(ω²) > 0` for the event's controller model. For
//!   constant-spacing unidirectional control this is exactly `0 < ω ∧ 2k/m < ω²`;
//!   for every other model it is the generalized quartic constraint.
//!
//! Traces are line-delimited JSON, one event per line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frequency::{stability_constraint, StabilityConstraint};
use crate::model::{
    is_valid_platoon, model_kind, Configuration, Conjunct, ControllerSpec, ControllerType, ErrorModel, ModelError,
    ModelKind, PlatoonParams, Strategy,
};
use crate::par::{self, Execution};

/// Events per work unit when parsing or checking in parallel.
const CHUNK: usize = 1 << 14;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("violation planned at index {index} but trace length is {len}")]
    PlanOutOfRange { index: usize, len: usize },
    #[error("trace template rejected: {0}")]
    Template(ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub index: usize,
    pub spec: ControllerSpec,
    /// Disturbance frequency, rad/s.
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Generated { seed: u64 },
    Memory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub events: Vec<Event>,
    pub source: TraceSource,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// On-disk shape of one event line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    i: u64,
    ct: ControllerType,
    cf: Configuration,
    st: Strategy,
    n: u64,
    m: f64,
    k: f64,
    c: f64,
    h: f64,
    ch: f64,
    vd: f64,
    h0: f64,
    ca: f64,
    cd: f64,
    w: f64,
}

impl From<&Event> for EventRecord {
    fn from(e: &Event) -> Self {
        let p = &e.spec.params;
        EventRecord {
            i: e.index as u64,
            ct: e.spec.controller_type,
            cf: e.spec.configuration,
            st: e.spec.strategy,
            n: p.n,
            m: p.m,
            k: p.k,
            c: p.c,
            h: p.h,
            ch: p.ch,
            vd: p.vd,
            h0: p.h0,
            ca: p.ca,
            cd: p.cd,
            w: e.omega,
        }
    }
}

/// Byte cursor over a line in the exact layout `write_trace` emits. Any
/// deviation (whitespace, key order, exotic numbers) returns `None` and the
/// caller falls back to the general JSON parser, so accepted input and error
/// messages are those of serde_json either way.
struct Canonical<'a> {
    rest: &'a [u8],
}

impl<'a> Canonical<'a> {
    fn tag(&mut self, t: &[u8]) -> Option<()> {
        self.rest = self.rest.strip_prefix(t)?;
        Some(())
    }

    fn uint(&mut self) -> Option<u64> {
        let len = self.rest.iter().take_while(|b| b.is_ascii_digit()).count();
        let (digits, rest) = self.rest.split_at(len);
        if len == 0 || (len > 1 && digits[0] == b'0') {
            return None;
        }
        let v = digits.iter().try_fold(0u64, |acc, d| acc.checked_mul(10)?.checked_add(u64::from(d - b'0')))?;
        self.rest = rest;
        Some(v)
    }

    /// Correctly rounded, matching serde_json with `float_roundtrip`. The
    /// float parser is more lenient than JSON (`+1`, `.5`, `1.`, `01`, `inf`),
    /// so the consumed text is checked against the JSON grammar afterwards.
    fn float(&mut self) -> Option<f64> {
        let (v, len): (f64, usize) = fast_float2::parse_partial(self.rest).ok()?;
        let text = &self.rest[..len];
        let digits = text.strip_prefix(b"-").unwrap_or(text);
        match digits {
            [b'0', b'0'..=b'9', ..] | [] => return None,
            [d, ..] if !d.is_ascii_digit() => return None,
            _ => {}
        }
        if let Some(dot) = memchr::memchr(b'.', digits) {
            if !digits.get(dot + 1).is_some_and(u8::is_ascii_digit) {
                return None;
            }
        }
        self.rest = &self.rest[len..];
        v.is_finite().then_some(v)
    }

    fn word<T: Copy>(&mut self, table: &[(&[u8], T)]) -> Option<T> {
        table.iter().find_map(|(name, v)| {
            let rest = self.rest.strip_prefix(&b"\""[..])?.strip_prefix(*name)?.strip_prefix(&b"\""[..])?;
            self.rest = rest;
            Some(*v)
        })
    }

    fn record(line: &'a [u8]) -> Option<EventRecord> {
        use Configuration as Cf;
        use ControllerType as Ct;
        let mut c = Canonical { rest: line };
        c.tag(b"{\"i\":")?;
        let i = c.uint()?;
        c.tag(b",\"ct\":")?;
        let ct = c.word(&[(b"autonomous", Ct::Autonomous), (b"non_autonomous", Ct::NonAutonomous)])?;
        c.tag(b",\"cf\":")?;
        let cf = c.word(&[(b"unidirectional", Cf::Unidirectional), (b"bidirectional", Cf::Bidirectional)])?;
        c.tag(b",\"st\":")?;
        let st = c.word(&[
            (b"constant_spacing", Strategy::ConstantSpacing),
            (b"variable_spacing", Strategy::VariableSpacing),
            (b"var_time_headway", Strategy::VarTimeHeadway),
        ])?;
        c.tag(b",\"n\":")?;
        let n = c.uint()?;
        let mut f = |key: &[u8]| {
            c.tag(key)?;
            c.float()
        };
        let record = EventRecord {
            i,
            ct,
            cf,
            st,
            n,
            m: f(b",\"m\":")?,
            k: f(b",\"k\":")?,
            c: f(b",\"c\":")?,
            h: f(b",\"h\":")?,
            ch: f(b",\"ch\":")?,
            vd: f(b",\"vd\":")?,
            h0: f(b",\"h0\":")?,
            ca: f(b",\"ca\":")?,
            cd: f(b",\"cd\":")?,
            w: f(b",\"w\":")?,
        };
        (c.rest == b"}").then_some(record)
    }
}

fn parse_record(bytes: &[u8]) -> Result<EventRecord, String> {
    match Canonical::record(bytes) {
        Some(r) => Ok(r),
        None => serde_json::from_slice(bytes).map_err(|e| e.to_string()),
    }
}

fn parse_line(bytes: &[u8], index: usize) -> Result<Event, String> {
    let r = parse_record(bytes)?;
    if r.i != index as u64 {
        return Err(format!("event index {} out of sequence (expected {index})", r.i));
    }
    model_kind(r.ct, r.cf, r.st).map_err(|e| e.to_string())?;
    if !r.w.is_finite() {
        return Err(format!("w is not finite ({})", r.w));
    }
    let params =
        PlatoonParams::new(r.n, r.m, r.k, r.c, r.h, r.ch, r.vd, r.h0, r.ca, r.cd).map_err(|e| e.to_string())?;
    Ok(Event {
        index,
        spec: ControllerSpec { controller_type: r.ct, configuration: r.cf, strategy: r.st, params },
        omega: r.w,
    })
}

/// Parses a whole trace. Any malformed line rejects the trace; the reported
/// line (1-based) is the earliest bad one regardless of `exec`.
pub fn parse_trace(bytes: &[u8], exec: Execution) -> Result<Vec<Event>, MonitorError> {
    let mut lines = Vec::with_capacity(bytes.len() / 256 + 1);
    let mut from = 0;
    for end in memchr::memchr_iter(b'\n', bytes) {
        lines.push(&bytes[from..end]);
        from = end + 1;
    }
    if from < bytes.len() {
        lines.push(&bytes[from..]);
    }
    let parse_chunk = |start: usize, chunk: &[&[u8]]| {
        chunk
            .iter()
            .enumerate()
            .map(|(off, line)| {
                let idx = start + off;
                parse_line(line, idx).map_err(|message| MonitorError::Parse { line: idx + 1, message })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    if !exec.is_parallel() {
        return parse_chunk(0, &lines);
    }
    let chunks = par::map_chunks(exec, &lines, CHUNK, parse_chunk);
    let mut events = Vec::with_capacity(lines.len());
    for chunk in chunks {
        events.extend(chunk?);
    }
    Ok(events)
}

pub fn read_trace(path: &Path, exec: Execution) -> Result<Trace, MonitorError> {
    let bytes = fs::read(path).map_err(|source| MonitorError::Io { path: path.to_owned(), source })?;
    Ok(Trace { events: parse_trace(&bytes, exec)?, source: TraceSource::File(path.to_owned()) })
}

/// Writes one JSON object per line, LF-terminated.
pub fn write_trace<W: Write>(mut out: W, trace: &Trace) -> io::Result<()> {
    for e in &trace.events {
        serde_json::to_writer(&mut out, &EventRecord::from(e))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// P1: the event's parameters form a valid platoon.
#[inline]
pub fn check_p1(e: &Event) -> bool {
    is_valid_platoon(&e.spec.params)
}

#[inline]
fn event_constraint(e: &Event) -> Option<(ModelKind, StabilityConstraint)> {
    let kind = e.spec.kind().ok()?;
    Some((kind, stability_constraint(&ErrorModel::coefficients(kind, &e.spec.params))))
}

/// P2: `0 < ω ∧ Q(ω²) > 0` for the event's model. Evaluated on the raw
/// coefficients even when P1 fails.
#[inline]
pub fn check_p2(e: &Event) -> bool {
    match event_constraint(e) {
        Some((_, q)) => q.holds(e.omega),
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Predicate {
    P1,
    P2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub predicate: Predicate,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub first_violation: Option<Violation>,
    pub events: usize,
    pub p1_failures: usize,
    pub p2_failures: usize,
    pub seconds: f64,
}

impl Verdict {
    /// Equality ignoring wall-clock time.
    pub fn same_result(&self, other: &Verdict) -> bool {
        Verdict { seconds: 0.0, ..self.clone() } == Verdict { seconds: 0.0, ..other.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    events: usize,
    p1_failures: usize,
    p2_failures: usize,
    first: Option<(usize, Predicate)>,
}

impl Tally {
    #[inline]
    fn push(&mut self, e: &Event) {
        let p1 = check_p1(e);
        let p2 = check_p2(e);
        self.events += 1;
        self.p1_failures += usize::from(!p1);
        self.p2_failures += usize::from(!p2);
        if self.first.is_none() && !(p1 && p2) {
            self.first = Some((e.index, if p1 { Predicate::P2 } else { Predicate::P1 }));
        }
    }

    /// Merge with a tally covering later indices.
    fn merge(self, later: Tally) -> Tally {
        Tally {
            events: self.events + later.events,
            p1_failures: self.p1_failures + later.p1_failures,
            p2_failures: self.p2_failures + later.p2_failures,
            first: self.first.or(later.first),
        }
    }
}

fn describe(e: &Event, predicate: Predicate) -> String {
    match predicate {
        Predicate::P1 => match e.spec.params.first_violation() {
            Some(cj @ Conjunct::VehicleCount) => format!("{cj} violated (n = {})", e.spec.params.n),
            Some(cj) => format!("{cj} violated"),
            None => "valid platoon".to_owned(),
        },
        Predicate::P2 => {
            let w = e.omega;
            let Some((kind, q)) = event_constraint(e) else {
                return "controller combination has no dynamic model".to_owned();
            };
            if !(w > 0.0) {
                return format!("0 < ω violated (ω = {w})");
            }
            if kind == ModelKind::UniCs {
                let p = &e.spec.params;
                format!("2k/m < ω² violated (2k/m = {}, ω² = {})", 2.0 * p.k / p.m, w * w)
            } else {
                format!("generalized P2 for {kind}: Q(ω²) = {} ≤ 0 at ω = {w}", q.q(w * w))
            }
        }
    }
}

/// Checks `G(P1) ∧ G(P2)` over the whole trace, single-threaded.
pub fn run_monitor(trace: &Trace) -> Verdict {
    run_monitor_with(trace, Execution::Sequential)
}

/// As [`run_monitor`]; with [`Execution::Parallel`] the trace is split into
/// chunks whose tallies merge by taking the earliest violation.
pub fn run_monitor_with(trace: &Trace, exec: Execution) -> Verdict {
    let start = Instant::now();
    let tally = par::map_chunks(exec, &trace.events, CHUNK, |_, chunk| {
        let mut t = Tally::default();
        for e in chunk {
            t.push(e);
        }
        t
    })
    .into_iter()
    .fold(Tally::default(), Tally::merge);
    let first_violation = tally.first.map(|(index, predicate)| Violation {
        index,
        predicate,
        reason: describe(&trace.events[index], predicate),
    });
    Verdict {
        outcome: if first_violation.is_some() { Outcome::Fail } else { Outcome::Pass },
        first_violation,
        events: tally.events,
        p1_failures: tally.p1_failures,
        p2_failures: tally.p2_failures,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedViolation {
    pub index: usize,
    pub predicate: Predicate,
}

impl std::str::FromStr for PlannedViolation {
    type Err = String;

    /// `INDEX:P1` or `INDEX:P2`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (idx, pred) = s.split_once(':').ok_or_else(|| format!("expected INDEX:P1|P2, got {s:?}"))?;
        let index = idx.trim().parse().map_err(|_| format!("bad index in {s:?}"))?;
        let predicate = match pred.trim() {
            "P1" | "p1" => Predicate::P1,
            "P2" | "p2" => Predicate::P2,
            other => return Err(format!("unknown predicate {other:?}")),
        };
        Ok(PlannedViolation { index, predicate })
    }
}

fn jitter(rng: &mut ChaCha8Rng, x: f64) -> f64 {
    x * rng.gen_range(0.9..1.1)
}

fn sample_inside(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi.is_finite() {
        lo + (hi - lo) * rng.gen_range(0.05..0.95)
    } else if lo > 0.0 {
        lo * rng.gen_range(1.01..3.0)
    } else {
        10f64.powf(rng.gen_range(-1.0..1.0))
    }
}

fn stable_omega(rng: &mut ChaCha8Rng, q: &StabilityConstraint) -> f64 {
    let intervals = q.stable_intervals();
    let pick = intervals[rng.gen_range(0..intervals.len())];
    let w = sample_inside(rng, pick);
    if q.holds(w) {
        w
    } else {
        // the sampled interval was too narrow to resolve; fall back above every root
        let top = intervals.last().map_or(1.0, |iv| iv.0.max(1.0));
        let mut w = top * 2.0;
        while !q.holds(w) {
            w *= 2.0;
        }
        w
    }
}

fn unstable_omega(rng: &mut ChaCha8Rng, q: &StabilityConstraint) -> f64 {
    let intervals = q.unstable_intervals();
    if !intervals.is_empty() && rng.gen_bool(2.0 / 3.0) {
        let pick = intervals[rng.gen_range(0..intervals.len())];
        let w = sample_inside(rng, pick);
        if !q.holds(w) {
            return w;
        }
    }
    if rng.gen_bool(0.5) {
        0.0
    } else {
        -rng.gen_range(0.1..10.0)
    }
}

fn break_validity(rng: &mut ChaCha8Rng, p: &mut PlatoonParams) {
    match Conjunct::ALL[rng.gen_range(0..Conjunct::ALL.len())] {
        Conjunct::Mass => p.m = 0.0,
        Conjunct::PositionGain => p.k = 0.0,
        Conjunct::VelocityGain => p.c = 0.0,
        Conjunct::Headway => p.h = 0.0,
        Conjunct::HeadwayGain => p.ch = 0.0,
        Conjunct::DesiredSpeed => p.vd = 0.0,
        Conjunct::NominalHeadway => p.h0 = 0.0,
        Conjunct::LeaderGain => p.ca = 0.0,
        Conjunct::VirtualMassGain => p.cd = 0.0,
        Conjunct::VehicleCount => p.n = 1,
    }
}

/// Deterministic pseudo-random trace around `template`.
///
/// Real parameters are jittered by ±10% and ω is drawn from the stable region
/// of the jittered model. At planned indices the named predicate is falsified:
/// P1 by zeroing one positivity conjunct (or setting `n = 1`), P2 by drawing ω
/// from the unstable region or making it nonpositive.
pub fn generate_trace(
    seed: u64,
    len: usize,
    template: &ControllerSpec,
    plan: &[PlannedViolation],
) -> Result<Trace, MonitorError> {
    template.params.validate().map_err(MonitorError::Template)?;
    let kind = template.kind().map_err(MonitorError::Template)?;
    if let Some(v) = plan.iter().find(|v| v.index >= len) {
        return Err(MonitorError::PlanOutOfRange { index: v.index, len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = template.params;
    let events = (0..len)
        .map(|index| {
            let mut params = PlatoonParams {
                m: jitter(&mut rng, base.m),
                k: jitter(&mut rng, base.k),
                c: jitter(&mut rng, base.c),
                h: jitter(&mut rng, base.h),
                ch: jitter(&mut rng, base.ch),
                vd: jitter(&mut rng, base.vd),
                h0: jitter(&mut rng, base.h0),
                ca: jitter(&mut rng, base.ca),
                cd: jitter(&mut rng, base.cd),
                ..base
            };
            let q = stability_constraint(&ErrorModel::coefficients(kind, &params));
            let planned = |p: Predicate| plan.iter().any(|v| v.index == index && v.predicate == p);
            let omega = if planned(Predicate::P2) { unstable_omega(&mut rng, &q) } else { stable_omega(&mut rng, &q) };
            if planned(Predicate::P1) {
                break_validity(&mut rng, &mut params);
            }
            Event { index, spec: ControllerSpec { params, ..*template }, omega }
        })
        .collect();
    Ok(Trace { events, source: TraceSource::Generated { seed } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::reference;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as PropStrategy;
    use rand::Rng;

    fn uni_cs_event(omega: f64) -> Event {
        Event { index: 0, spec: ControllerSpec::of(ModelKind::UniCs, reference()), omega }
    }

    fn memory(events: Vec<Event>) -> Trace {
        Trace { events, source: TraceSource::Memory }
    }

    #[test]
    fn p1_examples() {
        assert!(check_p1(&uni_cs_event(3.0)));
        let mut e = uni_cs_event(3.0);
        e.spec.params.ca = 0.0;
        assert!(!check_p1(&e));
        e.spec.params = PlatoonParams { n: 2, ..reference() };
        assert!(check_p1(&e));
    }

    #[test]
    fn p2_examples() {
        assert!(check_p2(&uni_cs_event(3.0)));
        assert!(!check_p2(&uni_cs_event(2.0)));
        assert!(!check_p2(&uni_cs_event(-1.0)));
        assert!(!check_p2(&uni_cs_event(0.0)));
    }

    #[test]
    fn p2_is_literal_for_constant_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = PlatoonParams { m: rng.gen_range(1.0..1e4), k: rng.gen_range(1.0..1e4), ..reference() };
            let threshold = 2.0 * p.k / p.m;
            // probe right at, just below and just above the boundary
            let w0 = threshold.sqrt();
            for w in [w0, f64::from_bits(w0.to_bits() - 1), f64::from_bits(w0.to_bits() + 1)] {
                let e = Event { index: 0, spec: ControllerSpec::of(ModelKind::UniCs, p), omega: w };
                assert_eq!(check_p2(&e), 0.0 < w && threshold < w * w, "k={} m={} w={w}", p.k, p.m);
            }
        }
    }

    #[test]
    fn empty_trace_passes() {
        let v = run_monitor(&memory(vec![]));
        assert_eq!(v.outcome, Outcome::Pass);
        assert_eq!(v.events, 0);
        assert!(v.first_violation.is_none());
    }

    #[test]
    fn p1_reported_before_p2() {
        let mut e = uni_cs_event(-1.0);
        e.spec.params.m = 0.0;
        let v = run_monitor(&memory(vec![uni_cs_event(3.0), Event { index: 1, ..e }]));
        assert_eq!(v.outcome, Outcome::Fail);
        let fv = v.first_violation.unwrap();
        assert_eq!((fv.index, fv.predicate), (1, Predicate::P1));
        assert_eq!(fv.reason, "0 < m violated");
        assert_eq!((v.p1_failures, v.p2_failures), (1, 1));
    }

    #[test]
    fn reasons() {
        let v = run_monitor(&memory(vec![uni_cs_event(2.0)]));
        assert_eq!(v.first_violation.unwrap().reason, "2k/m < ω² violated (2k/m = 4, ω² = 4)");
        let e = Event { omega: 2.0, ..uni_cs_event(2.0) };
        let bi = Event { spec: ControllerSpec::of(ModelKind::BiCs, reference()), ..e };
        let v = run_monitor(&memory(vec![bi]));
        assert!(v.first_violation.unwrap().reason.starts_with("generalized P2 for control_bi_cs"));
    }

    #[test]
    fn verdict_json_shape() {
        let v = Verdict {
            outcome: Outcome::Fail,
            first_violation: Some(Violation { index: 4, predicate: Predicate::P2, reason: "x".into() }),
            events: 10,
            p1_failures: 0,
            p2_failures: 1,
            seconds: 0.5,
        };
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"outcome":"fail","first_violation":{"index":4,"predicate":"P2","reason":"x"},"events":10,"p1_failures":0,"p2_failures":1,"seconds":0.5}"#
        );
        let pass = Verdict { outcome: Outcome::Pass, first_violation: None, p2_failures: 0, ..v };
        assert!(serde_json::to_string(&pass).unwrap().contains(r#""first_violation":null"#));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let trace = generate_trace(3, 3, &ControllerSpec::of(ModelKind::UniCs, reference()), &[]).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        assert_eq!(parse_trace(&buf, Execution::Sequential).unwrap(), trace.events);

        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let truncated = format!("{}\n{}\n{}\n", lines[0], lines[1], &lines[2][..20]);
        let err = parse_trace(truncated.as_bytes(), Execution::Parallel).unwrap_err();
        assert!(matches!(err, MonitorError::Parse { line: 3, .. }), "{err}");

        let swapped = format!("{}\n{}\n", lines[1], lines[0]);
        assert!(matches!(
            parse_trace(swapped.as_bytes(), Execution::Sequential),
            Err(MonitorError::Parse { line: 1, .. })
        ));

        let blank = format!("{}\n\n{}\n", lines[0], lines[1]);
        assert!(matches!(
            parse_trace(blank.as_bytes(), Execution::Sequential),
            Err(MonitorError::Parse { line: 2, .. })
        ));

        let extra = lines[0].replacen('{', "{\"zz\":1,", 1);
        assert!(parse_trace(extra.as_bytes(), Execution::Sequential).is_err());

        let bi_vth = lines[0]
            .replace("\"unidirectional\"", "\"bidirectional\"")
            .replace("\"constant_spacing\"", "\"var_time_headway\"");
        assert!(parse_trace(bi_vth.as_bytes(), Execution::Sequential).is_err());

        let neg_n = lines[0].replace("\"n\":10", "\"n\":-3");
        assert!(parse_trace(neg_n.as_bytes(), Execution::Sequential).is_err());
    }

    #[test]
    fn plan_parsing_and_range() {
        assert_eq!("500:P2".parse(), Ok(PlannedViolation { index: 500, predicate: Predicate::P2 }));
        assert!("500".parse::<PlannedViolation>().is_err());
        assert!("x:P1".parse::<PlannedViolation>().is_err());
        let spec = ControllerSpec::of(ModelKind::UniCs, reference());
        let plan = [PlannedViolation { index: 10, predicate: Predicate::P1 }];
        assert!(matches!(
            generate_trace(1, 10, &spec, &plan),
            Err(MonitorError::PlanOutOfRange { index: 10, len: 10 })
        ));
        assert!(generate_trace(42, 0, &spec, &[]).unwrap().is_empty());
    }

    #[test]
    fn injected_violation_round_trip() {
        let spec = ControllerSpec::of(ModelKind::UniCs, reference());
        let plan = [PlannedViolation { index: 500, predicate: Predicate::P2 }];
        let v = run_monitor(&generate_trace(7, 1000, &spec, &plan).unwrap());
        let fv = v.first_violation.unwrap();
        assert_eq!((fv.index, fv.predicate), (500, Predicate::P2));
        assert_eq!(v.p2_failures, 1);

        let clean = run_monitor(&generate_trace(42, 1000, &spec, &[]).unwrap());
        assert_eq!(clean.outcome, Outcome::Pass);
    }

    fn any_kind() -> impl PropStrategy<Value = ModelKind> {
        (0usize..6).prop_map(|i| ModelKind::ALL[i])
    }

    fn plan_strategy(len: usize) -> impl PropStrategy<Value = Vec<PlannedViolation>> {
        prop::collection::vec(
            (0..len, prop::bool::ANY).prop_map(|(index, p1)| PlannedViolation {
                index,
                predicate: if p1 { Predicate::P1 } else { Predicate::P2 },
            }),
            0..4,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn parallel_matches_sequential(seed in any::<u64>(), kind in any_kind(), plan in plan_strategy(50_000)) {
            let trace = generate_trace(seed, 50_000, &ControllerSpec::of(kind, reference()), &plan).unwrap();
            let a = run_monitor_with(&trace, Execution::Sequential);
            let b = run_monitor_with(&trace, Execution::Parallel);
            prop_assert!(a.same_result(&b));
        }

        #[test]
        fn appending_never_repairs_a_failure(seed in any::<u64>(), kind in any_kind(), extra in 0usize..200) {
            let spec = ControllerSpec::of(kind, reference());
            let plan = [PlannedViolation { index: 3, predicate: Predicate::P2 }];
            let mut trace = generate_trace(seed, 10, &spec, &plan).unwrap();
            let tail = generate_trace(seed ^ 1, extra, &spec, &[]).unwrap();
            trace.events.extend(tail.events.into_iter().map(|e| Event { index: e.index + 10, ..e }));
            prop_assert_eq!(run_monitor(&trace).outcome, Outcome::Fail);
        }

        #[test]
        fn serialization_round_trips(seed in any::<u64>(), kind in any_kind(), plan in plan_strategy(20)) {
            let trace = generate_trace(seed, 20, &ControllerSpec::of(kind, reference()), &plan).unwrap();
            let mut buf = Vec::new();
            write_trace(&mut buf, &trace).unwrap();
            prop_assert_eq!(parse_trace(&buf, Execution::Sequential).unwrap(), trace.events);
        }

        #[test]
        fn canonical_path_agrees_with_serde(bits in proptest::collection::vec(any::<u64>(), 10), kind in any_kind()) {
            let f = |i: usize| f64::from_bits(bits[i]);
            let (ct, cf, st) = kind.triple();
            let r = EventRecord {
                i: bits[0] >> 1, ct, cf, st, n: bits[1],
                m: f(0), k: f(1), c: f(2), h: f(3), ch: f(4), vd: f(5), h0: f(6), ca: f(7), cd: f(8), w: f(9),
            };
            // non-finite values serialize as null and must be left to serde
            let line = serde_json::to_vec(&r).unwrap();
            let fast = Canonical::record(&line);
            let slow = serde_json::from_slice::<EventRecord>(&line).ok();
            prop_assert!(fast.is_none() || fast == slow);
            if [r.m, r.k, r.c, r.h, r.ch, r.vd, r.h0, r.ca, r.cd, r.w].iter().all(|v| v.is_finite()) {
                prop_assert_eq!(fast, Some(r));
            }
        }

        #[test]
        fn canonical_path_never_accepts_what_serde_rejects(
            seed in any::<u64>(),
            edits in proptest::collection::vec((any::<prop::sample::Index>(), prop::sample::select(&b"0123456789.-+eE\",:{} nul"[..])), 1..4),
        ) {
            let trace = generate_trace(seed, 1, &ControllerSpec::of(ModelKind::BiVs, reference()), &[]).unwrap();
            let mut line = serde_json::to_vec(&EventRecord::from(&trace.events[0])).unwrap();
            for (at, byte) in edits {
                let at = at.index(line.len());
                line[at] = byte;
            }
            if let Some(fast) = Canonical::record(&line) {
                let slow = serde_json::from_slice::<EventRecord>(&line);
                prop_assert_eq!(Some(fast), slow.ok(), "{}", String::from_utf8_lossy(&line));
            }
        }
    }
}
