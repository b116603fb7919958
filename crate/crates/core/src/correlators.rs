//! n-time correlators: interventions, correlator specifications, the
//! factorization planner and three engines (brute force on the composite
//! space, factorized, and the quantum regression theorem).
//!
//! Every engine first builds the full system map `M` sending `rho(t0)` to the
//! reduced output at the final time, then contracts it with the requested
//! initial state and functional.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64};
use crate::liouville::{self, SuperOperator};
use crate::maps::FactorizationContext;
use crate::models::{EmbeddingModel, PulseShape};
use crate::propagation::{Evolver, PulseWindow, Schedule, TIME_EPS};

#[derive(Debug, Clone)]
pub enum InterventionKind {
    /// `rho -> A rho B^dag`.
    Sandwich { a: CMatrix, b: CMatrix },
    /// Finite-duration pulse.
    Pulse { shape: PulseShape },
}

/// An operation inserted into a correlator.
///
/// Sandwiches act instantaneously. Pulses occupy `[t, t + duration]`; the
/// engines propagate through that window with the driven dissipative
/// generator, while `composite` holds the unitary sandwich `P = U . U^dag`
/// of the interaction-picture pulse.
#[derive(Debug, Clone)]
pub struct Intervention {
    kind: InterventionKind,
    system: SuperOperator,
    composite: SuperOperator,
    duration: f64,
    window: Option<Arc<PulseWindow>>,
    fingerprint: String,
}

impl Intervention {
    pub fn sandwich(model: &EmbeddingModel, a: &CMatrix, b: &CMatrix) -> Result<Self> {
        let system = liouville::sandwich_superop(a, b)?;
        if system.space() != model.system_space() {
            return Err(Error::Dimension {
                context: "intervention operators",
                expected: model.sys_dim(),
                found: a.nrows(),
            });
        }
        let composite = model.composite_sandwich(a, b)?;
        let mut h = Sha256::new();
        h.update(b"sandwich");
        for m in [a, b] {
            for x in m.iter() {
                h.update(x.re.to_le_bytes());
                h.update(x.im.to_le_bytes());
            }
        }
        Ok(Self {
            kind: InterventionKind::Sandwich {
                a: a.clone(),
                b: b.clone(),
            },
            system,
            composite,
            duration: 0.0,
            window: None,
            fingerprint: hex::encode(&h.finalize()[..12]),
        })
    }

    /// Pulse intervention from its unitary sandwich and driven window. The
    /// system superoperator is the reduced window map from an uncorrelated start.
    pub fn pulse(
        model: &EmbeddingModel,
        shape: PulseShape,
        composite: SuperOperator,
        window: Arc<PulseWindow>,
    ) -> Result<Self> {
        if composite.space() != model.composite_space() {
            return Err(Error::Validation(
                "pulse superoperator must act on the composite space".into(),
            ));
        }
        let reduced = model.reduction().dot(&window.propagator().dot(model.embedding()));
        let system = SuperOperator::new(reduced, model.system_space())?;
        let mut h = Sha256::new();
        h.update(b"pulse");
        for v in [shape.sigma, shape.area, shape.detuning, shape.n_cut] {
            h.update(v.to_le_bytes());
        }
        h.update((window.cell_count() as u64).to_le_bytes());
        h.update((window.substeps_per_cell() as u64).to_le_bytes());
        h.update(model.fingerprint().as_bytes());
        Ok(Self {
            kind: InterventionKind::Pulse { shape },
            system,
            composite,
            duration: shape.duration(),
            window: Some(window),
            fingerprint: hex::encode(&h.finalize()[..12]),
        })
    }

    pub fn kind(&self) -> &InterventionKind {
        &self.kind
    }

    /// System superoperator.
    pub fn system(&self) -> &SuperOperator {
        &self.system
    }

    /// Composite superoperator (the unitary sandwich for pulses).
    pub fn composite(&self) -> &SuperOperator {
        &self.composite
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn window(&self) -> Option<&Arc<PulseWindow>> {
        self.window.as_ref()
    }

    pub fn is_pulse(&self) -> bool {
        self.window.is_some()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// An intervention at an absolute time (pulse start for pulses).
#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub intervention: Arc<Intervention>,
}

impl Event {
    pub fn new(time: f64, intervention: Arc<Intervention>) -> Self {
        Self { time, intervention }
    }

    pub fn end(&self) -> f64 {
        self.time + self.intervention.duration()
    }
}

#[derive(Debug, Clone)]
pub enum FinalFunctional {
    /// Full reduced output `<X(t_n) ...>`.
    Map,
    /// `Tr{O X(t_n) ...}`.
    Measure(CMatrix),
}

/// `<X(t_n) A^(n-1)(t_{n-1}) ... A^(1)(t_1)>_{X(t0)}`.
#[derive(Debug, Clone)]
pub struct CorrelatorSpec {
    pub t0: f64,
    /// `None` keeps the dependence on the initial state open (map form).
    pub initial: Option<CMatrix>,
    pub events: Vec<Event>,
    pub final_time: f64,
    pub functional: FinalFunctional,
}

impl CorrelatorSpec {
    pub fn new(t0: f64, final_time: f64) -> Self {
        Self {
            t0,
            initial: None,
            events: Vec::new(),
            final_time,
            functional: FinalFunctional::Map,
        }
    }

    pub fn with_initial(mut self, rho: CMatrix) -> Self {
        self.initial = Some(rho);
        self
    }

    pub fn with_event(mut self, time: f64, intervention: Arc<Intervention>) -> Self {
        self.events.push(Event::new(time, intervention));
        self
    }

    pub fn measuring(mut self, op: CMatrix) -> Self {
        self.functional = FinalFunctional::Measure(op);
        self
    }

    /// Times are non-decreasing from `t0` (equal times apply in order),
    /// pulses do not overlap each other, and everything ends by the final time.
    pub fn validate(&self, model: &EmbeddingModel) -> Result<()> {
        let d = model.sys_dim();
        if !self.t0.is_finite() || !self.final_time.is_finite() {
            return Err(Error::Validation("correlator times must be finite".into()));
        }
        let mut prev = self.t0;
        let mut pulse_end = f64::NEG_INFINITY;
        for (k, e) in self.events.iter().enumerate() {
            if !e.time.is_finite() || e.time < prev - TIME_EPS {
                return Err(Error::Validation(format!(
                    "event {k} at t = {} precedes the previous time {prev}",
                    e.time
                )));
            }
            if e.intervention.system().space() != model.system_space() {
                return Err(Error::Dimension {
                    context: "correlator event",
                    expected: d,
                    found: e.intervention.system().space().hilbert_dim(),
                });
            }
            if e.intervention.is_pulse() {
                if e.time < pulse_end - TIME_EPS {
                    return Err(Error::Validation(format!(
                        "pulse event {k} at t = {} overlaps the previous pulse ending at {pulse_end}",
                        e.time
                    )));
                }
                pulse_end = e.end();
            }
            if e.end() > self.final_time + TIME_EPS {
                return Err(Error::Validation(format!(
                    "event {k} ends at {} after the final time {}",
                    e.end(),
                    self.final_time
                )));
            }
            prev = e.time;
        }
        if self.final_time < prev - TIME_EPS {
            return Err(Error::Validation("final time precedes the last event".into()));
        }
        if let Some(rho) = &self.initial {
            if rho.dim() != (d, d) {
                return Err(Error::Dimension {
                    context: "initial state",
                    expected: d,
                    found: rho.nrows(),
                });
            }
        }
        if let FinalFunctional::Measure(op) = &self.functional {
            if op.dim() != (d, d) {
                return Err(Error::Dimension {
                    context: "measured operator",
                    expected: d,
                    found: op.nrows(),
                });
            }
        }
        Ok(())
    }

    /// `max(t0, latest end of events[..k])`.
    fn previous_end(&self, k: usize) -> f64 {
        self.events[..k].iter().map(Event::end).fold(self.t0, f64::max)
    }

    /// Gap that a cut at `position` would bridge: before event `position`,
    /// or before the final time when `position == events.len()`.
    pub fn gap(&self, position: usize) -> f64 {
        let next = self.events.get(position).map_or(self.final_time, |e| e.time);
        next - self.previous_end(position)
    }
}

/// Result of a correlator evaluation.
#[derive(Debug, Clone)]
pub enum CorrelatorValue {
    /// Map form with the full output (`D^2 x D^2`).
    Map(CMatrix),
    /// Map form contracted with a functional (row of length `D^2`).
    Functional(CVector),
    /// Output state for a given initial state.
    State(CVector),
    Scalar(C64),
}

impl CorrelatorValue {
    fn from_map(spec: &CorrelatorSpec, m: CMatrix) -> Self {
        let row = match &spec.functional {
            FinalFunctional::Map => None,
            FinalFunctional::Measure(op) => Some(liouville::expectation_functional(op)),
        };
        match (&spec.initial, row) {
            (None, None) => Self::Map(m),
            (None, Some(r)) => Self::Functional(r.dot(&m)),
            (Some(rho), None) => Self::State(m.dot(&liouville::vec_raw(rho))),
            (Some(rho), Some(r)) => Self::Scalar(r.dot(&m.dot(&liouville::vec_raw(rho)))),
        }
    }

    pub fn scalar(&self) -> Option<C64> {
        match self {
            Self::Scalar(z) => Some(*z),
            _ => None,
        }
    }

    /// All entries as a flat list.
    pub fn entries(&self) -> Vec<C64> {
        match self {
            Self::Map(m) => m.iter().copied().collect(),
            Self::Functional(v) | Self::State(v) => v.to_vec(),
            Self::Scalar(z) => vec![*z],
        }
    }

    /// `max |self - reference| / max(max |reference|, 1e-12)`.
    pub fn relative_error(&self, reference: &CorrelatorValue) -> f64 {
        let a = self.entries();
        let b = reference.entries();
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        let scale = b.iter().fold(0.0f64, |m, x| m.max(x.norm())).max(1e-12);
        a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm())) / scale
    }
}

fn schedule_of(events: &[Event]) -> Schedule<'_> {
    let mut s = Schedule::new();
    for e in events {
        match e.intervention.window() {
            Some(w) => {
                s.window(e.time, w);
            }
            None => {
                s.instant(e.time, e.intervention.composite().matrix());
            }
        }
    }
    s
}

/// Evolve a composite block over `[from, to]`, also applying instantaneous
/// events located exactly at `to`.
fn run_composite(evolver: &Evolver, x: CMatrix, from: f64, to: f64, events: &[Event]) -> CMatrix {
    let schedule = schedule_of(events);
    let mut x = evolver.evolve(x, from, to, &schedule);
    for e in events {
        if !e.intervention.is_pulse() && (e.time - to).abs() <= TIME_EPS && to > from - TIME_EPS {
            x = e.intervention.composite().matrix().dot(&x);
        }
    }
    x
}

/// Full system map of `spec` by propagation on the composite space.
pub fn brute_force_map(model: &EmbeddingModel, evolver: &Evolver, spec: &CorrelatorSpec) -> Result<CMatrix> {
    spec.validate(model)?;
    let x = run_composite(
        evolver,
        model.embedding().clone(),
        spec.t0,
        spec.final_time,
        &spec.events,
    );
    Ok(model.reduction().dot(&x))
}

/// Exactness oracle: propagate `rho(t0) (x) rho_E(t0)` on the composite space
/// with free evolution on a grid of step `dt` (off-grid durations are
/// exponentiated exactly) and every intervention applied in place.
pub fn brute_force_correlator(model: &EmbeddingModel, spec: &CorrelatorSpec, dt: f64) -> Result<CorrelatorValue> {
    let evolver = Evolver::new(model, dt);
    let m = brute_force_map(model, &evolver, spec)?;
    Ok(CorrelatorValue::from_map(spec, m))
}

/// Which gaps a plan cuts.
#[derive(Debug, Clone, PartialEq)]
pub enum CutPolicy {
    /// Every gap of at least `tau_c`.
    Automatic,
    /// The listed positions; each must be a gap of at least `tau_c`.
    Only(Vec<usize>),
    /// The listed positions without any check (for demonstrating failure).
    Forced(Vec<usize>),
}

/// A window propagated explicitly from an uncorrelated start.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Indices of the events inside, `first..last`.
    pub first: usize,
    pub last: usize,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Cut bridged by `E_{tau_c}^{-1} E^S_{gap - tau_c}` between two segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    /// Cut before this event.
    pub position: usize,
    /// Time from the end of the previous events to the next event.
    pub gap: f64,
}

impl Connection {
    /// Argument `gap - 2 tau_c` of the intermediate map.
    pub fn intermediate_duration(&self, tau_c: f64) -> f64 {
        self.gap - 2.0 * tau_c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationPlan {
    pub tau_c: f64,
    pub t0: f64,
    pub final_time: f64,
    pub segments: Vec<Segment>,
    pub connections: Vec<Connection>,
    /// Stationary extension after the last segment when the final gap is cut.
    pub tail: Option<f64>,
}

impl FactorizationPlan {
    /// Total explicitly propagated time.
    pub fn propagated_time(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn cut_positions(&self) -> Vec<usize> {
        self.connections.iter().map(|c| c.position).collect()
    }
}

/// Positions whose gap is at least `tau_c`.
pub fn admissible_cuts(spec: &CorrelatorSpec, tau_c: f64) -> Vec<usize> {
    (0..=spec.events.len())
        .filter(|&p| spec.gap(p) >= tau_c - TIME_EPS)
        .collect()
}

/// Cut at every gap of at least `tau_c`, measured from the end of any pulse.
pub fn plan_factorization(spec: &CorrelatorSpec, tau_c: f64) -> FactorizationPlan {
    plan_with_policy(spec, tau_c, &CutPolicy::Automatic).expect("automatic plans are always valid")
}

pub fn plan_with_policy(spec: &CorrelatorSpec, tau_c: f64, policy: &CutPolicy) -> Result<FactorizationPlan> {
    let n = spec.events.len();
    let mut cuts: Vec<usize> = match policy {
        CutPolicy::Automatic => admissible_cuts(spec, tau_c),
        CutPolicy::Only(list) => {
            for &p in list {
                if p > n || spec.gap(p) < tau_c - TIME_EPS {
                    return Err(Error::Validation(format!(
                        "cut position {p} does not bridge a gap of at least tau_c = {tau_c}"
                    )));
                }
            }
            list.clone()
        }
        CutPolicy::Forced(list) => {
            if let Some(p) = list.iter().find(|&&p| p > n) {
                return Err(Error::Validation(format!("cut position {p} out of range")));
            }
            list.clone()
        }
    };
    cuts.sort_unstable();
    cuts.dedup();

    let tail_cut = cuts.last() == Some(&n);
    let inner: Vec<usize> = cuts.iter().copied().filter(|&p| p < n).collect();
    let mut segments = Vec::with_capacity(inner.len() + 1);
    let mut connections = Vec::with_capacity(inner.len());
    let mut bounds = vec![0];
    bounds.extend(&inner);
    bounds.push(n);
    let tail_start = spec.previous_end(n) + tau_c;
    for w in 0..bounds.len() - 1 {
        let (first, last) = (bounds[w], bounds[w + 1]);
        let start = if w == 0 {
            spec.t0
        } else {
            spec.events[first].time - tau_c
        };
        let end = if w + 2 < bounds.len() {
            spec.previous_end(last) + tau_c
        } else if tail_cut {
            tail_start
        } else {
            spec.final_time
        };
        segments.push(Segment {
            start,
            end,
            first,
            last,
        });
        if w > 0 {
            connections.push(Connection {
                position: first,
                gap: spec.gap(first),
            });
        }
    }
    let tail = tail_cut.then_some(spec.final_time - tail_start);
    Ok(FactorizationPlan {
        tau_c,
        t0: spec.t0,
        final_time: spec.final_time,
        segments,
        connections,
        tail,
    })
}

/// Key of a segment up to a time shift: quantized relative times plus
/// intervention fingerprints.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct SegmentKey {
    length: i64,
    events: Vec<(i64, String)>,
}

fn quantize(t: f64) -> i64 {
    (t / 1e-12).round() as i64
}

/// Reduced segment maps shared across evaluations; read-mostly.
#[derive(Debug, Default)]
pub struct SegmentCache {
    inner: RwLock<HashMap<SegmentKey, Arc<CMatrix>>>,
}

impl SegmentCache {
    pub fn len(&self) -> usize {
        self.inner.read().expect("segment cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_build(&self, key: SegmentKey, build: impl FnOnce() -> CMatrix) -> Arc<CMatrix> {
        if let Some(hit) = self.inner.read().expect("segment cache poisoned").get(&key) {
            return hit.clone();
        }
        let value = Arc::new(build());
        self.inner
            .write()
            .expect("segment cache poisoned")
            .entry(key)
            .or_insert(value)
            .clone()
    }
}

fn segment_map(ctx: &FactorizationContext, spec: &CorrelatorSpec, seg: &Segment) -> Arc<CMatrix> {
    let events = &spec.events[seg.first..seg.last];
    let key = SegmentKey {
        length: quantize(seg.duration()),
        events: events
            .iter()
            .map(|e| (quantize(e.time - seg.start), e.intervention.fingerprint().to_string()))
            .collect(),
    };
    ctx.segments().get_or_build(key, || {
        let model = ctx.model();
        let x = run_composite(ctx.evolver(), model.embedding().clone(), seg.start, seg.end, events);
        model.reduction().dot(&x)
    })
}

/// Evaluate a plan: segments from uncorrelated starts chained with
/// intermediate maps.
pub fn factorized_map(ctx: &FactorizationContext, plan: &FactorizationPlan, spec: &CorrelatorSpec) -> Result<CMatrix> {
    spec.validate(ctx.model())?;
    if (plan.tau_c - ctx.tau_c()).abs() > TIME_EPS {
        return Err(Error::Validation("plan and context disagree on tau_c".into()));
    }
    let maps: Vec<Arc<CMatrix>> = plan.segments.par_iter().map(|s| segment_map(ctx, spec, s)).collect();
    let mut m = (*maps[0]).clone();
    for (conn, seg) in plan.connections.iter().zip(&maps[1..]) {
        let bridged = ctx.intermediate_unchecked(conn.gap).dot(&m);
        m = seg.dot(&bridged);
    }
    if let Some(tail) = plan.tail {
        m = ctx.spectral().apply(tail, &m);
    }
    Ok(m)
}

pub fn factorized_correlator(
    ctx: &FactorizationContext,
    plan: &FactorizationPlan,
    spec: &CorrelatorSpec,
) -> Result<CorrelatorValue> {
    Ok(CorrelatorValue::from_map(spec, factorized_map(ctx, plan, spec)?))
}

/// Factorize at every admissible gap and evaluate.
pub fn factorize_correlator(ctx: &FactorizationContext, spec: &CorrelatorSpec) -> Result<CorrelatorValue> {
    let plan = plan_factorization(spec, ctx.tau_c());
    factorized_correlator(ctx, &plan, spec)
}

/// System map under the regression theorem: after every intervention the
/// environment is reset to its initial state, so each free interval is the
/// map `E_{dt, 0}` from an uncorrelated start. Pulse windows are propagated on
/// the composite space from the reset state.
pub fn qrt_map(ctx: &FactorizationContext, spec: &CorrelatorSpec) -> Result<CMatrix> {
    let model = ctx.model();
    spec.validate(model)?;
    let mut r = linalg::identity(model.system_space().liouville_dim());
    let mut t = spec.t0;
    let mut k = 0;
    let events = &spec.events;
    while k < events.len() {
        let e = &events[k];
        r = ctx.uncorrelated_map(e.time - t).dot(&r);
        match e.intervention.window() {
            None => {
                r = e.intervention.system().matrix().dot(&r);
                t = e.time;
                k += 1;
            }
            Some(w) => {
                let end = e.time + w.duration();
                let mut last = k + 1;
                while last < events.len() && events[last].time < end - TIME_EPS {
                    last += 1;
                }
                let x = model.embedding().dot(&r);
                let x = run_composite(ctx.evolver(), x, e.time, end, &events[k..last]);
                r = model.reduction().dot(&x);
                t = end;
                k = last;
            }
        }
    }
    Ok(ctx.uncorrelated_map(spec.final_time - t).dot(&r))
}

pub fn qrt_correlator(ctx: &FactorizationContext, spec: &CorrelatorSpec) -> Result<CorrelatorValue> {
    Ok(CorrelatorValue::from_map(spec, qrt_map(ctx, spec)?))
}

/// Write rows `(t_1, ..., t_n, Re, Im)` with 17 significant digits.
pub fn write_correlator_csv<W: Write>(out: W, rows: &[(Vec<f64>, C64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.0.len());
    let mut header: Vec<String> = (1..=n).map(|k| format!("t{k}")).collect();
    header.push("re".into());
    header.push("im".into());
    w.write_record(&header)?;
    for (times, z) in rows {
        if times.len() != n {
            return Err(Error::Validation("correlator rows must have equal length".into()));
        }
        let mut rec: Vec<String> = times.iter().map(|t| format!("{t:.16e}")).collect();
        rec.push(format!("{:.16e}", z.re));
        rec.push(format!("{:.16e}", z.im));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
