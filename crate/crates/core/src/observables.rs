//! Emission observables: steady-state first-order coherence, cw and pulsed
//! emission spectra, and the pulse-train second-order coherence `g2[0]`.
//!
//! Time integrals use the linear Filon rule in the delay `tau` (weight
//! `e^{-(i omega + Gamma) tau}`) and the trapezoid rule in the absolute time
//! `t`, both on the map grid. Beyond the explicitly propagated windows the
//! integrands are sums of geometric sequences in the multipliers of the
//! stationary map, so the tails are summed in closed form; a truncated grid
//! plus its tail is then the same rule on an infinite grid.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlators::Intervention;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64, ZERO};
use crate::liouville;
use crate::maps::FactorizationContext;
use crate::models::{sigma_minus, EmbeddingModel};
use crate::propagation::{lowering_left, PulseWindow, TIME_EPS};
use crate::quadrature::{trapezoid_geometric_tail, Filon};
use crate::tolerances;

/// Engine used to evaluate an observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Oracle,
    Factorized,
    Qrt,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Oracle => "oracle",
            Engine::Factorized => "factorized",
            Engine::Qrt => "qrt",
        }
    }
}

/// Unit-trace null vector of the composite Liouvillian.
pub fn composite_steady_state(model: &EmbeddingModel) -> Result<CVector> {
    let eig = linalg::eigen(model.liouvillian().matrix())?;
    let mut order: Vec<usize> = (0..eig.values.len()).collect();
    order.sort_by(|&a, &b| eig.values[a].norm().total_cmp(&eig.values[b].norm()));
    if order.len() > 1 && eig.values[order[1]].norm() < tolerances::ZERO_RATE {
        return Err(Error::SteadyStateNotUnique {
            first: format!("{:.3e}", eig.values[order[0]]),
            second: format!("{:.3e}", eig.values[order[1]]),
        });
    }
    let v = eig.right.column(order[0]).to_owned();
    let tr = liouville::trace_of(&v, model.composite_space().hilbert_dim());
    Ok(v / tr)
}

/// Row `x -> Tr{(op (x) 1) x}` on the composite space.
fn composite_row(model: &EmbeddingModel, op: &CMatrix) -> CVector {
    liouville::expectation_functional(&model.lift(op))
}

fn emission_row(model: &EmbeddingModel) -> CVector {
    composite_row(model, &linalg::dagger(model.emitter()))
}

fn population_op(model: &EmbeddingModel) -> CMatrix {
    linalg::dagger(model.emitter()).dot(model.emitter())
}

/// `rho -> sigma rho` on the system space.
fn lowering_system(model: &EmbeddingModel) -> CMatrix {
    let d = model.sys_dim();
    linalg::kron(&linalg::identity(d), model.emitter())
}

/// `lim_{t -> inf} <sigma+(t + tau) sigma-(t)>` on the requested delays.
///
/// The composite state at the time of `sigma-` is rebuilt from the steady
/// state as `exp(L tau_c) J E_{tau_c}^{-1} v0`; delays below `tau_c` are
/// propagated on the composite space and longer ones continue with the
/// stationary map.
pub fn steady_state_g1(ctx: &FactorizationContext, taus: &[f64]) -> Result<Vec<C64>> {
    let model = ctx.model();
    let y = lowering_left(model).dot(&ctx.restart().dot(&ctx.spectral().steady_state()));
    let row = emission_row(model);
    let reduced_row = liouville::expectation_functional(&linalg::dagger(model.emitter()));
    let tau_c = ctx.tau_c();
    let at_tau_c = model.reduction().dot(&ctx.evolver().propagator(tau_c).dot(&y));
    taus.iter()
        .map(|&tau| {
            if tau < 0.0 {
                return Err(Error::Domain(format!("delay must be >= 0, got {tau}")));
            }
            Ok(if tau < tau_c - TIME_EPS {
                row.dot(&ctx.evolver().propagator(tau).dot(&y))
            } else {
                let f = ctx.spectral().evolution_factors(tau - tau_c);
                let coeffs = ctx.spectral().dual().dot(&at_tau_c) * &f;
                reduced_row.dot(&ctx.spectral().right().dot(&coeffs))
            })
        })
        .collect()
}

/// `lim <sigma+(t + tau) sigma-(t)>` from the composite steady state, by
/// direct composite propagation.
pub fn oracle_steady_state_g1(model: &EmbeddingModel, taus: &[f64]) -> Result<Vec<C64>> {
    let y = lowering_left(model).dot(&composite_steady_state(model)?);
    let row = emission_row(model);
    Ok(taus
        .iter()
        .map(|&tau| row.dot(&linalg::expm(&(model.liouvillian().matrix() * linalg::c(tau))).dot(&y)))
        .collect())
}

/// Steady-state `g1` under the regression theorem: `sigma- v0 (x) rho_E`
/// evolves from an uncorrelated product.
pub fn qrt_steady_state_g1(ctx: &FactorizationContext, taus: &[f64]) -> Result<Vec<C64>> {
    let model = ctx.model();
    let y = model
        .embedding()
        .dot(&lowering_system(model).dot(&ctx.spectral().steady_state()));
    let row = emission_row(model);
    taus.iter()
        .map(|&tau| {
            if tau < 0.0 {
                return Err(Error::Domain(format!("delay must be >= 0, got {tau}")));
            }
            Ok(row.dot(&ctx.evolver().propagator(tau).dot(&y)))
        })
        .collect()
}

/// Tail coefficients `Tr{sigma+ v_nu} (~v_nu^dag r)`.
fn tail_coefficients(ctx: &FactorizationContext, r: &CVector) -> CVector {
    let model = ctx.model();
    let row = liouville::expectation_functional(&linalg::dagger(model.emitter()));
    let sp = ctx.spectral();
    let emit = row.dot(sp.right());
    emit * sp.dual().dot(r)
}

/// `int_{start}^inf` of the stationary continuation with coefficients
/// `coeffs`, sampled on the grid.
fn stationary_tail(ctx: &FactorizationContext, filon: &Filon, coeffs: &CVector, start: f64) -> Result<C64> {
    let mut acc = ZERO;
    for (nu, mu) in ctx.spectral().multipliers().iter().enumerate() {
        let a = coeffs[nu];
        if a.norm() == 0.0 {
            continue;
        }
        let undamped = ctx.spectral().rates()[nu].re.abs() < tolerances::ZERO_RATE && filon.s.re <= 0.0;
        match filon.geometric_tail(*mu, start) {
            _ if a.norm() <= tolerances::DIVERGENCE && undamped => {}
            Some(w) if !undamped => acc += a * w,
            _ if a.norm() <= tolerances::DIVERGENCE => {}
            _ => return Err(Error::Divergent { coefficient: a.norm() }),
        }
    }
    Ok(acc)
}

/// `int_0^inf <sigma+ ...> e^{-s tau} dtau` for a composite vector `y` at
/// `tau = 0` under free evolution: composite samples up to `split` steps,
/// stationary tail afterwards.
fn emission_integral(
    ctx: &FactorizationContext,
    y: &CVector,
    omegas: &[f64],
    linewidth: f64,
    split: usize,
) -> Result<Vec<C64>> {
    let model = ctx.model();
    let h = ctx.dt();
    let p = ctx.evolver().propagator(h);
    let row = emission_row(model);
    let mut samples = Vec::with_capacity(split + 1);
    let mut x = y.clone();
    samples.push(row.dot(&x));
    for _ in 0..split {
        x = p.dot(&x);
        samples.push(row.dot(&x));
    }
    let coeffs = tail_coefficients(ctx, &model.reduction().dot(&x));
    let start = split as f64 * h;
    omegas
        .par_iter()
        .map(|&w| {
            let filon = Filon::new(C64::new(linewidth, w), h);
            Ok(filon.integrate(&samples) + stationary_tail(ctx, &filon, &coeffs, start)?)
        })
        .collect()
}

fn check_linewidth(linewidth: f64) -> Result<()> {
    if !(linewidth > 0.0) || !linewidth.is_finite() {
        return Err(Error::Unsupported(
            "cw spectra need a detector linewidth > 0; elastic lines would be delta functions".into(),
        ));
    }
    Ok(())
}

/// `S(omega) = Re lim int_0^inf <sigma+(t + tau) sigma-(t)> e^{-(i omega + Gamma) tau} dtau`
/// from the factorized steady-state correlator.
pub fn cw_spectrum_factorized(ctx: &FactorizationContext, omegas: &[f64], linewidth: f64) -> Result<Vec<f64>> {
    check_linewidth(linewidth)?;
    let model = ctx.model();
    let y = lowering_left(model).dot(&ctx.restart().dot(&ctx.spectral().steady_state()));
    let s = emission_integral(ctx, &y, omegas, linewidth, ctx.estimate().steps)?;
    Ok(s.iter().map(|z| z.re).collect())
}

/// cw spectrum under the regression theorem: the environment is reset when
/// `sigma-` acts, so the delay dynamics is `E_{tau, 0}` applied to `sigma- v0`.
pub fn cw_spectrum_qrt(ctx: &FactorizationContext, omegas: &[f64], linewidth: f64) -> Result<Vec<f64>> {
    check_linewidth(linewidth)?;
    let model = ctx.model();
    let r = lowering_system(model).dot(&ctx.spectral().steady_state());
    let y = model.embedding().dot(&r);
    let s = emission_integral(ctx, &y, omegas, linewidth, ctx.estimate().steps)?;
    Ok(s.iter().map(|z| z.re).collect())
}

/// cw spectrum by composite propagation from the composite steady state up
/// to `tau_max`, without any tail.
pub fn cw_spectrum_oracle(
    model: &EmbeddingModel,
    omegas: &[f64],
    linewidth: f64,
    dt: f64,
    tau_max: f64,
) -> Result<Vec<f64>> {
    check_linewidth(linewidth)?;
    let y = lowering_left(model).dot(&composite_steady_state(model)?);
    let p = linalg::expm(&(model.liouvillian().matrix() * linalg::c(dt)));
    let row = emission_row(model);
    let n = (tau_max / dt).round() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    let mut x = y;
    samples.push(row.dot(&x));
    for _ in 0..n {
        x = p.dot(&x);
        samples.push(row.dot(&x));
    }
    Ok(omegas
        .par_iter()
        .map(|&w| Filon::new(C64::new(linewidth, w), dt).integrate(&samples).re)
        .collect())
}

/// Dispatch on the engine; `tau_max` is used by the oracle only.
pub fn cw_spectrum(
    ctx: &FactorizationContext,
    engine: Engine,
    omegas: &[f64],
    linewidth: f64,
    tau_max: f64,
) -> Result<Vec<f64>> {
    match engine {
        Engine::Factorized => cw_spectrum_factorized(ctx, omegas, linewidth),
        Engine::Qrt => cw_spectrum_qrt(ctx, omegas, linewidth),
        Engine::Oracle => cw_spectrum_oracle(ctx.model(), omegas, linewidth, ctx.dt(), tau_max),
    }
}

/// Pulse window whose cells coincide with the grid step.
fn aligned_window(pulse: &Intervention, h: f64) -> Result<&PulseWindow> {
    let w = pulse
        .window()
        .ok_or_else(|| Error::Validation("a pulse intervention is required".into()))?;
    if (w.cell() - h).abs() > TIME_EPS {
        return Err(Error::Validation(format!(
            "pulse window cells ({}) must equal the time step ({h}); build the pulse with duration / dt cells",
            w.cell()
        )));
    }
    Ok(w)
}

/// Composite grid step at absolute index `n` with a window occupying
/// `[start, start + cells)`.
fn grid_step(x: &CVector, n: usize, windows: &[(usize, &PulseWindow)], free: &CMatrix) -> CVector {
    for (start, w) in windows {
        if n >= *start && n < start + w.cell_count() {
            return w.cell_propagator(n - start).dot(x);
        }
    }
    free.dot(x)
}

/// Region-resolved time-integrated spectrum after a single pulse.
#[derive(Debug, Clone)]
pub struct PulsedSpectrum {
    pub omegas: Vec<f64>,
    /// `t <= T_s`, `tau` explicitly propagated.
    pub region_a: Vec<f64>,
    /// `t <= T_s`, stationary `tau` tail.
    pub region_b: Vec<f64>,
    /// `t > T_s`, `tau` explicitly propagated.
    pub region_c: Vec<f64>,
    /// `t > T_s`, stationary `tau` tail.
    pub region_d: Vec<f64>,
    pub total: Vec<f64>,
}

/// `S(omega) = Re int_0^inf dt int_0^inf dtau <sigma+(t + tau) sigma-(t)> e^{-(i omega + Gamma) tau}`
/// after a pulse starting at `t = 0` from `initial (x) rho_E`.
///
/// `split >= tau_c` (on the grid) is the internal boundary: absolute times up
/// to `T_s = duration + split` and delays up to `split` are propagated, the
/// rest follows from the stationary map in closed form. The result does not
/// depend on `split` beyond round-off.
pub fn pulsed_integrated_spectrum(
    ctx: &FactorizationContext,
    pulse: &Intervention,
    initial: &CMatrix,
    omegas: &[f64],
    linewidth: f64,
    split: f64,
) -> Result<PulsedSpectrum> {
    let model = ctx.model();
    let h = ctx.dt();
    if !(linewidth >= 0.0) {
        return Err(Error::Validation("linewidth must be >= 0".into()));
    }
    let window = aligned_window(pulse, h)?;
    let ns = (split / h).round() as usize;
    if (ns as f64 * h - split).abs() > TIME_EPS || ns < ctx.estimate().steps {
        return Err(Error::Validation(format!(
            "split {split} must lie on the grid and be at least tau_c = {}",
            ctx.tau_c()
        )));
    }
    let n_pulse = window.cell_count();
    let n_split = n_pulse + ns;
    let free = ctx.evolver().propagator(h);
    let windows = [(0usize, window)];
    let lower = lowering_left(model);
    let row = emission_row(model);

    // forward trajectory up to T_s
    let mut xs = Vec::with_capacity(n_split + 1);
    xs.push(model.embedding().dot(&liouville::vectorize(initial)?.into_data()));
    for n in 0..n_split {
        let next = grid_step(&xs[n], n, &windows, &free);
        xs.push(next);
    }

    // regions A and B: one delay trajectory per time sample
    struct Sample {
        weight: f64,
        values: Vec<C64>,
        coeffs: CVector,
        start: f64,
    }
    let samples: Vec<Sample> = (0..=n_split)
        .into_par_iter()
        .map(|k| {
            let weight = if k == 0 || k == n_split { 0.5 * h } else { h };
            let span = ns.max(n_split - k);
            let mut z = lower.dot(&xs[k]);
            let mut values = Vec::with_capacity(span + 1);
            values.push(row.dot(&z));
            for j in 0..span {
                z = grid_step(&z, k + j, &windows, &free);
                values.push(row.dot(&z));
            }
            let coeffs = tail_coefficients(ctx, &model.reduction().dot(&z));
            Sample {
                weight,
                values,
                coeffs,
                start: span as f64 * h,
            }
        })
        .collect();

    // regions C and D: the stationary continuation of rho(t) for t >= T_s,
    // summed over the trapezoid grid in closed form
    let sp = ctx.spectral();
    let reduced = model.reduction().dot(&xs[n_split]);
    let amplitudes = sp.dual().dot(&reduced);
    let steady = sp.steady_index();
    let population = liouville::expectation_functional(&population_op(model));
    let steady_emission = population.dot(&sp.steady_state()).norm();
    let leak = amplitudes[steady].norm() * steady_emission;
    if leak > tolerances::DIVERGENCE {
        return Err(Error::Divergent { coefficient: leak });
    }
    let mut summed = CVector::zeros(reduced.len());
    for (nu, mu) in sp.multipliers().iter().enumerate() {
        if nu == steady {
            continue;
        }
        let w = trapezoid_geometric_tail(*mu, h).ok_or(Error::Divergent {
            coefficient: amplitudes[nu].norm(),
        })?;
        summed.scaled_add(amplitudes[nu] * w, &sp.right().column(nu));
    }
    let mut z = lower.dot(&ctx.restart().dot(&summed));
    let mut late = Vec::with_capacity(ns + 1);
    late.push(row.dot(&z));
    for _ in 0..ns {
        z = free.dot(&z);
        late.push(row.dot(&z));
    }
    let late_coeffs = tail_coefficients(ctx, &model.reduction().dot(&z));

    let per_omega: Vec<[f64; 4]> = omegas
        .par_iter()
        .map(|&w| {
            let filon = Filon::new(C64::new(linewidth, w), h);
            let mut a = ZERO;
            let mut b = ZERO;
            for s in &samples {
                a += s.weight * filon.integrate(&s.values);
                b += s.weight * stationary_tail(ctx, &filon, &s.coeffs, s.start)?;
            }
            let c = filon.integrate(&late);
            let d = stationary_tail(ctx, &filon, &late_coeffs, ns as f64 * h)?;
            Ok([a.re, b.re, c.re, d.re])
        })
        .collect::<Result<_>>()?;
    let pick = |i: usize| per_omega.iter().map(|r| r[i]).collect::<Vec<f64>>();
    Ok(PulsedSpectrum {
        omegas: omegas.to_vec(),
        region_a: pick(0),
        region_b: pick(1),
        region_c: pick(2),
        region_d: pick(3),
        total: per_omega.iter().map(|r| r.iter().sum()).collect(),
    })
}

/// Time-integrated pulsed spectrum by composite propagation up to `t_max`
/// and `tau_max`, without tails.
#[allow(clippy::too_many_arguments)]
pub fn pulsed_spectrum_oracle(
    model: &EmbeddingModel,
    pulse: &Intervention,
    initial: &CMatrix,
    omegas: &[f64],
    linewidth: f64,
    dt: f64,
    t_max: f64,
    tau_max: f64,
) -> Result<Vec<f64>> {
    let h = dt;
    let window = aligned_window(pulse, h)?;
    let n_pulse = window.cell_count();
    let n_t = (t_max / h).round() as usize;
    let n_tau = (tau_max / h).round() as usize;
    if n_t < n_pulse {
        return Err(Error::Validation("t_max must cover the pulse".into()));
    }
    let free = linalg::expm(&(model.liouvillian().matrix() * linalg::c(h)));
    let windows = [(0usize, window)];
    let lower = lowering_left(model);
    let row = emission_row(model);
    let dim = row.len();

    // forward pass: in-window samples individually, the rest aggregated
    let mut x = model.embedding().dot(&liouville::vectorize(initial)?.into_data());
    let mut inside: Vec<(f64, usize, Vec<C64>, CVector)> = Vec::new();
    let mut aggregate = CVector::zeros(dim);
    for k in 0..=n_t {
        let weight = if k == 0 || k == n_t { 0.5 * h } else { h };
        let y = lower.dot(&x);
        if k < n_pulse {
            let mut z = y;
            let mut values = vec![row.dot(&z)];
            for j in k..n_pulse {
                z = grid_step(&z, j, &windows, &free);
                values.push(row.dot(&z));
            }
            inside.push((weight, n_pulse - k, values, z));
        } else {
            aggregate.scaled_add(C64::new(weight, 0.0), &y);
        }
        if k < n_t {
            x = grid_step(&x, k, &windows, &free);
        }
    }

    // adjoint rows f_j = row exp(L j h)
    let mut rows = Vec::with_capacity(n_tau + 1);
    let mut f = row.clone();
    rows.push(f.clone());
    let free_t = free.t().to_owned();
    for _ in 0..n_tau {
        f = free_t.dot(&f);
        rows.push(f.clone());
    }

    Ok(omegas
        .par_iter()
        .map(|&w| {
            let s = C64::new(linewidth, w);
            let filon = Filon::new(s, h);
            let (w0, w1) = crate::quadrature::filon_weights(s * h);
            // R = int_0^{tau_max} f(tau) e^{-s tau}
            let ratio = (-s * h).exp();
            let mut r = CVector::zeros(dim);
            let mut phase = C64::new(h, 0.0);
            for j in 0..n_tau {
                r.scaled_add(phase * w0, &rows[j]);
                r.scaled_add(phase * w1, &rows[j + 1]);
                phase *= ratio;
            }
            let mut total = r.dot(&aggregate);
            for (weight, steps, values, z) in &inside {
                total += *weight * filon.integrate(values);
                total += *weight * (-s * (*steps as f64 * h)).exp() * r.dot(z);
            }
            total.re
        })
        .collect())
}

/// Pulse train with period `period` starting at `t = 0`.
#[derive(Debug, Clone)]
pub struct G2Request {
    pub period: f64,
    pub pulse: Arc<Intervention>,
}

/// Result of the `g2[0]` pipeline.
#[derive(Debug, Clone)]
pub struct G2Result {
    /// `2 int_0^T dt int_0^{T/2} dtau G2`.
    pub same: f64,
    /// `int_0^T dt int_{T/2}^{3T/2} dtau G2`.
    pub adjacent: f64,
    pub g2_zero: f64,
    /// Time step of both grids.
    pub step: f64,
    /// `G2(t_k, tau_j)` with rows over `t` in `[0, T]` and columns over
    /// `tau` in `[0, 3T/2]`, if requested.
    pub grid: Option<Vec<Vec<f64>>>,
    /// Composite grid steps propagated, the cost measure of the engine.
    pub composite_steps: usize,
    pub warnings: Vec<String>,
}

/// Grid layout of a pulse train on the map grid.
struct Train<'a> {
    window: &'a PulseWindow,
    n_period: usize,
    n_pulse: usize,
    n_tau: usize,
    tau_c_steps: usize,
}

impl<'a> Train<'a> {
    fn new(ctx: &FactorizationContext, request: &'a G2Request) -> Result<Self> {
        let h = ctx.dt();
        let window = aligned_window(&request.pulse, h)?;
        let n_period = (request.period / h).round() as usize;
        if (n_period as f64 * h - request.period).abs() > TIME_EPS || !n_period.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "the delay grid (step {h}) must contain T/2 and 3T/2 for T = {}",
                request.period
            )));
        }
        if window.cell_count() >= n_period {
            return Err(Error::Config("pulse duration must be shorter than the period".into()));
        }
        Ok(Self {
            window,
            n_period,
            n_pulse: window.cell_count(),
            n_tau: 3 * n_period / 2,
            tau_c_steps: ctx.estimate().steps,
        })
    }

    /// Pulse starts covering `[0, 5T/2]`.
    fn starts(&self) -> [usize; 3] {
        [0, self.n_period, 2 * self.n_period]
    }

    fn windows(&self) -> Vec<(usize, &'a PulseWindow)> {
        self.starts().iter().map(|&s| (s, self.window)).collect()
    }

    fn in_window(&self, n: usize) -> bool {
        self.starts().iter().any(|&s| n >= s && n < s + self.n_pulse)
    }

    /// End of the latest intervention at or before `n`, given `sigma-` at `k0`.
    fn last_end(&self, k0: usize, n: usize) -> usize {
        self.starts()
            .iter()
            .filter(|&&s| s <= n)
            .map(|&s| s + self.n_pulse)
            .fold(k0, usize::max)
    }

    fn next_start(&self, n: usize) -> Option<usize> {
        self.starts().iter().copied().find(|&s| s > n)
    }
}

enum Track {
    Composite(CVector),
    Reduced(CVector),
    /// Reduced state at the start of a window, read out through cached blocks.
    Anchored {
        r: CVector,
        start: usize,
    },
}

/// Reduced blocks `T U(u) C_restart` across a window and the following
/// memory time, with the `sigma+ sigma-` readout of each.
struct RestartBlocks {
    readout: Vec<CVector>,
    exit: CMatrix,
}

impl RestartBlocks {
    fn new(ctx: &FactorizationContext, train: &Train, free: &CMatrix) -> Self {
        let model = ctx.model();
        let row = liouville::expectation_functional(&population_op(model));
        let span = train.n_pulse + train.tau_c_steps;
        let mut z = ctx.restart().clone();
        let mut readout = Vec::with_capacity(span + 1);
        for u in 0..=span {
            let b = model.reduction().dot(&z);
            readout.push(row.dot(&b));
            if u == span {
                return Self { readout, exit: b };
            }
            z = if u < train.n_pulse {
                train.window.cell_propagator(u).dot(&z)
            } else {
                free.dot(&z)
            };
        }
        unreachable!("loop returns at the last block")
    }
}

/// `G2(t_k0, tau_j)` for `j = 0..=3T/2h`, with `x` the composite state at `t_k0`.
fn g2_trajectory(
    ctx: &FactorizationContext,
    train: &Train,
    blocks: Option<&RestartBlocks>,
    x: &CVector,
    k0: usize,
    sandwich: &CMatrix,
    free: &CMatrix,
) -> (Vec<f64>, usize) {
    let model = ctx.model();
    let row_c = composite_row(model, &population_op(model));
    let row_r = liouville::expectation_functional(&population_op(model));
    let es = ctx.stationary().matrix();
    let windows = train.windows();
    let m = train.tau_c_steps;
    let end = k0 + train.n_tau;
    let gap_ok = |from: usize| train.next_start(from).is_none_or(|s| s >= end || s - from >= m);

    let mut track = Track::Composite(sandwich.dot(x));
    let mut out = Vec::with_capacity(train.n_tau + 1);
    let mut composite_steps = 0;
    for n in k0..=end {
        out.push(
            match &track {
                Track::Composite(x) => row_c.dot(x),
                Track::Reduced(r) => row_r.dot(r),
                Track::Anchored { r, start } => blocks.expect("blocks present").readout[n - start].dot(r),
            }
            .re,
        );
        if n == end {
            break;
        }
        track = match track {
            Track::Composite(x) => {
                composite_steps += 1;
                let x = grid_step(&x, n, &windows, free);
                let t = n + 1;
                let last = train.last_end(k0, t);
                if blocks.is_some() && !train.in_window(t) && t >= last + m && gap_ok(last) {
                    Track::Reduced(model.reduction().dot(&x))
                } else {
                    Track::Composite(x)
                }
            }
            Track::Reduced(r) => {
                let r = es.dot(&r);
                let t = n + 1;
                if train.starts().contains(&t) {
                    if gap_ok(t + train.n_pulse) {
                        Track::Anchored { r, start: t }
                    } else {
                        Track::Composite(ctx.restart().dot(&r))
                    }
                } else {
                    Track::Reduced(r)
                }
            }
            Track::Anchored { r, start } => {
                let b = blocks.expect("blocks present");
                if n + 1 - start == b.readout.len() - 1 {
                    Track::Reduced(b.exit.dot(&r))
                } else {
                    Track::Anchored { r, start }
                }
            }
        };
    }
    (out, composite_steps)
}

/// Radiative rate of the emitter, if the model has one.
fn emitter_decay(model: &EmbeddingModel) -> Option<f64> {
    let lifted = model.lift(model.emitter());
    model
        .lindblad_terms()
        .iter()
        .find(|(_, op)| linalg::max_abs(&(op - &lifted)) == 0.0)
        .map(|(rate, _)| *rate)
}

/// Composite states on `t_k = k h`, `k = 0..=T/h`, starting from
/// `initial (x) rho_E` at the first pulse.
fn train_states(ctx: &FactorizationContext, train: &Train, initial: &CMatrix, free: &CMatrix) -> Result<Vec<CVector>> {
    let model = ctx.model();
    let windows = train.windows();
    let mut xs = Vec::with_capacity(train.n_period + 1);
    xs.push(model.embedding().dot(&liouville::vectorize(initial)?.into_data()));
    for n in 0..train.n_period {
        let next = grid_step(&xs[n], n, &windows, free);
        xs.push(next);
    }
    Ok(xs)
}

fn ground_state(model: &EmbeddingModel) -> CMatrix {
    let d = model.sys_dim();
    let mut rho = CMatrix::zeros((d, d));
    rho[[0, 0]] = linalg::ONE;
    rho
}

fn check_engine(engine: Engine) -> Result<()> {
    if engine == Engine::Qrt {
        return Err(Error::Unsupported(
            "g2 is evaluated with the oracle or factorized engine".into(),
        ));
    }
    Ok(())
}

/// `G2(t, tau) = <sigma+(t) sigma+(t + tau) sigma-(t + tau) sigma-(t)>` for the
/// given start indices `t = k h`, over all delays `tau in [0, 3T/2]`.
pub fn g2_rows(ctx: &FactorizationContext, request: &G2Request, engine: Engine, ks: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(g2_rows_counted(ctx, request, engine, ks)?.0)
}

/// Rows plus the number of composite grid steps taken.
fn g2_rows_counted(
    ctx: &FactorizationContext,
    request: &G2Request,
    engine: Engine,
    ks: &[usize],
) -> Result<(Vec<Vec<f64>>, usize)> {
    check_engine(engine)?;
    let model = ctx.model();
    let train = Train::new(ctx, request)?;
    if let Some(k) = ks.iter().find(|&&k| k > train.n_period) {
        return Err(Error::Config(format!("start index {k} beyond the period")));
    }
    let free = ctx.evolver().propagator(ctx.dt());
    let blocks = (engine == Engine::Factorized).then(|| RestartBlocks::new(ctx, &train, &free));
    let xs = train_states(ctx, &train, &ground_state(model), &free)?;
    let sandwich = model.composite_sandwich(&sigma_minus(), &sigma_minus())?.into_matrix();
    let rows: Vec<(Vec<f64>, usize)> = ks
        .par_iter()
        .map(|&k| g2_trajectory(ctx, &train, blocks.as_ref(), &xs[k], k, &sandwich, &free))
        .collect();
    let steps = train.n_period + rows.iter().map(|r| r.1).sum::<usize>();
    Ok((rows.into_iter().map(|r| r.0).collect(), steps))
}

/// `G2` on the full grid and the integrated ratio
/// `g2[0] = 2 int_0^T int_0^{T/2} G2 / int_0^T int_{T/2}^{3T/2} G2`.
pub fn g2_map(ctx: &FactorizationContext, request: &G2Request, engine: Engine, keep_grid: bool) -> Result<G2Result> {
    let model = ctx.model();
    let train = Train::new(ctx, request)?;
    let h = ctx.dt();
    let mut warnings = Vec::new();
    match emitter_decay(model) {
        Some(gamma) if gamma * request.period >= 10.0 => {}
        Some(gamma) => warnings.push(format!(
            "period times decay rate is {:.3} < 10; inter-period correlations are not negligible",
            gamma * request.period
        )),
        None => warnings.push("emitter decay rate unknown; period not checked".into()),
    }
    let ks: Vec<usize> = (0..=train.n_period).collect();
    let (rows, composite_steps) = g2_rows_counted(ctx, request, engine, &ks)?;
    let half = train.n_period / 2;
    let trap = |k: usize, lo: usize, hi: usize| if k == lo || k == hi { 0.5 * h } else { h };
    let mut same = 0.0;
    let mut adjacent = 0.0;
    for (k, row) in rows.iter().enumerate() {
        let wt = trap(k, 0, train.n_period);
        let s: f64 = (0..=half).map(|j| trap(j, 0, half) * row[j]).sum();
        let a: f64 = (half..=train.n_tau).map(|j| trap(j, half, train.n_tau) * row[j]).sum();
        same += 2.0 * wt * s;
        adjacent += wt * a;
    }
    if !(adjacent > 0.0) {
        return Err(Error::Domain(
            "adjacent-pulse coincidences vanish; g2[0] undefined".into(),
        ));
    }
    Ok(G2Result {
        same,
        adjacent,
        g2_zero: same / adjacent,
        step: h,
        grid: keep_grid.then_some(rows),
        composite_steps,
        warnings,
    })
}

pub fn g2_zero(ctx: &FactorizationContext, request: &G2Request, engine: Engine) -> Result<f64> {
    Ok(g2_map(ctx, request, engine, false)?.g2_zero)
}

/// Uniform grid `start, start + step, ..., <= stop`.
pub fn uniform_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![start];
    }
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|k| start + k as f64 * step).collect()
}

/// Angular frequency of an energy in meV.
pub fn angular_frequency(energy: f64) -> f64 {
    energy / crate::HBAR
}

/// Pulse intervention whose window cells coincide with the grid step `dt`.
pub fn pulse_on_grid(model: &EmbeddingModel, shape: &crate::models::PulseShape, dt: f64) -> Result<Intervention> {
    let cells = (shape.duration() / dt).round();
    if cells < 1.0 || (cells * dt - shape.duration()).abs() > TIME_EPS {
        return Err(Error::Validation(format!(
            "pulse duration {} is not a multiple of the time step {dt}",
            shape.duration()
        )));
    }
    crate::models::pulse_intervention(model, shape, cells as usize)
}
