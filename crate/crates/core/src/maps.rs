//! Reduced dynamical maps of an embedding model: brute-force propagation,
//! time-local maps, memory-time detection, the stationary map with its
//! biorthogonal spectral decomposition, and extrapolation beyond the memory
//! time.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlators::SegmentCache;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector, C64};
use crate::liouville::{self, Space, SuperOperator};
use crate::models::EmbeddingModel;
use crate::propagation::Evolver;
use crate::tolerances;

/// Reduced map `E_{t_end, t_start}` presuming `rho_E(t_start)` given by the
/// fingerprinted environment state.
#[derive(Debug, Clone)]
pub struct DynamicalMap {
    superop: SuperOperator,
    t_start: f64,
    t_end: f64,
    env_fingerprint: String,
}

impl DynamicalMap {
    pub fn new(superop: SuperOperator, t_start: f64, t_end: f64, env_fingerprint: &str) -> Self {
        Self {
            superop,
            t_start,
            t_end,
            env_fingerprint: env_fingerprint.to_string(),
        }
    }

    pub fn superop(&self) -> &SuperOperator {
        &self.superop
    }

    pub fn matrix(&self) -> &CMatrix {
        self.superop.matrix()
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn env_fingerprint(&self) -> &str {
        &self.env_fingerprint
    }

    /// `|| <1| E - <1| ||`.
    pub fn trace_defect(&self) -> f64 {
        let d = self.superop.space().hilbert_dim();
        let one = liouville::trace_functional(d);
        let row = one.dot(self.matrix());
        (row - &one).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `E_{t, t0} = Tr_E exp(L (t - t0)) (. (x) rho_E)`.
pub fn propagate_map(model: &EmbeddingModel, t0: f64, t: f64) -> Result<DynamicalMap> {
    if t < t0 {
        return Err(Error::Domain(format!("propagate_map needs t >= t0, got {t} < {t0}")));
    }
    let u = linalg::expm(&(model.liouvillian().matrix() * c(t - t0)));
    let m = model.reduction().dot(&u.dot(model.embedding()));
    Ok(DynamicalMap::new(
        SuperOperator::new(m, model.system_space())?,
        t0,
        t,
        model.env_fingerprint(),
    ))
}

/// `E_{t+dt, t0} E_{t, t0}^{-1}` together with the condition number of the inverse.
pub fn time_local_map(later: &DynamicalMap, earlier: &DynamicalMap) -> Result<(SuperOperator, f64)> {
    if (later.t_start - earlier.t_start).abs() > 1e-12 || later.env_fingerprint != earlier.env_fingerprint {
        return Err(Error::Validation(
            "time-local map needs maps with a common origin and environment state".into(),
        ));
    }
    let (inv, cond) = checked_inverse(earlier.matrix(), "time-local map")?;
    let m = later.matrix().dot(&inv);
    Ok((SuperOperator::new(m, later.superop.space())?, cond))
}

fn checked_inverse(m: &CMatrix, context: &'static str) -> Result<(CMatrix, f64)> {
    let (inv, cond) = linalg::inverse_with_condition(m).map_err(|_| Error::IllConditioned {
        context,
        cond: f64::INFINITY,
    })?;
    if cond > tolerances::MAX_INVERSE_CONDITION {
        return Err(Error::IllConditioned { context, cond });
    }
    Ok((inv, cond))
}

/// Outcome of the memory-time scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryTimeEstimate {
    pub tau_c: f64,
    /// `tau_c / dt`.
    pub steps: usize,
    pub threshold: f64,
    pub dt: f64,
    pub t_max: f64,
    pub converged: bool,
    /// `|| E_{(n+1)dt, n dt} - E_{n dt, (n-1)dt} ||_F` for `n = 1, 2, ...`.
    pub norm_history: Vec<f64>,
    /// Largest condition number met while inverting the reduced span basis.
    pub max_condition: f64,
    /// Composite eigenmodes with weight above 1e-10 at `tau_c` (diagnostic only).
    pub significant_modes: usize,
}

/// Scan the time-local maps on the `dt` grid up to `t_max` and return the
/// smallest `tau_c = m dt` (`m >= 1`) after which all adjacent time-local maps
/// differ by less than `threshold`.
pub fn estimate_memory_time(model: &EmbeddingModel, dt: f64, threshold: f64, t_max: f64) -> Result<MemoryTimeEstimate> {
    Ok(scan_memory(model, dt, threshold, t_max, true)?.estimate)
}

struct Scan {
    estimate: MemoryTimeEstimate,
    step: CMatrix,
    grid: GridMaps,
}

fn scan_memory(model: &EmbeddingModel, dt: f64, threshold: f64, t_max: f64, diagnostics: bool) -> Result<Scan> {
    if !(dt > 0.0) || !(threshold > 0.0) || !(t_max >= 2.0 * dt) {
        return Err(Error::Validation(
            "memory-time scan needs dt > 0, threshold > 0 and t_max >= 2 dt".into(),
        ));
    }
    let n_max = (t_max / dt).round() as usize;
    let step = linalg::expm(&(model.liouvillian().matrix() * c(dt)));
    let grid = grid_maps(model, &step, n_max, !diagnostics)?;
    let locals = &grid.locals;
    let history: Vec<f64> = (1..locals.len())
        .map(|n| linalg::frobenius(&(&locals[n] - &locals[n - 1])))
        .collect();
    // history[n-1] compares locals[n] with locals[n-1]
    let last_bad = history.iter().rposition(|d| *d >= threshold);
    let (steps, converged) = match last_bad {
        None => (1, true),
        Some(i) => {
            let m = i + 2;
            // the last comparison must be good and leave room for E^S = locals[m]
            (m, m < locals.len() - 1)
        }
    };
    let steps = steps.min(locals.len() - 1);
    let tau_c = steps as f64 * dt;
    let significant_modes = if diagnostics {
        significant_modes(model, tau_c).unwrap_or(0)
    } else {
        0
    };
    Ok(Scan {
        estimate: MemoryTimeEstimate {
            tau_c,
            steps,
            threshold,
            dt,
            t_max,
            converged,
            norm_history: history,
            max_condition: grid.max_condition,
            significant_modes,
        },
        step,
        grid,
    })
}

const REORTHONORMALIZE: usize = 8;

struct GridMaps {
    /// `E_{(n+1) dt, n dt}` for `n = 0..n_max`.
    locals: Vec<CMatrix>,
    max_condition: f64,
    /// `(Q_n, T_n)` with `exp(L n dt) J = Q_n T_n`, if requested.
    spans: Vec<(CMatrix, CMatrix)>,
}

impl GridMaps {
    fn lifted(&self, n: usize) -> CMatrix {
        let (q, t) = &self.spans[n];
        q.dot(t)
    }
}

fn grid_maps(model: &EmbeddingModel, step: &CMatrix, n_max: usize, keep_spans: bool) -> Result<GridMaps> {
    let reduction = model.reduction();
    // The time-local map only depends on the span of exp(L t) J, so it is
    // evaluated on an orthonormal basis of that span; this keeps the growing
    // condition number of E_{t,0} out of the inverse. Between
    // re-orthonormalizations the basis condition grows by at most
    // `||exp(L dt)||^REORTHONORMALIZE`.
    let (mut basis, mut factor) = linalg::thin_qr(model.embedding())?;
    let mut locals = Vec::with_capacity(n_max);
    let mut spans = Vec::with_capacity(if keep_spans { n_max + 1 } else { 0 });
    let mut max_condition: f64 = 1.0;
    for n in 0..n_max {
        if keep_spans {
            spans.push((basis.clone(), factor.clone()));
        }
        let moved = step.dot(&basis);
        let (inv, cond) = checked_inverse(&reduction.dot(&basis), "time-local map")?;
        max_condition = max_condition.max(cond);
        locals.push(reduction.dot(&moved).dot(&inv));
        basis = if (n + 1) % REORTHONORMALIZE == 0 {
            let (q, r) = linalg::thin_qr(&moved)?;
            factor = r.dot(&factor);
            q
        } else {
            moved
        };
    }
    if keep_spans {
        spans.push((basis, factor));
    }
    Ok(GridMaps {
        locals,
        max_condition,
        spans,
    })
}

/// Time-local maps `E_{t+dt, t}` on the grid `t = 0, dt, ..., < t_max`.
pub fn time_local_maps(model: &EmbeddingModel, dt: f64, t_max: f64) -> Result<Vec<CMatrix>> {
    if !(dt > 0.0) || !(t_max >= dt) {
        return Err(Error::Validation("time-local maps need dt > 0 and t_max >= dt".into()));
    }
    let step = linalg::expm(&(model.liouvillian().matrix() * c(dt)));
    Ok(grid_maps(model, &step, (t_max / dt).round() as usize, false)?.locals)
}

/// Number of composite eigenmodes whose contribution to the reduced map at
/// `t` exceeds 1e-10.
pub fn significant_modes(model: &EmbeddingModel, t: f64) -> Result<usize> {
    let eig = linalg::eigen(model.liouvillian().matrix())?;
    let coeffs = eig.dual.dot(model.embedding());
    let reduced = model.reduction().dot(&eig.right);
    let mut count = 0;
    for (k, lambda) in eig.values.iter().enumerate() {
        let norm_r = reduced.column(k).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let c_max = coeffs.row(k).iter().fold(0.0f64, |m, x| m.max(x.norm()));
        if norm_r * c_max * (lambda * t).exp().norm() > 1e-10 {
            count += 1;
        }
    }
    Ok(count)
}

/// Biorthogonal eigen-data of the stationary map `E^S_dt`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    dt: f64,
    /// `mu_nu`, eigenvalues of `E^S_dt`.
    multipliers: CVector,
    /// `z_nu = ln(mu_nu) / dt`, principal branch.
    rates: CVector,
    /// Columns `v_nu`.
    right: CMatrix,
    /// Rows `~v_nu^dag` with `dual . right = 1`.
    dual: CMatrix,
    condition: f64,
    steady: usize,
}

/// Largest admissible `|arg mu| = |Im z| dt` before the principal logarithm
/// is considered ambiguous.
pub const ALIASING_PHASE: f64 = 0.9 * std::f64::consts::PI;

impl SpectralDecomposition {
    pub fn new(stationary: &CMatrix, dt: f64) -> Result<Self> {
        let eig = linalg::eigen(stationary)?;
        if eig.condition > tolerances::MAX_EIGENVECTOR_CONDITION {
            return Err(Error::Defective { cond: eig.condition });
        }
        for mu in eig.values.iter() {
            if mu.norm() > tolerances::MAX_EIGEN_MODULUS {
                return Err(Error::Unstable { modulus: mu.norm() });
            }
            if mu.arg().abs() > ALIASING_PHASE {
                return Err(Error::Aliasing { phase: mu.arg() });
            }
        }
        let rates: CVector = eig.values.mapv(|mu| mu.ln() / dt);
        let mut order: Vec<usize> = (0..rates.len()).collect();
        order.sort_by(|&a, &b| rates[a].norm().total_cmp(&rates[b].norm()));
        let steady = order[0];
        if order.len() > 1 && rates[order[1]].norm() < tolerances::ZERO_RATE {
            return Err(Error::SteadyStateNotUnique {
                first: format!("{:.3e}", rates[order[0]]),
                second: format!("{:.3e}", rates[order[1]]),
            });
        }
        let mut right = eig.right;
        let mut dual = eig.dual;
        let mut multipliers = eig.values;
        let mut rates = rates;
        let d = (right.nrows() as f64).sqrt().round() as usize;
        let one = liouville::trace_functional(d);
        let tr = one.dot(&right.column(steady));
        if tr.norm() > 1e-14 {
            // Trace preservation makes <1| the steady dual and every other
            // mode traceless; imposing it exactly keeps round-off from
            // accumulating over long extrapolations.
            let v0 = right.column(steady).mapv(|x| x / tr);
            for k in 0..right.ncols() {
                if k != steady {
                    let t = one.dot(&right.column(k));
                    let fixed = &right.column(k) - &v0.mapv(|x| x * t);
                    right.column_mut(k).assign(&fixed);
                }
            }
            right.column_mut(steady).assign(&v0);
            dual = linalg::inverse_with_condition(&right)?.0;
            dual.row_mut(steady).assign(&one);
            multipliers[steady] = linalg::ONE;
            rates[steady] = linalg::ZERO;
        }
        Ok(Self {
            dt,
            multipliers,
            rates,
            right,
            dual,
            condition: eig.condition,
            steady,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn rates(&self) -> &CVector {
        &self.rates
    }

    pub fn multipliers(&self) -> &CVector {
        &self.multipliers
    }

    pub fn right(&self) -> &CMatrix {
        &self.right
    }

    pub fn dual(&self) -> &CMatrix {
        &self.dual
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn steady_index(&self) -> usize {
        self.steady
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Unit-trace steady state `v_0`.
    pub fn steady_state(&self) -> CVector {
        self.right.column(self.steady).to_owned()
    }

    /// `mu_nu^(tau/dt) = exp(z_nu tau)`; on the grid the multiplier is used
    /// directly so that repeated steps and single evaluations agree.
    pub fn evolution_factors(&self, tau: f64) -> CVector {
        let n = tau / self.dt;
        if (n - n.round()).abs() < 1e-9 && n.round() >= 0.0 && n.round() <= 64.0 {
            let k = n.round() as i32;
            self.multipliers.mapv(|mu| mu.powi(k))
        } else {
            self.rates.mapv(|z| (z * tau).exp())
        }
    }

    /// `E^S_tau = sum_nu v_nu e^{z_nu tau} ~v_nu^dag` for any real `tau`.
    pub fn propagator(&self, tau: f64) -> CMatrix {
        let f = self.evolution_factors(tau);
        let mut scaled = self.right.clone();
        for (k, mut col) in scaled.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| x * f[k]);
        }
        scaled.dot(&self.dual)
    }

    /// Apply `E^S_tau` to a block of reduced vectors.
    pub fn apply(&self, tau: f64, block: &CMatrix) -> CMatrix {
        let f = self.evolution_factors(tau);
        let mut coeffs = self.dual.dot(block);
        for (k, mut row) in coeffs.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|x| x * f[k]);
        }
        self.right.dot(&coeffs)
    }

    /// `max |~v_mu^dag v_nu - delta_mu_nu|`.
    pub fn biorthogonality_residual(&self) -> f64 {
        let g = self.dual.dot(&self.right);
        linalg::max_abs(&(g - linalg::identity(self.len())))
    }

    /// `|| E - sum_nu v_nu mu_nu ~v_nu^dag ||_F`.
    pub fn reconstruction_residual(&self, stationary: &CMatrix) -> f64 {
        linalg::frobenius(&(stationary - &self.propagator(self.dt)))
    }
}

/// Nearest map to `e` that preserves Hermiticity and the trace exactly:
/// `(E + J E J) / 2` with `J vec(rho) = vec(rho^dag)`, then the trace defect
/// removed along `vec(1) / D`.
fn physical_part(e: &CMatrix) -> CMatrix {
    let n = e.nrows();
    let d = (n as f64).sqrt().round() as usize;
    let swap = |k: usize| (k % d) * d + k / d;
    let mut out = CMatrix::from_shape_fn((n, n), |(a, b)| 0.5 * (e[[a, b]] + e[[swap(a), swap(b)]].conj()));
    let one = liouville::trace_functional(d);
    let defect = one.dot(&out) - &one;
    for i in 0..d {
        let k = i + d * i;
        for b in 0..n {
            out[[k, b]] -= defect[b] / d as f64;
        }
    }
    out
}

/// Options of the map machinery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapOptions {
    /// Grid step in ps.
    pub dt: f64,
    /// Frobenius stationarity threshold.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// End of the memory-time scan in ps.
    pub t_max: f64,
}

fn default_threshold() -> f64 {
    tolerances::STATIONARITY
}

impl MapOptions {
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self {
            dt,
            threshold: tolerances::STATIONARITY,
            t_max,
        }
    }
}

/// `E_{tau_c + t0, t0}`, its inverse and the stationary spectral data: everything
/// the factorized engines need besides short composite segments.
pub struct FactorizationContext {
    model: Arc<EmbeddingModel>,
    options: MapOptions,
    estimate: MemoryTimeEstimate,
    short_map: DynamicalMap,
    short_inverse: CMatrix,
    inverse_condition: f64,
    stationary: DynamicalMap,
    spectral: SpectralDecomposition,
    evolver: Evolver,
    /// `exp(L tau_c) J`.
    lifted_short: CMatrix,
    restart: CMatrix,
    segments: SegmentCache,
}

impl std::fmt::Debug for FactorizationContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FactorizationContext")
            .field("tau_c", &self.estimate.tau_c)
            .field("dt", &self.options.dt)
            .finish()
    }
}

impl FactorizationContext {
    /// Scan for the memory time and assemble the stationary data. Fails if
    /// the scan does not converge by `t_max`.
    pub fn build(model: Arc<EmbeddingModel>, options: MapOptions) -> Result<Self> {
        let scan = scan_memory(&model, options.dt, options.threshold, options.t_max, false)?;
        if !scan.estimate.converged {
            let last = scan.estimate.norm_history.last().copied().unwrap_or(f64::NAN);
            return Err(Error::NotConverged {
                context: "memory-time detection",
                achieved: last,
            });
        }
        let m = scan.estimate.steps;
        let block = scan.grid.lifted(m);
        let short = model.reduction().dot(&block);
        let next = model.reduction().dot(&scan.grid.lifted(m + 1));
        let (short_inverse, _) = checked_inverse(&short, "inverse short-time map")?;
        let stationary = physical_part(&next.dot(&short_inverse));
        Self::assemble(model, options, scan.estimate, short, stationary, block, Some(scan.step))
    }

    fn assemble(
        model: Arc<EmbeddingModel>,
        options: MapOptions,
        estimate: MemoryTimeEstimate,
        short: CMatrix,
        stationary_matrix: CMatrix,
        lifted_short: CMatrix,
        step: Option<CMatrix>,
    ) -> Result<Self> {
        let space = model.system_space();
        let env = model.env_fingerprint().to_string();
        let tau_c = estimate.tau_c;
        let (short_inverse, inverse_condition) = checked_inverse(&short, "inverse short-time map")?;
        let spectral = SpectralDecomposition::new(&stationary_matrix, options.dt)?;
        let evolver = Evolver::new(&model, options.dt);
        if let Some(step) = step {
            evolver.insert_multiple(1, step);
        }
        // composite state at t from the reduced state at t: restart from an
        // uncorrelated product at t - tau_c
        let restart = lifted_short.dot(&short_inverse);
        Ok(Self {
            short_map: DynamicalMap::new(SuperOperator::new(short, space)?, 0.0, tau_c, &env),
            stationary: DynamicalMap::new(
                SuperOperator::new(stationary_matrix, space)?,
                tau_c,
                tau_c + options.dt,
                &env,
            ),
            short_inverse,
            inverse_condition,
            spectral,
            evolver,
            lifted_short,
            restart,
            segments: SegmentCache::default(),
            estimate,
            options,
            model,
        })
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    pub fn model_arc(&self) -> Arc<EmbeddingModel> {
        self.model.clone()
    }

    pub fn options(&self) -> MapOptions {
        self.options
    }

    pub fn dt(&self) -> f64 {
        self.options.dt
    }

    pub fn tau_c(&self) -> f64 {
        self.estimate.tau_c
    }

    pub fn estimate(&self) -> &MemoryTimeEstimate {
        &self.estimate
    }

    /// `E_{tau_c + t0, t0}`.
    pub fn short_map(&self) -> &DynamicalMap {
        &self.short_map
    }

    pub fn short_inverse(&self) -> &CMatrix {
        &self.short_inverse
    }

    pub fn inverse_condition(&self) -> f64 {
        self.inverse_condition
    }

    /// `E^S_dt`.
    pub fn stationary(&self) -> &DynamicalMap {
        &self.stationary
    }

    pub fn spectral(&self) -> &SpectralDecomposition {
        &self.spectral
    }

    pub fn evolver(&self) -> &Evolver {
        &self.evolver
    }

    /// `exp(L tau_c) J E_{tau_c}^{-1}`: composite state at `t` rebuilt from
    /// the reduced state at `t` once the memory has settled.
    pub fn restart(&self) -> &CMatrix {
        &self.restart
    }

    pub(crate) fn segments(&self) -> &SegmentCache {
        &self.segments
    }

    /// `E^int = E_{tau_c}^{-1} E^S_{gap - tau_c}` for a gap `>= tau_c`.
    pub fn intermediate(&self, gap: f64) -> Result<CMatrix> {
        intermediate_map(&self.short_inverse, &self.spectral, self.tau_c(), gap)
    }

    /// As [`intermediate`](Self::intermediate) but without the domain check;
    /// used to demonstrate what happens when a gap below `tau_c` is cut.
    pub fn intermediate_unchecked(&self, gap: f64) -> CMatrix {
        self.short_inverse.dot(&self.spectral.propagator(gap - self.tau_c()))
    }

    /// `E_{t0 + t, t0}`: brute force below `tau_c`, stationary extension above.
    pub fn uncorrelated_map(&self, t: f64) -> CMatrix {
        if t >= self.tau_c() - 1e-12 {
            self.spectral.propagator(t - self.tau_c()).dot(self.short_map.matrix())
        } else {
            let u = self.evolver.propagator(t);
            self.model.reduction().dot(&u.dot(self.model.embedding()))
        }
    }

    /// `E_{t, t0}` extrapolated from the short-time map.
    pub fn extrapolate(&self, t: f64) -> Result<DynamicalMap> {
        extrapolate_map(&self.short_map, &self.spectral, t)
    }

    /// Cache key: model, step, threshold and scan horizon.
    pub fn cache_key(model: &EmbeddingModel, options: &MapOptions) -> String {
        let mut h = Sha256::new();
        h.update(model.fingerprint().as_bytes());
        h.update(options.dt.to_le_bytes());
        h.update(options.threshold.to_le_bytes());
        h.update(options.t_max.to_le_bytes());
        hex::encode(&h.finalize()[..16])
    }

    pub fn cache_path(dir: &Path, model: &EmbeddingModel, options: &MapOptions) -> PathBuf {
        dir.join(format!("maps-{}.csv", Self::cache_key(model, options)))
    }

    /// Write the short-time and stationary maps plus the scan record as CSV
    /// rows `(kind, i, j, re, im)`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = Self::cache_path(dir, &self.model, &self.options);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["kind", "i", "j", "re", "im"])?;
        let e = &self.estimate;
        let scalar = |w: &mut csv::Writer<std::fs::File>, kind: &str, i: usize, v: f64| {
            w.write_record([kind, &i.to_string(), "0", &format!("{v:.17e}"), "0"])
        };
        scalar(&mut w, "steps", e.steps, 0.0)?;
        scalar(&mut w, "converged", e.converged as usize, 0.0)?;
        scalar(&mut w, "max_condition", 0, e.max_condition)?;
        scalar(&mut w, "significant_modes", e.significant_modes, 0.0)?;
        for (i, d) in e.norm_history.iter().enumerate() {
            scalar(&mut w, "history", i, *d)?;
        }
        for (kind, m) in [
            ("short", self.short_map.matrix()),
            ("stationary", self.stationary.matrix()),
            ("lifted", &self.lifted_short),
        ] {
            for ((i, j), x) in m.indexed_iter() {
                w.write_record([
                    kind,
                    &i.to_string(),
                    &j.to_string(),
                    &format!("{:.17e}", x.re),
                    &format!("{:.17e}", x.im),
                ])?;
            }
        }
        w.flush()?;
        Ok(path)
    }

    /// Load a cached context if present for this model and options.
    pub fn load(dir: &Path, model: Arc<EmbeddingModel>, options: MapOptions) -> Result<Option<Self>> {
        let path = Self::cache_path(dir, &model, &options);
        if !path.exists() {
            return Ok(None);
        }
        let mut r = csv::Reader::from_path(&path)?;
        let n = model.system_space().liouville_dim();
        let mut short = Array2::<C64>::zeros((n, n));
        let mut stationary = Array2::<C64>::zeros((n, n));
        let mut lifted = Array2::<C64>::zeros((model.composite_space().liouville_dim(), n));
        let mut history: HashMap<usize, f64> = HashMap::new();
        let mut steps = 0;
        let mut converged = false;
        let mut max_condition = 1.0;
        let mut significant = 0;
        for rec in r.records() {
            let rec = rec?;
            let bad = || Error::Config(format!("malformed cache file {}", path.display()));
            let kind = rec.get(0).ok_or_else(bad)?;
            let i: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let j: usize = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let re: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let im: f64 = rec.get(4).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            match kind {
                "steps" => steps = i,
                "converged" => converged = i == 1,
                "max_condition" => max_condition = re,
                "significant_modes" => significant = i,
                "history" => {
                    history.insert(i, re);
                }
                "short" if i < n && j < n => short[[i, j]] = C64::new(re, im),
                "stationary" if i < n && j < n => stationary[[i, j]] = C64::new(re, im),
                "lifted" if i < lifted.nrows() && j < n => lifted[[i, j]] = C64::new(re, im),
                _ => return Err(bad()),
            }
        }
        let mut norm_history = vec![0.0; history.len()];
        for (i, v) in history {
            if i < norm_history.len() {
                norm_history[i] = v;
            }
        }
        let estimate = MemoryTimeEstimate {
            tau_c: steps as f64 * options.dt,
            steps,
            threshold: options.threshold,
            dt: options.dt,
            t_max: options.t_max,
            converged,
            norm_history,
            max_condition,
            significant_modes: significant,
        };
        Self::assemble(model, options, estimate, short, stationary, lifted, None).map(Some)
    }
}

/// `E_{tau_c}^{-1} E^S_{gap - tau_c}`.
pub fn intermediate_map(
    short_inverse: &CMatrix,
    spectral: &SpectralDecomposition,
    tau_c: f64,
    gap: f64,
) -> Result<CMatrix> {
    if gap < tau_c - 1e-12 {
        return Err(Error::Domain(format!(
            "intermediate map needs a gap >= tau_c ({tau_c}), got {gap}"
        )));
    }
    Ok(short_inverse.dot(&spectral.propagator((gap - tau_c).max(0.0))))
}

/// `E_{t, t0} = E^S_{t - t0 - tau_c} E_{t0 + tau_c, t0}`.
pub fn extrapolate_map(short_map: &DynamicalMap, spectral: &SpectralDecomposition, t: f64) -> Result<DynamicalMap> {
    let t0 = short_map.t_start();
    let tau_c = short_map.t_end() - t0;
    if t < t0 + tau_c - 1e-12 {
        return Err(Error::Domain(format!(
            "extrapolation needs t >= t0 + tau_c = {}, got {t}",
            t0 + tau_c
        )));
    }
    let m = spectral.propagator((t - t0 - tau_c).max(0.0)).dot(short_map.matrix());
    Ok(DynamicalMap::new(
        SuperOperator::new(m, short_map.superop().space())?,
        t0,
        t,
        short_map.env_fingerprint(),
    ))
}

/// Stationary map `E^S_dt` from a converged estimate, built independently of
/// any context (used for cross-checks at different steps).
pub fn stationary_map(model: &EmbeddingModel, tau_c: f64, dt: f64) -> Result<DynamicalMap> {
    let a = propagate_map(model, 0.0, tau_c)?;
    let b = propagate_map(model, 0.0, tau_c + dt)?;
    let (m, _) = time_local_map(&b, &a)?;
    Ok(DynamicalMap::new(m, tau_c, tau_c + dt, model.env_fingerprint()))
}

/// Steady state reshaped to a unit-trace density matrix.
pub fn steady_density_matrix(spectral: &SpectralDecomposition) -> Result<CMatrix> {
    let d = (spectral.len() as f64).sqrt().round() as usize;
    let v = liouville::LiouvilleVector::new(spectral.steady_state(), Space::system(d))?;
    Ok(liouville::devectorize(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_tls_boson_model, build_tls_lindblad_model, sigma_minus, BosonMode, TlsBosonParams};

    fn strong() -> Arc<EmbeddingModel> {
        Arc::new(build_tls_boson_model(&TlsBosonParams::reference_strong()).unwrap())
    }

    fn lindblad() -> Arc<EmbeddingModel> {
        let mut p = TlsBosonParams::reference_strong();
        p.rabi = 0.3;
        p.detuning = 0.1;
        p.gamma = 0.2;
        Arc::new(build_tls_lindblad_model(&p).unwrap())
    }

    #[test]
    fn map_at_origin_is_identity_and_trace_preserving() {
        let m = strong();
        let e0 = propagate_map(&m, 1.0, 1.0).unwrap();
        assert!(linalg::max_abs(&(e0.matrix() - linalg::identity(4))) < 1e-14);
        let e = propagate_map(&m, 0.0, 7.3).unwrap();
        assert!(e.trace_defect() < 1e-10);
        assert!(propagate_map(&m, 1.0, 0.5).is_err());
    }

    #[test]
    fn decoupled_model_reduces_to_system_lindbladian() {
        let p = TlsBosonParams {
            detuning: 0.2,
            rabi: 0.4,
            gamma: 0.3,
            temperature: 0.0,
            modes: vec![BosonMode {
                energy: 1.0,
                coupling: 0.0,
                damping: 1.0,
                truncation: 3,
            }],
        };
        let composite = build_tls_boson_model(&p).unwrap();
        let sys = build_tls_lindblad_model(&p).unwrap();
        let e = propagate_map(&composite, 0.0, 4.0).unwrap();
        let direct = linalg::expm(&(sys.liouvillian().matrix() * c(4.0)));
        assert!(linalg::max_abs(&(e.matrix() - &direct)) < 1e-12);
    }

    #[test]
    fn time_local_map_of_lindblad_is_the_semigroup_step() {
        let m = lindblad();
        let a = propagate_map(&m, 0.0, 2.0).unwrap();
        let b = propagate_map(&m, 0.0, 2.1).unwrap();
        let (local, cond) = time_local_map(&b, &a).unwrap();
        assert!(cond >= 1.0);
        let step = linalg::expm(&(m.liouvillian().matrix() * c(0.1)));
        assert!(linalg::max_abs(&(local.matrix() - &step)) < 1e-12);
        // defining identity
        assert!(linalg::max_abs(&(local.matrix().dot(a.matrix()) - b.matrix())) < 1e-12);
    }

    #[test]
    fn lindblad_memory_time_is_one_step() {
        let est = estimate_memory_time(&lindblad(), 0.1, 1e-12, 5.0).unwrap();
        assert!(est.converged);
        assert_eq!(est.steps, 1);
        assert!((est.tau_c - 0.1).abs() < 1e-15);
    }

    #[test]
    fn memory_time_shrinks_with_mode_damping() {
        let mut taus = Vec::new();
        for kappa in [1.0, 2.0, 4.0] {
            let mut p = TlsBosonParams::reference_strong();
            p.modes[0].damping = kappa;
            let m = build_tls_boson_model(&p).unwrap();
            let est = estimate_memory_time(&m, 0.1, 1e-12, 150.0).unwrap();
            assert!(est.converged, "kappa {kappa}");
            taus.push(est.tau_c);
        }
        assert!(taus[0] > taus[1] && taus[1] > taus[2], "{taus:?}");
    }

    #[test]
    fn unconverged_scan_reports_history() {
        let est = estimate_memory_time(&strong(), 0.1, 1e-12, 3.0).unwrap();
        assert!(!est.converged);
        assert_eq!(est.norm_history.len(), 29);
    }

    #[test]
    fn lindblad_rates_are_liouvillian_eigenvalues() {
        let m = lindblad();
        let ctx = FactorizationContext::build(m.clone(), MapOptions::new(0.1, 5.0)).unwrap();
        let direct = linalg::eigen(m.liouvillian().matrix()).unwrap().values;
        for z in ctx.spectral().rates() {
            let best = direct.iter().map(|l| (l - z).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "rate {z} not found");
        }
    }

    #[test]
    fn strong_model_spectral_invariants() {
        let ctx = FactorizationContext::build(strong(), MapOptions::new(0.1, 150.0)).unwrap();
        let sp = ctx.spectral();
        assert!(sp.biorthogonality_residual() < 1e-10);
        assert!(sp.reconstruction_residual(ctx.stationary().matrix()) < 1e-9);
        assert!(sp.rates()[sp.steady_index()].norm() < 1e-10);
        for z in sp.rates() {
            assert!(z.re <= 1e-10);
        }
        // dual of the steady state is the trace functional
        let one = liouville::trace_functional(2);
        let dual0 = sp.dual().row(sp.steady_index()).to_owned();
        assert!((dual0 - one).iter().all(|x| x.norm() < 1e-9));
        let rho = steady_density_matrix(sp).unwrap();
        assert!(linalg::is_hermitian(&rho, 1e-9));
        // inverse sanity
        let prod = ctx.short_inverse().dot(ctx.short_map().matrix());
        let bound = ctx.inverse_condition() * f64::EPSILON * 10.0;
        assert!(linalg::max_abs(&(prod - linalg::identity(4))) < bound.max(1e-13));
    }

    #[test]
    fn independent_double_step_is_the_square() {
        let m = strong();
        let ctx = FactorizationContext::build(m.clone(), MapOptions::new(0.1, 150.0)).unwrap();
        let tau_c = ctx.tau_c();
        let double = stationary_map(&m, tau_c, 0.2).unwrap();
        let es = ctx.stationary().matrix();
        assert!(linalg::frobenius(&(double.matrix() - &es.dot(es))) < 1e-10);
    }

    #[test]
    fn extrapolation_matches_brute_force() {
        let m = strong();
        let ctx = FactorizationContext::build(m.clone(), MapOptions::new(0.1, 150.0)).unwrap();
        let tau_c = ctx.tau_c();
        let same = ctx.extrapolate(tau_c).unwrap();
        assert!(linalg::max_abs(&(same.matrix() - ctx.short_map().matrix())) < 1e-15);
        let far = ctx.extrapolate(10.0 * tau_c).unwrap();
        let brute = propagate_map(&m, 0.0, 10.0 * tau_c).unwrap();
        assert!(linalg::frobenius(&(far.matrix() - brute.matrix())) < 1e-9);
        assert!(ctx.extrapolate(0.5 * tau_c).is_err());
    }

    #[test]
    fn intermediate_map_identities() {
        let m = lindblad();
        let ctx = FactorizationContext::build(m.clone(), MapOptions::new(0.1, 5.0)).unwrap();
        let tau_c = ctx.tau_c();
        let at_two = ctx.intermediate(2.0 * tau_c).unwrap();
        // E^int_{2 tau_c - 2 tau_c} = identity in the Lindblad limit
        assert!(linalg::max_abs(&(at_two - linalg::identity(4))) < 1e-11);
        let gap = 3.7;
        let e_int = ctx.intermediate(gap).unwrap();
        let es = ctx.spectral().propagator(gap - tau_c);
        assert!(linalg::max_abs(&(ctx.short_map().matrix().dot(&e_int) - es)) < 1e-9);
        assert!(ctx.intermediate(0.5 * tau_c).is_err());
        // steady-state absorption
        let far = ctx.intermediate(500.0).unwrap();
        let v0 = ctx.spectral().steady_state();
        let expect = ctx.short_inverse().dot(&v0);
        let rho = liouville::vectorize(&(sigma_minus() + crate::models::sigma_plus())).unwrap();
        let got = far.dot(rho.data());
        let tr = liouville::trace_functional(2).dot(rho.data());
        assert!((got - expect * tr).iter().all(|x| x.norm() < 1e-9));
    }

    #[test]
    fn cache_round_trip() {
        let m = strong();
        let opts = MapOptions::new(0.1, 150.0);
        let ctx = FactorizationContext::build(m.clone(), opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ctx.save(dir.path()).unwrap();
        let loaded = FactorizationContext::load(dir.path(), m, opts).unwrap().unwrap();
        assert_eq!(loaded.estimate().steps, ctx.estimate().steps);
        assert!(linalg::max_abs(&(loaded.stationary().matrix() - ctx.stationary().matrix())) < 1e-13);
        let other = MapOptions::new(0.05, 150.0);
        assert!(FactorizationContext::load(dir.path(), strong(), other)
            .unwrap()
            .is_none());
    }
}
