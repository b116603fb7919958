//! Composite-space propagation: free evolution with cached exponentials and
//! driven evolution across pulse windows.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, c, kron, CMatrix, C64, I};
use crate::models::{
    sigma_minus, step_propagator, time_ordered_exp, EmbeddingModel, PulseOptions, PulseShape, StepScheme,
};

/// Absolute tolerance (ps) for comparing times.
pub const TIME_EPS: f64 = 1e-9;

/// Free composite evolution `exp(L dt)` with memoized propagators.
///
/// Durations within `TIME_EPS` of an integer multiple of the base step are
/// snapped to it, so grid-aligned work reuses one exponential per multiple.
pub struct Evolver {
    generator: CMatrix,
    step: f64,
    multiples: Mutex<HashMap<u64, Arc<CMatrix>>>,
    arbitrary: Mutex<HashMap<u64, Arc<CMatrix>>>,
}

impl std::fmt::Debug for Evolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evolver").field("step", &self.step).finish()
    }
}

const CACHE_LIMIT: usize = 4096;

impl Evolver {
    /// `step <= 0` disables snapping.
    pub fn new(model: &EmbeddingModel, step: f64) -> Self {
        Self::from_generator(model.liouvillian().matrix().clone(), step)
    }

    pub fn from_generator(generator: CMatrix, step: f64) -> Self {
        Self {
            generator,
            step,
            multiples: Mutex::new(HashMap::new()),
            arbitrary: Mutex::new(HashMap::new()),
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn generator(&self) -> &CMatrix {
        &self.generator
    }

    /// Register an already computed `exp(L n step)`.
    pub(crate) fn insert_multiple(&self, n: u64, propagator: CMatrix) {
        Self::lookup(&self.multiples, n, || propagator);
    }

    fn lookup(cache: &Mutex<HashMap<u64, Arc<CMatrix>>>, key: u64, build: impl FnOnce() -> CMatrix) -> Arc<CMatrix> {
        if let Some(hit) = cache.lock().expect("propagator cache poisoned").get(&key) {
            return hit.clone();
        }
        let value = Arc::new(build());
        let mut guard = cache.lock().expect("propagator cache poisoned");
        if guard.len() >= CACHE_LIMIT {
            guard.clear();
        }
        guard.entry(key).or_insert(value).clone()
    }

    /// `exp(L dt)`.
    pub fn propagator(&self, dt: f64) -> Arc<CMatrix> {
        if self.step > 0.0 {
            let n = (dt / self.step).round();
            if n >= 1.0 && (dt - n * self.step).abs() <= TIME_EPS {
                let step = self.step;
                return Self::lookup(&self.multiples, n as u64, || {
                    linalg::expm(&(&self.generator * c(n * step)))
                });
            }
        }
        Self::lookup(&self.arbitrary, dt.to_bits(), || {
            linalg::expm(&(&self.generator * c(dt)))
        })
    }

    pub fn free(&self, x: &CMatrix, dt: f64) -> CMatrix {
        if dt.abs() <= TIME_EPS {
            return x.clone();
        }
        self.propagator(dt).dot(x)
    }

    /// Propagate `x` from `from` to `to`, driving through any pulse window
    /// that intersects the interval and applying instantaneous operations
    /// with times in `[from, to)` in order.
    pub fn evolve(&self, x: CMatrix, from: f64, to: f64, schedule: &Schedule<'_>) -> CMatrix {
        let mut x = x;
        let mut t = from;
        let mut pending = schedule
            .instants
            .iter()
            .filter(|(te, _)| *te >= from - TIME_EPS && *te < to - TIME_EPS)
            .peekable();
        loop {
            while let Some((te, op)) = pending.peek() {
                if *te <= t + TIME_EPS {
                    x = op.dot(&x);
                    pending.next();
                } else {
                    break;
                }
            }
            let target = pending.peek().map_or(to, |(te, _)| te.min(to));
            x = self.advance(x, t, target, &schedule.windows);
            t = target;
            if t >= to - TIME_EPS {
                break;
            }
        }
        x
    }

    fn advance(&self, mut x: CMatrix, a: f64, b: f64, windows: &[(f64, &PulseWindow)]) -> CMatrix {
        let mut t = a;
        while t < b - TIME_EPS {
            if let Some((ws, w)) = windows
                .iter()
                .find(|(ws, w)| *ws - TIME_EPS <= t && t < *ws + w.duration() - TIME_EPS)
            {
                let end = (ws + w.duration()).min(b);
                x = w.propagate(&x, t - ws, end - ws);
                t = end;
            } else {
                let next = windows
                    .iter()
                    .map(|(ws, _)| *ws)
                    .filter(|ws| *ws > t + TIME_EPS)
                    .fold(b, f64::min);
                x = self.free(&x, next - t);
                t = next;
            }
        }
        x
    }
}

/// Instantaneous composite operations and driven windows on an absolute time axis.
#[derive(Default, Clone)]
pub struct Schedule<'a> {
    instants: Vec<(f64, &'a CMatrix)>,
    windows: Vec<(f64, &'a PulseWindow)>,
}

impl<'a> Schedule<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Instants at equal times are applied in insertion order.
    pub fn instant(&mut self, time: f64, op: &'a CMatrix) -> &mut Self {
        let pos = self.instants.partition_point(|(t, _)| *t <= time);
        self.instants.insert(pos, (time, op));
        self
    }

    pub fn window(&mut self, start: f64, window: &'a PulseWindow) -> &mut Self {
        let pos = self.windows.partition_point(|(t, _)| *t <= start);
        self.windows.insert(pos, (start, window));
        self
    }

    pub fn windows(&self) -> &[(f64, &'a PulseWindow)] {
        &self.windows
    }
}

/// Time-dependent generator `L0 + Omega(t) (e^{-i phi} K+ + e^{i phi} K-)` of a
/// driven window.
#[derive(Debug, Clone)]
struct DriveGenerator {
    l0: CMatrix,
    k_plus: CMatrix,
    k_minus: CMatrix,
    shape: PulseShape,
    scale: f64,
}

impl DriveGenerator {
    fn new(model: &EmbeddingModel, shape: &PulseShape) -> Self {
        let commutator = |op: &CMatrix| -> CMatrix {
            let lifted = model.lift(op);
            let eye = linalg::identity(lifted.nrows());
            // -i/hbar [hbar/2 A, .]
            (kron(&eye, &lifted) - kron(&lifted.t().to_owned(), &eye)) * (-0.5 * I)
        };
        let em = model.emitter();
        Self {
            l0: model.liouvillian().matrix().clone(),
            k_plus: commutator(&linalg::dagger(em)),
            k_minus: commutator(em),
            shape: *shape,
            scale: shape.amplitude_scale(),
        }
    }

    fn at(&self, t: f64) -> CMatrix {
        let rabi = if t < 0.0 || t > self.shape.duration() {
            0.0
        } else {
            self.scale * self.shape.unnormalized(t)
        };
        if rabi == 0.0 {
            return self.l0.clone();
        }
        let rot = C64::from_polar(rabi, -self.shape.phase(t));
        &self.l0 + &(&self.k_plus * rot) + &(&self.k_minus * rot.conj())
    }
}

/// Dissipative composite propagation across the support of a pulse, split
/// into equal cells so that grid-aligned sub-intervals are cheap.
#[derive(Debug, Clone)]
pub struct PulseWindow {
    generator: DriveGenerator,
    cell: f64,
    cells: Vec<CMatrix>,
    substeps: usize,
    scheme: StepScheme,
    achieved: f64,
    full: CMatrix,
}

impl PulseWindow {
    /// Refine the per-cell substep count by doubling until the full window
    /// propagator changes by less than `options.tolerance` (Frobenius).
    pub fn build(model: &EmbeddingModel, shape: &PulseShape, cells: usize, options: PulseOptions) -> Result<Self> {
        shape.validate()?;
        if cells == 0 {
            return Err(Error::Validation("pulse window needs at least one cell".into()));
        }
        let generator = DriveGenerator::new(model, shape);
        let cell = shape.duration() / cells as f64;
        let compute = |sub: usize| -> Vec<CMatrix> {
            let gen = |t: f64| generator.at(t);
            (0..cells)
                .into_par_iter()
                .map(|k| {
                    let a = k as f64 * cell;
                    time_ordered_exp(&gen, a, a + cell, sub, options.scheme)
                })
                .collect()
        };
        let product = |cs: &[CMatrix]| cs.iter().fold(linalg::identity(cs[0].nrows()), |acc, m| m.dot(&acc));

        let mut substeps = 1;
        let mut current = compute(substeps);
        let mut full = product(&current);
        let mut achieved = f64::INFINITY;
        while cells * substeps * 2 <= options.max_substeps.max(2 * cells) {
            let refined = compute(substeps * 2);
            let refined_full = product(&refined);
            achieved = linalg::frobenius(&(&refined_full - &full));
            substeps *= 2;
            current = refined;
            full = refined_full;
            if achieved < options.tolerance {
                break;
            }
        }
        if achieved >= options.tolerance {
            return Err(Error::NotConverged {
                context: "driven pulse window refinement",
                achieved,
            });
        }
        Ok(Self {
            generator,
            cell,
            cells: current,
            substeps,
            scheme: options.scheme,
            achieved,
            full,
        })
    }

    pub fn shape(&self) -> &PulseShape {
        &self.generator.shape
    }

    pub fn duration(&self) -> f64 {
        self.generator.shape.duration()
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn substeps_per_cell(&self) -> usize {
        self.substeps
    }

    /// Frobenius change of the last refinement step.
    pub fn achieved(&self) -> f64 {
        self.achieved
    }

    /// Composite propagator over the whole window.
    pub fn propagator(&self) -> &CMatrix {
        &self.full
    }

    /// Composite propagator of cell `k`.
    pub fn cell_propagator(&self, k: usize) -> &CMatrix {
        &self.cells[k]
    }

    /// Propagate between local times `a <= b` inside `[0, duration]`.
    pub fn propagate(&self, x: &CMatrix, a: f64, b: f64) -> CMatrix {
        let mut x = x.clone();
        let mut t = a.max(0.0);
        let b = b.min(self.duration());
        let n = self.cells.len();
        while t < b - TIME_EPS {
            let k = (((t + TIME_EPS) / self.cell).floor() as usize).min(n - 1);
            let cell_start = k as f64 * self.cell;
            let cell_end = cell_start + self.cell;
            let seg_end = cell_end.min(b);
            if (t - cell_start).abs() <= TIME_EPS && (seg_end - cell_end).abs() <= TIME_EPS {
                x = self.cells[k].dot(&x);
            } else {
                let frac = (seg_end - t) / self.cell;
                let steps = ((self.substeps as f64 * frac).ceil() as usize).max(1);
                let gen = |s: f64| self.generator.at(s);
                x = time_ordered_exp(&gen, t, seg_end, steps, self.scheme).dot(&x);
            }
            t = seg_end;
        }
        x
    }

    /// Single substep propagator, exposed for convergence studies.
    pub fn substep(&self, t: f64, h: f64) -> CMatrix {
        let gen = |s: f64| self.generator.at(s);
        step_propagator(&gen, t, h, self.scheme)
    }
}

/// Composite superoperator `rho -> (sigma- (x) 1) rho` used by emission correlators.
pub fn lowering_left(model: &EmbeddingModel) -> CMatrix {
    let a = model.lift(model.emitter());
    kron(&linalg::identity(a.nrows()), &a)
}

/// Check that the model's emitter is the two-level lowering operator when a
/// pipeline depends on it.
pub fn is_two_level_emitter(model: &EmbeddingModel) -> bool {
    model.sys_dim() == 2 && linalg::max_abs(&(model.emitter() - &sigma_minus())) == 0.0
}
