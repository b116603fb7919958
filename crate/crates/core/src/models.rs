//! Physical scenarios: a two-level emitter coupled to damped, truncated
//! bosonic modes (the Markovian embedding), and Gaussian pulse interventions.
//!
//! Units: energies in meV, times in ps, rates in 1/ps. All Hamiltonians are
//! written in the frame rotating at the drive (or pulse) carrier.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlators::Intervention;
use crate::error::{Error, Result};
use crate::linalg::{self, c, dagger, kron, CMatrix, C64, I, ONE, ZERO};
use crate::liouville::{self, LiouvilleVector, Space, SuperOperator};
use crate::propagation::PulseWindow;
use crate::tolerances;
use crate::HBAR;

/// Boltzmann constant in meV/K.
pub const K_B: f64 = 0.08617333262;

/// `|g><e|` with `|g> = 0`, `|e> = 1`.
pub fn sigma_minus() -> CMatrix {
    ndarray::array![[ZERO, ONE], [ZERO, ZERO]]
}

pub fn sigma_plus() -> CMatrix {
    dagger(&sigma_minus())
}

/// Truncated annihilation operator on `levels` Fock states.
pub fn annihilation(levels: usize) -> CMatrix {
    let mut b = Array2::zeros((levels, levels));
    for n in 1..levels {
        b[[n - 1, n]] = c((n as f64).sqrt());
    }
    b
}

/// A system coupled to a finite environment with a time-independent GKSL
/// generator on the composite space.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    sys_dim: usize,
    env_dim: usize,
    hamiltonian: CMatrix,
    lindblad_terms: Vec<(f64, CMatrix)>,
    env_initial: CMatrix,
    emitter: CMatrix,
    liouvillian: SuperOperator,
    embedding: CMatrix,
    reduction: CMatrix,
    fingerprint: String,
    env_fingerprint: String,
    warnings: Vec<String>,
}

impl EmbeddingModel {
    /// Validate and assemble a model.
    ///
    /// `hamiltonian` and the Lindblad operators act on the composite space;
    /// `emitter` is the system lowering operator that pulses drive and
    /// observables measure.
    pub fn new(
        sys_dim: usize,
        env_dim: usize,
        hamiltonian: CMatrix,
        lindblad_terms: Vec<(f64, CMatrix)>,
        env_initial: CMatrix,
        emitter: CMatrix,
    ) -> Result<Self> {
        if sys_dim == 0 || env_dim == 0 {
            return Err(Error::Validation("dimensions must be positive".into()));
        }
        let space = Space::composite(sys_dim, env_dim);
        if space.liouville_dim() > tolerances::MAX_COMPOSITE_LIOUVILLE_DIM {
            return Err(Error::ResourceCap {
                dim: space.liouville_dim(),
                cap: tolerances::MAX_COMPOSITE_LIOUVILLE_DIM,
            });
        }
        if env_initial.dim() != (env_dim, env_dim) {
            return Err(Error::Dimension {
                context: "environment initial state",
                expected: env_dim,
                found: env_initial.nrows(),
            });
        }
        if emitter.dim() != (sys_dim, sys_dim) {
            return Err(Error::Dimension {
                context: "emitter operator",
                expected: sys_dim,
                found: emitter.nrows(),
            });
        }
        validate_density_matrix(&env_initial)?;
        let liouvillian = liouville::liouvillian_on(space, &hamiltonian, &lindblad_terms)?;
        let residual = liouville::trace_residual(&liouvillian);
        if residual > 1e-10 {
            return Err(Error::Validation(format!(
                "generator does not preserve the trace (residual {residual:.3e})"
            )));
        }
        let embedding = liouville::product_embedding_matrix(sys_dim, &env_initial);
        let reduction = liouville::partial_trace_matrix(sys_dim, env_dim);
        let env_fingerprint = fingerprint_of(&[&env_initial]);
        let mut parts: Vec<&CMatrix> = vec![&hamiltonian, &env_initial, &emitter];
        parts.extend(lindblad_terms.iter().map(|(_, op)| op));
        let rates: Vec<f64> = lindblad_terms.iter().map(|(r, _)| *r).collect();
        let fingerprint = format!(
            "{}-{}",
            fingerprint_of(&parts),
            &fingerprint_of(&[&Array2::from_shape_fn((1, rates.len()), |(_, k)| c(rates[k]))])[..8]
        );
        Ok(Self {
            sys_dim,
            env_dim,
            hamiltonian,
            lindblad_terms,
            env_initial,
            emitter,
            liouvillian,
            embedding,
            reduction,
            fingerprint,
            env_fingerprint,
            warnings: Vec::new(),
        })
    }

    /// A purely Markovian model: trivial one-dimensional environment.
    pub fn lindblad_only(hamiltonian: CMatrix, lindblad_terms: Vec<(f64, CMatrix)>, emitter: CMatrix) -> Result<Self> {
        let d = hamiltonian.nrows();
        Self::new(d, 1, hamiltonian, lindblad_terms, linalg::identity(1), emitter)
    }

    pub fn sys_dim(&self) -> usize {
        self.sys_dim
    }

    pub fn env_dim(&self) -> usize {
        self.env_dim
    }

    pub fn system_space(&self) -> Space {
        Space::system(self.sys_dim)
    }

    pub fn composite_space(&self) -> Space {
        Space::composite(self.sys_dim, self.env_dim)
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn lindblad_terms(&self) -> &[(f64, CMatrix)] {
        &self.lindblad_terms
    }

    pub fn env_initial(&self) -> &CMatrix {
        &self.env_initial
    }

    pub fn emitter(&self) -> &CMatrix {
        &self.emitter
    }

    pub fn liouvillian(&self) -> &SuperOperator {
        &self.liouvillian
    }

    /// `rho_S -> rho_S (x) rho_E(t0)` as a matrix.
    pub fn embedding(&self) -> &CMatrix {
        &self.embedding
    }

    /// Partial trace over the environment as a matrix.
    pub fn reduction(&self) -> &CMatrix {
        &self.reduction
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn env_fingerprint(&self) -> &str {
        &self.env_fingerprint
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `op (x) 1_E`.
    pub fn lift(&self, sys_op: &CMatrix) -> CMatrix {
        kron(sys_op, &linalg::identity(self.env_dim))
    }

    /// Composite sandwich `rho -> (A (x) 1) rho (B (x) 1)^dag`.
    pub fn composite_sandwich(&self, a: &CMatrix, b: &CMatrix) -> Result<SuperOperator> {
        SuperOperator::sandwich(self.composite_space(), &self.lift(a), &self.lift(b))
    }

    /// `vec(rho_S (x) rho_E(t0))`.
    pub fn product_state(&self, rho_s: &CMatrix) -> Result<LiouvilleVector> {
        let v = liouville::vectorize(rho_s)?;
        if v.space() != self.system_space() {
            return Err(Error::Dimension {
                context: "product_state",
                expected: self.sys_dim,
                found: rho_s.nrows(),
            });
        }
        LiouvilleVector::new(self.embedding.dot(v.data()), self.composite_space())
    }

    /// Hamiltonian of the driving field at Rabi frequency `rabi` (1/ps) and
    /// carrier phase `phase`, lifted to the composite space.
    pub fn drive_hamiltonian(&self, rabi: f64, phase: f64) -> CMatrix {
        let e = &self.emitter;
        let amp = 0.5 * HBAR * rabi;
        let rot = C64::from_polar(1.0, -phase);
        let h = dagger(e) * (rot * amp) + e * (rot.conj() * amp);
        self.lift(&h)
    }
}

fn validate_density_matrix(rho: &CMatrix) -> Result<()> {
    if !linalg::is_hermitian(rho, 1e-12) {
        return Err(Error::Validation("environment state is not Hermitian".into()));
    }
    let tr: C64 = rho.diag().sum();
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::Validation(format!(
            "environment state has trace {tr}, expected 1"
        )));
    }
    let h: CMatrix = rho.clone();
    let (vals, _) = ndarray_linalg::Eigh::eigh(&h, ndarray_linalg::UPLO::Upper)?;
    if let Some(min) = vals.iter().cloned().reduce(f64::min) {
        if min < -1e-10 {
            return Err(Error::Validation(format!(
                "environment state is not positive semidefinite (eigenvalue {min:.3e})"
            )));
        }
    }
    Ok(())
}

fn fingerprint_of(parts: &[&CMatrix]) -> String {
    let mut hasher = Sha256::new();
    for m in parts {
        hasher.update((m.nrows() as u64).to_le_bytes());
        hasher.update((m.ncols() as u64).to_le_bytes());
        for x in m.iter() {
            hasher.update(x.re.to_le_bytes());
            hasher.update(x.im.to_le_bytes());
        }
    }
    hex::encode(&hasher.finalize()[..12])
}

/// One damped bosonic mode of the embedding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BosonMode {
    /// Mode energy in meV.
    pub energy: f64,
    /// Emitter-mode coupling in meV, entering as `g sigma+ sigma- (b + b^dag)`.
    pub coupling: f64,
    /// Mode damping rate in 1/ps.
    pub damping: f64,
    /// Number of retained Fock states.
    pub truncation: usize,
}

/// Parameters of the driven two-level emitter with damped-mode environment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TlsBosonParams {
    /// Emitter transition minus frame frequency, in meV.
    #[serde(default)]
    pub detuning: f64,
    /// cw Rabi energy hbar*Omega_0 in meV.
    #[serde(default)]
    pub rabi: f64,
    /// Radiative decay rate in 1/ps.
    pub gamma: f64,
    /// Temperature in K; sets the thermal occupation of every mode.
    #[serde(default)]
    pub temperature: f64,
    pub modes: Vec<BosonMode>,
}

impl TlsBosonParams {
    /// The strong-coupling surrogate used throughout tests and examples.
    pub fn reference_strong() -> Self {
        Self {
            detuning: 0.0,
            rabi: 0.0,
            gamma: 0.01,
            temperature: 0.0,
            modes: vec![BosonMode {
                energy: 2.0,
                coupling: 0.7,
                damping: 2.0,
                truncation: 4,
            }],
        }
    }

    /// Polaron shift `-sum g^2 / E` of the emitter line, in meV.
    pub fn polaron_shift(&self) -> f64 {
        -self
            .modes
            .iter()
            .map(|m| m.coupling * m.coupling / m.energy)
            .sum::<f64>()
    }
}

/// Mean thermal occupation of a mode of energy `energy` (meV) at `temperature` (K).
pub fn thermal_occupation(energy: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        0.0
    } else {
        1.0 / ((energy / (K_B * temperature)).exp() - 1.0)
    }
}

/// Two-level emitter coupled to damped, truncated bosonic modes.
pub fn build_tls_boson_model(params: &TlsBosonParams) -> Result<EmbeddingModel> {
    if params.modes.is_empty() {
        return Err(Error::Validation(
            "at least one bosonic mode is required (D_E >= 2)".into(),
        ));
    }
    for (name, v) in [("gamma", params.gamma), ("temperature", params.temperature)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Validation(format!("{name} must be finite and >= 0")));
        }
    }
    for x in [params.detuning, params.rabi] {
        if !x.is_finite() {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
    }
    for m in &params.modes {
        if m.truncation < 2 {
            return Err(Error::Validation(format!(
                "mode truncation must be >= 2, got {}",
                m.truncation
            )));
        }
        if !(m.damping >= 0.0) || !m.energy.is_finite() || !m.coupling.is_finite() {
            return Err(Error::Validation("invalid mode parameters".into()));
        }
    }

    let env_dim: usize = params.modes.iter().map(|m| m.truncation).product();
    let sm = sigma_minus();
    let sp = sigma_plus();
    let n_e = sp.dot(&sm);
    let eye_s = linalg::identity(2);
    let eye_e = linalg::identity(env_dim);

    // Per-mode operators lifted to the full environment.
    let lift_mode = |k: usize, op: &CMatrix| -> CMatrix {
        params
            .modes
            .iter()
            .enumerate()
            .fold(linalg::identity(1), |acc, (j, m)| {
                if j == k {
                    kron(&acc, op)
                } else {
                    kron(&acc, &linalg::identity(m.truncation))
                }
            })
    };

    let sys_h = &n_e * c(params.detuning) + (&sp + &sm) * c(0.5 * params.rabi);
    let mut h = kron(&sys_h, &eye_e);
    let mut terms = vec![(params.gamma, kron(&sm, &eye_e))];
    let mut env_state = linalg::identity(1);
    let mut warnings = Vec::new();

    for (k, mode) in params.modes.iter().enumerate() {
        let b = lift_mode(k, &annihilation(mode.truncation));
        let bd = dagger(&b);
        h = h + kron(&eye_s, &bd.dot(&b)) * c(mode.energy) + kron(&n_e, &(&b + &bd)) * c(mode.coupling);
        let nth = thermal_occupation(mode.energy, params.temperature);
        terms.push((mode.damping * (nth + 1.0), kron(&eye_s, &b)));
        if nth > 0.0 {
            terms.push((mode.damping * nth, kron(&eye_s, &bd)));
        }
        if nth > mode.truncation as f64 / 4.0 {
            warnings.push(format!(
                "thermal occupation {nth:.3} of mode {k} exceeds truncation/4; the truncated environment may be inaccurate"
            ));
        }
        let ratio = if nth > 0.0 { nth / (nth + 1.0) } else { 0.0 };
        let mut pops: Vec<f64> = (0..mode.truncation).map(|n| ratio.powi(n as i32)).collect();
        let z: f64 = pops.iter().sum();
        pops.iter_mut().for_each(|p| *p /= z);
        let rho = Array2::from_shape_fn((mode.truncation, mode.truncation), |(i, j)| {
            if i == j {
                c(pops[i])
            } else {
                ZERO
            }
        });
        env_state = kron(&env_state, &rho);
    }

    let mut model = EmbeddingModel::new(2, env_dim, h, terms, env_state, sm)?;
    model.warnings = warnings;
    Ok(model)
}

/// Emitter-only Lindblad model obtained by dropping all modes.
pub fn build_tls_lindblad_model(params: &TlsBosonParams) -> Result<EmbeddingModel> {
    let sm = sigma_minus();
    let sp = sigma_plus();
    let h = sp.dot(&sm) * c(params.detuning) + (&sp + &sm) * c(0.5 * params.rabi);
    EmbeddingModel::lindblad_only(h, vec![(params.gamma, sm.clone())], sm)
}

/// Gaussian pulse envelope with finite support.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PulseShape {
    /// Gaussian width of the field envelope in ps.
    pub sigma: f64,
    /// Pulse area in radians.
    pub area: f64,
    /// Carrier minus frame frequency, in meV.
    #[serde(default)]
    pub detuning: f64,
    /// Support is `[0, 2 n_cut sigma]` with the peak in the middle.
    #[serde(default = "default_n_cut")]
    pub n_cut: f64,
}

fn default_n_cut() -> f64 {
    4.0
}

impl PulseShape {
    pub fn gaussian(sigma: f64, area: f64) -> Self {
        Self {
            sigma,
            area,
            detuning: 0.0,
            n_cut: default_n_cut(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Validation("pulse sigma must be positive".into()));
        }
        if !(self.n_cut > 0.0) || !self.area.is_finite() || !self.detuning.is_finite() {
            return Err(Error::Validation("invalid pulse parameters".into()));
        }
        Ok(())
    }

    /// Length of the support interval.
    pub fn duration(&self) -> f64 {
        2.0 * self.n_cut * self.sigma
    }

    pub(crate) fn unnormalized(&self, t: f64) -> f64 {
        let x = (t - self.n_cut * self.sigma) / self.sigma;
        (-0.5 * x * x).exp()
    }

    /// Integral of the clipped Gaussian over its support.
    fn support_integral(&self) -> f64 {
        // composite Simpson; the integrand is smooth and the grid is fine
        let n = 1 << 14;
        let h = self.duration() / n as f64;
        let mut s = self.unnormalized(0.0) + self.unnormalized(self.duration());
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * self.unnormalized(k as f64 * h);
        }
        s * h / 3.0
    }

    /// Factor turning the unit-peak Gaussian into a Rabi frequency of area `area`.
    pub fn amplitude_scale(&self) -> f64 {
        if self.area == 0.0 {
            0.0
        } else {
            self.area / self.support_integral()
        }
    }

    /// Rabi frequency in 1/ps at local time `t` in `[0, duration]`, zero outside.
    pub fn rabi(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration() || self.area == 0.0 {
            return 0.0;
        }
        self.amplitude_scale() * self.unnormalized(t)
    }

    /// Rabi-frequency sampler with the normalization computed once.
    pub fn sampler(&self) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
        let shape = *self;
        let scale = self.amplitude_scale();
        move |t| {
            if t < 0.0 || t > shape.duration() {
                0.0
            } else {
                scale * shape.unnormalized(t)
            }
        }
    }

    /// Carrier phase at local time `t`.
    pub fn phase(&self, t: f64) -> f64 {
        self.detuning * t / HBAR
    }
}

/// Integrator for time-ordered exponentials over a substep partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepScheme {
    /// One exponential per substep, generator sampled at the midpoint.
    Midpoint,
    /// Fourth-order commutator-free Magnus: two exponentials per substep with
    /// the generator sampled at the Gauss-Legendre nodes.
    Magnus4,
}

/// Propagator of one substep `[t, t + h]` for generator `gen`.
pub fn step_propagator(gen: &dyn Fn(f64) -> CMatrix, t: f64, h: f64, scheme: StepScheme) -> CMatrix {
    match scheme {
        StepScheme::Midpoint => linalg::expm(&(gen(t + 0.5 * h) * c(h))),
        StepScheme::Magnus4 => {
            let r = 3f64.sqrt() / 6.0;
            let a1 = gen(t + (0.5 - r) * h);
            let a2 = gen(t + (0.5 + r) * h);
            let alpha1 = (3.0 - 2.0 * 3f64.sqrt()) / 12.0;
            let alpha2 = (3.0 + 2.0 * 3f64.sqrt()) / 12.0;
            let first = linalg::expm(&((&a1 * c(alpha2) + &a2 * c(alpha1)) * c(h)));
            let second = linalg::expm(&((&a1 * c(alpha1) + &a2 * c(alpha2)) * c(h)));
            second.dot(&first)
        }
    }
}

/// Time-ordered product `T exp(int_a^b gen(t) dt)` over `steps` equal substeps.
pub fn time_ordered_exp(gen: &dyn Fn(f64) -> CMatrix, a: f64, b: f64, steps: usize, scheme: StepScheme) -> CMatrix {
    let n = gen(a).nrows();
    let h = (b - a) / steps as f64;
    let mut u = linalg::identity(n);
    for k in 0..steps {
        u = step_propagator(gen, a + k as f64 * h, h, scheme).dot(&u);
    }
    u
}

/// Unitary of the pulse in the interaction picture of `H0`:
/// `U = exp(i H0 dt / hbar) T exp(-i/hbar int (H0 + H_d(t)) dt)`.
pub fn pulse_unitary(model: &EmbeddingModel, pulse: &PulseShape, steps: usize, scheme: StepScheme) -> CMatrix {
    let h0 = model.hamiltonian().clone();
    let rabi = pulse.sampler();
    let shape = *pulse;
    let model_ref = model;
    let gen = move |t: f64| -> CMatrix {
        let h = &h0 + &model_ref.drive_hamiltonian(rabi(t), shape.phase(t));
        h * (-I / HBAR)
    };
    let dt = pulse.duration();
    let driven = time_ordered_exp(&gen, 0.0, dt, steps, scheme);
    let back = linalg::expm(&(model.hamiltonian() * (I * dt / HBAR)));
    back.dot(&driven)
}

/// Options for [`pulse_intervention_with`].
#[derive(Debug, Clone, Copy)]
pub struct PulseOptions {
    pub scheme: StepScheme,
    pub tolerance: f64,
    pub max_substeps: usize,
}

impl Default for PulseOptions {
    fn default() -> Self {
        Self {
            scheme: StepScheme::Magnus4,
            tolerance: tolerances::PULSE_CONVERGENCE,
            max_substeps: 1 << 16,
        }
    }
}

/// Build the pulse intervention `P = U . U^dag` with adaptive substep doubling,
/// together with the driven composite propagator used by the correlator engines.
pub fn pulse_intervention(model: &EmbeddingModel, pulse: &PulseShape, substeps: usize) -> Result<Intervention> {
    pulse_intervention_with(model, pulse, substeps, PulseOptions::default())
}

pub fn pulse_intervention_with(
    model: &EmbeddingModel,
    pulse: &PulseShape,
    substeps: usize,
    options: PulseOptions,
) -> Result<Intervention> {
    pulse.validate()?;
    if substeps == 0 {
        return Err(Error::Validation("substeps must be >= 1".into()));
    }
    let space = model.composite_space();
    let sandwich = |u: &CMatrix| SuperOperator::sandwich(space, u, u);

    let mut steps = substeps;
    let mut current = sandwich(&pulse_unitary(model, pulse, steps, options.scheme))?;
    let mut achieved = f64::INFINITY;
    while steps * 2 <= options.max_substeps {
        let refined = sandwich(&pulse_unitary(model, pulse, steps * 2, options.scheme))?;
        achieved = linalg::frobenius(&(refined.matrix() - current.matrix()));
        steps *= 2;
        current = refined;
        if achieved < options.tolerance {
            break;
        }
    }
    if achieved >= options.tolerance {
        return Err(Error::NotConverged {
            context: "pulse propagator refinement",
            achieved,
        });
    }

    let window = PulseWindow::build(model, pulse, substeps, options)?;
    Intervention::pulse(model, *pulse, current, Arc::new(window))
}
