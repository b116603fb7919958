//! Scenario execution: model build, memory-time detection, engine runs,
//! CSV artifacts, a run manifest and a timing sidecar.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{EventConfig, ScenarioConfig, Task};
use crate::correlators::{
    brute_force_correlator, factorize_correlator, plan_factorization, qrt_correlator, write_correlator_csv,
    CorrelatorSpec, CorrelatorValue, Intervention,
};
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::maps::{estimate_memory_time, propagate_map, time_local_maps, FactorizationContext, MemoryTimeEstimate};
use crate::models::EmbeddingModel;
use crate::observables::{self as obs, Engine, G2Request, G2Result, PulsedSpectrum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DISAGREEMENT: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

/// Exit status of an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_)
        | Error::Config(_)
        | Error::Domain(_)
        | Error::Dimension { .. }
        | Error::Unsupported(_) => EXIT_VALIDATION,
        Error::ResourceCap { .. } => EXIT_RESOURCE,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Engine-agreement check recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Agreement {
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Agreement {
    fn new(metric: &str, value: f64, tolerance: f64) -> Self {
        Self {
            metric: metric.into(),
            value,
            tolerance,
            pass: value < tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineTiming {
    pub engine: String,
    pub wall_time_s: f64,
    /// Composite-space propagation time in ps.
    pub temporal_volume_ps: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Value,
    pub agreements: Vec<Agreement>,
    pub timings: Vec<EngineTiming>,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.agreements.iter().all(|a| a.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_DISAGREEMENT
        }
    }
}

/// Per-engine result of a task.
#[derive(Debug, Clone)]
pub enum EngineOutput {
    Memory(MemoryTimeEstimate),
    /// `(t, ||E_t extrapolated - E_t||_F, ||E_{t+dt,t} - E^S||_F)`.
    Extrapolation(Vec<(f64, f64, f64)>),
    G1(Vec<C64>),
    Spectrum(Vec<f64>),
    Pulsed(Vec<f64>, Option<PulsedSpectrum>),
    G2(G2Result),
    Correlator(CorrelatorValue),
}

/// Model, factorization data and per-run settings.
pub struct Session<'a> {
    pub config: &'a ScenarioConfig,
    pub model: Arc<EmbeddingModel>,
    cache_dir: Option<PathBuf>,
    seed: u64,
    ctx: Option<Arc<FactorizationContext>>,
    context_time: f64,
}

impl<'a> Session<'a> {
    pub fn new(config: &'a ScenarioConfig, cache_dir: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            config,
            model: Arc::new(config.model.build()?),
            cache_dir,
            seed: seed.or(config.seed).unwrap_or(0),
            ctx: None,
            context_time: 0.0,
        })
    }

    /// Factorization context, built on first use or loaded from the cache.
    pub fn context(&mut self) -> Result<Arc<FactorizationContext>> {
        if let Some(ctx) = &self.ctx {
            return Ok(ctx.clone());
        }
        let start = Instant::now();
        let options = self.config.numerics.map_options();
        let cached = match &self.cache_dir {
            Some(dir) => FactorizationContext::load(dir, self.model.clone(), options)?,
            None => None,
        };
        let ctx = match cached {
            Some(ctx) => ctx,
            None => {
                let ctx = FactorizationContext::build(self.model.clone(), options)?;
                if let Some(dir) = &self.cache_dir {
                    ctx.save(dir)?;
                }
                ctx
            }
        };
        self.context_time = start.elapsed().as_secs_f64();
        let ctx = Arc::new(ctx);
        self.ctx = Some(ctx.clone());
        Ok(ctx)
    }

    fn dt(&self) -> f64 {
        self.config.numerics.dt
    }

    /// Correlator specification of a `correlator` task, with random events
    /// drawn from the session seed.
    pub fn correlator_spec(&self) -> Result<CorrelatorSpec> {
        let c = self
            .config
            .correlator
            .as_ref()
            .ok_or_else(|| Error::Config("missing [correlator]".into()))?;
        let model = &self.model;
        let mut events: Vec<(f64, Arc<Intervention>)> = Vec::new();
        for e in &c.events {
            let iv = match e {
                EventConfig::Sandwich { left, right, .. } => {
                    Intervention::sandwich(model, &left.matrix(), &right.matrix())?
                }
                EventConfig::Pulse { pulse, .. } => obs::pulse_on_grid(model, pulse, self.dt())?,
            };
            events.push((e.time(), Arc::new(iv)));
        }
        if let Some(r) = &c.random {
            if r.operators.is_empty() {
                return Err(Error::Validation("random events need at least one operator".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for _ in 0..r.count {
                // on the grid, so that every engine sees the same instants
                let steps = ((c.final_time - c.t0) / self.dt()).floor() as usize;
                let t = c.t0 + rng.random_range(0..=steps) as f64 * self.dt();
                let a = r.operators[rng.random_range(0..r.operators.len())];
                let b = r.operators[rng.random_range(0..r.operators.len())];
                events.push((t, Arc::new(Intervention::sandwich(model, &a.matrix(), &b.matrix())?)));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut spec = CorrelatorSpec::new(c.t0, c.final_time).with_initial(c.initial.density_matrix());
        for (t, iv) in events {
            spec = spec.with_event(t, iv);
        }
        if let Some(op) = c.measure {
            spec = spec.measuring(op.matrix());
        }
        spec.validate(model)?;
        Ok(spec)
    }

    fn g2_request(&self) -> Result<G2Request> {
        let c = self
            .config
            .g2
            .as_ref()
            .ok_or_else(|| Error::Config("missing [g2]".into()))?;
        Ok(G2Request {
            period: c.period,
            pulse: Arc::new(obs::pulse_on_grid(&self.model, &c.pulse, self.dt())?),
        })
    }

    /// Run one engine on the task; returns the output and the composite
    /// propagation time it needed, in ps.
    pub fn compute(&mut self, engine: Engine) -> Result<(EngineOutput, f64)> {
        let cfg = self.config;
        let dt = self.dt();
        match cfg.task {
            Task::MemoryTime => {
                let n = &cfg.numerics;
                let e = estimate_memory_time(&self.model, n.dt, n.threshold, n.t_max)?;
                Ok((EngineOutput::Memory(e), n.t_max))
            }
            Task::MapExtrapolation => {
                let ctx = self.context()?;
                let c = cfg
                    .map_extrapolation
                    .clone()
                    .unwrap_or(crate::config::MapExtrapolationConfig {
                        horizon: 20.0,
                        points: 40,
                    });
                let tc = ctx.tau_c();
                let horizon = c.horizon * tc;
                let locals = time_local_maps(&self.model, dt, horizon + dt)?;
                let es = ctx.stationary().matrix();
                let mut rows = Vec::with_capacity(c.points);
                for t in obs::uniform_grid(tc, horizon, c.points) {
                    let t = (t / dt).round() * dt;
                    let ext = ctx.extrapolate(t)?;
                    let exact = propagate_map(&self.model, 0.0, t)?;
                    let n = (t / dt).round() as usize;
                    let stat = linalg::frobenius(&(&locals[n] - es));
                    rows.push((t, linalg::frobenius(&(ext.matrix() - exact.matrix())), stat));
                }
                Ok((EngineOutput::Extrapolation(rows), horizon + cfg.numerics.t_max))
            }
            Task::G1 => {
                let taus = cfg
                    .g1
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [g1]".into()))?
                    .tau
                    .values();
                let span = taus.iter().cloned().fold(0.0, f64::max);
                match engine {
                    Engine::Oracle => Ok((EngineOutput::G1(obs::oracle_steady_state_g1(&self.model, &taus)?), span)),
                    Engine::Factorized => {
                        let ctx = self.context()?;
                        let v = obs::steady_state_g1(&ctx, &taus)?;
                        Ok((EngineOutput::G1(v), cfg.numerics.t_max + 2.0 * ctx.tau_c()))
                    }
                    Engine::Qrt => {
                        let ctx = self.context()?;
                        Ok((
                            EngineOutput::G1(obs::qrt_steady_state_g1(&ctx, &taus)?),
                            cfg.numerics.t_max + span,
                        ))
                    }
                }
            }
            Task::CwSpectrum => {
                let c = cfg
                    .cw_spectrum
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [cw_spectrum]".into()))?;
                let omegas = c.omega.values();
                let ctx = self.context()?;
                let tc = ctx.tau_c();
                let s = obs::cw_spectrum(&ctx, engine, &omegas, c.linewidth, c.oracle_span * tc)?;
                let volume = match engine {
                    Engine::Oracle => c.oracle_span * tc,
                    _ => cfg.numerics.t_max + 2.0 * tc,
                };
                Ok((EngineOutput::Spectrum(s), volume))
            }
            Task::PulsedSpectrum => {
                let c = cfg
                    .pulsed_spectrum
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [pulsed_spectrum]".into()))?;
                let omegas = c.omega.values();
                let pulse = obs::pulse_on_grid(&self.model, &c.pulse, dt)?;
                let initial = c.initial.density_matrix();
                let ctx = self.context()?;
                let tc = ctx.tau_c();
                match engine {
                    Engine::Oracle => {
                        let span = c.oracle_span * tc;
                        let s = obs::pulsed_spectrum_oracle(
                            &self.model,
                            &pulse,
                            &initial,
                            &omegas,
                            c.linewidth,
                            dt,
                            span,
                            span,
                        )?;
                        // forward pass, in-window samples and the adjoint rows
                        let volume = 2.0 * span + pulse.duration() * pulse.duration() / 2.0;
                        Ok((EngineOutput::Pulsed(s, None), volume))
                    }
                    Engine::Factorized => {
                        let split = c.split.unwrap_or(tc);
                        let r = obs::pulsed_integrated_spectrum(&ctx, &pulse, &initial, &omegas, c.linewidth, split)?;
                        let ts = pulse.duration() + split;
                        let volume = cfg.numerics.t_max + ts + ts * (split + ts) + split;
                        Ok((EngineOutput::Pulsed(r.total.clone(), Some(r)), volume))
                    }
                    Engine::Qrt => Err(Error::Unsupported(
                        "the pulsed spectrum is evaluated with the oracle or factorized engine".into(),
                    )),
                }
            }
            Task::G2 => {
                let request = self.g2_request()?;
                let ctx = self.context()?;
                let r = obs::g2_map(&ctx, &request, engine, true)?;
                let volume = r.composite_steps as f64 * dt;
                Ok((EngineOutput::G2(r), volume))
            }
            Task::Correlator => {
                let spec = self.correlator_spec()?;
                match engine {
                    Engine::Oracle => {
                        let v = brute_force_correlator(&self.model, &spec, dt)?;
                        Ok((EngineOutput::Correlator(v), spec.final_time - spec.t0))
                    }
                    Engine::Factorized => {
                        let ctx = self.context()?;
                        let plan = plan_factorization(&spec, ctx.tau_c());
                        let v = factorize_correlator(&ctx, &spec)?;
                        Ok((EngineOutput::Correlator(v), plan.propagated_time() + cfg.numerics.t_max))
                    }
                    Engine::Qrt => {
                        let ctx = self.context()?;
                        let v = qrt_correlator(&ctx, &spec)?;
                        Ok((EngineOutput::Correlator(v), spec.final_time - spec.t0))
                    }
                }
            }
        }
    }
}

fn engine_agnostic(task: Task) -> bool {
    matches!(task, Task::MemoryTime | Task::MapExtrapolation)
}

/// Fixed 17-significant-digit scientific notation.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn find(outputs: &[(Engine, EngineOutput)], engine: Engine) -> Option<&EngineOutput> {
    outputs.iter().find(|(e, _)| *e == engine).map(|(_, o)| o)
}

/// Run a scenario and write its artifacts into `options.output_dir`.
pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(&options.output_dir)?;
    let mut session = Session::new(config, options.cache_dir.clone(), options.seed)?;
    let engines: Vec<Engine> = if engine_agnostic(config.task) {
        vec![Engine::Factorized]
    } else {
        config.engines.clone()
    };

    let mut outputs = Vec::new();
    let mut timings = Vec::new();
    for &engine in &engines {
        let before = session.context_time;
        let t = Instant::now();
        let (out, volume) = session.compute(engine)?;
        let mut wall = t.elapsed().as_secs_f64();
        // the first engine to need the context pays for it; report it separately
        if session.context_time != before {
            wall -= session.context_time;
        }
        log::info!("{} engine finished in {wall:.3} s", engine.name());
        timings.push(EngineTiming {
            engine: engine.name().into(),
            wall_time_s: wall,
            temporal_volume_ps: volume,
        });
        outputs.push((engine, out));
    }

    let ladder = config.numerics.tolerances;
    let dir = &options.output_dir;
    let mut files = Vec::new();
    let mut agreements = Vec::new();
    let mut results = serde_json::Map::new();

    match config.task {
        Task::MemoryTime => {
            if let Some(EngineOutput::Memory(e)) = find(&outputs, Engine::Factorized) {
                let path = dir.join("memory_time.csv");
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["n", "t", "difference"])?;
                for (i, d) in e.norm_history.iter().enumerate() {
                    let n = i + 1;
                    w.write_record([n.to_string(), fmt17(n as f64 * e.dt), fmt17(*d)])?;
                }
                w.flush()?;
                files.push(path);
                results.insert(
                    "memory_time".into(),
                    json!({
                        "tau_c": e.tau_c,
                        "steps": e.steps,
                        "converged": e.converged,
                        "max_condition": e.max_condition,
                        "significant_modes": e.significant_modes,
                    }),
                );
            }
        }
        Task::MapExtrapolation => {
            if let Some(EngineOutput::Extrapolation(rows)) = find(&outputs, Engine::Factorized) {
                let path = dir.join("map_extrapolation.csv");
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["t", "extrapolation_error", "stationarity_error"])?;
                for (t, e, s) in rows {
                    w.write_record([fmt17(*t), fmt17(*e), fmt17(*s)])?;
                }
                w.flush()?;
                files.push(path);
                let ext = rows.iter().map(|r| r.1).fold(0.0, f64::max);
                let stat = rows.iter().map(|r| r.2).fold(0.0, f64::max);
                agreements.push(Agreement::new("max extrapolation error (Frobenius)", ext, ladder.map));
                results.insert("max_extrapolation_error".into(), json!(ext));
                results.insert("max_stationarity_error".into(), json!(stat));
            }
        }
        Task::G1 => {
            let path = dir.join("g1.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["tau".to_string()];
            let mut cols: Vec<&Vec<C64>> = Vec::new();
            for (e, o) in &outputs {
                if let EngineOutput::G1(v) = o {
                    header.push(format!("re_{}", e.name()));
                    header.push(format!("im_{}", e.name()));
                    cols.push(v);
                }
            }
            w.write_record(&header)?;
            let taus = config.g1.as_ref().expect("validated").tau.values();
            for (k, tau) in taus.iter().enumerate() {
                let mut rec = vec![fmt17(*tau)];
                for c in &cols {
                    rec.push(fmt17(c[k].re));
                    rec.push(fmt17(c[k].im));
                }
                w.write_record(&rec)?;
            }
            w.flush()?;
            files.push(path);
            if let (Some(EngineOutput::G1(f)), Some(EngineOutput::G1(o))) =
                (find(&outputs, Engine::Factorized), find(&outputs, Engine::Oracle))
            {
                let scale = o.iter().map(|z| z.norm()).fold(1e-300, f64::max);
                let dev = f.iter().zip(o).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
                agreements.push(Agreement::new(
                    "max |factorized - oracle| / max |oracle|",
                    dev,
                    ladder.correlator,
                ));
            }
        }
        Task::CwSpectrum | Task::PulsedSpectrum => {
            let omegas = match config.task {
                Task::CwSpectrum => config.cw_spectrum.as_ref().expect("validated").omega.values(),
                _ => config.pulsed_spectrum.as_ref().expect("validated").omega.values(),
            };
            let spectrum = |e: Engine| match find(&outputs, e) {
                Some(EngineOutput::Spectrum(s)) | Some(EngineOutput::Pulsed(s, _)) => Some(s),
                _ => None,
            };
            let path = dir.join("spectrum.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let order = [Engine::Oracle, Engine::Factorized, Engine::Qrt];
            let present: Vec<Engine> = order.iter().copied().filter(|e| spectrum(*e).is_some()).collect();
            let regions = match find(&outputs, Engine::Factorized) {
                Some(EngineOutput::Pulsed(_, Some(r))) => Some(r),
                _ => None,
            };
            let mut header = vec!["omega".to_string()];
            header.extend(present.iter().map(|e| format!("S_{}", e.name())));
            if regions.is_some() {
                header.extend(["region_a", "region_b", "region_c", "region_d"].map(String::from));
            }
            w.write_record(&header)?;
            for (k, om) in omegas.iter().enumerate() {
                let mut rec = vec![fmt17(*om)];
                rec.extend(present.iter().map(|e| fmt17(spectrum(*e).expect("present")[k])));
                if let Some(r) = regions {
                    rec.extend([r.region_a[k], r.region_b[k], r.region_c[k], r.region_d[k]].map(fmt17));
                }
                w.write_record(&rec)?;
            }
            w.flush()?;
            files.push(path);
            for e in &present {
                let s = spectrum(*e).expect("present");
                let peak = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
                results.insert(format!("peak_{}", e.name()), json!(peak));
                results.insert(format!("min_{}", e.name()), json!(min));
            }
            if let (Some(f), Some(o)) = (spectrum(Engine::Factorized), spectrum(Engine::Oracle)) {
                let peak = o.iter().cloned().fold(0.0, f64::max).max(1e-300);
                let dev = f.iter().zip(o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak;
                agreements.push(Agreement::new(
                    "max |factorized - oracle| / peak",
                    dev,
                    ladder.observable,
                ));
            }
            if let (Some(q), Some(o)) = (spectrum(Engine::Qrt), spectrum(Engine::Oracle)) {
                let peak = o.iter().cloned().fold(0.0, f64::max).max(1e-300);
                let dev = q.iter().zip(o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak;
                results.insert("qrt_deviation_relative_to_peak".into(), json!(dev));
            }
        }
        Task::G2 => {
            let c = config.g2.as_ref().expect("validated");
            let mut g2 = serde_json::Map::new();
            for (e, o) in &outputs {
                if let EngineOutput::G2(r) = o {
                    g2.insert(
                        e.name().into(),
                        json!({
                            "g2_zero": r.g2_zero,
                            "same": r.same,
                            "adjacent": r.adjacent,
                            "warnings": r.warnings,
                        }),
                    );
                }
            }
            results.insert("g2".into(), Value::Object(g2));
            let primary = find(&outputs, Engine::Factorized).or_else(|| outputs.first().map(|(_, o)| o));
            if let Some(EngineOutput::G2(r)) = primary {
                let path = dir.join("g2_grid.csv");
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["t", "tau", "re_G2"])?;
                if let Some(grid) = &r.grid {
                    for (k, row) in grid.iter().enumerate().step_by(c.stride) {
                        for (j, v) in row.iter().enumerate().step_by(c.stride) {
                            w.write_record([fmt17(k as f64 * r.step), fmt17(j as f64 * r.step), fmt17(*v)])?;
                        }
                    }
                }
                w.flush()?;
                files.push(path);
            }
            if let (Some(EngineOutput::G2(f)), Some(EngineOutput::G2(o))) =
                (find(&outputs, Engine::Factorized), find(&outputs, Engine::Oracle))
            {
                let (fg, og) = (f.grid.as_ref().expect("kept"), o.grid.as_ref().expect("kept"));
                let scale = og.iter().flatten().cloned().fold(1e-300, f64::max);
                let dev = fg
                    .iter()
                    .flatten()
                    .zip(og.iter().flatten())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / scale;
                agreements.push(Agreement::new(
                    "max |G2 factorized - oracle| / max G2",
                    dev,
                    ladder.correlator,
                ));
            }
        }
        Task::Correlator => {
            let spec = session.correlator_spec()?;
            let times: Vec<f64> = spec.events.iter().map(|e| e.time).chain([spec.final_time]).collect();
            for (e, o) in &outputs {
                if let EngineOutput::Correlator(v) = o {
                    let path = dir.join(format!("correlator_{}.csv", e.name()));
                    let rows: Vec<(Vec<f64>, C64)> = v.entries().into_iter().map(|z| (times.clone(), z)).collect();
                    write_correlator_csv(File::create(&path)?, &rows)?;
                    files.push(path);
                }
            }
            if let (Some(EngineOutput::Correlator(f)), Some(EngineOutput::Correlator(o))) =
                (find(&outputs, Engine::Factorized), find(&outputs, Engine::Oracle))
            {
                agreements.push(Agreement::new(
                    "relative error factorized vs oracle",
                    f.relative_error(o),
                    ladder.correlator,
                ));
            }
            if let Some(EngineOutput::Correlator(CorrelatorValue::Scalar(z))) =
                find(&outputs, Engine::Factorized).or_else(|| outputs.first().map(|(_, o)| o))
            {
                results.insert("value".into(), json!([z.re, z.im]));
            }
            results.insert("event_times".into(), json!(times));
        }
    }

    let timing_path = dir.join("timing.csv");
    {
        let mut w = csv::Writer::from_path(&timing_path)?;
        w.write_record(["engine", "wall_time_s", "temporal_volume_ps"])?;
        if session.ctx.is_some() {
            w.write_record([
                "maps".to_string(),
                fmt17(session.context_time),
                fmt17(config.numerics.t_max),
            ])?;
        }
        for t in &timings {
            w.write_record([t.engine.clone(), fmt17(t.wall_time_s), fmt17(t.temporal_volume_ps)])?;
        }
        w.flush()?;
    }
    files.push(timing_path);

    let maps = session.ctx.as_ref().map(|ctx| {
        json!({
            "tau_c": ctx.tau_c(),
            "steps": ctx.estimate().steps,
            "scan_max_condition": ctx.estimate().max_condition,
            "short_map_inverse_condition": ctx.inverse_condition(),
            "eigenvector_condition": ctx.spectral().condition(),
            "biorthogonality_residual": ctx.spectral().biorthogonality_residual(),
            "wall_time_s": session.context_time,
        })
    });
    let manifest = json!({
        "program": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "task": config.task.name(),
        "inputs_sha256": config.inputs_hash(),
        "config": config,
        "seed": session.seed,
        "threads": rayon::current_num_threads(),
        "model": {
            "fingerprint": session.model.fingerprint(),
            "system_dim": session.model.sys_dim(),
            "environment_dim": session.model.env_dim(),
            "warnings": session.model.warnings(),
        },
        "maps": maps,
        "tolerances": {
            "stationarity": config.numerics.threshold,
            "map": ladder.map,
            "correlator": ladder.correlator,
            "observable": ladder.observable,
            "max_inverse_condition": crate::tolerances::MAX_INVERSE_CONDITION,
        },
        "engines": timings,
        "agreement": agreements,
        "results": Value::Object(results),
        "outputs": files.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        "total_wall_time_s": started.elapsed().as_secs_f64(),
    });
    let manifest_path = dir.join("manifest.json");
    let mut f = File::create(&manifest_path)?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    f.write_all(b"\n")?;
    files.push(manifest_path);

    Ok(RunOutcome {
        manifest,
        agreements,
        timings,
        files,
    })
}

/// One row of the benchmark table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub engine: String,
    /// Median over repetitions, including the map construction the engine needs.
    pub wall_time_s: f64,
    pub temporal_volume_ps: f64,
    /// Oracle wall time over this engine's, when an oracle row exists.
    pub speedup: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time every configured engine end to end; sweeps the first mode's
/// truncation if requested. Reports only.
pub fn bench_report(config: &ScenarioConfig, options: &RunOptions) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let bench = config.bench.clone().unwrap_or_default();
    let repeats = bench.repeats.max(1);
    let mut variants = vec![(String::from("base"), config.clone())];
    if !bench.truncations.is_empty() {
        if config.model.modes.is_empty() {
            return Err(Error::Config("truncation sweep needs at least one mode".into()));
        }
        variants = bench
            .truncations
            .iter()
            .map(|&n| {
                let mut c = config.clone();
                c.model.modes[0].truncation = n;
                (format!("truncation={n}"), c)
            })
            .collect();
    }
    let mut rows = Vec::new();
    for (label, cfg) in &variants {
        let mut scenario_rows = Vec::new();
        for &engine in &cfg.engines {
            let mut walls = Vec::with_capacity(repeats);
            let mut volume = 0.0;
            for _ in 0..repeats {
                // a fresh session per repetition, so map construction is timed
                let mut session = Session::new(cfg, None, options.seed)?;
                let t = Instant::now();
                let (_, v) = session.compute(engine)?;
                let mut wall = t.elapsed().as_secs_f64();
                if engine == Engine::Oracle {
                    // the oracle only reads tau_c and the grid from the maps
                    wall -= session.context_time;
                }
                walls.push(wall);
                volume = v;
            }
            scenario_rows.push(BenchRow {
                scenario: label.clone(),
                engine: engine.name().into(),
                wall_time_s: median(walls),
                temporal_volume_ps: volume,
                speedup: None,
            });
        }
        if scenario_rows.len() > 1 {
            if let Some(oracle) = scenario_rows
                .iter()
                .find(|r| r.engine == "oracle")
                .map(|r| r.wall_time_s)
            {
                for r in &mut scenario_rows {
                    r.speedup = Some(oracle / r.wall_time_s);
                }
            }
        }
        rows.extend(scenario_rows);
    }
    std::fs::create_dir_all(&options.output_dir)?;
    write_bench_csv(&options.output_dir.join("bench.csv"), &rows)?;
    Ok(rows)
}

fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let compare = rows.iter().any(|r| r.speedup.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["scenario", "engine", "wall_time_s", "temporal_volume_ps"];
    if compare {
        header.push("speedup_vs_oracle");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.scenario.clone(),
            r.engine.clone(),
            fmt17(r.wall_time_s),
            fmt17(r.temporal_volume_ps),
        ];
        if compare {
            rec.push(r.speedup.map(fmt17).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text rendering of the benchmark table.
pub fn format_bench(rows: &[BenchRow]) -> String {
    let compare = rows.iter().any(|r| r.speedup.is_some());
    let mut out = format!(
        "{:<18} {:<11} {:>14} {:>16}",
        "scenario", "engine", "wall time [s]", "volume [ps]"
    );
    if compare {
        out.push_str(&format!(" {:>10}", "speed-up"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:<18} {:<11} {:>14.6} {:>16.1}",
            r.scenario, r.engine, r.wall_time_s, r.temporal_volume_ps
        ));
        if compare {
            out.push_str(&r.speedup.map(|s| format!(" {s:>10.1}")).unwrap_or_default());
        }
        out.push('\n');
    }
    out
}
