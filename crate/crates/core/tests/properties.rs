use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use nmcorr::correlators::{
    brute_force_correlator, factorize_correlator, factorized_correlator, plan_factorization, plan_with_policy,
    CorrelatorSpec, CutPolicy, Intervention,
};
use nmcorr::linalg::{self, c, CMatrix, C64, ONE};
use nmcorr::liouville::{self, partial_trace_env, sandwich_superop, vectorize, LiouvilleVector, Space};
use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{
    build_tls_boson_model, pulse_intervention, sigma_minus, sigma_plus, BosonMode, EmbeddingModel, PulseShape,
    TlsBosonParams,
};
use nmcorr::observables::{cw_spectrum_factorized, uniform_grid};

const DT: f64 = 0.1;

fn state(k: usize) -> CMatrix {
    let mut rho = CMatrix::zeros((2, 2));
    rho[[k, k]] = ONE;
    rho
}

fn model(coupling: f64, damping: f64, temperature: f64) -> Arc<EmbeddingModel> {
    let p = TlsBosonParams {
        detuning: coupling * coupling / 2.0,
        rabi: 0.05,
        gamma: 0.05,
        temperature,
        modes: vec![BosonMode {
            energy: 2.0,
            coupling,
            damping,
            truncation: 4,
        }],
    };
    Arc::new(build_tls_boson_model(&p).unwrap())
}

fn context(m: Arc<EmbeddingModel>) -> FactorizationContext {
    FactorizationContext::build(m, MapOptions::new(DT, 400.0)).unwrap()
}

fn grid(t: f64) -> f64 {
    (t / DT).round() * DT
}

fn lowering(m: &EmbeddingModel) -> Arc<Intervention> {
    Arc::new(Intervention::sandwich(m, &sigma_minus(), &linalg::identity(2)).unwrap())
}

fn pair(m: &EmbeddingModel) -> Arc<Intervention> {
    Arc::new(Intervention::sandwich(m, &sigma_minus(), &sigma_minus()).unwrap())
}

fn three_time(m: &EmbeddingModel, tc: f64) -> CorrelatorSpec {
    let raise = Arc::new(Intervention::sandwich(m, &sigma_plus(), &sigma_plus()).unwrap());
    CorrelatorSpec::new(0.0, grid(4.6 * tc))
        .with_initial(state(1))
        .with_event(grid(0.4 * tc), lowering(m))
        .with_event(grid(1.9 * tc), raise)
        .with_event(grid(3.3 * tc), lowering(m))
        .measuring(sigma_plus())
}

fn g2_like(m: &EmbeddingModel, tc: f64) -> CorrelatorSpec {
    CorrelatorSpec::new(0.0, grid(2.1 * tc) + 3.0)
        .with_initial(state(0))
        .with_event(grid(1.1 * tc), pair(m))
        .with_event(grid(1.1 * tc) + 3.0, pair(m))
        .measuring(linalg::identity(2))
}

#[test]
fn factorized_matches_oracle_over_the_model_matrix() {
    for coupling in [0.0, 0.3, 0.7] {
        for damping in [2.0, 0.5] {
            for temperature in [0.0, 20.0] {
                let ctx = context(model(coupling, damping, temperature));
                let tc = ctx.tau_c().max(1.0);
                for spec in [three_time(ctx.model(), tc), g2_like(ctx.model(), tc)] {
                    let o = brute_force_correlator(ctx.model(), &spec, DT).unwrap();
                    let f = factorize_correlator(&ctx, &spec).unwrap();
                    let err = f.relative_error(&o);
                    assert!(err < 1e-7, "g {coupling}, kappa {damping}, T {temperature}: {err:.2e}");
                }
            }
        }
    }
}

#[test]
fn cutting_a_subset_of_gaps_gives_the_same_value() {
    let ctx = context(model(0.7, 2.0, 0.0));
    let spec = three_time(ctx.model(), ctx.tau_c());
    let all = plan_factorization(&spec, ctx.tau_c());
    assert!(all.cut_positions().len() >= 2);
    let reference = factorized_correlator(&ctx, &all, &spec).unwrap();
    for cuts in all.cut_positions() {
        let plan = plan_with_policy(&spec, ctx.tau_c(), &CutPolicy::Only(vec![cuts])).unwrap();
        let v = factorized_correlator(&ctx, &plan, &spec).unwrap();
        assert!(v.relative_error(&reference) < 1e-8);
    }
    let none = plan_with_policy(&spec, ctx.tau_c(), &CutPolicy::Only(vec![])).unwrap();
    assert!(
        factorized_correlator(&ctx, &none, &spec)
            .unwrap()
            .relative_error(&reference)
            < 1e-8
    );
}

#[test]
fn forced_cut_error_shrinks_as_the_gap_grows() {
    let ctx = context(model(0.7, 2.0, 0.0));
    let tc = ctx.tau_c();
    let errors: Vec<f64> = [0.1, 0.25, 0.5, 1.0]
        .iter()
        .map(|&frac| {
            let t1 = grid(1.2 * tc);
            let t2 = t1 + grid(frac * tc);
            let spec = CorrelatorSpec::new(0.0, t2 + grid(tc))
                .with_initial(state(1))
                .with_event(t1, pair(ctx.model()))
                .with_event(t2, pair(ctx.model()))
                .measuring(linalg::identity(2));
            let plan = plan_with_policy(&spec, tc, &CutPolicy::Forced(vec![1])).unwrap();
            let o = brute_force_correlator(ctx.model(), &spec, DT).unwrap();
            factorized_correlator(&ctx, &plan, &spec).unwrap().relative_error(&o)
        })
        .collect();
    assert!(errors[0] > 1e-4, "{errors:?}");
    for w in errors.windows(2) {
        assert!(w[1] < w[0] || w[1] < 1e-8, "{errors:?}");
    }
    assert!(errors[3] < 1e-8, "{errors:?}");
}

#[test]
fn zero_area_pulse_changes_nothing() {
    let ctx = context(model(0.7, 2.0, 0.0));
    let tc = ctx.tau_c();
    let m = ctx.model();
    let silent = Arc::new(pulse_intervention(m, &PulseShape::gaussian(0.25, 0.0), 20).unwrap());
    let plain = three_time(m, tc);
    let reference = factorize_correlator(&ctx, &plain).unwrap();
    for at in [0.0, grid(1.0 * tc), grid(2.5 * tc)] {
        let mut spec = CorrelatorSpec::new(0.0, plain.final_time)
            .with_initial(state(1))
            .measuring(sigma_plus());
        let mut events: Vec<(f64, Arc<Intervention>)> =
            plain.events.iter().map(|e| (e.time, e.intervention.clone())).collect();
        events.push((at, silent.clone()));
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, e) in events {
            spec = spec.with_event(t, e);
        }
        let v = factorize_correlator(&ctx, &spec).unwrap();
        assert!(v.relative_error(&reference) < 1e-10, "pulse at {at}");
    }
}

#[test]
fn pi_pulse_correlator_matches_oracle() {
    let ctx = context(model(0.7, 2.0, 0.0));
    let tc = ctx.tau_c();
    let m = ctx.model();
    let pi = Arc::new(pulse_intervention(m, &PulseShape::gaussian(0.5, PI), 40).unwrap());
    let spec = CorrelatorSpec::new(0.0, grid(3.5 * tc))
        .with_initial(state(0))
        .with_event(0.0, pi.clone())
        .with_event(1.0, lowering(m))
        .with_event(grid(1.5 * tc), pi)
        .with_event(grid(1.5 * tc) + 2.0, lowering(m))
        .measuring(sigma_plus());
    let o = brute_force_correlator(m, &spec, DT).unwrap();
    let f = factorize_correlator(&ctx, &spec).unwrap();
    assert!(f.relative_error(&o) < 1e-7, "{}", f.relative_error(&o));
}

#[test]
fn cw_spectrum_converges_under_grid_refinement() {
    let omegas = uniform_grid(-4.0, 4.0, 81);
    let spectra: Vec<Vec<f64>> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&dt| {
            let ctx = FactorizationContext::build(model(0.7, 2.0, 0.0), MapOptions::new(dt, 60.0)).unwrap();
            cw_spectrum_factorized(&ctx, &omegas, 0.0152).unwrap()
        })
        .collect();
    let peak = spectra[2].iter().cloned().fold(0.0, f64::max);
    let change = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / peak;
    let first = change(&spectra[0], &spectra[1]);
    let second = change(&spectra[1], &spectra[2]);
    assert!(second < first || second < 1e-9, "{first:.2e} then {second:.2e}");
}

fn matrix(d: usize, xs: &[f64]) -> CMatrix {
    CMatrix::from_shape_fn((d, d), |(i, j)| C64::new(xs[2 * (i * d + j)], xs[2 * (i * d + j) + 1]))
}

fn entries(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2 * d * d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vectorize_round_trips(d in 1usize..=8, seed in entries(8)) {
        let a = matrix(d, &seed);
        let back = liouville::devectorize(&vectorize(&a).unwrap());
        prop_assert!(linalg::max_abs(&(back - &a)) == 0.0);
    }

    #[test]
    fn sandwich_is_bilinear(d in 1usize..=4, x in entries(4), y in entries(4), z in entries(4), s in -2.0f64..2.0) {
        let (a, b, a2) = (matrix(d, &x), matrix(d, &y), matrix(d, &z));
        let lhs = sandwich_superop(&(&a + &(&a2 * c(s))), &b).unwrap();
        let rhs = sandwich_superop(&a, &b).unwrap().matrix() + &(sandwich_superop(&a2, &b).unwrap().matrix() * c(s));
        prop_assert!(linalg::max_abs(&(lhs.matrix() - &rhs)) < 1e-12);
        let id = sandwich_superop(&linalg::identity(d), &linalg::identity(d)).unwrap();
        prop_assert!(linalg::max_abs(&(id.matrix() - &linalg::identity(d * d))) == 0.0);
    }

    #[test]
    fn partial_trace_is_linear(d in 1usize..=3, de in 1usize..=3, x in entries(9), y in entries(9), s in -2.0f64..2.0) {
        let n = d * de;
        let (a, b) = (matrix(n, &x), matrix(n, &y));
        let space = Space::composite(d, de);
        let v = |m: &CMatrix| LiouvilleVector::new(vectorize(m).unwrap().data().clone(), space).unwrap();
        let mixed = partial_trace_env(&v(&(&a + &(&b * c(s))))).unwrap();
        let separate = partial_trace_env(&v(&a)).unwrap().data() + &(partial_trace_env(&v(&b)).unwrap().data() * c(s));
        let diff = (mixed.data() - &separate).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-12);
    }
}
