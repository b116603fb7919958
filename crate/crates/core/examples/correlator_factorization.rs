//! Four-time correlator split into segments no longer than the memory time
//! plus the gaps between them, compared with composite propagation.

use std::sync::Arc;
use std::time::Instant;

use nmcorr::correlators::{
    brute_force_correlator, factorized_correlator, plan_factorization, CorrelatorSpec, Intervention,
};
use nmcorr::linalg::{self, CMatrix, ONE};
use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, sigma_minus, sigma_plus, TlsBosonParams};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.rabi = 0.05;
    p.detuning = 0.245;
    p.gamma = 0.05;
    let model = Arc::new(build_tls_boson_model(&p)?);
    let ctx = FactorizationContext::build(model.clone(), MapOptions::new(0.1, 60.0))?;
    let tc = ctx.tau_c();

    let id = linalg::identity(2);
    let lower = Arc::new(Intervention::sandwich(&model, &sigma_minus(), &id)?);
    let raise = Arc::new(Intervention::sandwich(&model, &sigma_plus(), &sigma_plus())?);
    let mut excited = CMatrix::zeros((2, 2));
    excited[[1, 1]] = ONE;
    let spec = CorrelatorSpec::new(0.0, 6.0 * tc)
        .with_initial(excited)
        .with_event(0.5 * tc, lower.clone())
        .with_event(2.0 * tc, raise)
        .with_event(4.5 * tc, lower)
        .measuring(sigma_plus());

    let plan = plan_factorization(&spec, tc);
    for s in &plan.segments {
        println!(
            "segment [{:.1}, {:.1}] ps, events {}..{}",
            s.start, s.end, s.first, s.last
        );
    }
    println!(
        "cuts at positions {:?}, stationary tail {:?}",
        plan.cut_positions(),
        plan.tail
    );

    let t = Instant::now();
    let fact = factorized_correlator(&ctx, &plan, &spec)?;
    let tf = t.elapsed();
    let t = Instant::now();
    let oracle = brute_force_correlator(&model, &spec, ctx.dt())?;
    let to = t.elapsed();
    println!("factorized {:?} in {tf:?}", fact.scalar());
    println!("oracle     {:?} in {to:?}", oracle.scalar());
    println!("relative error {:.2e}", fact.relative_error(&oracle));
    Ok(())
}
