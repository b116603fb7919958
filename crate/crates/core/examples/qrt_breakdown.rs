//! Regression-theorem correlators reset the environment at every
//! intervention; with strong coupling this misses the lattice memory.

use std::sync::Arc;

use nmcorr::correlators::{brute_force_correlator, factorize_correlator, qrt_correlator, CorrelatorSpec, Intervention};
use nmcorr::linalg::{self, CMatrix, ONE};
use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, build_tls_lindblad_model, sigma_minus, sigma_plus, TlsBosonParams};

fn g1(model: &nmcorr::models::EmbeddingModel, t: f64, tau: f64) -> nmcorr::Result<CorrelatorSpec> {
    let lower = Arc::new(Intervention::sandwich(model, &sigma_minus(), &linalg::identity(2))?);
    let mut excited = CMatrix::zeros((2, 2));
    excited[[1, 1]] = ONE;
    Ok(CorrelatorSpec::new(0.0, t + tau)
        .with_initial(excited)
        .with_event(t, lower)
        .measuring(sigma_plus()))
}

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.rabi = 0.05;
    p.gamma = 0.05;
    for (name, model) in [
        ("Lindblad only", build_tls_lindblad_model(&p)?),
        ("strong coupling", build_tls_boson_model(&p)?),
    ] {
        let model = Arc::new(model);
        let ctx = FactorizationContext::build(model.clone(), MapOptions::new(0.1, 60.0))?;
        println!("{name}: tau_c = {:.1} ps", ctx.tau_c());
        for tau in [0.5, 2.0, 10.0] {
            let spec = g1(&model, 30.0, tau)?;
            let oracle = brute_force_correlator(&model, &spec, 0.1)?;
            let fact = factorize_correlator(&ctx, &spec)?;
            let qrt = qrt_correlator(&ctx, &spec)?;
            println!(
                "  tau = {tau:>4}: factorized error {:.1e}, QRT error {:.1e}",
                fact.relative_error(&oracle),
                qrt.relative_error(&oracle)
            );
        }
    }
    Ok(())
}
