//! Steady-state first-order coherence from the stationary map, the
//! composite steady state and the regression theorem.

use std::sync::Arc;

use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, TlsBosonParams};
use nmcorr::observables::{oracle_steady_state_g1, qrt_steady_state_g1, steady_state_g1};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.rabi = 0.05;
    p.detuning = 0.245;
    p.gamma = 0.05;
    let model = Arc::new(build_tls_boson_model(&p)?);
    let ctx = FactorizationContext::build(model.clone(), MapOptions::new(0.1, 60.0))?;
    let taus = [0.0, 1.0, 3.0, 10.0, ctx.tau_c(), 50.0, 100.0];
    let f = steady_state_g1(&ctx, &taus)?;
    let o = oracle_steady_state_g1(&model, &taus)?;
    let q = qrt_steady_state_g1(&ctx, &taus)?;
    println!(
        "{:>8} {:>24} {:>10} {:>10}",
        "tau", "factorized", "|f - o|", "|qrt - o|"
    );
    for k in 0..taus.len() {
        println!(
            "{:>8.2} {:>11.4e} {:+11.4e}i {:>10.1e} {:>10.1e}",
            taus[k],
            f[k].re,
            f[k].im,
            (f[k] - o[k]).norm(),
            (q[k] - o[k]).norm()
        );
    }
    Ok(())
}
