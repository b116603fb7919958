//! Long-time dynamical maps from `E^S` and the short-time map, against
//! direct propagation of the composite system.

use std::sync::Arc;

use nmcorr::linalg;
use nmcorr::maps::{propagate_map, FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, TlsBosonParams};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.rabi = 0.05;
    p.gamma = 0.05;
    let model = Arc::new(build_tls_boson_model(&p)?);
    let ctx = FactorizationContext::build(model.clone(), MapOptions::new(0.1, 150.0))?;
    let tc = ctx.tau_c();
    println!("tau_c = {tc:.1} ps");
    for k in [1.0, 2.0, 5.0, 10.0, 20.0] {
        let t = k * tc;
        let ext = ctx.extrapolate(t)?;
        let exact = propagate_map(&model, 0.0, t)?;
        println!(
            "t = {k:>4} tau_c: |extrapolated - exact|_F = {:.2e}",
            linalg::frobenius(&(ext.matrix() - exact.matrix()))
        );
    }
    let sp = ctx.spectral();
    println!("stationary rates (1/ps):");
    for z in sp.rates() {
        println!("  {:+.5} {:+.5}i", z.re, z.im);
    }
    Ok(())
}
