//! Weak cw resonance fluorescence with a phonon sideband: exact engines put
//! it on the low-energy side, the regression theorem on the high-energy side.

use std::sync::Arc;

use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, TlsBosonParams};
use nmcorr::observables::{cw_spectrum_factorized, cw_spectrum_oracle, cw_spectrum_qrt, uniform_grid};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.rabi = 0.001;
    p.detuning = -p.polaron_shift();
    let model = Arc::new(build_tls_boson_model(&p)?);
    let ctx = FactorizationContext::build(model.clone(), MapOptions::new(0.1, 60.0))?;
    let omegas = uniform_grid(-5.0, 5.0, 400);
    let linewidth = 0.0152;
    let f = cw_spectrum_factorized(&ctx, &omegas, linewidth)?;
    let o = cw_spectrum_oracle(&model, &omegas, linewidth, ctx.dt(), 100.0 * ctx.tau_c())?;
    let q = cw_spectrum_qrt(&ctx, &omegas, linewidth)?;
    let peak = o.iter().cloned().fold(0.0, f64::max);
    let dev = f.iter().zip(&o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |factorized - oracle| / peak = {:.1e}", dev / peak);

    // sideband near the mode energy on either side of the zero-phonon line
    let side = |s: &[f64], sign: f64| {
        omegas
            .iter()
            .zip(s)
            .filter(|(w, _)| sign * **w > 1.5 && sign * **w < 4.5)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    };
    println!("exact: red/blue sideband ratio {:.1}", side(&f, -1.0) / side(&f, 1.0));
    println!("QRT:   red/blue sideband ratio {:.3}", side(&q, -1.0) / side(&q, 1.0));
    Ok(())
}
