//! Time-integrated spectrum after a pi pulse, resolved into the four
//! integration regions, and its independence of the internal boundary.

use std::f64::consts::PI;
use std::sync::Arc;

use nmcorr::linalg::{CMatrix, ONE};
use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, PulseShape, TlsBosonParams};
use nmcorr::observables::{pulse_on_grid, pulsed_integrated_spectrum, uniform_grid};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.gamma = 0.1;
    p.detuning = -p.polaron_shift();
    let model = Arc::new(build_tls_boson_model(&p)?);
    let ctx = FactorizationContext::build(model.clone(), MapOptions::new(0.1, 60.0))?;
    let pulse = pulse_on_grid(&model, &PulseShape::gaussian(0.5, PI), ctx.dt())?;
    let mut ground = CMatrix::zeros((2, 2));
    ground[[0, 0]] = ONE;
    let omegas = uniform_grid(-6.0, 6.0, 13);
    let tc = ctx.tau_c();
    let a = pulsed_integrated_spectrum(&ctx, &pulse, &ground, &omegas, 0.0, tc)?;
    let b = pulsed_integrated_spectrum(&ctx, &pulse, &ground, &omegas, 0.0, (15.0 * tc).round() / 10.0)?;
    println!(
        "{:>6} {:>11} {:>11} {:>11} {:>11} {:>11} {:>9}",
        "omega", "A", "B", "C", "D", "total", "shift"
    );
    for (k, omega) in omegas.iter().enumerate() {
        println!(
            "{:>6.1} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>9.1e}",
            omega,
            a.region_a[k],
            a.region_b[k],
            a.region_c[k],
            a.region_d[k],
            a.total[k],
            (a.total[k] - b.total[k]).abs()
        );
    }
    Ok(())
}
