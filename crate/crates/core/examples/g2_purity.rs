//! Pulse-train `g2[0]` against the pulse area, with the factorized trajectory
//! engine; purity degrades towards even multiples of pi.

use std::f64::consts::PI;
use std::sync::Arc;

use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, PulseShape, TlsBosonParams};
use nmcorr::observables::{g2_map, pulse_on_grid, Engine, G2Request};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.gamma = 0.1;
    p.detuning = -p.polaron_shift();
    let model = Arc::new(build_tls_boson_model(&p)?);
    let ctx = FactorizationContext::build(model.clone(), MapOptions::new(0.1, 60.0))?;
    for area in [1.0, 1.5, 2.0, 2.2, 3.0] {
        let pulse = Arc::new(pulse_on_grid(&model, &PulseShape::gaussian(2.0, area * PI), ctx.dt())?);
        let r = g2_map(&ctx, &G2Request { period: 100.0, pulse }, Engine::Factorized, false)?;
        println!("area {area:.1} pi: g2[0] = {:.4}", r.g2_zero);
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
