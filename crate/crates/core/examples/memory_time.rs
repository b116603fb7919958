//! Memory-time scan: adjacent time-local maps on the grid and the first time
//! after which they stay below the stationarity threshold.

use nmcorr::maps::estimate_memory_time;
use nmcorr::models::{build_tls_boson_model, build_tls_lindblad_model, TlsBosonParams};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.rabi = 0.05;
    p.detuning = 0.245;
    p.gamma = 0.05;

    let lindblad = build_tls_lindblad_model(&p)?;
    let e = estimate_memory_time(&lindblad, 0.1, 1e-12, 5.0)?;
    println!("pure Lindblad: tau_c = {} ps ({} step)", e.tau_c, e.steps);

    for coupling in [0.3, 0.5, 0.7] {
        p.modes[0].coupling = coupling;
        p.detuning = coupling * coupling / p.modes[0].energy;
        let model = build_tls_boson_model(&p)?;
        let e = estimate_memory_time(&model, 0.1, 1e-12, 150.0)?;
        println!(
            "g = {coupling} meV: tau_c = {:.1} ps, converged {}, max basis condition {:.2}",
            e.tau_c, e.converged, e.max_condition
        );
    }
    Ok(())
}
