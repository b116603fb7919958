//! Persist the short-time and stationary maps and reload them without a new
//! memory-time scan.

use std::sync::Arc;
use std::time::Instant;

use nmcorr::linalg;
use nmcorr::maps::{FactorizationContext, MapOptions};
use nmcorr::models::{build_tls_boson_model, TlsBosonParams};

fn main() -> nmcorr::Result<()> {
    let mut p = TlsBosonParams::reference_strong();
    p.rabi = 0.05;
    let model = Arc::new(build_tls_boson_model(&p)?);
    let options = MapOptions::new(0.1, 60.0);
    let dir = std::env::temp_dir().join("nmcorr-map-cache-example");

    let t = Instant::now();
    let built = FactorizationContext::build(model.clone(), options)?;
    let path = built.save(&dir)?;
    println!("built in {:?}, saved to {}", t.elapsed(), path.display());

    let t = Instant::now();
    let loaded = FactorizationContext::load(&dir, model, options)?.expect("cache entry just written");
    println!("loaded in {:?}", t.elapsed());
    let diff = linalg::frobenius(&(built.stationary().matrix() - loaded.stationary().matrix()));
    println!(
        "tau_c {} vs {}, stationary map difference {diff:.1e}",
        built.tau_c(),
        loaded.tau_c()
    );
    Ok(())
}
