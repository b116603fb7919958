//! Column-stacking vectorization, sandwich superoperators and the partial
//! trace over the environment.

use nmcorr::linalg::{self, c};
use nmcorr::liouville::{self, partial_trace_env, vectorize, LiouvilleVector, Space, SuperOperator};
use nmcorr::models::{sigma_minus, sigma_plus};

fn main() -> nmcorr::Result<()> {
    let mut rho = linalg::identity(2) * c(0.5);
    rho[[0, 1]] = c(0.2);
    rho[[1, 0]] = c(0.2);
    let v = vectorize(&rho)?;
    println!("vec(rho) = {:?}", v.data().iter().map(|z| z.re).collect::<Vec<_>>());

    // A rho B^dag as a matrix on vec(rho)
    let s = liouville::sandwich_superop(&sigma_minus(), &sigma_minus())?;
    let direct = sigma_minus().dot(&rho).dot(&sigma_plus());
    let via = liouville::devectorize(&s.apply(&v)?);
    println!("sandwich residual {:.1e}", linalg::max_abs(&(direct - via)));

    // environment traced out of a product state
    let env = linalg::identity(3) * c(1.0 / 3.0);
    let product = LiouvilleVector::new(
        vectorize(&linalg::kron(&rho, &env))?.data().clone(),
        Space::composite(2, 3),
    )?;
    let reduced = liouville::devectorize(&partial_trace_env(&product)?);
    println!("partial trace residual {:.1e}", linalg::max_abs(&(reduced - &rho)));

    let id = SuperOperator::identity(v.space());
    println!("trace after identity map {:.3}", id.apply(&v)?.trace().re);
    Ok(())
}
