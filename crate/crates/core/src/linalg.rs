//! Dense complex linear algebra helpers.
//!
//! Matrix exponential via scaling-and-squaring with Padé approximants
//! (Higham 2005), Kronecker products, conditioned inverses and the general
//! eigendecomposition used for biorthogonal spectral data.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{Eig, Inverse, Norm, Solve};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;
pub type CVector = Array1<C64>;

pub const I: C64 = C64::new(0.0, 1.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMatrix {
    Array2::eye(n)
}

/// Conjugate transpose.
pub fn dagger(a: &CMatrix) -> CMatrix {
    a.t().mapv(|x| x.conj())
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.norm()))
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm_one(a: &ArrayView2<C64>) -> f64 {
    a.axis_iter(Axis(1))
        .map(|col| col.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && max_abs(&(a - &dagger(a))) <= tol
}

/// Inverse together with its 1-norm condition number.
pub fn inverse_with_condition(a: &CMatrix) -> Result<(CMatrix, f64)> {
    let inv = a.inv().map_err(|_| Error::IllConditioned {
        context: "matrix inverse",
        cond: f64::INFINITY,
    })?;
    let cond = norm_one(&a.view()) * norm_one(&inv.view());
    if !cond.is_finite() {
        return Err(Error::IllConditioned {
            context: "matrix inverse",
            cond,
        });
    }
    Ok((inv, cond))
}

/// Right eigenvectors (columns) and their biorthogonal dual rows.
pub struct EigenDecomposition {
    pub values: CVector,
    pub right: CMatrix,
    /// Row `k` is the dual vector with `dual.row(k) . right.column(l) = delta_kl`.
    pub dual: CMatrix,
    pub condition: f64,
}

pub fn eigen(a: &CMatrix) -> Result<EigenDecomposition> {
    let (values, right) = a.eig()?;
    let (dual, condition) = inverse_with_condition(&right)?;
    Ok(EigenDecomposition {
        values,
        right,
        dual,
        condition,
    })
}

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.53939833006323e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
    }
}

/// exp(A) for a square complex matrix.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    if n == 0 {
        return Array2::zeros((0, 0));
    }
    let eye = identity(n);
    let norm = norm_one(&a.view());
    if norm == 0.0 {
        return eye;
    }

    for &(m, theta) in &THETA {
        if norm <= theta {
            let b = pade_coefficients(m);
            let a2 = a.dot(a);
            let mut powers = vec![eye.clone(), a2.clone()];
            while powers.len() <= m / 2 {
                let next = powers.last().unwrap().dot(&a2);
                powers.push(next);
            }
            let mut u = Array2::zeros((n, n));
            let mut v = Array2::zeros((n, n));
            for (k, p) in powers.iter().enumerate() {
                u.scaled_add(c(b[2 * k + 1]), p);
                v.scaled_add(c(b[2 * k]), p);
            }
            let u = a.dot(&u);
            return pade_solve(&u, &v);
        }
    }

    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = a * c(2f64.powi(-s));
    let b = pade_coefficients(13);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);

    let mut inner_u = &a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]);
    inner_u = a6.dot(&inner_u);
    inner_u = inner_u + &a6 * c(b[7]) + &a4 * c(b[5]) + &a2 * c(b[3]) + &eye * c(b[1]);
    let u = scaled.dot(&inner_u);

    let mut v = &a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]);
    v = a6.dot(&v);
    v = v + &a6 * c(b[6]) + &a4 * c(b[4]) + &a2 * c(b[2]) + &eye * c(b[0]);

    let mut r = pade_solve(&u, &v);
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

fn pade_solve(u: &CMatrix, v: &CMatrix) -> CMatrix {
    let p = v + u;
    let q = v - u;
    let n = u.nrows();
    let mut out = Array2::zeros((n, n));
    let lu = ndarray_linalg::FactorizeInto::factorize_into(q).expect("Pade denominator is singular");
    for (j, col) in p.axis_iter(Axis(1)).enumerate() {
        let x = ndarray_linalg::Solve::solve(&lu, &col.to_owned()).expect("Pade solve failed");
        out.column_mut(j).assign(&x);
    }
    out
}

/// Solve A X = B for X.
pub fn solve_matrix(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let lu = ndarray_linalg::FactorizeInto::factorize_into(a.clone())?;
    let mut out = Array2::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let x = lu.solve(&col.to_owned())?;
        out.column_mut(j).assign(&x);
    }
    Ok(out)
}

/// Orthonormal basis of the column span (thin QR).
pub fn orthonormal_columns(a: &CMatrix) -> Result<CMatrix> {
    Ok(thin_qr(a)?.0)
}

/// `a = q r` with orthonormal columns in `q`.
pub fn thin_qr(a: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    Ok(ndarray_linalg::QRInto::qr_into(a.clone())?)
}

pub fn vector_norm(v: &CVector) -> f64 {
    v.norm_l2()
}
