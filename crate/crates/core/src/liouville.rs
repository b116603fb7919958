//! Liouville-space algebra.
//!
//! Conventions used everywhere in the crate:
//!
//! * Vectorization is column-major: the matrix element `rho[i, j]` of a
//!   `D x D` operator lives at index `k = i + D * j`.
//! * Composite Hilbert spaces order the system index slowest:
//!   `|s, e>` has index `s * D_E + e`, so composite operators are
//!   `kron(system_op, env_op)`.
//! * Under these conventions `vec(A rho B) = (B^T (x) A) vec(rho)`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{self, dagger, kron, CMatrix, CVector, C64, I, ONE, ZERO};
use crate::tolerances;

/// Which Hilbert space a Liouville-space object lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Space {
    System { dim: usize },
    Composite { system: usize, environment: usize },
}

impl Space {
    pub fn system(dim: usize) -> Self {
        Space::System { dim }
    }

    pub fn composite(system: usize, environment: usize) -> Self {
        Space::Composite { system, environment }
    }

    pub fn hilbert_dim(&self) -> usize {
        match *self {
            Space::System { dim } => dim,
            Space::Composite { system, environment } => system * environment,
        }
    }

    pub fn liouville_dim(&self) -> usize {
        let n = self.hilbert_dim();
        n * n
    }
}

/// The ordered basis `{|i><j|}` of `D x D` matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorBasis {
    dim: usize,
}

impl OperatorBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("operator basis needs D >= 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `|i><j|`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.dim * j
    }

    /// `(i, j)` such that element `k` is `|i><j|`.
    pub fn pair(&self, k: usize) -> (usize, usize) {
        (k % self.dim, k / self.dim)
    }

    pub fn element(&self, k: usize) -> CMatrix {
        let (i, j) = self.pair(k);
        let mut m = Array2::zeros((self.dim, self.dim));
        m[[i, j]] = ONE;
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = CMatrix> + '_ {
        (0..self.len()).map(|k| self.element(k))
    }
}

/// A vectorized operator.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvilleVector {
    data: CVector,
    space: Space,
}

impl LiouvilleVector {
    pub fn new(data: CVector, space: Space) -> Result<Self> {
        if data.len() != space.liouville_dim() {
            return Err(Error::Dimension {
                context: "LiouvilleVector::new",
                expected: space.liouville_dim(),
                found: data.len(),
            });
        }
        Ok(Self { data, space })
    }

    pub fn data(&self) -> &CVector {
        &self.data
    }

    pub fn into_data(self) -> CVector {
        self.data
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Value of the trace functional.
    pub fn trace(&self) -> C64 {
        trace_of(&self.data, self.space.hilbert_dim())
    }
}

/// A linear map on Liouville space.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOperator {
    matrix: CMatrix,
    space: Space,
}

impl SuperOperator {
    pub fn new(matrix: CMatrix, space: Space) -> Result<Self> {
        let n = space.liouville_dim();
        if matrix.dim() != (n, n) {
            return Err(Error::Dimension {
                context: "SuperOperator::new",
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { matrix, space })
    }

    pub fn identity(space: Space) -> Self {
        Self {
            matrix: linalg::identity(space.liouville_dim()),
            space,
        }
    }

    pub fn zero(space: Space) -> Self {
        let n = space.liouville_dim();
        Self {
            matrix: Array2::zeros((n, n)),
            space,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// `self . other`: apply `other` first.
    pub fn compose(&self, other: &SuperOperator) -> Result<SuperOperator> {
        self.check_space(other.space, "SuperOperator::compose")?;
        Ok(Self {
            matrix: self.matrix.dot(&other.matrix),
            space: self.space,
        })
    }

    pub fn apply(&self, v: &LiouvilleVector) -> Result<LiouvilleVector> {
        self.check_space(v.space, "SuperOperator::apply")?;
        Ok(LiouvilleVector {
            data: self.matrix.dot(&v.data),
            space: self.space,
        })
    }

    pub fn exp(&self, t: f64) -> SuperOperator {
        Self {
            matrix: linalg::expm(&(&self.matrix * C64::new(t, 0.0))),
            space: self.space,
        }
    }

    /// Sandwich `rho -> A rho B^dagger` on the given space.
    pub fn sandwich(space: Space, a: &CMatrix, b: &CMatrix) -> Result<Self> {
        let n = space.hilbert_dim();
        for m in [a, b] {
            if m.dim() != (n, n) {
                return Err(Error::Dimension {
                    context: "sandwich_superop",
                    expected: n,
                    found: m.nrows().max(m.ncols()),
                });
            }
        }
        Ok(Self {
            matrix: kron(&b.mapv(|x| x.conj()), a),
            space,
        })
    }

    fn check_space(&self, other: Space, context: &'static str) -> Result<()> {
        if self.space != other {
            return Err(Error::Dimension {
                context,
                expected: self.space.liouville_dim(),
                found: other.liouville_dim(),
            });
        }
        Ok(())
    }
}

/// Column-major vectorization of a square matrix.
pub fn vectorize(op: &CMatrix) -> Result<LiouvilleVector> {
    if !op.is_square() {
        return Err(Error::Dimension {
            context: "vectorize",
            expected: op.nrows(),
            found: op.ncols(),
        });
    }
    let d = op.nrows();
    Ok(LiouvilleVector {
        data: vec_raw(op),
        space: Space::system(d),
    })
}

pub(crate) fn vec_raw(op: &CMatrix) -> CVector {
    let d = op.nrows();
    Array1::from_shape_fn(d * op.ncols(), |k| op[[k % d, k / d]])
}

pub(crate) fn unvec_raw(v: &CVector, d: usize) -> CMatrix {
    Array2::from_shape_fn((d, d), |(i, j)| v[i + d * j])
}

pub fn devectorize(v: &LiouvilleVector) -> CMatrix {
    unvec_raw(&v.data, v.space.hilbert_dim())
}

/// `rho -> A rho B^dagger` on the system space of A's dimension.
pub fn sandwich_superop(a: &CMatrix, b: &CMatrix) -> Result<SuperOperator> {
    SuperOperator::sandwich(Space::system(a.nrows()), a, b)
}

/// GKSL generator in units where `H` is an energy in meV and rates are in 1/ps.
///
/// `L = -i/hbar [H, .] + sum_k gamma_k (L_k . L_k^dag - 1/2 {L_k^dag L_k, .})`
pub fn liouvillian(h: &CMatrix, lindblad_terms: &[(f64, CMatrix)]) -> Result<SuperOperator> {
    liouvillian_on(Space::system(h.nrows()), h, lindblad_terms)
}

pub(crate) fn liouvillian_on(space: Space, h: &CMatrix, lindblad_terms: &[(f64, CMatrix)]) -> Result<SuperOperator> {
    let n = space.hilbert_dim();
    if h.dim() != (n, n) {
        return Err(Error::Dimension {
            context: "liouvillian",
            expected: n,
            found: h.nrows().max(h.ncols()),
        });
    }
    if !linalg::is_hermitian(h, tolerances::HERMITICITY) {
        return Err(Error::Validation(format!(
            "Hamiltonian is not Hermitian (max deviation {:.3e})",
            linalg::max_abs(&(h - &dagger(h)))
        )));
    }
    let eye = linalg::identity(n);
    let coef = -I / crate::HBAR;
    let mut l = (kron(&eye, h) - kron(&h.t().to_owned(), &eye)) * coef;
    for (rate, op) in lindblad_terms {
        if !(*rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Validation(format!(
                "Lindblad rate must be finite and nonnegative, got {rate}"
            )));
        }
        if op.dim() != (n, n) {
            return Err(Error::Dimension {
                context: "liouvillian (Lindblad operator)",
                expected: n,
                found: op.nrows().max(op.ncols()),
            });
        }
        if *rate == 0.0 {
            continue;
        }
        let op_dag_op = dagger(op).dot(op);
        let jump = kron(&op.mapv(|x| x.conj()), op);
        let anti = kron(&eye, &op_dag_op) + kron(&op_dag_op.t().to_owned(), &eye);
        l = l + (jump - anti * C64::new(0.5, 0.0)) * C64::new(*rate, 0.0);
    }
    SuperOperator::new(l, space)
}

/// `kron(sys_op, env_op)` with the system index slowest.
pub fn embed_composite(sys_op: &CMatrix, env_op: &CMatrix) -> CMatrix {
    kron(sys_op, env_op)
}

/// Trace out the environment of a composite Liouville vector.
pub fn partial_trace_env(v: &LiouvilleVector) -> Result<LiouvilleVector> {
    match v.space {
        Space::Composite { system, environment } => Ok(LiouvilleVector {
            data: partial_trace_raw(&v.data, system, environment),
            space: Space::system(system),
        }),
        Space::System { .. } => Err(Error::Validation(
            "partial_trace_env needs a composite-space vector".into(),
        )),
    }
}

pub(crate) fn partial_trace_raw(v: &CVector, d: usize, de: usize) -> CVector {
    let n = d * de;
    Array1::from_shape_fn(d * d, |k| {
        let (i, j) = (k % d, k / d);
        (0..de)
            .map(|e| v[(i * de + e) + n * (j * de + e)])
            .fold(ZERO, |acc, x| acc + x)
    })
}

/// Matrix of the partial trace, `D^2 x (D D_E)^2`.
pub fn partial_trace_matrix(d: usize, de: usize) -> CMatrix {
    let n = d * de;
    let mut t = Array2::zeros((d * d, n * n));
    for j in 0..d {
        for i in 0..d {
            for e in 0..de {
                t[[i + d * j, (i * de + e) + n * (j * de + e)]] = ONE;
            }
        }
    }
    t
}

/// Matrix of `rho_S -> rho_S (x) rho_E`, `(D D_E)^2 x D^2`.
pub fn product_embedding_matrix(d: usize, env_state: &CMatrix) -> CMatrix {
    let de = env_state.nrows();
    let n = d * de;
    let mut m = Array2::zeros((n * n, d * d));
    for j in 0..d {
        for i in 0..d {
            for f in 0..de {
                for e in 0..de {
                    m[[(i * de + e) + n * (j * de + f), i + d * j]] = env_state[[e, f]];
                }
            }
        }
    }
    m
}

/// Lift a system superoperator `S` to `S (x) id_E` on the composite space.
pub fn lift_to_composite(s: &SuperOperator, environment: usize) -> Result<SuperOperator> {
    let d = match s.space {
        Space::System { dim } => dim,
        Space::Composite { .. } => {
            return Err(Error::Validation(
                "lift_to_composite expects a system superoperator".into(),
            ))
        }
    };
    let de = environment;
    let n = d * de;
    let mut out = Array2::zeros((n * n, n * n));
    let sm = &s.matrix;
    for col in 0..d * d {
        let (k, l) = (col % d, col / d);
        for row in 0..d * d {
            let val = sm[[row, col]];
            if val == ZERO {
                continue;
            }
            let (i, j) = (row % d, row / d);
            for f in 0..de {
                for e in 0..de {
                    out[[(i * de + e) + n * (j * de + f), (k * de + e) + n * (l * de + f)]] = val;
                }
            }
        }
    }
    SuperOperator::new(out, Space::composite(d, de))
}

/// `vec(1)`, the trace functional as a vector: `Tr rho = <1|vec(rho)>`.
pub fn trace_functional(dim: usize) -> CVector {
    vec_raw(&linalg::identity(dim))
}

pub(crate) fn trace_of(v: &CVector, dim: usize) -> C64 {
    (0..dim).map(|i| v[i + dim * i]).fold(ZERO, |a, x| a + x)
}

/// Row vector `w` with `w . vec(rho) = Tr(op rho)`.
pub fn expectation_functional(op: &CMatrix) -> CVector {
    vec_raw(&op.t().to_owned())
}

/// `Tr(op rho)` for a vectorized `rho`.
pub fn expectation(op: &CMatrix, v: &LiouvilleVector) -> C64 {
    expectation_functional(op).dot(&v.data)
}

/// Liouville scalar product `<a|b> = Tr(a^dag b)`.
pub fn scalar_product(a: &LiouvilleVector, b: &LiouvilleVector) -> Result<C64> {
    if a.space != b.space {
        return Err(Error::Dimension {
            context: "scalar_product",
            expected: a.space.liouville_dim(),
            found: b.space.liouville_dim(),
        });
    }
    Ok(a.data
        .iter()
        .zip(b.data.iter())
        .fold(ZERO, |acc, (x, y)| acc + x.conj() * y))
}

/// `|| <1| L ||`, the residual of trace preservation.
pub fn trace_residual(l: &SuperOperator) -> f64 {
    let tf = trace_functional(l.space.hilbert_dim());
    let row = tf.dot(&l.matrix);
    row.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
