//! Small dense complex square matrices.
//!
//! `SquareMatrix` is the value type for potentials, boundary coefficients,
//! Weyl matrices and residues. The dimension `m` is small (typically 1..4),
//! so the heavy lifting in the ODE right-hand sides is done on flat row-major
//! slices through the `flat` helpers at the bottom of this file.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default tolerance used by [`SquareMatrix::is_hermitian`].
pub const TOL_HERM: f64 = 1e-10;

#[derive(Clone, PartialEq)]
pub struct SquareMatrix(DMatrix<C64>);

impl SquareMatrix {
    /// Builds a matrix from row-major entries. Rejects NaN/Inf.
    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("matrix dimension must be positive".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        Ok(Self(DMatrix::from_row_slice(dim, dim, entries)))
    }

    /// Row-major constructor for real matrices.
    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Self> {
        let c: Vec<C64> = entries.iter().map(|&r| C64::new(r, 0.0)).collect();
        Self::from_row_major(dim, &c)
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(dim, dim, f))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn scalar(dim: usize, value: C64) -> Self {
        Self(DMatrix::from_diagonal_element(dim, dim, value))
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let n = values.len();
        Self::from_fn(n, |i, j| if i == j { values[i] } else { C64::new(0.0, 0.0) })
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.0[(row, col)] = value;
    }

    pub fn inner(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn from_inner(m: DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "SquareMatrix must be square");
        Self(m)
    }

    pub fn to_row_major(&self) -> Vec<C64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    /// Reads `dim*dim` row-major entries without validation (internal use).
    pub(crate) fn from_flat(dim: usize, flat: &[C64]) -> Self {
        Self(DMatrix::from_row_slice(dim, dim, &flat[..dim * dim]))
    }

    pub(crate) fn write_flat(&self, out: &mut [C64]) {
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.0[(i, j)];
            }
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self(&self.0 * C64::new(s, 0.0))
    }

    /// Induced max-row-sum norm, `‖A‖ = max_j Σ_k |a_jk|`.
    pub fn norm(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.0[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest deviation from Hermitian symmetry, `max |A_jk - conj(A_kj)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    pub fn hermitian(&self) -> bool {
        self.is_hermitian(TOL_HERM)
    }

    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn determinant(&self) -> C64 {
        self.0.determinant()
    }

    pub fn try_inverse(&self) -> Option<Self> {
        self.0.clone().try_inverse().map(Self)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.max_abs() == 0.0 {
            return vec![0.0; self.dim()];
        }
        let mut s: Vec<f64> = self.0.clone().svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    pub fn min_singular_value(&self) -> f64 {
        *self.singular_values().last().unwrap_or(&0.0)
    }

    /// 2-norm condition number; infinite for singular matrices.
    pub fn condition(&self) -> f64 {
        let s = self.singular_values();
        let smin = *s.last().unwrap_or(&0.0);
        if smin == 0.0 {
            f64::INFINITY
        } else {
            s[0] / smin
        }
    }

    /// Number of singular values above `rel_tol * σ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s = self.singular_values();
        let smax = s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        s.iter().filter(|&&v| v > rel_tol * smax).count()
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = self.hermitian_part();
        let eig = nalgebra::SymmetricEigen::new(h.0);
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Inverse guarded by a condition-number bound.
    pub fn inverse_checked(&self, cond_max: f64) -> Result<Self> {
        let cond = self.condition();
        if !(cond <= cond_max) {
            return Err(Error::NearSingular { condition: cond });
        }
        self.try_inverse().ok_or(Error::NearSingular { condition: f64::INFINITY })
    }

    pub fn dist(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.dim();
        write!(f, "[")?;
        for i in 0..n {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..n {
                if j > 0 {
                    write!(f, ", ")?;
                }
                let z = self.0[(i, j)];
                write!(f, "{:.6e}{:+.6e}i", z.re, z.im)?;
            }
        }
        write!(f, "]")
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&SquareMatrix> for &SquareMatrix {
            type Output = SquareMatrix;
            fn $method(self, rhs: &SquareMatrix) -> SquareMatrix {
                SquareMatrix(&self.0 $op &rhs.0)
            }
        }
        impl $trait<SquareMatrix> for SquareMatrix {
            type Output = SquareMatrix;
            fn $method(self, rhs: SquareMatrix) -> SquareMatrix {
                SquareMatrix(self.0 $op rhs.0)
            }
        }
        impl $trait<&SquareMatrix> for SquareMatrix {
            type Output = SquareMatrix;
            fn $method(self, rhs: &SquareMatrix) -> SquareMatrix {
                SquareMatrix(self.0 $op &rhs.0)
            }
        }
        impl $trait<SquareMatrix> for &SquareMatrix {
            type Output = SquareMatrix;
            fn $method(self, rhs: SquareMatrix) -> SquareMatrix {
                SquareMatrix(&self.0 $op rhs.0)
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl AddAssign<&SquareMatrix> for SquareMatrix {
    fn add_assign(&mut self, rhs: &SquareMatrix) {
        self.0 += &rhs.0;
    }
}

impl SubAssign<&SquareMatrix> for SquareMatrix {
    fn sub_assign(&mut self, rhs: &SquareMatrix) {
        self.0 -= &rhs.0;
    }
}

impl Neg for SquareMatrix {
    type Output = SquareMatrix;
    fn neg(self) -> SquareMatrix {
        SquareMatrix(-self.0)
    }
}

impl Neg for &SquareMatrix {
    type Output = SquareMatrix;
    fn neg(self) -> SquareMatrix {
        SquareMatrix(-&self.0)
    }
}

/// Serialized as a flat row-major list of `[re, im]` pairs.
impl Serialize for SquareMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.to_row_major().iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SquareMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(deserializer)?;
        let dim = (pairs.len() as f64).sqrt().round() as usize;
        if dim * dim != pairs.len() {
            return Err(D::Error::custom(format!(
                "matrix entry count {} is not a perfect square",
                pairs.len()
            )));
        }
        let entries: Vec<C64> = pairs.iter().map(|p| C64::new(p[0], p[1])).collect();
        SquareMatrix::from_row_major(dim, &entries).map_err(D::Error::custom)
    }
}

/// Row-major flat-slice kernels used inside ODE right-hand sides.
pub(crate) mod flat {
    use super::C64;

    /// `out = a * b`
    #[inline]
    pub fn mul(m: usize, a: &[C64], b: &[C64], out: &mut [C64]) {
        for i in 0..m {
            for j in 0..m {
                let mut s = C64::new(0.0, 0.0);
                for k in 0..m {
                    s += a[i * m + k] * b[k * m + j];
                }
                out[i * m + j] = s;
            }
        }
    }
}
