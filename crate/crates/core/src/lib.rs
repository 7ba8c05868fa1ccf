//! Forward and inverse spectral problems for the matrix Sturm–Liouville
//! operator `−Y″ + Q(x)Y = λY` on the half-line with boundary form
//! `Y′(0) − hY(0)`.
//!
//! Forward: Jost solutions, the characteristic matrix `u(ρ)`, the Weyl matrix
//! `M(λ)`, eigenvalues, residues and the continuous spectral density.
//! Inverse: reconstruction of `(Q, h)` from a finite pole perturbation of a
//! model Weyl matrix, and from self-adjoint spectral data by a Nyström
//! discretization of the main equation.

pub mod error;
pub mod finite;
pub mod forward;
pub mod io;
pub mod kernel;
pub mod mainsys;
pub mod matrix;
pub mod model;
pub mod ode;
pub mod quadrature;
pub mod selfadjoint;
pub mod special;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use matrix::{SquareMatrix, C64};
pub use model::{lambda_to_rho, Problem, PotentialSpec, Settings, Side, SpectralPoint};

use rayon::prelude::*;

/// Order-preserving parallel map. `threads == 1` runs inline; `0` uses the
/// global pool.
pub(crate) fn par_map<T: Sync, R: Send>(threads: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    match threads {
        1 => items.iter().map(f).collect(),
        0 => items.par_iter().map(f).collect(),
        n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
    }
}
