//! Linear main equation of the method of spectral mappings for a finite set
//! of "atoms" (a point λ with a principal part `Σ_ν α_ν/(μ − λ)^ν`).
//!
//! At each `x` the unknown row of blocks `Y = [∂^s φ(x, λ_n)]` satisfies
//! `Y 𝔄(x) = Φ̃(x)` with `𝔄 = I + C(x)` built from the kernel blocks. Both the
//! pole-only solver and the Nyström discretization of the continuous problem
//! reduce to this form.

use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};
use crate::finite::MainSystem;
use crate::forward::MAX_ORDER;
use crate::kernel::{ChainSpec, KernelSystem};
use crate::matrix::{flat, SquareMatrix, C64};
use crate::model::{Problem, Settings};
use crate::ode::Integrator;

/// A point `λ` with principal-part coefficients `terms[ν − 1] = α_ν`.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub lambda: C64,
    pub terms: Vec<SquareMatrix>,
}

impl Atom {
    pub fn simple(lambda: C64, alpha: SquareMatrix) -> Self {
        Self { lambda, terms: vec![alpha] }
    }

    pub fn multiplicity(&self) -> usize {
        self.terms.len()
    }
}

/// Solution of the main equation at one `x`.
#[derive(Clone, Debug)]
pub struct MainNode {
    pub x: f64,
    /// Solved blocks `∂^s φ(x, λ_n)` in atom order; empty unless requested.
    pub blocks: Vec<SquareMatrix>,
    pub eps0: SquareMatrix,
    pub eps0_dx: SquareMatrix,
    /// 1-norm condition estimate of `𝔄(x)`.
    pub condition: f64,
    pub log_abs_det: f64,
    pub det_phase: f64,
    /// `max |Y𝔄 − Φ̃| / max(1, max |Φ̃|)`.
    pub residual: f64,
}

const FACT: [f64; MAX_ORDER + 2] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0];

pub(crate) struct MainEngine<'a> {
    atoms: Vec<Atom>,
    sys: KernelSystem<'a>,
    /// `(atom, order)` per unknown block.
    blocks: Vec<(usize, usize)>,
    flat_terms: Vec<Vec<Vec<C64>>>,
    breakpoints: Vec<f64>,
    settings: &'a Settings,
}

impl<'a> MainEngine<'a> {
    pub fn new(model: &'a Problem, atoms: Vec<Atom>, settings: &'a Settings) -> Result<Self> {
        let m = model.m();
        for a in &atoms {
            if a.terms.is_empty() {
                return Err(Error::InvalidInput("atom without terms".into()));
            }
            if a.multiplicity() > MAX_ORDER + 1 {
                return Err(Error::MaxOrder { requested: a.multiplicity() - 1, max: MAX_ORDER });
            }
            if a.terms.iter().any(|t| t.dim() != m) {
                return Err(Error::InvalidInput(format!("residue dimension must be {m}")));
            }
        }
        let chains: Vec<ChainSpec> =
            atoms.iter().map(|a| ChainSpec { lambda: a.lambda, order: a.multiplicity() - 1 }).collect();
        let sys = KernelSystem::new(model, chains.clone(), chains, settings.threads)?;
        let blocks = atoms.iter().enumerate().flat_map(|(k, a)| (0..a.multiplicity()).map(move |s| (k, s))).collect();
        let flat_terms = atoms.iter().map(|a| a.terms.iter().map(flat_of).collect()).collect();
        Ok(Self { atoms, sys, blocks, flat_terms, breakpoints: model.breakpoints(), settings })
    }

    fn m(&self) -> usize {
        self.sys.m()
    }

    pub fn system(&self) -> &KernelSystem<'a> {
        &self.sys
    }

    pub fn initial_state(&self) -> Vec<C64> {
        self.sys.initial_state()
    }

    /// The assembled system at the ODE state `y`, with diagnostics.
    pub fn main_system(&self, x: f64, y: &[C64]) -> MainSystem {
        let a = self.assemble(y);
        let lu = a.partial_piv_lu();
        let (log_abs_det, _) = lu_determinant(&lu);
        let condition = if a.nrows() == 0 {
            1.0
        } else if log_abs_det == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            condition_1(&a, &lu)
        };
        MainSystem {
            x,
            blocks: self.blocks.len(),
            matrix: (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect(),
            rhs: self.blocks.iter().map(|&(n, s)| SquareMatrix::from_flat(self.m(), self.sys.row(y, n, s))).collect(),
            condition,
            log_abs_det,
        }
    }

    fn size(&self) -> usize {
        self.blocks.len() * self.m()
    }

    /// `𝔄(x)`: block `(q, p)` is `δ_qp I + Σ_ν α_kν D̃⟨s, ν−1−i⟩(λ_n, λ_k)/(i!(ν−1−i)!)`
    /// for unknown `q = (k, i)` and equation `p = (n, s)`.
    fn assemble(&self, y: &[C64]) -> Mat<C64> {
        let m = self.m();
        let mm = m * m;
        let n = self.size();
        let mut a = Mat::<C64>::zeros(n, n);
        let mut acc = vec![C64::default(); mm];
        let mut tmp = vec![C64::default(); mm];
        for (q, &(k, i)) in self.blocks.iter().enumerate() {
            let atom = &self.atoms[k];
            for (p, &(nn, s)) in self.blocks.iter().enumerate() {
                acc.iter_mut().for_each(|v| *v = C64::default());
                for nu in (i + 1)..=atom.multiplicity() {
                    let j = nu - 1 - i;
                    flat::mul(m, &self.flat_terms[k][nu - 1], self.sys.d(y, nn, k, s, j), &mut tmp);
                    let c = 1.0 / (FACT[i] * FACT[j]);
                    for (a, t) in acc.iter_mut().zip(&tmp) {
                        *a += t * c;
                    }
                }
                for r in 0..m {
                    for c in 0..m {
                        let mut v = acc[r * m + c];
                        if p == q && r == c {
                            v += 1.0;
                        }
                        a[(q * m + r, p * m + c)] = v;
                    }
                }
            }
        }
        a
    }

    fn model_row(&self, y: &[C64], dx: bool) -> Mat<C64> {
        let m = self.m();
        Mat::from_fn(m, self.size(), |r, col| {
            let (n, s) = self.blocks[col / m];
            let b = if dx { self.sys.row_dx(y, n, s) } else { self.sys.row(y, n, s) };
            b[r * m + col % m]
        })
    }

    fn block_of(&self, row: &Mat<C64>, q: usize) -> SquareMatrix {
        let m = self.m();
        SquareMatrix::from_fn(m, |r, c| row[(r, q * m + c)])
    }

    /// Solves at the current ODE state.
    fn solve_state(&self, x: f64, y: &[C64], keep_blocks: bool) -> MainNode {
        let m = self.m();
        if self.blocks.is_empty() {
            let z = SquareMatrix::zeros(m);
            return MainNode {
                x,
                blocks: Vec::new(),
                eps0: z.clone(),
                eps0_dx: z,
                condition: 1.0,
                log_abs_det: 0.0,
                det_phase: 0.0,
                residual: 0.0,
            };
        }
        let a = self.assemble(y);
        let lu = a.partial_piv_lu();
        let (log_abs_det, det_phase) = lu_determinant(&lu);
        let condition = if log_abs_det == f64::NEG_INFINITY { f64::INFINITY } else { condition_1(&a, &lu) };

        let phi_t = self.model_row(y, false);
        let mut sol = phi_t.clone();
        lu.rsolve_in_place(sol.as_mut());
        let resid = &sol * &a - &phi_t;
        let scale = max_abs(&phi_t).max(1.0);
        let residual = max_abs(&resid) / scale;

        // ε₀ = Σ Y_{k,i}/i! α_kν ∂^{ν−1−i}φ̃*(λ_k)/(ν−1−i)!
        let blocks: Vec<SquareMatrix> = (0..self.blocks.len()).map(|q| self.block_of(&sol, q)).collect();
        let eps0 = self.eps_sum(y, &blocks, false);

        // Differentiating Y𝔄 = Φ̃ in x: Y′𝔄 = Φ̃′ − ε₀ Φ̃ blockwise.
        let mut rhs = self.model_row(y, true);
        let eps_mat = Mat::from_fn(m, m, |r, c| eps0.get(r, c));
        rhs -= &eps_mat * &phi_t;
        lu.rsolve_in_place(rhs.as_mut());
        let blocks_dx: Vec<SquareMatrix> = (0..self.blocks.len()).map(|q| self.block_of(&rhs, q)).collect();
        let eps0_dx = &self.eps_sum(y, &blocks_dx, false) + &self.eps_sum(y, &blocks, true);

        MainNode {
            x,
            blocks: if keep_blocks { blocks } else { Vec::new() },
            eps0,
            eps0_dx,
            condition,
            log_abs_det,
            det_phase,
            residual,
        }
    }

    fn eps_sum(&self, y: &[C64], blocks: &[SquareMatrix], col_dx: bool) -> SquareMatrix {
        let m = self.m();
        let mut out = SquareMatrix::zeros(m);
        let mut q0 = 0;
        for (k, atom) in self.atoms.iter().enumerate() {
            for nu in 1..=atom.multiplicity() {
                for i in 0..nu {
                    let j = nu - 1 - i;
                    let z = if col_dx { self.sys.col_dx(y, k, j) } else { self.sys.col(y, k, j) };
                    let z = SquareMatrix::from_flat(m, z);
                    let term = &(&blocks[q0 + i] * &atom.terms[nu - 1]) * &z;
                    out += &term.scale_real(1.0 / (FACT[i] * FACT[j]));
                }
            }
            q0 += atom.multiplicity();
        }
        out
    }

    fn det_at(&self, start: &Integrator, x: f64) -> Result<(f64, f64)> {
        let mut it = start.clone();
        it.advance(&self.sys, x, &self.breakpoints)?;
        let a = self.assemble(it.y());
        let lu = a.partial_piv_lu();
        let (l, _) = lu_determinant(&lu);
        let cond = if l == f64::NEG_INFINITY { f64::INFINITY } else { condition_1(&a, &lu) };
        Ok((l, cond))
    }

    /// Golden-section search for the minimum of `|det 𝔄|` on `[a, b]`.
    fn localize(&self, start: &Integrator, a: f64, b: f64) -> Result<(f64, f64, f64)> {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (a, b);
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        let mut fc = self.det_at(start, c)?.0;
        let mut fd = self.det_at(start, d)?.0;
        let tol = 1e-13 * b.abs().max(1.0);
        while hi - lo > tol {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - g * (hi - lo);
                fc = self.det_at(start, c)?.0;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + g * (hi - lo);
                fd = self.det_at(start, d)?.0;
            }
        }
        let xs = 0.5 * (lo + hi);
        let (l, cond) = self.det_at(start, xs)?;
        Ok((xs, l, cond))
    }

    /// Streams the kernel ODE over `x_grid` and solves at every node.
    pub fn solve_grid(&self, x_grid: &[f64], keep_blocks: bool) -> Result<Vec<MainNode>> {
        let mut it = Integrator::new(0.0, self.sys.initial_state(), self.settings.ode_tol);
        let mut out: Vec<MainNode> = Vec::with_capacity(x_grid.len());
        let mut prev: Option<Integrator> = None;
        for &x in x_grid {
            it.advance(&self.sys, x, &self.breakpoints)?;
            let node = self.solve_state(x, it.y(), keep_blocks);
            let singular_here = !(node.condition <= self.settings.cond_max);
            if let (Some(p), Some(last)) = (&prev, out.last()) {
                if singular_here || crosses_zero(last, &node) {
                    let (xs, l, cond) = self.localize(p, last.x, x)?;
                    // A root sits well below both ends; monotone growth is not singular.
                    let reference = last.log_abs_det.min(node.log_abs_det);
                    if cond > self.settings.cond_max || l - reference <= (1e-8f64).ln() {
                        return Err(Error::SingularMainSystem { x: xs, condition: cond, log_abs_det: l });
                    }
                }
            }
            if singular_here {
                return Err(Error::SingularMainSystem { x, condition: node.condition, log_abs_det: node.log_abs_det });
            }
            prev = Some(it.clone());
            out.push(node);
        }
        Ok(out)
    }
}

fn flat_of(a: &SquareMatrix) -> Vec<C64> {
    let mut v = vec![C64::default(); a.dim() * a.dim()];
    a.write_flat(&mut v);
    v
}

fn max_abs(a: &Mat<C64>) -> f64 {
    let mut s = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s = s.max(a[(i, j)].norm());
        }
    }
    s
}

/// Whether the straight segment between the two (normalized) determinants
/// passes close to the origin.
fn crosses_zero(a: &MainNode, b: &MainNode) -> bool {
    let r = a.log_abs_det.max(b.log_abs_det);
    if !r.is_finite() {
        return false;
    }
    let za = C64::from_polar((a.log_abs_det - r).exp(), a.det_phase);
    let zb = C64::from_polar((b.log_abs_det - r).exp(), b.det_phase);
    let d = zb - za;
    let t = if d.norm_sqr() > 0.0 { (-(za.conj() * d).re / d.norm_sqr()).clamp(0.0, 1.0) } else { 0.0 };
    (za + d * t).norm() < 0.1
}

fn lu_determinant(lu: &faer::linalg::solvers::PartialPivLu<C64>) -> (f64, f64) {
    let u = lu.U();
    let mut l = 0.0;
    let mut phase = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        l += d.norm().ln();
        phase += d.arg();
    }
    let perm = lu.P().arrays().0;
    let mut seen = vec![false; perm.len()];
    let mut odd = false;
    for s in 0..perm.len() {
        if seen[s] {
            continue;
        }
        let mut len = 0;
        let mut j = s;
        while !seen[j] {
            seen[j] = true;
            j = perm[j];
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    if odd {
        phase += std::f64::consts::PI;
    }
    (l, phase.rem_euclid(2.0 * std::f64::consts::PI))
}

fn norm_1(a: &Mat<C64>) -> f64 {
    (0..a.ncols()).map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// `‖A‖₁ · est(‖A⁻¹‖₁)` with Hager's estimator (Higham's refinement).
fn condition_1(a: &Mat<C64>, lu: &faer::linalg::solvers::PartialPivLu<C64>) -> f64 {
    let n = a.nrows();
    let mut x = Mat::<C64>::from_fn(n, 1, |_, _| C64::new(1.0 / n as f64, 0.0));
    let mut est = 0.0f64;
    for iter in 0..5 {
        lu.solve_in_place(x.as_mut());
        let y = x.clone();
        let ny: f64 = (0..n).map(|i| y[(i, 0)].norm()).sum();
        if !ny.is_finite() {
            return f64::INFINITY;
        }
        if iter > 0 && ny <= est {
            break;
        }
        est = ny;
        let mut z = Mat::<C64>::from_fn(n, 1, |i, _| {
            let v = y[(i, 0)];
            if v.norm() > 0.0 {
                v / v.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        });
        lu.solve_adjoint_in_place(z.as_mut());
        let (jmax, zmax) =
            (0..n).map(|i| (i, z[(i, 0)].norm())).fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if iter > 0 && zmax <= (0..n).map(|i| (z[(i, 0)].conj() * y[(i, 0)]).re).sum::<f64>() / est.max(1e-300) {
            break;
        }
        x = Mat::<C64>::zeros(n, 1);
        x[(jmax, 0)] = C64::new(1.0, 0.0);
    }
    // Alternative lower bound from a sign-alternating vector.
    let mut b = Mat::<C64>::from_fn(n, 1, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        C64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
    });
    lu.solve_in_place(b.as_mut());
    let alt = 2.0 * (0..n).map(|i| b[(i, 0)].norm()).sum::<f64>() / (3.0 * n as f64);
    norm_1(a) * est.max(alt)
}
