//! The kernel `D̃(x, λ, μ) = ∫₀^x φ̃*(t, μ) φ̃(t, λ) dt` and its mixed
//! λ/μ-derivatives, integrated as extra ODE state next to the variational
//! chains of the model problem.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{chain_rhs, check_grid, integrate_through, solve_regular, wronskian, Variant, MAX_ORDER};
use crate::matrix::{flat, SquareMatrix, C64};
use crate::model::{Problem, Settings};
use crate::ode::OdeSystem;

/// A λ-point together with the highest derivative order carried for it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainSpec {
    pub lambda: C64,
    pub order: usize,
}

/// State layout: row chains (`∂^s φ̃(·, λ_r)`), then column chains
/// (`∂^j φ̃*(·, μ_c)`), then one `m×m` block per `(r, c, s, j)`.
pub(crate) struct KernelSystem<'a> {
    model: &'a Problem,
    rows: Vec<ChainSpec>,
    cols: Vec<ChainSpec>,
    row_off: Vec<usize>,
    col_off: Vec<usize>,
    d_off: Vec<usize>,
    d_start: usize,
    dim: usize,
    parallel: bool,
}

impl<'a> KernelSystem<'a> {
    pub fn new(model: &'a Problem, rows: Vec<ChainSpec>, cols: Vec<ChainSpec>, threads: usize) -> Result<Self> {
        for c in rows.iter().chain(&cols) {
            if c.order > MAX_ORDER {
                return Err(Error::MaxOrder { requested: c.order, max: MAX_ORDER });
            }
        }
        let mm = model.m() * model.m();
        let mut off = 0;
        let mut row_off = Vec::with_capacity(rows.len());
        for r in &rows {
            row_off.push(off);
            off += 2 * (r.order + 1) * mm;
        }
        let mut col_off = Vec::with_capacity(cols.len());
        for c in &cols {
            col_off.push(off);
            off += 2 * (c.order + 1) * mm;
        }
        let d_start = off;
        let mut d_off = Vec::with_capacity(rows.len() * cols.len());
        for r in &rows {
            for c in &cols {
                d_off.push(off);
                off += (r.order + 1) * (c.order + 1) * mm;
            }
        }
        let parallel = threads != 1 && rows.len() * cols.len() >= 4096;
        Ok(Self { model, rows, cols, row_off, col_off, d_off, d_start, dim: off, parallel })
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    /// State at `x = 0`: `φ̃(0) = φ̃*(0) = I`, `φ̃′(0) = φ̃*′(0) = h̃`, `D̃ = 0`.
    pub fn initial_state(&self) -> Vec<C64> {
        let m = self.m();
        let mm = m * m;
        let mut y = vec![C64::default(); self.dim];
        let id = SquareMatrix::identity(m);
        let h = self.model.h();
        for &o in self.row_off.iter().chain(&self.col_off) {
            id.write_flat(&mut y[o..o + mm]);
            h.write_flat(&mut y[o + mm..o + 2 * mm]);
        }
        y
    }

    fn mm(&self) -> usize {
        self.m() * self.m()
    }

    /// `∂^s φ̃(x, λ_r)` as a flat block.
    pub fn row<'y>(&self, y: &'y [C64], r: usize, s: usize) -> &'y [C64] {
        let o = self.row_off[r] + 2 * s * self.mm();
        &y[o..o + self.mm()]
    }

    pub fn row_dx<'y>(&self, y: &'y [C64], r: usize, s: usize) -> &'y [C64] {
        let o = self.row_off[r] + (2 * s + 1) * self.mm();
        &y[o..o + self.mm()]
    }

    /// `∂^j φ̃*(x, μ_c)` as a flat block.
    pub fn col<'y>(&self, y: &'y [C64], c: usize, j: usize) -> &'y [C64] {
        let o = self.col_off[c] + 2 * j * self.mm();
        &y[o..o + self.mm()]
    }

    pub fn col_dx<'y>(&self, y: &'y [C64], c: usize, j: usize) -> &'y [C64] {
        let o = self.col_off[c] + (2 * j + 1) * self.mm();
        &y[o..o + self.mm()]
    }

    /// `D̃⟨s, j⟩(x, λ_r, μ_c)` as a flat block.
    pub fn d<'y>(&self, y: &'y [C64], r: usize, c: usize, s: usize, j: usize) -> &'y [C64] {
        let oc = self.cols[c].order + 1;
        let o = self.d_off[r * self.cols.len() + c] + (s * oc + j) * self.mm();
        &y[o..o + self.mm()]
    }
}

impl OdeSystem for KernelSystem<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, x: f64, y: &[C64], dy: &mut [C64]) {
        let m = self.m();
        let mm = m * m;
        let mut q = [C64::default(); 64];
        let q = &mut q[..mm];
        self.model.q_flat(x, q);
        for (r, spec) in self.rows.iter().enumerate() {
            let o = self.row_off[r];
            let n = 2 * (spec.order + 1) * mm;
            chain_rhs(m, q, spec.lambda, spec.order, false, &y[o..o + n], &mut dy[o..o + n]);
        }
        for (c, spec) in self.cols.iter().enumerate() {
            let o = self.col_off[c];
            let n = 2 * (spec.order + 1) * mm;
            chain_rhs(m, q, spec.lambda, spec.order, true, &y[o..o + n], &mut dy[o..o + n]);
        }
        // D′ = ∂^j φ̃*(μ_c) · ∂^s φ̃(λ_r); rows own contiguous stretches of D.
        let nc = self.cols.len();
        let fill_row = |r: usize, out: &mut [C64]| {
            let base = self.d_off[r * nc];
            for c in 0..nc {
                let oc = self.cols[c].order + 1;
                let start = self.d_off[r * nc + c] - base;
                for s in 0..=self.rows[r].order {
                    let yr = self.row(y, r, s);
                    for j in 0..oc {
                        let o = start + (s * oc + j) * mm;
                        flat::mul(m, self.col(y, c, j), yr, &mut out[o..o + mm]);
                    }
                }
            }
        };
        let d = &mut dy[self.d_start..];
        if nc == 0 {
            return;
        }
        let lens: Vec<usize> = (0..self.rows.len())
            .map(|r| {
                let end = if r + 1 < self.rows.len() { self.d_off[(r + 1) * nc] } else { self.dim };
                end - self.d_off[r * nc]
            })
            .collect();
        let mut chunks: Vec<&mut [C64]> = Vec::with_capacity(lens.len());
        let mut rest = d;
        for &l in &lens {
            let (a, b) = rest.split_at_mut(l);
            chunks.push(a);
            rest = b;
        }
        if self.parallel {
            chunks.into_par_iter().enumerate().for_each(|(r, out)| fill_row(r, out));
        } else {
            for (r, out) in chunks.into_iter().enumerate() {
                fill_row(r, out);
            }
        }
    }
}

/// One sample of `D̃⟨i,j⟩(x, λ, μ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelEvaluation {
    pub x: f64,
    pub lambda: C64,
    pub mu: C64,
    pub i: usize,
    pub j: usize,
    pub value: SquareMatrix,
}

/// `D̃⟨i,j⟩(x, λ, μ) = ∫₀^x ∂_μ^j φ̃*(t, μ) ∂_λ^i φ̃(t, λ) dt` on `x_grid`.
pub fn kernel(
    model: &Problem,
    x_grid: &[f64],
    lambda: C64,
    mu: C64,
    i: usize,
    j: usize,
    settings: &Settings,
) -> Result<Vec<KernelEvaluation>> {
    check_grid(x_grid)?;
    let sys = KernelSystem::new(
        model,
        vec![ChainSpec { lambda, order: i }],
        vec![ChainSpec { lambda: mu, order: j }],
        1,
    )?;
    let m = model.m();
    let mut out = Vec::with_capacity(x_grid.len());
    integrate_through(&sys, 0.0, sys.initial_state(), x_grid, &model.breakpoints(), settings.ode_tol, |k, y| {
        out.push(KernelEvaluation {
            x: x_grid[k],
            lambda,
            mu,
            i,
            j,
            value: SquareMatrix::from_flat(m, sys.d(y, 0, 0, i, j)),
        });
        Ok(())
    })?;
    Ok(out)
}

/// `⟨φ̃*(x, μ), φ̃(x, λ)⟩ / (λ − μ)`; only meaningful away from `λ = μ`.
pub fn kernel_quotient(
    model: &Problem,
    x_grid: &[f64],
    lambda: C64,
    mu: C64,
    settings: &Settings,
) -> Result<Vec<SquareMatrix>> {
    if lambda == mu {
        return Err(Error::InvalidInput("quotient form needs λ ≠ μ".into()));
    }
    let y = solve_regular(model, Variant::Phi, lambda, x_grid, 0, settings)?;
    let z = solve_regular(model, Variant::PhiAdjoint, mu, x_grid, 0, settings)?;
    let inv = (lambda - mu).inv();
    Ok(y[0].iter().zip(&z[0]).map(|(y, z)| wronskian(z, y).scale(inv)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;

    fn settings() -> Settings {
        Settings::default()
    }

    fn free(m: usize) -> Problem {
        Problem::free(m)
    }

    fn grid() -> Vec<f64> {
        (0..=20).map(|k| 0.15 * k as f64).collect()
    }

    #[test]
    fn free_diagonal_value() {
        let ev = kernel(&free(1), &grid(), C64::new(-1.0, 0.0), C64::new(-1.0, 0.0), 0, 0, &settings()).unwrap();
        for e in &ev {
            let x = e.x;
            let exact = 0.5 * (x + x.sinh() * x.cosh());
            assert!((e.value.get(0, 0) - exact).norm() < 1e-10 * (1.0 + exact), "x={x}");
        }
        assert_eq!(ev[0].value, SquareMatrix::zeros(1));
    }

    #[test]
    fn free_off_diagonal_closed_form() {
        let (rl, rm) = (1.3f64, 0.4f64);
        let (l, mu) = (rl * rl, rm * rm);
        let ev = kernel(&free(2), &grid(), C64::new(l, 0.0), C64::new(mu, 0.0), 0, 0, &settings()).unwrap();
        for e in &ev {
            let x = e.x;
            let exact = (rl * (rl * x).sin() * (rm * x).cos() - rm * (rl * x).cos() * (rm * x).sin()) / (l - mu);
            assert!((e.value.get(0, 0) - exact).norm() < 1e-10);
            assert!((e.value.get(1, 1) - exact).norm() < 1e-10);
            assert!(e.value.get(0, 1).norm() < 1e-14);
        }
    }

    fn sample_model() -> Problem {
        let a = SquareMatrix::from_row_major(
            2,
            &[C64::new(1.0, 0.0), C64::new(0.3, 0.2), C64::new(0.3, -0.2), C64::new(-0.5, 0.0)],
        )
        .unwrap();
        let h = SquareMatrix::from_row_major(
            2,
            &[C64::new(0.2, 0.0), C64::new(0.0, 0.1), C64::new(0.0, -0.1), C64::new(-0.4, 0.0)],
        )
        .unwrap();
        let spec = PotentialSpec::ExponentialSum {
            terms: vec![crate::model::ExpTerm { coefficient: a, rate: 0.7 }],
            x_max: 2.0,
        };
        Problem::new(2, spec, h, true).unwrap()
    }

    #[test]
    fn matches_quotient_form() {
        let model = sample_model();
        let pts = [(C64::new(-1.0, 0.0), C64::new(2.5, 0.0)), (C64::new(0.5, 1.0), C64::new(-0.3, 0.2))];
        let g = grid();
        for (l, mu) in pts {
            let ev = kernel(&model, &g, l, mu, 0, 0, &settings()).unwrap();
            let qf = kernel_quotient(&model, &g, l, mu, &settings()).unwrap();
            for (e, q) in ev.iter().zip(&qf) {
                assert!(e.value.dist(q) <= 1e-8 * (1.0 + e.value.norm()), "x={} {}", e.x, e.value.dist(q));
            }
        }
    }

    #[test]
    fn lambda_derivative_matches_finite_difference() {
        let model = sample_model();
        let g = grid();
        let (l, mu) = (C64::new(-0.7, 0.0), C64::new(1.1, 0.0));
        let step = 1e-4;
        let d1 = kernel(&model, &g, l, mu, 1, 0, &settings()).unwrap();
        let dp = kernel(&model, &g, l + C64::new(step, 0.0), mu, 0, 0, &settings()).unwrap();
        let dm = kernel(&model, &g, l - C64::new(step, 0.0), mu, 0, 0, &settings()).unwrap();
        for k in 1..g.len() {
            let fd = (&dp[k].value - &dm[k].value).scale_real(0.5 / step);
            assert!(fd.dist(&d1[k].value) <= 1e-5 * d1[k].value.norm().max(1e-3), "x={}", g[k]);
        }
        // μ-derivative the same way.
        let d01 = kernel(&model, &g, l, mu, 0, 1, &settings()).unwrap();
        let dp = kernel(&model, &g, l, mu + C64::new(step, 0.0), 0, 0, &settings()).unwrap();
        let dm = kernel(&model, &g, l, mu - C64::new(step, 0.0), 0, 0, &settings()).unwrap();
        for k in 1..g.len() {
            let fd = (&dp[k].value - &dm[k].value).scale_real(0.5 / step);
            assert!(fd.dist(&d01[k].value) <= 1e-5 * d01[k].value.norm().max(1e-3));
        }
    }

    #[test]
    fn selfadjoint_symmetry() {
        let model = sample_model();
        let g = grid();
        let (l, mu) = (C64::new(-0.7, 0.0), C64::new(1.1, 0.0));
        let a = kernel(&model, &g, l, mu, 0, 0, &settings()).unwrap();
        let b = kernel(&model, &g, mu, l, 0, 0, &settings()).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!(a.value.adjoint().dist(&b.value) < 1e-10 * (1.0 + a.value.norm()));
        }
    }

    #[test]
    fn order_cap() {
        let r = kernel(&free(1), &grid(), C64::new(-1.0, 0.0), C64::new(-1.0, 0.0), MAX_ORDER + 1, 0, &settings());
        assert!(matches!(r, Err(Error::MaxOrder { .. })));
    }
}
