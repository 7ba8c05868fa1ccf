//! Forward problem: regular solutions, Jost solutions, `u(ρ)`, `Δ(ρ)`, the
//! Weyl solution and the Weyl matrix.
//!
//! The Jost solution is integrated in the factored form `e = e^{iρx} w`, so
//! `w″ = −2iρ w′ + Q w` with `w = I`, `w′ = 0` at the end of the support. This
//! keeps the integrated quantity bounded for every `ρ` in the closed upper
//! half-plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{flat, SquareMatrix, C64};
use crate::model::{lambda_to_rho, Problem, Settings, Side, SpectralPoint};
use crate::ode::{Integrator, OdeSystem};
use crate::par_map;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSample {
    pub x: f64,
    pub value: SquareMatrix,
    pub derivative: SquareMatrix,
}

/// Which fundamental solution `solve_regular` integrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `φ(0) = I`, `φ′(0) = h`
    Phi,
    /// `S(0) = 0`, `S′(0) = I`
    S,
    /// `φ*(0) = I`, `φ*′(0) = h`, solving `−Z″ + ZQ = λZ`
    PhiAdjoint,
    /// `S*(0) = 0`, `S*′(0) = I`
    SAdjoint,
}

impl Variant {
    pub fn adjoint(self) -> bool {
        matches!(self, Variant::PhiAdjoint | Variant::SAdjoint)
    }

    fn initial(self, h: &SquareMatrix) -> (SquareMatrix, SquareMatrix) {
        let m = h.dim();
        match self {
            Variant::Phi | Variant::PhiAdjoint => (SquareMatrix::identity(m), h.clone()),
            Variant::S | Variant::SAdjoint => (SquareMatrix::zeros(m), SquareMatrix::identity(m)),
        }
    }
}

/// Highest λ-derivative order supported by the variational chains.
pub const MAX_ORDER: usize = 4;

/// `Y_j″ = (Q − λ) Y_j − j Y_{j−1}` (or `Y_j Q` for the adjoint equation),
/// laid out as `[Y_0, Y_0′, Y_1, Y_1′, …]`, each block `m²` row-major.
pub(crate) struct RegularChain<'a> {
    pub problem: &'a Problem,
    pub lambda: C64,
    pub order: usize,
    pub adjoint: bool,
}

impl OdeSystem for RegularChain<'_> {
    fn dim(&self) -> usize {
        2 * (self.order + 1) * self.problem.m() * self.problem.m()
    }

    fn rhs(&self, x: f64, y: &[C64], dy: &mut [C64]) {
        let m = self.problem.m();
        let mut q = [C64::default(); 64];
        let q = &mut q[..m * m];
        self.problem.q_flat(x, q);
        chain_rhs(m, q, self.lambda, self.order, self.adjoint, y, dy);
    }
}

/// Right-hand side of one variational chain given the potential value `q`.
pub(crate) fn chain_rhs(m: usize, q: &[C64], lambda: C64, order: usize, adjoint: bool, y: &[C64], dy: &mut [C64]) {
    let mm = m * m;
    for j in 0..=order {
        let base = 2 * j * mm;
        let (val, der) = (base, base + mm);
        dy[val..val + mm].copy_from_slice(&y[der..der + mm]);
        let out = &mut dy[der..der + mm];
        if adjoint {
            flat::mul(m, &y[val..val + mm], q, out);
        } else {
            flat::mul(m, q, &y[val..val + mm], out);
        }
        for k in 0..mm {
            out[k] -= lambda * y[val + k];
        }
        if j > 0 {
            let prev = 2 * (j - 1) * mm;
            let jf = j as f64;
            for k in 0..mm {
                out[k] -= y[prev + k] * jf;
            }
        }
    }
}

/// Integrates `sys` from `x0` through the sorted `stops` (in integration
/// order), calling `on_stop(index, state)` at each.
pub(crate) fn integrate_through<S: OdeSystem + ?Sized>(
    sys: &S,
    x0: f64,
    y0: Vec<C64>,
    stops: &[f64],
    breakpoints: &[f64],
    tol: f64,
    mut on_stop: impl FnMut(usize, &[C64]) -> Result<()>,
) -> Result<Integrator> {
    let mut it = Integrator::new(x0, y0, tol);
    for (i, &s) in stops.iter().enumerate() {
        it.advance(sys, s, breakpoints)?;
        on_stop(i, it.y())?;
    }
    Ok(it)
}

pub(crate) fn check_grid(x_grid: &[f64]) -> Result<()> {
    if x_grid.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput("x-grid values must be finite and non-negative".into()));
    }
    if x_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("x-grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Fundamental solution and its λ-derivatives up to `order` on `x_grid`.
/// Result is indexed `[derivative order][grid node]`.
pub fn solve_regular(
    problem: &Problem,
    variant: Variant,
    lambda: C64,
    x_grid: &[f64],
    order: usize,
    settings: &Settings,
) -> Result<Vec<Vec<SolutionSample>>> {
    if order > MAX_ORDER {
        return Err(Error::MaxOrder { requested: order, max: MAX_ORDER });
    }
    check_grid(x_grid)?;
    let m = problem.m();
    let mm = m * m;
    let chain = RegularChain { problem, lambda, order, adjoint: variant.adjoint() };
    let mut y0 = vec![C64::default(); chain.dim()];
    let (v0, d0) = variant.initial(problem.h());
    v0.write_flat(&mut y0[..mm]);
    d0.write_flat(&mut y0[mm..2 * mm]);
    let mut out: Vec<Vec<SolutionSample>> = vec![Vec::with_capacity(x_grid.len()); order + 1];
    integrate_through(&chain, 0.0, y0, x_grid, &problem.breakpoints(), settings.ode_tol, |i, y| {
        for (j, samples) in out.iter_mut().enumerate() {
            let base = 2 * j * mm;
            samples.push(SolutionSample {
                x: x_grid[i],
                value: SquareMatrix::from_flat(m, &y[base..base + mm]),
                derivative: SquareMatrix::from_flat(m, &y[base + mm..base + 2 * mm]),
            });
        }
        Ok(())
    })?;
    Ok(out)
}

/// `w″ = −2iρ w′ + Q w` (or `w Q`), state `[w, w′]`.
struct JostSystem<'a> {
    problem: &'a Problem,
    two_i_rho: C64,
    adjoint: bool,
}

impl OdeSystem for JostSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.problem.m() * self.problem.m()
    }

    fn rhs(&self, x: f64, y: &[C64], dy: &mut [C64]) {
        let m = self.problem.m();
        let mm = m * m;
        let mut q = [C64::default(); 64];
        let q = &mut q[..mm];
        self.problem.q_flat(x, q);
        dy[..mm].copy_from_slice(&y[mm..2 * mm]);
        let out = &mut dy[mm..2 * mm];
        if self.adjoint {
            flat::mul(m, &y[..mm], q, out);
        } else {
            flat::mul(m, q, &y[..mm], out);
        }
        for k in 0..mm {
            out[k] -= self.two_i_rho * y[mm + k];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JostFamily {
    pub rho: SpectralPoint,
    /// `e(x, ρ)` and `e′(x, ρ)`.
    pub direct: Vec<SolutionSample>,
    /// `e*(x, ρ)` and `e*′(x, ρ)` when requested.
    pub adjoint: Option<Vec<SolutionSample>>,
}

fn check_rho(rho: &SpectralPoint) -> Result<()> {
    if rho.rho == C64::new(0.0, 0.0) {
        return Err(Error::ZeroLambda);
    }
    if rho.rho.im < 0.0 {
        return Err(Error::InvalidInput("rho must satisfy Im rho >= 0".into()));
    }
    Ok(())
}

/// Samples of the factored Jost solution `(w, w′)` on the descending grid `stops`.
fn jost_factor(
    problem: &Problem,
    rho: C64,
    adjoint: bool,
    stops_desc: &[f64],
    settings: &Settings,
    mut on_stop: impl FnMut(usize, &[C64]),
) -> Result<()> {
    let m = problem.m();
    let mm = m * m;
    let start = problem.support_end().max(stops_desc.first().copied().unwrap_or(0.0));
    let mut y0 = vec![C64::default(); 2 * mm];
    SquareMatrix::identity(m).write_flat(&mut y0[..mm]);
    if problem.is_zero_potential() {
        for (i, _) in stops_desc.iter().enumerate() {
            on_stop(i, &y0);
        }
        return Ok(());
    }
    let sys = JostSystem { problem, two_i_rho: C64::new(0.0, 2.0) * rho, adjoint };
    let it = integrate_through(&sys, start, y0, stops_desc, &problem.breakpoints(), settings.ode_tol, |i, y| {
        on_stop(i, y);
        Ok(())
    })?;
    let growth = SquareMatrix::from_flat(m, &it.y()[..mm]).norm();
    if growth > 1e8 {
        log::warn!(
            "UnstableDirection: factored Jost solution grew to {growth:.3e} (rho = {rho}, X_max = {start})"
        );
    }
    Ok(())
}

/// Jost solution `e(x, ρ)` (and optionally `e*(x, ρ)`) on `x_grid`.
pub fn jost(
    problem: &Problem,
    rho: SpectralPoint,
    x_grid: &[f64],
    with_adjoint: bool,
    settings: &Settings,
) -> Result<JostFamily> {
    check_rho(&rho)?;
    check_grid(x_grid)?;
    let m = problem.m();
    let mm = m * m;
    let stops: Vec<f64> = x_grid.iter().rev().copied().collect();
    let i_rho = C64::new(0.0, 1.0) * rho.rho;
    let sample = |x: f64, y: &[C64]| {
        let phase = (i_rho * x).exp();
        let w = SquareMatrix::from_flat(m, &y[..mm]);
        let wp = SquareMatrix::from_flat(m, &y[mm..2 * mm]);
        SolutionSample { x, value: w.scale(phase), derivative: (w.scale(i_rho) + wp).scale(phase) }
    };
    let collect = |adjoint: bool| -> Result<Vec<SolutionSample>> {
        let mut out = Vec::with_capacity(stops.len());
        jost_factor(problem, rho.rho, adjoint, &stops, settings, |i, y| out.push(sample(stops[i], y)))?;
        out.reverse();
        Ok(out)
    };
    let direct = collect(false)?;
    let adjoint = if with_adjoint { Some(collect(true)?) } else { None };
    Ok(JostFamily { rho, direct, adjoint })
}

/// `(e(0, ρ), e′(0, ρ))`, or the adjoint pair.
pub fn jost_at_zero(problem: &Problem, rho: C64, adjoint: bool, settings: &Settings) -> Result<(SquareMatrix, SquareMatrix)> {
    let m = problem.m();
    let mm = m * m;
    let mut res = None;
    jost_factor(problem, rho, adjoint, &[0.0], settings, |_, y| {
        let w = SquareMatrix::from_flat(m, &y[..mm]);
        let wp = SquareMatrix::from_flat(m, &y[mm..2 * mm]);
        let d = w.scale(C64::new(0.0, 1.0) * rho) + wp;
        res = Some((w, d));
    })?;
    Ok(res.expect("stop at x = 0 is always visited"))
}

/// `u(ρ) = e′(0, ρ) − h e(0, ρ)`.
pub fn u_matrix(problem: &Problem, rho: SpectralPoint, settings: &Settings) -> Result<SquareMatrix> {
    check_rho(&rho)?;
    u_raw(problem, rho.rho, false, settings)
}

/// `u*(ρ) = e*′(0, ρ) − e*(0, ρ) h`.
pub fn u_adjoint(problem: &Problem, rho: SpectralPoint, settings: &Settings) -> Result<SquareMatrix> {
    check_rho(&rho)?;
    u_raw(problem, rho.rho, true, settings)
}

pub(crate) fn u_raw(problem: &Problem, rho: C64, adjoint: bool, settings: &Settings) -> Result<SquareMatrix> {
    let (e0, e1) = jost_at_zero(problem, rho, adjoint, settings)?;
    Ok(if adjoint { e1 - &e0 * problem.h() } else { e1 - problem.h() * &e0 })
}

/// `Δ(ρ) = det u(ρ)`.
pub fn delta(problem: &Problem, rho: SpectralPoint, settings: &Settings) -> Result<C64> {
    Ok(u_matrix(problem, rho, settings)?.determinant())
}

fn invert_u(u: &SquareMatrix, rho: C64, settings: &Settings) -> Result<SquareMatrix> {
    let condition = u.condition();
    if !(condition <= settings.cond_max) {
        return Err(Error::NearSingularU { rho, condition });
    }
    u.try_inverse().ok_or(Error::NearSingularU { rho, condition: f64::INFINITY })
}

/// `M(λ) = e(0, ρ) u(ρ)⁻¹`; on `λ > 0` the side flag selects `M^±`.
pub fn weyl_matrix(problem: &Problem, lambda: C64, side: Side, settings: &Settings) -> Result<SquareMatrix> {
    let p = lambda_to_rho(lambda, side)?;
    weyl_matrix_at(problem, p.rho, settings)
}

pub(crate) fn weyl_matrix_at(problem: &Problem, rho: C64, settings: &Settings) -> Result<SquareMatrix> {
    let (e0, e1) = jost_at_zero(problem, rho, false, settings)?;
    let u = e1 - problem.h() * &e0;
    Ok(&e0 * invert_u(&u, rho, settings)?)
}

/// `M*(λ) = u*(ρ)⁻¹ e*(0, ρ)`.
pub fn weyl_matrix_adjoint(problem: &Problem, lambda: C64, side: Side, settings: &Settings) -> Result<SquareMatrix> {
    let p = lambda_to_rho(lambda, side)?;
    let (e0, e1) = jost_at_zero(problem, p.rho, true, settings)?;
    let u = e1 - &e0 * problem.h();
    Ok(invert_u(&u, p.rho, settings)? * e0)
}

/// `M(λ)` at many points, evaluated in parallel; output order follows input.
pub fn weyl_matrices(
    problem: &Problem,
    points: &[(C64, Side)],
    settings: &Settings,
) -> Vec<Result<SquareMatrix>> {
    par_map(settings.threads, points, |(l, s)| weyl_matrix(problem, *l, *s, settings))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylSolution {
    pub samples: Vec<SolutionSample>,
    /// `max_x ‖e u⁻¹ − (S + φM)‖ / (1 + ‖e u⁻¹‖)` over the grid.
    pub cross_check: f64,
    /// `‖U(Φ) − I‖`.
    pub boundary_defect: f64,
}

/// `Φ(x, λ) = e(x, ρ) u(ρ)⁻¹`, cross-checked against `S + φ M`.
pub fn weyl_solution(
    problem: &Problem,
    lambda: C64,
    side: Side,
    x_grid: &[f64],
    settings: &Settings,
) -> Result<WeylSolution> {
    let p = lambda_to_rho(lambda, side)?;
    let mut grid = x_grid.to_vec();
    let has_zero = grid.first() == Some(&0.0);
    if !has_zero {
        grid.insert(0, 0.0);
    }
    let fam = jost(problem, p, &grid, false, settings)?;
    let u = &fam.direct[0].derivative - problem.h() * &fam.direct[0].value;
    let u_inv = invert_u(&u, p.rho, settings)?;
    let samples: Vec<SolutionSample> = fam
        .direct
        .iter()
        .map(|s| SolutionSample { x: s.x, value: &s.value * &u_inv, derivative: &s.derivative * &u_inv })
        .collect();
    let m_weyl = &samples[0].value;
    let boundary_defect =
        (&samples[0].derivative - problem.h() * &samples[0].value).dist(&SquareMatrix::identity(problem.m()));

    let phi = solve_regular(problem, Variant::Phi, lambda, &grid, 0, settings)?;
    let s = solve_regular(problem, Variant::S, lambda, &grid, 0, settings)?;
    let mut cross_check = 0.0_f64;
    for (k, sample) in samples.iter().enumerate() {
        let other = &s[0][k].value + &phi[0][k].value * m_weyl;
        cross_check = cross_check.max(sample.value.dist(&other) / (1.0 + sample.value.norm()));
    }
    let samples = if has_zero { samples } else { samples[1..].to_vec() };
    Ok(WeylSolution { samples, cross_check, boundary_defect })
}

/// Wronskian `⟨Z, Y⟩ = Z′Y − ZY′`.
pub fn wronskian(z: &SolutionSample, y: &SolutionSample) -> SquareMatrix {
    &z.derivative * &y.value - &z.value * &y.derivative
}
