//! Spectral data of self-adjoint problems: eigenvalues on the negative axis,
//! residues of `M`, the continuous density `V(λ)`, and the reconstruction of
//! `M` from these data.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{jost_at_zero, u_raw, weyl_matrix_at};
use crate::matrix::{SquareMatrix, C64};
use crate::model::{Problem, Settings};
use crate::par_map;
use crate::quadrature::{gauss_legendre_interval, Barycentric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub lambda: f64,
    pub tau: f64,
    /// Number of vanishing singular values of `u(iτ)`.
    pub multiplicity: usize,
    /// `σ_min(u(iτ)) / (‖e′(0)‖ + ‖h e(0)‖)` at the refined root.
    pub relative_sigma: f64,
}

/// `u(iτ)` singular values relative to the size of the terms `e′(0)` and
/// `h e(0)` whose cancellation produces an eigenvalue.
fn relative_singular_values(problem: &Problem, tau: f64, settings: &Settings) -> Result<Vec<f64>> {
    let (e0, e1) = jost_at_zero(problem, C64::new(0.0, tau), false, settings)?;
    let he0 = problem.h() * &e0;
    let scale = e1.norm() + he0.norm();
    let u = e1 - he0;
    Ok(u.singular_values().into_iter().map(|v| v / scale).collect())
}

/// Default scan range: `τ_max` bounds `√(−λ)` for every eigenvalue.
pub fn default_tau_range(problem: &Problem) -> (f64, f64) {
    let end = problem.support_end();
    let mut sup_q = 0.0_f64;
    for k in 0..=512 {
        sup_q = sup_q.max(problem.q(end * k as f64 / 512.0).norm());
    }
    for b in problem.breakpoints() {
        sup_q = sup_q.max(problem.q(b).norm());
    }
    let tau_max = 1.0 + 1.5 * (problem.h().norm() + sup_q.sqrt());
    (1e-3 * tau_max, tau_max)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Eigenvalues `λ_k = −τ_k²` of a self-adjoint problem, ascending in `λ`.
pub fn find_eigenvalues_detailed(problem: &Problem, settings: &Settings) -> Result<Vec<Eigenvalue>> {
    if !problem.selfadjoint() {
        return Err(Error::InvalidInput("eigenvalue search requires a self-adjoint problem".into()));
    }
    let (t0, t1) = settings.tau_range.unwrap_or_else(|| default_tau_range(problem));
    let n = settings.scan_steps;
    let taus: Vec<f64> = (0..n).map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64).collect();
    let sig = |tau: f64| -> Result<f64> {
        Ok(*relative_singular_values(problem, tau, settings)?.last().expect("m >= 1"))
    };
    let scan: Vec<f64> = par_map(settings.threads, &taus, |&t| sig(t)).into_iter().collect::<Result<_>>()?;

    let mut brackets = Vec::new();
    for i in 0..n {
        let left = if i == 0 { f64::INFINITY } else { scan[i - 1] };
        let right = if i + 1 == n { f64::INFINITY } else { scan[i + 1] };
        if scan[i] <= left && scan[i] <= right {
            if i + 1 == n {
                log::warn!("sigma_min decreases up to tau_max = {t1}; eigenvalues below -tau_max^2 may be missed");
                continue;
            }
            let a = taus[i.saturating_sub(1)];
            let b = taus[(i + 1).min(n - 1)];
            brackets.push((a, b));
        }
    }
    let refined: Vec<Result<Option<Eigenvalue>>> = par_map(settings.threads, &brackets, |&(a, b)| {
        let cache = std::cell::Cell::new(None::<Error>);
        let f = |t: f64| match sig(t) {
            Ok(v) => v,
            Err(e) => {
                cache.set(Some(e));
                f64::INFINITY
            }
        };
        let (tau, _) = golden_section(f, a, b, settings.tau_tol.max(1e-14 * b));
        if let Some(e) = cache.take() {
            return Err(e);
        }
        let s = relative_singular_values(problem, tau, settings)?;
        let ratio = *s.last().expect("m >= 1");
        if ratio > 1e-6 {
            return Ok(None);
        }
        let multiplicity = s.iter().filter(|&&v| v <= 1e-6).count().max(1);
        Ok(Some(Eigenvalue { lambda: -tau * tau, tau, multiplicity, relative_sigma: ratio }))
    });
    let mut out: Vec<Eigenvalue> = Vec::new();
    for r in refined {
        if let Some(e) = r? {
            if !out.iter().any(|o| (o.tau - e.tau).abs() <= 1e-8 * (1.0 + e.tau)) {
                out.push(e);
            }
        }
    }
    out.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(out)
}

/// Eigenvalues as plain negative reals, ascending.
pub fn find_eigenvalues(problem: &Problem, settings: &Settings) -> Result<Vec<f64>> {
    Ok(find_eigenvalues_detailed(problem, settings)?.into_iter().map(|e| e.lambda).collect())
}

/// Trapezoid-rule contour moments `(1/2πi)∮ (λ−c)^{ν−1} f(λ) dλ`, `ν = 1..=orders`,
/// on the circle `|λ − c| = r` with `n` nodes.
pub fn contour_moments(
    f: impl Fn(C64) -> Result<SquareMatrix> + Sync + Send,
    center: C64,
    radius: f64,
    n: usize,
    orders: usize,
    threads: usize,
) -> Result<Vec<SquareMatrix>> {
    let nodes: Vec<C64> = (0..n).map(|j| C64::from_polar(radius, 2.0 * PI * j as f64 / n as f64)).collect();
    let values: Vec<Result<SquareMatrix>> = par_map(threads, &nodes, |&d| f(center + d));
    let mut moments: Vec<Option<SquareMatrix>> = vec![None; orders];
    for (d, v) in nodes.iter().zip(values) {
        let v = v?;
        let mut w = *d / n as f64;
        for m in moments.iter_mut() {
            let term = v.scale(w);
            *m = Some(match m.take() {
                Some(acc) => acc + term,
                None => term,
            });
            w *= d;
        }
    }
    Ok(moments.into_iter().map(|m| m.expect("at least one node")).collect())
}

/// `r_k = min(gap/2, |λ_k|/2)` for each eigenvalue.
pub fn residue_radii(lambdas: &[f64]) -> Vec<f64> {
    lambdas
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let gap = lambdas
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &o)| (o - l).abs())
                .fold(f64::INFINITY, f64::min);
            (0.5 * gap).min(0.5 * l.abs())
        })
        .collect()
}

/// `α_k = Res_{λ=λ_k} M(λ)` for a self-adjoint problem.
pub fn residue(problem: &Problem, lambda_k: f64, radius: f64, settings: &Settings) -> Result<SquareMatrix> {
    if !(lambda_k < 0.0) || !(radius > 0.0) || radius >= lambda_k.abs() {
        return Err(Error::InvalidInput("residue needs lambda_k < 0 and 0 < r < |lambda_k|".into()));
    }
    let m = contour_moments(
        |l| {
            let p = crate::model::lambda_to_rho(l, crate::model::Side::Auto)?;
            weyl_matrix_at(problem, p.rho, settings)
        },
        C64::new(lambda_k, 0.0),
        radius,
        settings.n_res,
        2,
        settings.threads,
    )?;
    let alpha = &m[0];
    let scale = alpha.norm().max(1e-300);
    let moment = m[1].norm() / radius;
    if moment > 1e-6 * scale.max(1.0) {
        return Err(Error::NotSimplePole { lambda: lambda_k, moment });
    }
    if problem.selfadjoint() {
        let eig = alpha.hermitian_eigenvalues();
        if eig[0] < -1e-9 * scale.max(1.0) {
            log::warn!("residue at {lambda_k} has negative eigenvalue {:.3e}", eig[0]);
        }
        return Ok(alpha.hermitian_part());
    }
    Ok(alpha.clone())
}

/// Density value from both formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityValue {
    /// `(1/2πi)(M⁻ − M⁺)`
    pub jump: SquareMatrix,
    /// `(ρ/π) u*(−ρ)⁻¹ u(ρ)⁻¹`, self-adjoint problems only.
    pub product: Option<SquareMatrix>,
}

impl DensityValue {
    pub fn deviation(&self) -> Option<f64> {
        self.product.as_ref().map(|p| p.dist(&self.jump) / self.jump.norm().max(1e-300))
    }
}

/// `V(λ)` for `λ > 0`.
pub fn continuous_density(problem: &Problem, lambda: f64, settings: &Settings) -> Result<DensityValue> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput("density is defined for lambda > 0".into()));
    }
    let rho = lambda.sqrt();
    let plus = weyl_matrix_at(problem, C64::new(rho, 0.0), settings)?;
    let minus = weyl_matrix_at(problem, C64::new(-rho, 0.0), settings)?;
    let jump = (minus - plus).scale(C64::new(0.0, -1.0 / (2.0 * PI)));
    let product = if problem.selfadjoint() {
        let u = u_raw(problem, C64::new(rho, 0.0), false, settings)?;
        let us = u_raw(problem, C64::new(-rho, 0.0), true, settings)?;
        let cond = settings.cond_max;
        let ui = u.inverse_checked(cond).map_err(|_| Error::NearSingularU { rho: C64::new(rho, 0.0), condition: u.condition() })?;
        let usi = us.inverse_checked(cond).map_err(|_| Error::NearSingularU { rho: C64::new(-rho, 0.0), condition: us.condition() })?;
        Some((usi * ui).scale_real(rho / PI))
    } else {
        None
    };
    Ok(DensityValue { jump, product })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub lambda: f64,
    pub alpha: SquareMatrix,
}

/// Density samples on a Gauss–Legendre grid in `ρ = √λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub rho_nodes: Vec<f64>,
    /// Quadrature weights in `dρ`.
    pub weights: Vec<f64>,
    pub values: Vec<SquareMatrix>,
}

impl Density {
    pub fn empty() -> Self {
        Self { rho_nodes: Vec::new(), weights: Vec::new(), values: Vec::new() }
    }

    /// Gauss–Legendre grid on `(0, ρ_max]`.
    pub fn grid(n: usize, rho_max: f64) -> (Vec<f64>, Vec<f64>) {
        gauss_legendre_interval(n, 0.0, rho_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub m: usize,
    pub poles: Vec<Pole>,
    pub density: Density,
    /// Truncation point of the density grid, `ρ_max²`.
    pub lambda_max: f64,
}

impl SpectralData {
    pub fn rho_max(&self) -> f64 {
        self.lambda_max.sqrt()
    }

    /// Free-field density `V = I/(πρ)` with the given poles.
    pub fn free(m: usize, n_quad: usize, rho_max: f64, poles: Vec<Pole>) -> Self {
        let (rho_nodes, weights) = Density::grid(n_quad, rho_max);
        let values = rho_nodes.iter().map(|&r| SquareMatrix::scalar(m, C64::new(1.0 / (PI * r), 0.0))).collect();
        Self { m, poles, density: Density { rho_nodes, weights, values }, lambda_max: rho_max * rho_max }
    }

    pub fn validate_shape(&self) -> Result<()> {
        let d = &self.density;
        if d.rho_nodes.len() != d.weights.len() || d.rho_nodes.len() != d.values.len() {
            return Err(Error::InvalidInput("density arrays have different lengths".into()));
        }
        if d.values.iter().any(|v| v.dim() != self.m) || self.poles.iter().any(|p| p.alpha.dim() != self.m) {
            return Err(Error::InvalidInput(format!("spectral data matrices must be {m}x{m}", m = self.m)));
        }
        if d.rho_nodes.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidInput("density nodes must be positive".into()));
        }
        Ok(())
    }

    /// Re-samples the density on a new Gauss–Legendre grid with `n` nodes over
    /// the same `ρ` interval, by polynomial interpolation of `ρV(ρ²)`.
    pub fn resample(&self, n: usize) -> SpectralData {
        let rho_max = self.rho_max();
        let (rho_nodes, weights) = Density::grid(n, rho_max);
        let bary = Barycentric::new(&self.density.rho_nodes);
        let values = rho_nodes
            .iter()
            .map(|&r| {
                let c = bary.coefficients(r);
                let mut acc = SquareMatrix::zeros(self.m);
                for ((cj, v), &rj) in c.iter().zip(&self.density.values).zip(&self.density.rho_nodes) {
                    acc += &v.scale_real(cj * rj);
                }
                acc.scale_real(1.0 / r)
            })
            .collect();
        SpectralData {
            m: self.m,
            poles: self.poles.clone(),
            density: Density { rho_nodes, weights, values },
            lambda_max: self.lambda_max,
        }
    }

    /// `K` in `V ≈ I/(πρ) + Kρ⁻³`, fitted over the top quarter of the grid.
    pub fn tail_coefficient(&self) -> SquareMatrix {
        tail_fit(&self.density, self.m, true)
    }
}

/// Weighted mean of `ρ³(V − c I/(πρ))` over the top quarter of the nodes;
/// `c = 1` fits the density itself, `c = 0` a density difference.
pub(crate) fn tail_fit(d: &Density, m: usize, subtract_leading: bool) -> SquareMatrix {
    let n = d.rho_nodes.len();
    if n == 0 {
        return SquareMatrix::zeros(m);
    }
    let start = n - (n / 4).max(1);
    let mut acc = SquareMatrix::zeros(m);
    let mut wsum = 0.0;
    for j in start..n {
        let r = d.rho_nodes[j];
        let mut v = d.values[j].clone();
        if subtract_leading {
            v -= &SquareMatrix::scalar(m, C64::new(1.0 / (PI * r), 0.0));
        }
        acc += &v.scale_real(d.weights[j] * r * r * r);
        wsum += d.weights[j];
    }
    acc.scale_real(1.0 / wsum)
}

/// `J₀ = ∫_a^∞ dρ/(λ−ρ²)` and `J₂ = ∫_a^∞ dρ/(ρ²(λ−ρ²))`.
pub(crate) fn tail_integrals(lambda: C64, a: f64) -> (C64, C64) {
    let z = lambda / (a * a);
    if z.norm() < 0.25 {
        let mut s0 = C64::new(0.0, 0.0);
        let mut s2 = C64::new(0.0, 0.0);
        let mut zn = C64::new(1.0, 0.0);
        for k in 0..60 {
            s0 += zn / (2 * k + 1) as f64;
            s2 += zn / (2 * k + 3) as f64;
            zn *= z;
        }
        (-s0 / a, -s2 / (a * a * a))
    } else {
        let kappa = lambda.sqrt();
        let j0 = -(kappa / a).atanh() / kappa;
        let j2 = (j0 + 1.0 / a) / lambda;
        (j0, j2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylFromData {
    pub value: SquareMatrix,
    /// Size of the modelled non-universal tail term, `‖2K J₂(λ)‖`.
    pub tail_estimate: f64,
}

/// `M(λ) = ∫ V(μ)/(λ−μ) dμ + Σ α_k/(λ−λ_k)` from spectral data.
pub fn weyl_from_spectral_data(data: &SpectralData, lambda: C64, settings: &Settings) -> Result<WeylFromData> {
    data.validate_shape()?;
    if lambda.im == 0.0 && lambda.re >= 0.0 {
        return Err(Error::InvalidInput("lambda must lie off the closed positive half-line".into()));
    }
    if data.poles.iter().any(|p| C64::new(p.lambda, 0.0) == lambda) {
        return Err(Error::InvalidInput("lambda coincides with a pole".into()));
    }
    let m = data.m;
    let d = &data.density;
    let mut acc = SquareMatrix::zeros(m);
    for j in 0..d.rho_nodes.len() {
        let r = d.rho_nodes[j];
        let w = C64::new(2.0 * r * d.weights[j], 0.0) / (lambda - r * r);
        acc += &d.values[j].scale(w);
    }
    let mut tail_estimate = 0.0;
    if !d.rho_nodes.is_empty() {
        let a = data.rho_max();
        let (j0, j2) = tail_integrals(lambda, a);
        let k = data.tail_coefficient();
        let correction = k.scale(j2 * 2.0);
        tail_estimate = correction.norm();
        acc += &SquareMatrix::scalar(m, j0 * (2.0 / PI));
        acc += &correction;
        if tail_estimate > settings.quad_tol {
            return Err(Error::TailTooHeavy { estimate: tail_estimate, quad_tol: settings.quad_tol });
        }
    }
    for p in &data.poles {
        acc += &p.alpha.scale(C64::new(1.0, 0.0) / (lambda - p.lambda));
    }
    Ok(WeylFromData { value: acc, tail_estimate })
}

/// Eigenvalues and residues of a self-adjoint problem.
pub fn extract_poles(problem: &Problem, settings: &Settings) -> Result<Vec<Pole>> {
    let eig = find_eigenvalues_detailed(problem, settings)?;
    let lambdas: Vec<f64> = eig.iter().map(|e| e.lambda).collect();
    let radii = residue_radii(&lambdas);
    let mut poles = Vec::with_capacity(eig.len());
    for (e, r) in eig.iter().zip(&radii) {
        let alpha = residue(problem, e.lambda, *r, settings)?;
        let rank = alpha.rank(1e-6);
        if rank != e.multiplicity {
            log::warn!(
                "ScanTooCoarse: residue rank {rank} at lambda = {} differs from kernel dimension {} of u",
                e.lambda,
                e.multiplicity
            );
        }
        poles.push(Pole { lambda: e.lambda, alpha });
    }
    Ok(poles)
}

/// `V(ρ²)` at the given `ρ` nodes (jump formula).
pub fn density_on(problem: &Problem, rho_nodes: &[f64], settings: &Settings) -> Result<Vec<SquareMatrix>> {
    par_map(settings.threads, rho_nodes, |&r| continuous_density(problem, r * r, settings).map(|d| d.jump))
        .into_iter()
        .collect()
}

/// Eigenvalues, residues and the density of a self-adjoint problem.
pub fn extract_spectral_data(problem: &Problem, settings: &Settings) -> Result<SpectralData> {
    let poles = extract_poles(problem, settings)?;
    let (rho_nodes, weights) = Density::grid(settings.n_quad, settings.rho_max);
    let values = density_on(problem, &rho_nodes, settings)?;
    Ok(SpectralData {
        m: problem.m(),
        poles,
        density: Density { rho_nodes, weights, values },
        lambda_max: settings.rho_max * settings.rho_max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub offending: Vec<String>,
}

impl CheckResult {
    fn from(offending: Vec<String>) -> Self {
        Self { passed: offending.is_empty(), offending }
    }
}

/// Per-condition report of the admissibility checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpReport {
    /// Distinct negative eigenvalues.
    pub poles_distinct_negative: CheckResult,
    /// Hermitian, positive semidefinite, nonzero residues.
    pub residues_psd: CheckResult,
    /// `V ≻ 0`, `ρV` bounded, `ρM(λ)` bounded as `ρ → 0`.
    pub density_admissible: CheckResult,
    pub max_rho_v: f64,
    pub passed: bool,
}

pub fn validate_class_sp(data: &SpectralData, settings: &Settings) -> ClassSpReport {
    let mut off1 = Vec::new();
    for (k, p) in data.poles.iter().enumerate() {
        if !(p.lambda < 0.0) {
            off1.push(format!("pole {k}: lambda = {} is not negative", p.lambda));
        }
        for (j, q) in data.poles.iter().enumerate().skip(k + 1) {
            if (p.lambda - q.lambda).abs() <= 1e-12 * (1.0 + p.lambda.abs()) {
                off1.push(format!("poles {k} and {j} coincide at lambda = {}", p.lambda));
            }
        }
    }
    let mut off2 = Vec::new();
    for (k, p) in data.poles.iter().enumerate() {
        let scale = p.alpha.norm();
        if scale == 0.0 {
            off2.push(format!("pole {k}: residue is zero"));
            continue;
        }
        if !p.alpha.is_hermitian(settings.tol_herm * scale.max(1.0)) {
            off2.push(format!("pole {k}: residue is not Hermitian"));
        }
        let min_eig = p.alpha.hermitian_eigenvalues()[0];
        if min_eig < -1e-9 * scale.max(1.0) {
            off2.push(format!("pole {k}: residue has negative eigenvalue {min_eig:.3e}"));
        }
    }
    let mut off3 = Vec::new();
    let d = &data.density;
    let mut max_rho_v = 0.0_f64;
    for (j, (v, &r)) in d.values.iter().zip(&d.rho_nodes).enumerate() {
        max_rho_v = max_rho_v.max(r * v.norm());
        let scale = v.norm();
        if !v.is_hermitian(1e-6 * scale.max(1e-300)) {
            off3.push(format!("density node {j} (rho = {r:.4}): V is not Hermitian"));
        }
        if v.hermitian_eigenvalues()[0] <= 0.0 {
            off3.push(format!("density node {j} (rho = {r:.4}): V is not positive definite"));
        }
    }
    if !max_rho_v.is_finite() {
        off3.push("rho*V is unbounded on the grid".into());
    }
    if off3.is_empty() && !d.values.is_empty() {
        for theta in [0.25 * PI, 0.5 * PI, 0.75 * PI] {
            let mut norms = Vec::new();
            for eps in [0.2, 0.1, 0.05] {
                let rho = C64::from_polar(eps, theta);
                match weyl_from_spectral_data(data, rho * rho, settings) {
                    Ok(v) => norms.push((v.value.scale(rho)).norm()),
                    Err(e) => {
                        off3.push(format!("M unavailable near 0 along arg rho = {theta:.3}: {e}"));
                        break;
                    }
                }
            }
            if norms.len() == 3 && norms[2] > 3.0 * norms[0].max(1e-12) {
                off3.push(format!("rho*M grows near 0 along arg rho = {theta:.3}: {:.3e} -> {:.3e}", norms[0], norms[2]));
            }
        }
    }
    let r1 = CheckResult::from(off1);
    let r2 = CheckResult::from(off2);
    let r3 = CheckResult::from(off3);
    let passed = r1.passed && r2.passed && r3.passed;
    ClassSpReport { poles_distinct_negative: r1, residues_psd: r2, density_admissible: r3, max_rho_v, passed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::weyl_matrix;
    use crate::model::{PotentialSpec, Side};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn h_problem(h: &[f64]) -> Problem {
        let hm = SquareMatrix::diagonal(&h.iter().map(|&v| c(v, 0.0)).collect::<Vec<_>>());
        Problem::new(h.len(), PotentialSpec::Zero, hm, true).unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        let s = Settings::default();
        let e = find_eigenvalues(&h_problem(&[-1.0]), &s).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0] + 1.0).abs() < 1e-10);
        assert!(find_eigenvalues(&Problem::free(2), &s).unwrap().is_empty());
        let e = find_eigenvalues_detailed(&h_problem(&[-1.0, 1.0]), &s).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].lambda + 1.0).abs() < 1e-10);
        assert_eq!(e[0].multiplicity, 1);
    }

    #[test]
    fn residue_examples() {
        let s = Settings::default();
        let a = residue(&h_problem(&[-1.0]), -1.0, 0.5, &s).unwrap();
        assert!((a.get(0, 0) - c(2.0, 0.0)).norm() < 1e-10);
        let a = residue(&h_problem(&[-1.0, 1.0]), -1.0, 0.5, &s).unwrap();
        let expect = SquareMatrix::from_real(2, &[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(a.dist(&expect) < 1e-10);
    }

    #[test]
    fn free_density_both_formulas() {
        let s = Settings::default();
        for lam in [0.01, 1.0, 4.0, 100.0] {
            let d = continuous_density(&Problem::free(1), lam, &s).unwrap();
            let expect = 1.0 / (PI * lam.sqrt());
            assert!((d.jump.get(0, 0) - c(expect, 0.0)).norm() < 1e-13 * expect);
            assert!(d.deviation().unwrap() < 1e-13);
        }
    }

    #[test]
    fn jump_is_antisymmetric_under_side_exchange() {
        let s = Settings::default();
        let p = h_problem(&[0.3, -0.2]);
        let l = c(2.5, 0.0);
        let plus = weyl_matrix(&p, l, Side::Plus, &s).unwrap();
        let minus = weyl_matrix(&p, l, Side::Minus, &s).unwrap();
        let v = (&minus - &plus).scale(c(0.0, -1.0 / (2.0 * PI)));
        let swapped = (&plus - &minus).scale(c(0.0, -1.0 / (2.0 * PI)));
        assert!((v + swapped).norm() < 1e-15);
    }

    #[test]
    fn tail_integrals_match_quadrature() {
        let a = 20.0;
        for lam in [c(-1.0, 0.0), c(-5.0, 3.0), c(300.0, 50.0), c(0.001, 0.002)] {
            let (j0, j2) = tail_integrals(lam, a);
            // Substitute ρ = a/s, s ∈ (0, 1].
            let (s_nodes, w) = gauss_legendre_interval(200, 0.0, 1.0);
            let mut q0 = c(0.0, 0.0);
            let mut q2 = c(0.0, 0.0);
            for (s, w) in s_nodes.iter().zip(&w) {
                let r = a / s;
                let jac = a / (s * s);
                q0 += C64::new(w * jac, 0.0) / (lam - r * r);
                q2 += C64::new(w * jac / (r * r), 0.0) / (lam - r * r);
            }
            assert!((j0 - q0).norm() < 1e-12 * q0.norm(), "{lam}: {j0} vs {q0}");
            assert!((j2 - q2).norm() < 1e-10 * q2.norm(), "{lam}: {j2} vs {q2}");
        }
    }

    #[test]
    fn free_field_msd() {
        let s = Settings::default();
        let data = SpectralData::free(1, 200, 20.0, vec![]);
        let v = weyl_from_spectral_data(&data, c(-1.0, 0.0), &s).unwrap();
        // M = 1/(iρ) with ρ = i, i.e. −1.
        assert!((v.value.get(0, 0) - c(-1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn pole_only_msd() {
        let s = Settings::default();
        let data = SpectralData {
            m: 2,
            poles: vec![Pole { lambda: -1.0, alpha: SquareMatrix::scalar(2, c(2.0, 0.0)) }],
            density: Density::empty(),
            lambda_max: 400.0,
        };
        let l = c(0.5, 1e-3);
        let v = weyl_from_spectral_data(&data, l, &s).unwrap();
        let expect = SquareMatrix::scalar(2, c(2.0, 0.0) / (l + 1.0));
        assert_eq!(v.value, expect);
    }

    #[test]
    fn msd_matches_forward_for_boundary_eigenvalue() {
        let mut s = Settings::default();
        s.threads = 1;
        let p = h_problem(&[-1.0]);
        let data = extract_spectral_data(&p, &s).unwrap();
        assert_eq!(data.poles.len(), 1);
        let l = c(-4.0, 0.0);
        let msd = weyl_from_spectral_data(&data, l, &s).unwrap().value;
        let direct = weyl_matrix(&p, l, Side::Auto, &s).unwrap();
        assert!(msd.dist(&direct) < 1e-5 * direct.norm());
    }

    #[test]
    fn class_sp_checks() {
        let s = Settings::default();
        let free = SpectralData::free(2, 64, 20.0, vec![]);
        assert!(validate_class_sp(&free, &s).passed);
        let bad = SpectralData::free(
            2,
            64,
            20.0,
            vec![Pole { lambda: -1.0, alpha: SquareMatrix::from_real(2, &[1.0, 0.0, 0.0, -1.0]).unwrap() }],
        );
        let r = validate_class_sp(&bad, &s);
        assert!(!r.residues_psd.passed && !r.passed);
        let dup = SpectralData::free(
            1,
            64,
            20.0,
            vec![
                Pole { lambda: -1.0, alpha: SquareMatrix::identity(1) },
                Pole { lambda: -1.0, alpha: SquareMatrix::identity(1) },
            ],
        );
        assert!(!validate_class_sp(&dup, &s).poles_distinct_negative.passed);
    }

    #[test]
    fn resample_preserves_smooth_density() {
        let data = SpectralData::free(1, 100, 20.0, vec![]);
        let fine = data.resample(200);
        for (r, v) in fine.density.rho_nodes.iter().zip(&fine.density.values) {
            assert!((v.get(0, 0).re - 1.0 / (PI * r)).abs() < 1e-10 / r);
        }
    }
}
