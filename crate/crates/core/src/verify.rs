//! Identity checks on forward quantities, seeded random problems, and
//! end-to-end round trips through the inverse solvers.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite::{reconstruct, PolePrescription};
use crate::forward::{jost, solve_regular, u_raw, weyl_matrix, weyl_matrix_adjoint, wronskian, Variant};
use crate::matrix::{SquareMatrix, C64};
use crate::model::{ExpTerm, PotentialSpec, Problem, Settings, Side, SpectralPoint};
use crate::selfadjoint::{reconstruct_sd, RestVEstimate};
use crate::spectral::{extract_poles, extract_spectral_data, find_eigenvalues, validate_class_sp, Pole};

/// Random Hermitian matrix with entries of size up to `scale`.
pub fn random_hermitian(rng: &mut impl Rng, m: usize, scale: f64) -> SquareMatrix {
    let mut a = SquareMatrix::zeros(m);
    for i in 0..m {
        a.set(i, i, C64::new(rng.gen_range(-scale..scale), 0.0));
        for j in (i + 1)..m {
            let v = C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)) * 0.5;
            a.set(i, j, v);
            a.set(j, i, v.conj());
        }
    }
    a
}

/// Self-adjoint problem with `Q = Σ A_k e^{−b_k x}` on `[0, X]` and Hermitian `h`,
/// fully determined by `seed`.
pub fn random_compact_problem(seed: u64, m: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_terms = rng.gen_range(1..=2);
    let terms = (0..n_terms)
        .map(|_| ExpTerm { coefficient: random_hermitian(&mut rng, m, 1.5), rate: rng.gen_range(0.3..2.0) })
        .collect();
    let x_max = rng.gen_range(1.5..4.0);
    let h = random_hermitian(&mut rng, m, 0.5);
    Problem::new(m, PotentialSpec::ExponentialSum { terms, x_max }, h, true).expect("generated problem is valid")
}

/// Largest variation over `x_grid` of `⟨Z, Y⟩` for `Y ∈ {φ, S}`, `Z ∈ {φ*, S*}`,
/// relative to `1 + ‖⟨Z, Y⟩(0)‖`.
pub fn wronskian_constancy(problem: &Problem, lambda: C64, x_grid: &[f64], settings: &Settings) -> Result<f64> {
    let ys = [
        solve_regular(problem, Variant::Phi, lambda, x_grid, 0, settings)?,
        solve_regular(problem, Variant::S, lambda, x_grid, 0, settings)?,
    ];
    let zs = [
        solve_regular(problem, Variant::PhiAdjoint, lambda, x_grid, 0, settings)?,
        solve_regular(problem, Variant::SAdjoint, lambda, x_grid, 0, settings)?,
    ];
    let mut worst = 0.0f64;
    for y in &ys {
        for z in &zs {
            let w0 = wronskian(&z[0][0], &y[0][0]);
            for k in 1..x_grid.len() {
                let w = wronskian(&z[0][k], &y[0][k]);
                worst = worst.max(w.dist(&w0) / (1.0 + w0.norm()));
            }
        }
    }
    Ok(worst)
}

/// `max_x ‖⟨e*(x, −ρ), e(x, ρ)⟩ + 2iρ I‖` for real `ρ ≠ 0`.
pub fn jost_pairing(problem: &Problem, rho: f64, x_grid: &[f64], settings: &Settings) -> Result<f64> {
    if rho == 0.0 || !rho.is_finite() {
        return Err(Error::InvalidInput("ρ must be real, finite and nonzero".into()));
    }
    let e = jost(problem, SpectralPoint::from_rho(C64::new(rho, 0.0))?, x_grid, false, settings)?;
    let es = jost(problem, SpectralPoint::from_rho(C64::new(-rho, 0.0))?, x_grid, true, settings)?;
    let es = es.adjoint.expect("adjoint requested");
    let target = SquareMatrix::scalar(problem.m(), C64::new(0.0, -2.0 * rho));
    Ok(e.direct.iter().zip(&es).map(|(y, z)| wronskian(z, y).dist(&target)).fold(0.0, f64::max))
}

/// `‖M(λ) − M*(λ)‖ / (1 + ‖M‖)`.
pub fn weyl_symmetry(problem: &Problem, lambda: C64, side: Side, settings: &Settings) -> Result<f64> {
    let a = weyl_matrix(problem, lambda, side, settings)?;
    let b = weyl_matrix_adjoint(problem, lambda, side, settings)?;
    Ok(a.dist(&b) / (1.0 + a.norm()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct XiReport {
    /// `max ‖ξξ† − I‖` for `ξ = u*(−ρ) u*(ρ)⁻¹`.
    pub unitarity: f64,
    /// The same for `ξ = u(ρ)⁻¹ u(−ρ)`.
    pub alternative_unitarity: f64,
    /// `max ‖ξ₁ − ξ₂‖`.
    pub form_mismatch: f64,
}

impl XiReport {
    pub fn max_deviation(&self) -> f64 {
        self.unitarity.max(self.alternative_unitarity)
    }
}

/// Unitarity of `ξ(ρ)` on real `ρ ≠ 0` for a self-adjoint problem.
pub fn check_xi_unitarity(problem: &Problem, rho_grid: &[f64], settings: &Settings) -> Result<XiReport> {
    if !problem.selfadjoint() {
        return Err(Error::InvalidInput("unitarity of ξ requires a self-adjoint problem".into()));
    }
    let id = SquareMatrix::identity(problem.m());
    let mut rep = XiReport::default();
    for &r in rho_grid {
        if r == 0.0 || !r.is_finite() {
            return Err(Error::InvalidInput("ρ grid must be real and nonzero".into()));
        }
        let rho = C64::new(r, 0.0);
        let inv = |u: SquareMatrix, at: C64| u.inverse_checked(settings.cond_max).map_err(|_| near_singular(&u, at));
        let us_p = u_raw(problem, rho, true, settings)?;
        let us_m = u_raw(problem, -rho, true, settings)?;
        let u_p = u_raw(problem, rho, false, settings)?;
        let u_m = u_raw(problem, -rho, false, settings)?;
        let xi1 = &us_m * &inv(us_p, rho)?;
        let xi2 = &inv(u_p, rho)? * &u_m;
        rep.unitarity = rep.unitarity.max((&xi1 * &xi1.adjoint()).dist(&id));
        rep.alternative_unitarity = rep.alternative_unitarity.max((&xi2 * &xi2.adjoint()).dist(&id));
        rep.form_mismatch = rep.form_mismatch.max(xi1.dist(&xi2));
    }
    Ok(rep)
}

fn near_singular(u: &SquareMatrix, rho: C64) -> Error {
    Error::NearSingularU { rho, condition: u.condition() }
}

/// Least-squares slope of `log ‖iρM − I − h/(iρ)‖` against `log t` on `ρ = it`.
pub fn asymptotic_exponent(problem: &Problem, t_range: (f64, f64), points: usize, settings: &Settings) -> Result<f64> {
    let m = problem.m();
    let mut xs = Vec::with_capacity(points);
    let mut ys = Vec::with_capacity(points);
    for k in 0..points {
        let t = t_range.0 * (t_range.1 / t_range.0).powf(k as f64 / (points - 1) as f64);
        let irho = C64::new(-t, 0.0);
        let mw = weyl_matrix(problem, C64::new(-t * t, 0.0), Side::Auto, settings)?;
        let r = &mw.scale(irho) - &SquareMatrix::identity(m) - problem.h().scale(irho.inv());
        xs.push(t.ln());
        ys.push(r.norm().max(f64::MIN_POSITIVE).ln());
    }
    let n = points as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// `n` points on a circle around all `poles` that stays off `[0, ∞)`.
pub fn contour_points(poles: &[C64], n: usize) -> Result<Vec<C64>> {
    if poles.is_empty() {
        return Err(Error::InvalidInput("need at least one pole to place a contour".into()));
    }
    let center = poles.iter().sum::<C64>() / poles.len() as f64;
    let r0 = poles.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    let d = if center.re >= 0.0 { center.im.abs() } else { center.norm() };
    if d <= r0 {
        return Err(Error::InvalidInput("poles cannot be enclosed without crossing the positive half-line".into()));
    }
    let r = 0.5 * (r0 + d);
    // Offset by half a step so no point lands on the real axis.
    Ok((0..n)
        .map(|k| center + C64::from_polar(r, 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Criterion {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value <= threshold }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub kind: String,
    pub seed: Option<u64>,
    pub settings: Settings,
    pub criteria: Vec<Criterion>,
    pub max_weyl_mismatch: Option<f64>,
    pub eigenvalue_mismatch: Option<f64>,
    pub residue_mismatch: Option<f64>,
    /// Witness for the decay condition on the density difference.
    pub rest_v: RestVEstimate,
    /// Witness for solvability of the main equation.
    pub min_log_abs_det: Option<f64>,
    pub max_condition: Option<f64>,
    /// Witness for integrability of `ε`.
    pub eps_l1: Option<f64>,
    pub eps_weighted_l1: Option<f64>,
    pub q_l1_error: Option<f64>,
    pub h_error: Option<f64>,
    pub class_sp: Option<bool>,
    pub eigenvalue_count_stable: Option<bool>,
    pub error: Option<String>,
    pub error_kind: Option<String>,
    pub passed: bool,
    #[serde(skip)]
    pub timings: Vec<(String, Duration)>,
}

impl RoundTripReport {
    fn new(kind: &str, settings: &Settings) -> Self {
        Self { kind: kind.into(), settings: settings.clone(), ..Default::default() }
    }

    fn fail(&mut self, e: Error) {
        self.error_kind = Some(e.kind().into());
        self.error = Some(e.to_string());
        self.passed = false;
    }

    fn finalize(&mut self) {
        self.passed = self.error.is_none() && self.criteria.iter().all(|c| c.passed);
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("round trip ({})", self.kind);
        if let Some(seed) = self.seed {
            s += &format!(", seed {seed}");
        }
        s.push('\n');
        for c in &self.criteria {
            s += &format!(
                "  [{}] {:<28} {:.3e} (limit {:.1e})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold
            );
        }
        let opt = |name: &str, v: Option<f64>| v.map(|v| format!("  {name:<30} {v:.3e}\n")).unwrap_or_default();
        s += &opt("min log|det|", self.min_log_abs_det);
        s += &opt("max condition", self.max_condition);
        s += &opt("integral of |eps|", self.eps_l1);
        s += &opt("integral of (1+x)|eps|", self.eps_weighted_l1);
        s += &format!("  {:<30} {:.3e} (ratio {:.4})\n", "density difference sum", self.rest_v.full, self.rest_v.ratio);
        if let Some(e) = &self.error {
            s += &format!("  error: {e}\n");
        }
        s += if self.passed { "result: PASS\n" } else { "result: FAIL\n" };
        s
    }

    /// Stage timings, kept out of `to_text` so that output is reproducible.
    pub fn timings_text(&self) -> String {
        self.timings.iter().map(|(name, t)| format!("{name}: {:.3} s\n", t.as_secs_f64())).collect()
    }
}

/// Matches each expected pole to the nearest found one.
fn compare_poles(expected: &[Pole], found: &[Pole]) -> (f64, f64) {
    if expected.len() != found.len() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let mut dl = 0.0f64;
    let mut da = 0.0f64;
    for p in expected {
        let q = found
            .iter()
            .min_by(|a, b| (a.lambda - p.lambda).abs().total_cmp(&(b.lambda - p.lambda).abs()))
            .expect("non-empty");
        dl = dl.max((q.lambda - p.lambda).abs());
        da = da.max(q.alpha.dist(&p.alpha));
    }
    (dl, da)
}

pub const WEYL_TOL: f64 = 1e-4;
pub const EIGEN_TOL: f64 = 1e-6;
pub const Q_L1_TOL: f64 = 5e-2;

/// Pole-prescription round trip: reconstruct, solve the forward problem for the
/// result and compare `M` with `M̃ + Σ α/(λ − λ_k)^ν` on `contour`.
pub fn roundtrip_finite(
    model: &Problem,
    prescription: &PolePrescription,
    contour: &[C64],
    x_grid: &[f64],
    settings: &Settings,
) -> RoundTripReport {
    let mut rep = RoundTripReport::new("finite", settings);
    let t = Instant::now();
    let rec = match reconstruct(model, prescription, x_grid, settings) {
        Ok(r) => r,
        Err(e) => {
            rep.fail(e);
            return rep;
        }
    };
    rep.timings.push(("reconstruct".into(), t.elapsed()));
    rep.min_log_abs_det = Some(rec.diagnostics.min_log_abs_det);
    rep.max_condition = Some(rec.diagnostics.max_condition);
    rep.eps_l1 = Some(rec.eps_report.l1);
    rep.eps_weighted_l1 = Some(rec.eps_report.weighted_l1);
    rep.rest_v = RestVEstimate { full: 0.0, half: 0.0, ratio: 1.0 };

    let t = Instant::now();
    let m = model.m();
    let mut worst = 0.0f64;
    for &l in contour {
        let target = match weyl_matrix(model, l, Side::Auto, settings) {
            Ok(mt) => mt + prescription.principal_part(m, l),
            Err(e) => {
                rep.fail(e);
                return rep;
            }
        };
        match weyl_matrix(&rec.problem, l, Side::Auto, settings) {
            Ok(got) => worst = worst.max(got.dist(&target) / target.norm().max(f64::MIN_POSITIVE)),
            Err(e) => {
                rep.fail(e);
                return rep;
            }
        }
    }
    rep.max_weyl_mismatch = Some(worst);
    rep.criteria.push(Criterion::at_most("weyl matrix mismatch", worst, WEYL_TOL));
    rep.timings.push(("forward".into(), t.elapsed()));

    if rec.problem.selfadjoint() && prescription.0.iter().all(|p| p.terms.len() == 1 && p.terms[0].nu == 1) {
        let t = Instant::now();
        let mut expected: Vec<Pole> = prescription
            .0
            .iter()
            .map(|p| Pole { lambda: p.lambda.re, alpha: p.terms[0].alpha.clone() })
            .collect();
        let found = extract_poles(model, settings).and_then(|mp| {
            expected.extend(mp);
            extract_poles(&rec.problem, settings)
        });
        match found {
            Ok(found) => {
                let (dl, da) = compare_poles(&expected, &found);
                rep.eigenvalue_mismatch = Some(dl);
                rep.residue_mismatch = Some(da);
                rep.criteria.push(Criterion::at_most("eigenvalue mismatch", dl, EIGEN_TOL));
                rep.criteria.push(Criterion::at_most("residue mismatch", da, EIGEN_TOL));
            }
            Err(e) => rep.fail(e),
        }
        rep.timings.push(("spectrum".into(), t.elapsed()));
    }
    rep.finalize();
    rep
}

/// `∫‖A(x) − B(x)‖ dx` by the trapezoid rule on `x`.
pub fn l1_distance(x: &[f64], a: &[SquareMatrix], b: &[SquareMatrix]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(a, b)| a.dist(b)).collect();
    (1..x.len()).map(|k| 0.5 * (x[k] - x[k - 1]) * (d[k] + d[k - 1])).sum()
}

/// Spectral-data round trip: extract data of `truth`, check admissibility,
/// invert against `model`, and compare potentials and spectra.
pub fn roundtrip_selfadjoint(truth: &Problem, model: &Problem, x_grid: &[f64], settings: &Settings) -> RoundTripReport {
    let mut rep = RoundTripReport::new("selfadjoint", settings);
    let t = Instant::now();
    let data = match extract_spectral_data(truth, settings) {
        Ok(d) => d,
        Err(e) => {
            rep.fail(e);
            return rep;
        }
    };
    rep.timings.push(("spectral data".into(), t.elapsed()));
    let sp = validate_class_sp(&data, settings);
    rep.class_sp = Some(sp.passed);
    rep.criteria.push(Criterion::at_most("class Sp violations", if sp.passed { 0.0 } else { 1.0 }, 0.0));
    let finer = Settings { scan_steps: 2 * settings.scan_steps, ..settings.clone() };
    match (find_eigenvalues(truth, &finer), find_eigenvalues(truth, settings)) {
        (Ok(a), Ok(b)) => rep.eigenvalue_count_stable = Some(a.len() == b.len()),
        (Err(e), _) | (_, Err(e)) => {
            rep.fail(e);
            return rep;
        }
    }

    let t = Instant::now();
    let rec = match reconstruct_sd(&data, model, x_grid, settings) {
        Ok(r) => r,
        Err(e) => {
            rep.fail(e);
            return rep;
        }
    };
    rep.timings.push(("reconstruct".into(), t.elapsed()));
    let r = &rec.reconstruction;
    rep.rest_v = rec.report.rest_v.clone();
    rep.min_log_abs_det = Some(r.diagnostics.min_log_abs_det);
    rep.max_condition = Some(r.diagnostics.max_condition);
    rep.eps_l1 = Some(r.eps_report.l1);
    rep.eps_weighted_l1 = Some(r.eps_report.weighted_l1);
    let q_true: Vec<SquareMatrix> = x_grid.iter().map(|&x| truth.q(x)).collect();
    let q_err = l1_distance(x_grid, &r.q, &q_true);
    rep.q_l1_error = Some(q_err);
    rep.h_error = Some(r.h.dist(truth.h()));
    rep.criteria.push(Criterion::at_most("potential L1 error", q_err, Q_L1_TOL));

    let t = Instant::now();
    match extract_poles(&r.problem, settings) {
        Ok(found) => {
            let (dl, da) = compare_poles(&data.poles, &found);
            rep.eigenvalue_mismatch = Some(dl);
            rep.residue_mismatch = Some(da);
        }
        Err(e) => {
            rep.fail(e);
            return rep;
        }
    }
    let points: Vec<C64> = (0..8).map(|k| C64::new(-5.0, 1.0 + 9.0 * k as f64 / 7.0)).collect();
    let mut worst = 0.0f64;
    for &l in &points {
        match (weyl_matrix(truth, l, Side::Auto, settings), weyl_matrix(&r.problem, l, Side::Auto, settings)) {
            (Ok(a), Ok(b)) => worst = worst.max(a.dist(&b) / a.norm()),
            (Err(e), _) | (_, Err(e)) => {
                rep.fail(e);
                return rep;
            }
        }
    }
    rep.max_weyl_mismatch = Some(worst);
    rep.timings.push(("forward".into(), t.elapsed()));
    rep.finalize();
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    #[test]
    fn generator_is_deterministic_and_hermitian() {
        let a = random_compact_problem(7, 2);
        let b = random_compact_problem(7, 2);
        assert_eq!(a, b);
        assert!(a.h().is_hermitian(0.0));
        assert!(a.q(0.3).is_hermitian(1e-15));
        assert_ne!(random_compact_problem(8, 2), a);
    }

    #[test]
    fn free_xi_is_minus_one() {
        let p = Problem::free(1);
        let r = check_xi_unitarity(&p, &[0.5, 1.0, 3.0], &Settings::default()).unwrap();
        assert!(r.max_deviation() < 1e-14 && r.form_mismatch < 1e-14);
        let xi = u_raw(&p, c(-2.0), true, &Settings::default()).unwrap().get(0, 0)
            / u_raw(&p, c(2.0), true, &Settings::default()).unwrap().get(0, 0);
        assert!((xi - c(-1.0)).norm() < 1e-15);
    }

    #[test]
    fn identities_hold_for_random_problem() {
        let s = Settings::default();
        let p = random_compact_problem(3, 2);
        let g: Vec<f64> = (0..=16).map(|k| 0.25 * k as f64).collect();
        assert!(wronskian_constancy(&p, C64::new(2.0, 0.5), &g, &s).unwrap() < 1e-8);
        assert!(jost_pairing(&p, 1.7, &g, &s).unwrap() < 1e-7);
        assert!(weyl_symmetry(&p, C64::new(-1.0, 2.0), Side::Auto, &s).unwrap() < 1e-8);
        let xi = check_xi_unitarity(&p, &[0.5, 2.0, 7.0], &s).unwrap();
        assert!(xi.max_deviation() < 1e-6 && xi.form_mismatch < 1e-8, "{xi:?}");
    }

    #[test]
    fn contour_encloses_poles() {
        let pts = contour_points(&[c(-1.0)], 16).unwrap();
        assert_eq!(pts.len(), 16);
        for p in &pts {
            assert!(((p - c(-1.0)).norm() - 0.5).abs() < 1e-14);
            assert!(p.im != 0.0);
        }
        assert!(contour_points(&[c(-1.0), C64::new(3.0, 0.1)], 8).is_err());
    }

    #[test]
    fn empty_prescription_round_trip() {
        let model = random_compact_problem(5, 1);
        let g: Vec<f64> = (0..=80).map(|k| 0.05 * k as f64).collect();
        let pts = contour_points(&[c(-2.0)], 6).unwrap();
        let rep = roundtrip_finite(&model, &PolePrescription::empty(), &pts, &g, &Settings::default());
        assert!(rep.error.is_none(), "{:?}", rep.error);
        assert_eq!(rep.eps_l1, Some(0.0));
    }

    #[test]
    fn sign_flip_report() {
        let p = PolePrescription::simple(&[(c(-1.0), SquareMatrix::scalar(1, c(-2.0)))]);
        let g: Vec<f64> = (0..=100).map(|k| 0.02 * k as f64).collect();
        let rep = roundtrip_finite(&Problem::free(1), &p, &contour_points(&[c(-1.0)], 16).unwrap(), &g, &Settings::default());
        assert_eq!(rep.error_kind.as_deref(), Some("SingularMainSystem"));
        assert!(!rep.passed);
        let text = rep.to_text();
        assert!(text.contains("FAIL"));
        let json = serde_json::to_string(&rep).unwrap();
        assert!(!json.contains("timings"));
    }
}
