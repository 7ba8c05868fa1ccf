//! Inversion from spectral data `{V, (λ_k, α_k)}` of a self-adjoint problem:
//! the continuous part of the main equation is discretized on the density's
//! Gauss–Legendre grid (Nyström) and solved together with the pole terms.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite::{check_reconstruction_grid, finish, Reconstruction, SolveDiagnostics};
use crate::forward::check_grid;
use crate::mainsys::{Atom, MainEngine, MainNode};
use crate::matrix::{SquareMatrix, C64};
use crate::model::{Problem, Settings};
use crate::special::sine_integral;
use crate::spectral::{density_on, extract_poles, tail_fit, Density, Pole, SpectralData};

/// Discrete estimate of `∫ ρ⁴‖V̂‖² dρ` on the full grid and on its lower half.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RestVEstimate {
    pub full: f64,
    pub half: f64,
    /// `full / half`; close to 1 when the integral has converged.
    pub ratio: f64,
}

/// Ratio above which the discrete sum is taken to keep growing with `ρ`.
pub const REST_V_RATIO_MAX: f64 = 1.1;

/// Target-minus-model data on the shared grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataDifference {
    pub rho_nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `V̂ = V − Ṽ` at the nodes.
    pub v_hat: Vec<SquareMatrix>,
    pub target_poles: Vec<Pole>,
    pub model_poles: Vec<Pole>,
    pub rho_max: f64,
    /// `K̂` in `V̂ ≈ K̂ρ⁻³` past the grid.
    pub tail: SquareMatrix,
    pub rest_v: RestVEstimate,
}

fn model_data(model: &Problem, rho: &[f64], settings: &Settings) -> Result<(Vec<SquareMatrix>, Vec<Pole>)> {
    let m = model.m();
    if model.is_zero_potential() && model.h().max_abs() == 0.0 {
        let v = rho.iter().map(|&r| SquareMatrix::scalar(m, C64::new(1.0 / (PI * r), 0.0))).collect();
        return Ok((v, Vec::new()));
    }
    Ok((density_on(model, rho, settings)?, extract_poles(model, settings)?))
}

pub fn build_data(target: &SpectralData, model: &Problem, settings: &Settings) -> Result<DataDifference> {
    target.validate_shape()?;
    if target.m != model.m() {
        return Err(Error::InvalidInput(format!("target has m = {}, model has m = {}", target.m, model.m())));
    }
    if !model.selfadjoint() {
        return Err(Error::InvalidInput("model problem must be self-adjoint".into()));
    }
    let d = &target.density;
    let (model_v, model_poles) = model_data(model, &d.rho_nodes, settings)?;
    let v_hat: Vec<SquareMatrix> = d.values.iter().zip(&model_v).map(|(v, w)| v - w).collect();
    let diff = Density { rho_nodes: d.rho_nodes.clone(), weights: d.weights.clone(), values: v_hat.clone() };
    let tail = tail_fit(&diff, target.m, false);
    let rho_max = target.rho_max();
    let rest_v = rest_v_estimate(&diff, rho_max);
    if rest_v.ratio > REST_V_RATIO_MAX {
        return Err(Error::RestVDiverging { ratio: rest_v.ratio });
    }
    Ok(DataDifference {
        rho_nodes: d.rho_nodes.clone(),
        weights: d.weights.clone(),
        v_hat,
        target_poles: target.poles.clone(),
        model_poles,
        rho_max,
        tail,
        rest_v,
    })
}

fn rest_v_estimate(d: &Density, rho_max: f64) -> RestVEstimate {
    let mut full = 0.0;
    let mut half = 0.0;
    for ((&r, &w), v) in d.rho_nodes.iter().zip(&d.weights).zip(&d.values) {
        let n = v.norm();
        let t = w * r.powi(4) * n * n;
        full += t;
        if r <= 0.5 * rho_max {
            half += t;
        }
    }
    let ratio = if half > 0.0 { full / half } else if full > 0.0 { f64::INFINITY } else { 1.0 };
    RestVEstimate { full, half, ratio }
}

impl DataDifference {
    /// Pole terms first (target `+α_k`, model `−α̃_k`, merged when the points
    /// coincide), then one atom `w_j 2ρ_j V̂_j` per density node. Atoms whose
    /// coefficient vanishes exactly are dropped.
    pub(crate) fn atoms(&self, m: usize) -> Vec<Atom> {
        let mut atoms: Vec<Atom> = Vec::new();
        let mut push = |lambda: C64, alpha: SquareMatrix| {
            if let Some(a) = atoms.iter_mut().find(|a| a.lambda == lambda) {
                a.terms[0] += &alpha;
            } else {
                atoms.push(Atom::simple(lambda, alpha));
            }
        };
        for p in &self.target_poles {
            push(C64::new(p.lambda, 0.0), p.alpha.clone());
        }
        for p in &self.model_poles {
            push(C64::new(p.lambda, 0.0), -&p.alpha);
        }
        for j in 0..self.rho_nodes.len() {
            let r = self.rho_nodes[j];
            push(C64::new(r * r, 0.0), self.v_hat[j].scale_real(2.0 * r * self.weights[j]));
        }
        let zero = SquareMatrix::zeros(m);
        atoms.retain(|a| a.terms[0] != zero);
        atoms
    }

    /// Contribution to `ε₀` and `ε₀′` of the density difference beyond `ρ_max`,
    /// to first order with `φ ≈ φ̃ ≈ cos ρx`.
    pub fn tail_terms(&self, x: f64) -> (SquareMatrix, SquareMatrix) {
        let a = self.rho_max;
        let z = 2.0 * a * x;
        let rest = FRAC_PI_2 - sine_integral(z);
        let e0 = 1.0 / a + z.cos() / a - 2.0 * x * rest;
        (self.tail.scale_real(e0), self.tail.scale_real(-2.0 * rest))
    }
}

/// Solver output with the discretization that was finally used.
#[derive(Clone, Debug)]
pub struct MainSolution {
    pub nodes: Vec<MainNode>,
    pub data: DataDifference,
    /// Set when the first attempt was singular and the density was resampled.
    pub refined: bool,
}

fn solve_once(data: &DataDifference, model: &Problem, x_grid: &[f64], keep: bool, settings: &Settings) -> Result<Vec<MainNode>> {
    let engine = MainEngine::new(model, data.atoms(model.m()), settings)?;
    engine.solve_grid(x_grid, keep)
}

/// Solves the discretized main equation on `x_grid`. A singular system is
/// retried once with the density resampled on twice as many nodes.
pub fn solve_main_grid(
    target: &SpectralData,
    model: &Problem,
    x_grid: &[f64],
    keep_blocks: bool,
    settings: &Settings,
) -> Result<MainSolution> {
    settings.validate()?;
    check_grid(x_grid)?;
    let data = build_data(target, model, settings)?;
    match solve_once(&data, model, x_grid, keep_blocks, settings) {
        Ok(nodes) => Ok(MainSolution { nodes, data, refined: false }),
        Err(Error::SingularMainSystem { x, condition, .. }) if !target.density.rho_nodes.is_empty() => {
            log::warn!("main system singular at x = {x} (condition {condition:.3e}); retrying with a finer density grid");
            let finer = target.resample(2 * target.density.rho_nodes.len());
            let data = build_data(&finer, model, settings)?;
            let nodes = solve_once(&data, model, x_grid, keep_blocks, settings)?;
            Ok(MainSolution { nodes, data, refined: true })
        }
        Err(e) => Err(e),
    }
}

/// Solution blocks at one `x`: pole unknowns first, then one per density node.
pub fn solve_main(target: &SpectralData, model: &Problem, x: f64, settings: &Settings) -> Result<MainNode> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidInput("x must be finite and non-negative".into()));
    }
    let grid = if x > 0.0 { vec![0.0, x] } else { vec![0.0] };
    let mut sol = solve_main_grid(target, model, &grid, true, settings)?;
    Ok(sol.nodes.pop().expect("grid is non-empty"))
}

/// Continuous-data specific diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdReport {
    pub rest_v: RestVEstimate,
    pub tail_coefficient: f64,
    pub density_nodes: usize,
    pub atoms: usize,
    pub refined: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SdReconstruction {
    pub reconstruction: Reconstruction,
    pub report: SdReport,
}

pub fn reconstruct_sd(
    target: &SpectralData,
    model: &Problem,
    x_grid: &[f64],
    settings: &Settings,
) -> Result<SdReconstruction> {
    check_reconstruction_grid(x_grid)?;
    let sol = solve_main_grid(target, model, x_grid, false, settings)?;
    let mut eps0 = Vec::with_capacity(x_grid.len());
    let mut eps0_dx = Vec::with_capacity(x_grid.len());
    for n in &sol.nodes {
        let (t0, t1) = sol.data.tail_terms(n.x);
        eps0.push(&n.eps0 + &t0);
        eps0_dx.push(&n.eps0_dx + &t1);
    }
    let diagnostics = SolveDiagnostics::from_nodes(&sol.nodes);
    let reconstruction = finish(model, x_grid, eps0, &eps0_dx, diagnostics, true, settings)?;
    let report = SdReport {
        rest_v: sol.data.rest_v.clone(),
        tail_coefficient: sol.data.tail.norm(),
        density_nodes: sol.data.rho_nodes.len(),
        atoms: sol.data.atoms(model.m()).len(),
        refined: sol.refined,
    };
    Ok(SdReconstruction { reconstruction, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::{solve_at, PolePrescription};
    use crate::forward::{solve_regular, Variant};
    use crate::model::{ExpTerm, PotentialSpec};
    use crate::spectral::extract_spectral_data;

    fn c(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    fn fast() -> Settings {
        Settings { n_quad: 60, rho_max: 12.0, ..Settings::default() }
    }

    #[test]
    fn free_data_gives_no_atoms() {
        let data = SpectralData::free(2, 40, 10.0, Vec::new());
        let d = build_data(&data, &Problem::free(2), &fast()).unwrap();
        assert!(d.v_hat.iter().all(|v| *v == SquareMatrix::zeros(2)));
        assert!(d.atoms(2).is_empty());
        let n = solve_main(&data, &Problem::free(2), 1.3, &fast()).unwrap();
        assert!(n.blocks.is_empty());
        assert_eq!(n.eps0, SquareMatrix::zeros(2));
    }

    #[test]
    fn degenerates_to_pole_solver() {
        let alpha = SquareMatrix::scalar(1, c(2.0));
        let data = SpectralData::free(1, 40, 10.0, vec![Pole { lambda: -1.0, alpha: alpha.clone() }]);
        let presc = PolePrescription::simple(&[(c(-1.0), alpha)]);
        for x in [0.0, 0.4, 1.7, 3.0] {
            let a = solve_main(&data, &Problem::free(1), x, &fast()).unwrap();
            let b = solve_at(&Problem::free(1), &presc, x, &fast()).unwrap();
            assert_eq!(a.blocks, b.blocks);
            assert_eq!(a.eps0, b.eps0);
        }
    }

    #[test]
    fn model_own_data_is_identity() {
        let model = Problem::new(1, PotentialSpec::Zero, SquareMatrix::scalar(1, c(-1.0)), true).unwrap();
        let data = extract_spectral_data(&model, &fast()).unwrap();
        let d = build_data(&data, &model, &fast()).unwrap();
        assert!(d.atoms(1).is_empty());
        let g: Vec<f64> = (0..=10).map(|k| 0.3 * k as f64).collect();
        let r = reconstruct_sd(&data, &model, &g, &fast()).unwrap();
        assert!(r.reconstruction.eps.iter().all(|e| *e == SquareMatrix::zeros(1)));
        assert_eq!(&r.reconstruction.h, model.h());
    }

    fn exp_problem() -> Problem {
        let q = SquareMatrix::diagonal(&[c(2.0), c(1.0)]);
        let spec = PotentialSpec::ExponentialSum { terms: vec![ExpTerm { coefficient: q, rate: 1.0 }], x_max: 4.0 };
        Problem::new(2, spec, SquareMatrix::zeros(2), true).unwrap()
    }

    #[test]
    fn rest_v_converges_for_compact_potential() {
        let s = fast();
        let data = extract_spectral_data(&exp_problem(), &s).unwrap();
        let d = build_data(&data, &Problem::free(2), &s).unwrap();
        assert!(d.rest_v.ratio < REST_V_RATIO_MAX, "{:?}", d.rest_v);
        assert!(d.rest_v.full > 0.0);
    }

    #[test]
    fn diverging_density_is_rejected() {
        let mut data = SpectralData::free(1, 40, 10.0, Vec::new());
        for (v, &r) in data.density.values.iter_mut().zip(&data.density.rho_nodes) {
            *v += &SquareMatrix::scalar(1, c(1.0 / r));
        }
        let r = build_data(&data, &Problem::free(1), &fast());
        assert!(matches!(r, Err(Error::RestVDiverging { .. })), "{r:?}");
    }

    #[test]
    fn solution_approximates_true_phi() {
        let s = fast();
        let truth = exp_problem();
        let data = extract_spectral_data(&truth, &s).unwrap();
        let x = 0.8;
        let n = solve_main(&data, &Problem::free(2), x, &s).unwrap();
        // Blocks follow the density nodes (no poles here).
        let mut worst = 0.0f64;
        for (j, &r) in data.density.rho_nodes.iter().enumerate().step_by(7) {
            let exact = solve_regular(&truth, Variant::Phi, c(r * r), &[x], 0, &s).unwrap()[0][0].value.clone();
            worst = worst.max(n.blocks[j].dist(&exact));
        }
        assert!(worst < 5e-2, "{worst}");
        assert!(n.residual < 1e-8);
    }

    #[test]
    fn tail_terms_match_derivative() {
        let d = DataDifference {
            rho_nodes: vec![],
            weights: vec![],
            v_hat: vec![],
            target_poles: vec![],
            model_poles: vec![],
            rho_max: 7.0,
            tail: SquareMatrix::scalar(1, c(0.3)),
            rest_v: RestVEstimate::default(),
        };
        for x in [0.05, 0.2, 1.0, 3.1] {
            let step = 1e-5;
            let fd = (d.tail_terms(x + step).0.get(0, 0) - d.tail_terms(x - step).0.get(0, 0)).re
                / (2.0 * step);
            assert!((fd - d.tail_terms(x).1.get(0, 0).re).abs() < 1e-6, "x={x}");
        }
        assert!((d.tail_terms(0.0).0.get(0, 0).re - 2.0 * 0.3 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn error_shrinks_under_quadrature_refinement() {
        let spec = PotentialSpec::ExponentialSum {
            terms: vec![
                ExpTerm { coefficient: SquareMatrix::diagonal(&[c(2.0), c(0.0)]), rate: 1.0 },
                ExpTerm { coefficient: SquareMatrix::diagonal(&[c(0.0), c(1.0)]), rate: 2.0 },
            ],
            x_max: 4.0,
        };
        let truth = Problem::new(2, spec, SquareMatrix::zeros(2), true).unwrap();
        let g: Vec<f64> = (0..=100).map(|k| 0.05 * k as f64).collect();
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let s = Settings { n_quad: n, ..Settings::default() };
                let data = extract_spectral_data(&truth, &s).unwrap();
                let r = reconstruct_sd(&data, &Problem::free(2), &g, &s).unwrap().reconstruction;
                let d: Vec<f64> = g.iter().zip(&r.q).map(|(&x, q)| q.dist(&truth.q(x))).collect();
                (1..g.len()).map(|k| 0.025 * (d[k] + d[k - 1])).sum()
            })
            .collect();
        assert!(errs[1] <= 0.5 * errs[0] && errs[2] <= 0.5 * errs[1], "{errs:?}");
    }
}
