//! Inversion for Weyl matrices of the form `M = M̃ + Σ_k Σ_ν α_kν/(λ − λ_k)^ν`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::check_grid;
use crate::mainsys::{Atom, MainEngine, MainNode};
use crate::matrix::{SquareMatrix, C64};
use crate::model::{Interpolation, PotentialSpec, Problem, Settings};
use crate::ode::Integrator;

/// One `α_ν/(λ − λ_k)^ν` term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleTerm {
    pub nu: usize,
    pub alpha: SquareMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrescribedPole {
    pub lambda: C64,
    pub terms: Vec<PoleTerm>,
}

/// Principal parts added to the model Weyl matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolePrescription(pub Vec<PrescribedPole>);

impl PolePrescription {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn simple(poles: &[(C64, SquareMatrix)]) -> Self {
        Self(
            poles
                .iter()
                .map(|(l, a)| PrescribedPole { lambda: *l, terms: vec![PoleTerm { nu: 1, alpha: a.clone() }] })
                .collect(),
        )
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        for (k, p) in self.0.iter().enumerate() {
            if !(p.lambda.re.is_finite() && p.lambda.im.is_finite()) {
                return Err(Error::InvalidInput(format!("pole {k}: λ must be finite")));
            }
            if p.lambda.im == 0.0 && p.lambda.re >= 0.0 {
                return Err(Error::InvalidInput(format!("pole {k}: λ = {} lies on the continuous spectrum", p.lambda.re)));
            }
            if self.0[..k].iter().any(|q| q.lambda == p.lambda) {
                return Err(Error::InvalidInput(format!("pole {k}: λ repeated")));
            }
            if p.terms.is_empty() {
                return Err(Error::InvalidInput(format!("pole {k}: no terms")));
            }
            for t in &p.terms {
                if t.nu == 0 {
                    return Err(Error::InvalidInput(format!("pole {k}: ν starts at 1")));
                }
                if t.alpha.dim() != m {
                    return Err(Error::InvalidInput(format!("pole {k}: α must be {m}×{m}")));
                }
            }
            for (i, t) in p.terms.iter().enumerate() {
                if p.terms[..i].iter().any(|u| u.nu == t.nu) {
                    return Err(Error::InvalidInput(format!("pole {k}: ν = {} repeated", t.nu)));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn atoms(&self, m: usize) -> Vec<Atom> {
        self.0
            .iter()
            .map(|p| {
                let top = p.terms.iter().map(|t| t.nu).max().unwrap_or(1);
                let mut terms = vec![SquareMatrix::zeros(m); top];
                for t in &p.terms {
                    terms[t.nu - 1] = t.alpha.clone();
                }
                Atom { lambda: p.lambda, terms }
            })
            .collect()
    }

    /// `Σ_k Σ_ν α_kν/(λ − λ_k)^ν`.
    pub fn principal_part(&self, m: usize, lambda: C64) -> SquareMatrix {
        let mut out = SquareMatrix::zeros(m);
        for p in &self.0 {
            for t in &p.terms {
                out += &t.alpha.scale((lambda - p.lambda).powi(t.nu as i32).inv());
            }
        }
        out
    }

    /// True when every λ_k is real and every α Hermitian.
    pub fn is_selfadjoint(&self, tol: f64) -> bool {
        self.0.iter().all(|p| p.lambda.im == 0.0 && p.terms.iter().all(|t| t.alpha.is_hermitian(tol)))
    }
}

/// The assembled system at a single `x`.
#[derive(Clone, Debug, Serialize)]
pub struct MainSystem {
    pub x: f64,
    /// Number of unknown `m×m` blocks.
    pub blocks: usize,
    /// Scalar matrix `𝔄(x)` acting from the right on the row of unknowns.
    pub matrix: Vec<Vec<C64>>,
    /// Right-hand side blocks `∂^s φ̃(x, λ_n)`.
    pub rhs: Vec<SquareMatrix>,
    pub condition: f64,
    pub log_abs_det: f64,
}

fn engine<'a>(model: &'a Problem, prescription: &PolePrescription, settings: &'a Settings) -> Result<MainEngine<'a>> {
    settings.validate()?;
    prescription.validate(model.m())?;
    MainEngine::new(model, prescription.atoms(model.m()), settings)
}

fn check_x(x: f64) -> Result<()> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidInput("x must be finite and non-negative".into()));
    }
    Ok(())
}

pub fn assemble(model: &Problem, prescription: &PolePrescription, x: f64, settings: &Settings) -> Result<MainSystem> {
    check_x(x)?;
    let e = engine(model, prescription, settings)?;
    let mut it = Integrator::new(0.0, e.initial_state(), settings.ode_tol);
    it.advance(e.system(), x, &model.breakpoints())?;
    Ok(e.main_system(x, it.y()))
}

/// Solves the main equation at `x`, returning the blocks `∂^s φ(x, λ_n)`.
pub fn solve_at(model: &Problem, prescription: &PolePrescription, x: f64, settings: &Settings) -> Result<MainNode> {
    check_x(x)?;
    let e = engine(model, prescription, settings)?;
    let grid = if x > 0.0 { vec![0.0, x] } else { vec![0.0] };
    let mut nodes = e.solve_grid(&grid, true)?;
    Ok(nodes.pop().expect("grid is non-empty"))
}

/// Solves on every node of `x_grid`.
pub fn solve_grid(
    model: &Problem,
    prescription: &PolePrescription,
    x_grid: &[f64],
    keep_blocks: bool,
    settings: &Settings,
) -> Result<Vec<MainNode>> {
    check_grid(x_grid)?;
    engine(model, prescription, settings)?.solve_grid(x_grid, keep_blocks)
}

/// Integrability diagnostics for `ε`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpsReport {
    /// `∫‖ε‖ dx` over the grid (trapezoid).
    pub l1: f64,
    /// `∫(1 + x)‖ε‖ dx` over the grid.
    pub weighted_l1: f64,
    /// `max ‖ε‖` over the last tenth of the grid relative to the global maximum.
    pub tail_ratio: f64,
    pub integrable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub min_log_abs_det: f64,
    pub max_condition: f64,
    pub max_residual: f64,
    /// Hermitian defect removed from `Q` and `h` (0 when not projected).
    pub hermitian_defect: f64,
    /// Condition estimate at every grid node.
    pub conditions: Vec<f64>,
}

impl SolveDiagnostics {
    pub fn from_nodes(nodes: &[MainNode]) -> Self {
        Self {
            min_log_abs_det: nodes.iter().map(|n| n.log_abs_det).fold(f64::INFINITY, f64::min),
            max_condition: nodes.iter().map(|n| n.condition).fold(0.0, f64::max),
            max_residual: nodes.iter().map(|n| n.residual).fold(0.0, f64::max),
            hermitian_defect: 0.0,
            conditions: nodes.iter().map(|n| n.condition).collect(),
        }
    }
}

/// A reconstructed problem with the intermediate quantities on the grid.
#[derive(Clone, Debug, Serialize)]
pub struct Reconstruction {
    pub problem: Problem,
    pub x: Vec<f64>,
    pub eps0: Vec<SquareMatrix>,
    pub eps: Vec<SquareMatrix>,
    pub q: Vec<SquareMatrix>,
    pub h: SquareMatrix,
    pub eps_report: EpsReport,
    pub diagnostics: SolveDiagnostics,
    pub warnings: Vec<String>,
}

/// Reconstructs `(Q, h)` on `x_grid` (which must start at 0).
pub fn reconstruct(
    model: &Problem,
    prescription: &PolePrescription,
    x_grid: &[f64],
    settings: &Settings,
) -> Result<Reconstruction> {
    check_reconstruction_grid(x_grid)?;
    let nodes = solve_grid(model, prescription, x_grid, false, settings)?;
    let selfadjoint = model.selfadjoint() && prescription.is_selfadjoint(settings.tol_herm);
    let eps0: Vec<SquareMatrix> = nodes.iter().map(|n| n.eps0.clone()).collect();
    let eps0_dx: Vec<SquareMatrix> = nodes.iter().map(|n| n.eps0_dx.clone()).collect();
    finish(model, x_grid, eps0, &eps0_dx, SolveDiagnostics::from_nodes(&nodes), selfadjoint, settings)
}

pub(crate) fn check_reconstruction_grid(x_grid: &[f64]) -> Result<()> {
    check_grid(x_grid)?;
    if x_grid.len() < 2 || x_grid[0] != 0.0 {
        return Err(Error::InvalidInput("reconstruction grid must start at 0 and have at least two nodes".into()));
    }
    Ok(())
}

/// `Q = Q̃ − 2ε₀′`, `h = h̃ − ε₀(0)`, wrapped as a cubic grid potential.
pub(crate) fn finish(
    model: &Problem,
    x_grid: &[f64],
    eps0: Vec<SquareMatrix>,
    eps0_dx: &[SquareMatrix],
    mut diagnostics: SolveDiagnostics,
    selfadjoint: bool,
    settings: &Settings,
) -> Result<Reconstruction> {
    let eps: Vec<SquareMatrix> = eps0_dx.iter().map(|d| d.scale_real(-2.0)).collect();
    let mut q: Vec<SquareMatrix> = x_grid.iter().zip(&eps).map(|(&x, e)| &model.q(x) + e).collect();
    let mut h = model.h() - &eps0[0];
    let mut warnings = Vec::new();
    if selfadjoint {
        let mut defect = h.hermitian_defect();
        for v in &q {
            defect = defect.max(v.hermitian_defect());
        }
        q = q.iter().map(|v| v.hermitian_part()).collect();
        h = h.hermitian_part();
        diagnostics.hermitian_defect = defect;
        if defect > 1e-8 {
            warnings.push(format!("HermitianDefect: reconstructed Q/h deviate from Hermitian by {defect:.3e}"));
        }
    }
    let eps_report = eps_report(x_grid, &eps);
    if !eps_report.integrable {
        let w = format!("NonIntegrableEps: tail ratio {:.3e} shows no decay of ε on the grid", eps_report.tail_ratio);
        log::warn!("{w}");
        warnings.push(w);
    }
    let spec = PotentialSpec::Grid {
        x: x_grid.to_vec(),
        values: q.clone(),
        x_max: Some(*x_grid.last().expect("non-empty grid")),
        interpolation: Interpolation::Cubic,
    };
    let problem = Problem::with_tolerance(model.m(), spec, h.clone(), selfadjoint, settings.tol_herm)?;
    Ok(Reconstruction { problem, x: x_grid.to_vec(), eps0, eps, q, h, eps_report, diagnostics, warnings })
}

pub(crate) fn eps_report(x: &[f64], eps: &[SquareMatrix]) -> EpsReport {
    let norms: Vec<f64> = eps.iter().map(|e| e.norm()).collect();
    let mut l1 = 0.0;
    let mut weighted = 0.0;
    for k in 1..x.len() {
        let dx = x[k] - x[k - 1];
        l1 += 0.5 * dx * (norms[k] + norms[k - 1]);
        weighted += 0.5 * dx * ((1.0 + x[k]) * norms[k] + (1.0 + x[k - 1]) * norms[k - 1]);
    }
    let peak = norms.iter().cloned().fold(0.0, f64::max);
    let tail_start = x[0] + 0.9 * (x[x.len() - 1] - x[0]);
    let tail = x.iter().zip(&norms).filter(|(x, _)| **x >= tail_start).map(|(_, n)| *n).fold(0.0, f64::max);
    let tail_ratio = if peak > 0.0 { tail / peak } else { 0.0 };
    EpsReport { l1, weighted_l1: weighted, tail_ratio, integrable: tail_ratio <= 1e-2 && l1.is_finite() }
}
