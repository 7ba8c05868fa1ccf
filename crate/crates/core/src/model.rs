//! Potentials, problems, spectral points and numerical settings.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{SquareMatrix, C64, TOL_HERM};
use crate::quadrature::gauss_legendre;

/// Which boundary value to take on the cut `λ > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Side {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[default]
    #[serde(rename = "auto")]
    Auto,
}

impl Side {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "plus" => Ok(Side::Plus),
            "-" | "minus" => Ok(Side::Minus),
            "" | "auto" => Ok(Side::Auto),
            other => Err(Error::InvalidInput(format!("unknown side flag {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Plus => "+",
            Side::Minus => "-",
            Side::Auto => "auto",
        }
    }
}

/// A spectral parameter with `ρ² = λ` and `Im ρ ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub lambda: C64,
    pub rho: C64,
}

impl SpectralPoint {
    /// Builds a point from `ρ` directly; `ρ` must lie in the closed upper half-plane.
    pub fn from_rho(rho: C64) -> Result<Self> {
        if rho.im < 0.0 || !rho.re.is_finite() || !rho.im.is_finite() {
            return Err(Error::InvalidInput(format!("rho = {rho} is not in the closed upper half-plane")));
        }
        if rho == C64::new(0.0, 0.0) {
            return Err(Error::ZeroLambda);
        }
        Ok(Self { lambda: rho * rho, rho })
    }

    pub fn tau(&self) -> f64 {
        self.rho.im
    }
}

/// Square root branch onto the closed upper half-plane. On the cut `λ > 0`
/// the side flag chooses between `+√λ` (`+`, also `auto`) and `−√λ` (`−`).
pub fn lambda_to_rho(lambda: C64, side: Side) -> Result<SpectralPoint> {
    lambda_to_rho_opt(lambda, side, false)
}

pub fn lambda_to_rho_opt(lambda: C64, side: Side, allow_zero: bool) -> Result<SpectralPoint> {
    if !lambda.re.is_finite() || !lambda.im.is_finite() {
        return Err(Error::InvalidInput(format!("lambda = {lambda} is not finite")));
    }
    if lambda == C64::new(0.0, 0.0) {
        return if allow_zero {
            Ok(SpectralPoint { lambda, rho: C64::new(0.0, 0.0) })
        } else {
            Err(Error::ZeroLambda)
        };
    }
    let mut rho = lambda.sqrt();
    if rho.im < 0.0 {
        rho = -rho;
    }
    if lambda.im == 0.0 && lambda.re > 0.0 {
        let r = lambda.re.sqrt();
        rho = match side {
            Side::Minus => C64::new(-r, 0.0),
            _ => C64::new(r, 0.0),
        };
    } else if lambda.im == 0.0 {
        rho = C64::new(0.0, (-lambda.re).sqrt());
    }
    if rho.im == 0.0 {
        rho.im = 0.0;
    }
    Ok(SpectralPoint { lambda, rho })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Piecewise cubic Hermite with fourth-order finite-difference slopes.
    Cubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub coefficient: SquareMatrix,
    pub rate: f64,
}

/// Potential description. Every kind is treated as exactly zero past `x_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    Grid {
        x: Vec<f64>,
        values: Vec<SquareMatrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_max: Option<f64>,
        #[serde(default, skip_serializing_if = "is_linear")]
        interpolation: Interpolation,
    },
    /// `diag(a_1 e^{-r_1 x}, …, a_m e^{-r_m x})` on `[0, x_max]`.
    DiagonalExponential { amplitudes: Vec<f64>, rates: Vec<f64>, x_max: f64 },
    /// `Σ C_k e^{-r_k x}` on `[0, x_max]`.
    ExponentialSum { terms: Vec<ExpTerm>, x_max: f64 },
    /// One-bound-state potential `q(x)·I` obtained from the zero problem by
    /// adding the eigenvalue `−τ²` with norming constant `α`; the matching
    /// boundary coefficient is `h = −α·I`.
    Bargmann { tau: f64, alpha: f64, x_max: f64 },
}

fn is_linear(i: &Interpolation) -> bool {
    *i == Interpolation::Linear
}

impl PotentialSpec {
    pub fn grid(x: Vec<f64>, values: Vec<SquareMatrix>) -> Self {
        PotentialSpec::Grid { x, values, x_max: None, interpolation: Interpolation::Linear }
    }

    /// End of the support; `Q ≡ 0` beyond.
    pub fn support_end(&self) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Grid { x, x_max, .. } => x_max.unwrap_or_else(|| *x.last().unwrap_or(&0.0)),
            PotentialSpec::DiagonalExponential { x_max, .. }
            | PotentialSpec::ExponentialSum { x_max, .. }
            | PotentialSpec::Bargmann { x_max, .. } => *x_max,
        }
    }
}

/// Closed-form one-bound-state potential value.
pub fn bargmann_value(tau: f64, alpha: f64, x: f64) -> f64 {
    let c = (tau * x).cosh();
    let s = (tau * x).sinh();
    let d = x / 2.0 + (2.0 * tau * x).sinh() / (4.0 * tau);
    let den = 1.0 + alpha * d;
    -2.0 * alpha * (2.0 * tau * c * s * den - alpha * c.powi(4)) / (den * den)
}

/// `ε₀(x) = α cosh²(τx) / (1 + α D(x))` for the one-bound-state potential.
pub fn bargmann_eps0(tau: f64, alpha: f64, x: f64) -> f64 {
    let c = (tau * x).cosh();
    let d = x / 2.0 + (2.0 * tau * x).sinh() / (4.0 * tau);
    alpha * c * c / (1.0 + alpha * d)
}

/// Evaluated potential in flat row-major form, ready for the integrators.
#[derive(Debug)]
enum Compiled {
    Zero,
    Grid { x: Vec<f64>, values: Vec<C64>, slopes: Option<Vec<C64>>, x_max: f64 },
    DiagExp { amplitudes: Vec<f64>, rates: Vec<f64>, x_max: f64 },
    ExpSum { coefficients: Vec<Vec<C64>>, rates: Vec<f64>, x_max: f64 },
    Bargmann { tau: f64, alpha: f64, x_max: f64 },
}

impl Compiled {
    fn build(spec: &PotentialSpec, m: usize) -> Result<Self> {
        let finite = |v: f64, what: &str| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{what} must be finite")))
            }
        };
        let nonneg_xmax = |x_max: f64| -> Result<()> {
            finite(x_max, "x_max")?;
            if x_max < 0.0 {
                return Err(Error::InvalidInput("x_max must be non-negative".into()));
            }
            Ok(())
        };
        Ok(match spec {
            PotentialSpec::Zero => Compiled::Zero,
            PotentialSpec::Grid { x, values, x_max, interpolation } => {
                if x.len() < 2 {
                    return Err(Error::InvalidInput("grid potential needs at least two nodes".into()));
                }
                if x.len() != values.len() {
                    return Err(Error::InvalidInput(format!(
                        "grid has {} nodes but {} values",
                        x.len(),
                        values.len()
                    )));
                }
                if x[0] != 0.0 {
                    return Err(Error::InvalidInput("grid nodes must start at 0".into()));
                }
                for w in x.windows(2) {
                    finite(w[1], "grid node")?;
                    if !(w[1] > w[0]) {
                        return Err(Error::InvalidInput("grid nodes must be strictly increasing".into()));
                    }
                }
                let last = *x.last().unwrap();
                let x_max = x_max.unwrap_or(last);
                nonneg_xmax(x_max)?;
                if x_max > last {
                    return Err(Error::InvalidInput(format!(
                        "x_max = {x_max} lies beyond the last grid node {last}"
                    )));
                }
                let mut flat = vec![C64::default(); x.len() * m * m];
                for (k, v) in values.iter().enumerate() {
                    if v.dim() != m {
                        return Err(Error::InvalidInput(format!(
                            "grid value {k} has dimension {}, expected {m}",
                            v.dim()
                        )));
                    }
                    v.write_flat(&mut flat[k * m * m..(k + 1) * m * m]);
                }
                let slopes = match interpolation {
                    Interpolation::Linear => None,
                    Interpolation::Cubic => Some(lagrange_slopes(x, &flat, m * m)),
                };
                Compiled::Grid { x: x.clone(), values: flat, slopes, x_max }
            }
            PotentialSpec::DiagonalExponential { amplitudes, rates, x_max } => {
                if amplitudes.len() != m || rates.len() != m {
                    return Err(Error::InvalidInput(format!(
                        "diagonal_exponential needs {m} amplitudes and {m} rates"
                    )));
                }
                for &v in amplitudes.iter().chain(rates) {
                    finite(v, "diagonal_exponential parameter")?;
                }
                nonneg_xmax(*x_max)?;
                Compiled::DiagExp { amplitudes: amplitudes.clone(), rates: rates.clone(), x_max: *x_max }
            }
            PotentialSpec::ExponentialSum { terms, x_max } => {
                nonneg_xmax(*x_max)?;
                let mut coefficients = Vec::with_capacity(terms.len());
                let mut rates = Vec::with_capacity(terms.len());
                for t in terms {
                    if t.coefficient.dim() != m {
                        return Err(Error::InvalidInput(format!(
                            "exponential_sum coefficient has dimension {}, expected {m}",
                            t.coefficient.dim()
                        )));
                    }
                    finite(t.rate, "exponential_sum rate")?;
                    coefficients.push(t.coefficient.to_row_major());
                    rates.push(t.rate);
                }
                Compiled::ExpSum { coefficients, rates, x_max: *x_max }
            }
            PotentialSpec::Bargmann { tau, alpha, x_max } => {
                finite(*tau, "tau")?;
                finite(*alpha, "alpha")?;
                nonneg_xmax(*x_max)?;
                if *tau <= 0.0 || *alpha <= 0.0 {
                    return Err(Error::InvalidInput("bargmann needs tau > 0 and alpha > 0".into()));
                }
                if tau * x_max > 150.0 {
                    return Err(Error::InvalidInput("bargmann: tau * x_max must not exceed 150".into()));
                }
                Compiled::Bargmann { tau: *tau, alpha: *alpha, x_max: *x_max }
            }
        })
    }

    fn eval(&self, m: usize, x: f64, out: &mut [C64]) {
        let mm = m * m;
        out[..mm].fill(C64::default());
        match self {
            Compiled::Zero => {}
            Compiled::Grid { x: nodes, values, slopes, x_max } => {
                if x > *x_max || x < 0.0 {
                    return;
                }
                let n = nodes.len();
                let i = nodes.partition_point(|&t| t <= x).clamp(1, n - 1) - 1;
                let (x0, x1) = (nodes[i], nodes[i + 1]);
                let h = x1 - x0;
                let t = (x - x0) / h;
                let y0 = &values[i * mm..(i + 1) * mm];
                let y1 = &values[(i + 1) * mm..(i + 2) * mm];
                match slopes {
                    None => {
                        for k in 0..mm {
                            out[k] = y0[k] * (1.0 - t) + y1[k] * t;
                        }
                    }
                    Some(d) => {
                        let d0 = &d[i * mm..(i + 1) * mm];
                        let d1 = &d[(i + 1) * mm..(i + 2) * mm];
                        let t2 = t * t;
                        let t3 = t2 * t;
                        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                        let h10 = (t3 - 2.0 * t2 + t) * h;
                        let h01 = -2.0 * t3 + 3.0 * t2;
                        let h11 = (t3 - t2) * h;
                        for k in 0..mm {
                            out[k] = y0[k] * h00 + d0[k] * h10 + y1[k] * h01 + d1[k] * h11;
                        }
                    }
                }
            }
            Compiled::DiagExp { amplitudes, rates, x_max } => {
                if x > *x_max || x < 0.0 {
                    return;
                }
                for j in 0..m {
                    out[j * m + j] = C64::new(amplitudes[j] * (-rates[j] * x).exp(), 0.0);
                }
            }
            Compiled::ExpSum { coefficients, rates, x_max } => {
                if x > *x_max || x < 0.0 {
                    return;
                }
                for (c, &r) in coefficients.iter().zip(rates) {
                    let e = (-r * x).exp();
                    for k in 0..mm {
                        out[k] += c[k] * e;
                    }
                }
            }
            Compiled::Bargmann { tau, alpha, x_max } => {
                if x > *x_max || x < 0.0 {
                    return;
                }
                let q = C64::new(bargmann_value(*tau, *alpha, x), 0.0);
                for j in 0..m {
                    out[j * m + j] = q;
                }
            }
        }
    }
}

/// Node slopes from the derivative of the local five-point Lagrange polynomial.
fn lagrange_slopes(x: &[f64], values: &[C64], stride: usize) -> Vec<C64> {
    let n = x.len();
    let width = n.min(5);
    let mut out = vec![C64::default(); values.len()];
    for i in 0..n {
        let start = i.saturating_sub(width / 2).min(n - width);
        let idx: Vec<usize> = (start..start + width).collect();
        let mut weights = vec![0.0; width];
        for (a, &k) in idx.iter().enumerate() {
            if k == i {
                weights[a] = idx.iter().filter(|&&l| l != i).map(|&l| 1.0 / (x[i] - x[l])).sum();
            } else {
                let mut num = 1.0;
                let mut den = 1.0;
                for &l in &idx {
                    if l != k {
                        den *= x[k] - x[l];
                        if l != i {
                            num *= x[i] - x[l];
                        }
                    }
                }
                weights[a] = num / den;
            }
        }
        for (a, &k) in idx.iter().enumerate() {
            for e in 0..stride {
                out[i * stride + e] += values[k * stride + e] * weights[a];
            }
        }
    }
    out
}

/// Evaluates `Q(x)` for an `m×m` potential description.
pub fn evaluate_potential(spec: &PotentialSpec, m: usize, x: f64) -> Result<SquareMatrix> {
    if !(x >= 0.0) {
        return Err(Error::InvalidInput(format!("x = {x} must be non-negative")));
    }
    let c = Compiled::build(spec, m)?;
    let mut out = vec![C64::default(); m * m];
    c.eval(m, x, &mut out);
    Ok(SquareMatrix::from_flat(m, &out))
}

/// On-disk form of a problem.
/// Largest supported matrix dimension.
pub const MAX_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub m: usize,
    pub h: SquareMatrix,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub selfadjoint: bool,
}

/// The boundary value problem `−Y″ + Q Y = λY`, `Y′(0) − hY(0)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ProblemFile", into = "ProblemFile")]
pub struct Problem {
    m: usize,
    h: SquareMatrix,
    potential: PotentialSpec,
    selfadjoint: bool,
    compiled: Arc<Compiled>,
}

impl PartialEq for Problem {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
            && self.h == other.h
            && self.potential == other.potential
            && self.selfadjoint == other.selfadjoint
    }
}

impl TryFrom<ProblemFile> for Problem {
    type Error = Error;
    fn try_from(f: ProblemFile) -> Result<Self> {
        Problem::new(f.m, f.potential, f.h, f.selfadjoint)
    }
}

impl From<Problem> for ProblemFile {
    fn from(p: Problem) -> Self {
        ProblemFile { m: p.m, h: p.h, potential: p.potential, selfadjoint: p.selfadjoint }
    }
}

impl Problem {
    pub fn new(m: usize, potential: PotentialSpec, h: SquareMatrix, selfadjoint: bool) -> Result<Self> {
        Self::with_tolerance(m, potential, h, selfadjoint, TOL_HERM)
    }

    pub fn with_tolerance(
        m: usize,
        potential: PotentialSpec,
        h: SquareMatrix,
        selfadjoint: bool,
        tol_herm: f64,
    ) -> Result<Self> {
        if m == 0 || m > MAX_DIM {
            return Err(Error::InvalidInput(format!("dimension m must be in 1..={MAX_DIM}")));
        }
        if h.dim() != m {
            return Err(Error::InvalidInput(format!("h has dimension {}, expected {m}", h.dim())));
        }
        let compiled = Compiled::build(&potential, m)?;
        let p = Self { m, h, potential, selfadjoint, compiled: Arc::new(compiled) };
        if selfadjoint {
            if !p.h.is_hermitian(tol_herm) {
                return Err(Error::InvalidInput("self-adjoint problem requires Hermitian h".into()));
            }
            let mut probe: Vec<f64> = match &p.potential {
                PotentialSpec::Grid { x, .. } => x.clone(),
                _ => Vec::new(),
            };
            let end = p.support_end();
            probe.extend((0..=64).map(|k| end * k as f64 / 64.0));
            for x in probe {
                if !p.q(x).is_hermitian(tol_herm) {
                    return Err(Error::InvalidInput(format!(
                        "self-adjoint problem requires Hermitian Q(x); fails at x = {x}"
                    )));
                }
            }
        }
        Ok(p)
    }

    /// `Q ≡ 0`, `h = 0`.
    pub fn free(m: usize) -> Self {
        Self::new(m, PotentialSpec::Zero, SquareMatrix::zeros(m), true).expect("free problem is valid")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> &SquareMatrix {
        &self.h
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn selfadjoint(&self) -> bool {
        self.selfadjoint
    }

    pub fn support_end(&self) -> f64 {
        self.potential.support_end()
    }

    pub fn q(&self, x: f64) -> SquareMatrix {
        let mut out = vec![C64::default(); self.m * self.m];
        self.q_flat(x, &mut out);
        SquareMatrix::from_flat(self.m, &out)
    }

    /// Writes `Q(x)` row-major into `out[..m*m]`.
    pub fn q_flat(&self, x: f64, out: &mut [C64]) {
        self.compiled.eval(self.m, x, out);
    }

    pub fn is_zero_potential(&self) -> bool {
        matches!(self.potential, PotentialSpec::Zero) || self.support_end() == 0.0
    }

    /// Points in `(0, X_max]` where `Q` may be non-smooth; integrators stop at each.
    pub fn breakpoints(&self) -> Vec<f64> {
        let end = self.support_end();
        let mut b: Vec<f64> = match &self.potential {
            PotentialSpec::Grid { x, .. } => x.iter().copied().filter(|&t| t > 0.0 && t < end).collect(),
            _ => Vec::new(),
        };
        if end > 0.0 {
            b.push(end);
        }
        b
    }

    /// `∫₀^{X_max} w(x) ‖Q(x)‖ dx` by composite Gauss–Legendre.
    fn weighted_norm_integral(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let (nodes, weights) = gauss_legendre(8);
        let mut edges = vec![0.0];
        edges.extend(self.breakpoints());
        let mut total = 0.0;
        for w in edges.windows(2) {
            let pieces = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
            let len = (w[1] - w[0]) / pieces as f64;
            for p in 0..pieces {
                let a = w[0] + p as f64 * len;
                for (t, wt) in nodes.iter().zip(&weights) {
                    let x = a + 0.5 * len * (t + 1.0);
                    total += 0.5 * len * wt * weight(x) * self.q(x).norm();
                }
            }
        }
        total
    }

    pub fn l1_norm(&self) -> f64 {
        self.weighted_norm_integral(|_| 1.0)
    }

    pub fn first_moment(&self) -> f64 {
        self.weighted_norm_integral(|x| x)
    }

    /// Same potential with a different boundary coefficient.
    pub fn with_h(&self, h: SquareMatrix) -> Result<Self> {
        Self::new(self.m, self.potential.clone(), h, self.selfadjoint)
    }
}

fn default_ode_tol() -> f64 {
    1e-10
}
fn default_tol_herm() -> f64 {
    TOL_HERM
}
fn default_cond_max() -> f64 {
    1e12
}
fn default_n_res() -> usize {
    64
}
fn default_n_quad() -> usize {
    200
}
fn default_rho_max() -> f64 {
    20.0
}
fn default_scan_steps() -> usize {
    400
}
fn default_tau_tol() -> f64 {
    1e-12
}
fn default_quad_tol() -> f64 {
    1e-3
}
fn default_jost_tol() -> f64 {
    1e-8
}

/// Numerical knobs shared by all solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
    #[serde(default = "default_tol_herm")]
    pub tol_herm: f64,
    #[serde(default = "default_cond_max")]
    pub cond_max: f64,
    #[serde(default = "default_n_res")]
    pub n_res: usize,
    #[serde(default = "default_n_quad")]
    pub n_quad: usize,
    #[serde(default = "default_rho_max")]
    pub rho_max: f64,
    /// Eigenvalue scan range in `τ = Im ρ`; `None` picks a range from `‖h‖` and `sup‖Q‖`.
    #[serde(default)]
    pub tau_range: Option<(f64, f64)>,
    #[serde(default = "default_scan_steps")]
    pub scan_steps: usize,
    #[serde(default = "default_tau_tol")]
    pub tau_tol: f64,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
    #[serde(default = "default_jost_tol")]
    pub jost_tol: f64,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            ode_tol: default_ode_tol(),
            tol_herm: default_tol_herm(),
            cond_max: default_cond_max(),
            n_res: default_n_res(),
            n_quad: default_n_quad(),
            rho_max: default_rho_max(),
            tau_range: None,
            scan_steps: default_scan_steps(),
            tau_tol: default_tau_tol(),
            quad_tol: default_quad_tol(),
            jost_tol: default_jost_tol(),
            threads: 0,
            seed: 0,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ode_tol", self.ode_tol),
            ("tol_herm", self.tol_herm),
            ("cond_max", self.cond_max),
            ("rho_max", self.rho_max),
            ("tau_tol", self.tau_tol),
            ("quad_tol", self.quad_tol),
            ("jost_tol", self.jost_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive and finite")));
            }
        }
        if self.n_res < 4 || self.n_quad < 2 || self.scan_steps < 2 {
            return Err(Error::InvalidInput("n_res >= 4, n_quad >= 2 and scan_steps >= 2 are required".into()));
        }
        if let Some((a, b)) = self.tau_range {
            if !(a > 0.0 && b > a && b.is_finite()) {
                return Err(Error::InvalidInput("tau_range must satisfy 0 < tau_min < tau_max".into()));
            }
        }
        Ok(())
    }
}
