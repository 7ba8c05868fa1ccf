mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use serde_json::Value;
use weyl_inverse::finite::{reconstruct, EpsReport, PolePrescription, PoleTerm, PrescribedPole, SolveDiagnostics};
use weyl_inverse::forward::weyl_matrix;
use weyl_inverse::io::{
    density_csv, forward_csv, parse_lambda_list, plot_blocks, read_json, reconstruction_csv, to_json, write_json,
};
use weyl_inverse::selfadjoint::{reconstruct_sd, SdReport};
use weyl_inverse::spectral::{extract_spectral_data, validate_class_sp, Pole, SpectralData};
use weyl_inverse::verify::{contour_points, roundtrip_finite, roundtrip_selfadjoint, RoundTripReport};
use weyl_inverse::{Problem, Settings, SquareMatrix, C64};

use config::{Cli, Command, Fixture, GridArgs, PerturbAction, PlotArgs};

const BARGMANN_MODEL: &str = include_str!("../fixtures/bargmann_model.json");
const BARGMANN_PRESCRIPTION: &str = include_str!("../fixtures/bargmann_prescription.json");

enum Failure {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// The computation failed or its checks did not pass (exit 1).
    Domain(String),
}

impl From<weyl_inverse::Error> for Failure {
    fn from(e: weyl_inverse::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WEYLINV_LOG", "warn")).init();
    ExitCode::from(run(std::env::args_os()))
}

fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let settings = cli.config.settings();
    if let Err(e) = settings.validate() {
        eprintln!("error: {e}");
        return 2;
    }
    match dispatch(cli.command, &settings) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn dispatch(command: Command, s: &Settings) -> Outcome {
    match command {
        Command::Forward { problem, lambdas, output, plots } => forward(&problem, &lambdas, output.as_deref(), &plots, s),
        Command::Spectrum { problem, output, density_csv, plots } => {
            spectrum(&problem, output.as_deref(), density_csv.as_deref(), &plots, s)
        }
        Command::Perturb { action, input, output, lambda, lambda_im, alpha, nu, index, m } => {
            let edit = Edit { action, lambda, lambda_im, alpha, nu, index, m };
            perturb(input.as_deref(), output.as_deref(), &edit)
        }
        Command::InvertFinite { model, prescription, m, out, grid, plots } => {
            let presc: PolePrescription = read_json(&prescription)?;
            let m = m.or_else(|| prescription_dim(&presc));
            let model = load_model(model.as_deref(), m)?;
            let g = grid.grid().map_err(usage)?;
            check_plot_target(&plots, out.csv.as_deref(), "--csv")?;
            let rec = reconstruct(&model, &presc, &g, s)?;
            write_reconstruction(&rec, &out, &plots, s, None)
        }
        Command::InvertSd { data, model, out, grid, plots } => {
            let data: SpectralData = read_json(&data)?;
            let model = load_model(model.as_deref(), Some(data.m))?;
            let g = grid.grid().map_err(usage)?;
            check_plot_target(&plots, out.csv.as_deref(), "--csv")?;
            let class = validate_class_sp(&data, s);
            if !class.passed {
                log::warn!("spectral data fail the admissibility checks: {}", to_json(&class)?.trim());
            }
            let r = reconstruct_sd(&data, &model, &g, s)?;
            write_reconstruction(&r.reconstruction, &out, &plots, s, Some(&r.report))
        }
        Command::Roundtrip { fixture, model, prescription, truth, contour_points, report, text, grid } => {
            roundtrip(fixture, model, prescription, truth, contour_points, report, text, &grid, s)
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn check_plot_target(plots: &PlotArgs, csv: Option<&Path>, flag: &str) -> Outcome {
    if plots.emit_plots && csv.is_none() {
        return Err(usage(format!("--emit-plots needs {flag} to place the plot files")));
    }
    Ok(())
}

/// `out.csv` → `out.<name>.dat`.
fn plot_path(csv: &Path, name: &str) -> PathBuf {
    csv.with_extension(format!("{name}.dat"))
}

fn load_model(path: Option<&Path>, m: Option<usize>) -> Result<Problem, Failure> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => {
            let m = m.ok_or_else(|| usage("cannot infer the dimension; pass --model or --m"))?;
            Ok(Problem::free(m))
        }
    }
}

fn prescription_dim(p: &PolePrescription) -> Option<usize> {
    p.0.first().and_then(|q| q.terms.first()).map(|t| t.alpha.dim())
}

fn forward(problem: &Path, lambdas: &Path, output: Option<&Path>, plots: &PlotArgs, s: &Settings) -> Outcome {
    check_plot_target(plots, output, "--output")?;
    let p: Problem = read_json(problem)?;
    let points = parse_lambda_list(&fs::read_to_string(lambdas)?)?;
    let mut rows = Vec::with_capacity(points.len());
    for (l, side) in points {
        rows.push((l, side, weyl_matrix(&p, l, side, s)?));
    }
    emit(output, &forward_csv(p.m(), &rows)?)?;
    if let (true, Some(out)) = (plots.emit_plots, output) {
        let x: Vec<f64> = (0..rows.len()).map(|k| k as f64).collect();
        let m: Vec<SquareMatrix> = rows.iter().map(|r| r.2.clone()).collect();
        fs::write(plot_path(out, "M"), plot_blocks("M (by row of the lambda list)", &x, &m))?;
    }
    Ok(())
}

fn spectrum(problem: &Path, output: Option<&Path>, csv: Option<&Path>, plots: &PlotArgs, s: &Settings) -> Outcome {
    check_plot_target(plots, csv, "--density-csv")?;
    let p: Problem = read_json(problem)?;
    let data = extract_spectral_data(&p, s)?;
    let class = validate_class_sp(&data, s);
    if !class.passed {
        log::warn!("extracted data fail the admissibility checks: {}", to_json(&class)?.trim());
    }
    emit(output, &to_json(&data)?)?;
    if let Some(path) = csv {
        fs::write(path, density_csv(&data)?)?;
        if plots.emit_plots {
            let lambda: Vec<f64> = data.density.rho_nodes.iter().map(|r| r * r).collect();
            fs::write(plot_path(path, "V"), plot_blocks("V", &lambda, &data.density.values))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    settings: &'a Settings,
    x: &'a [f64],
    solve: &'a SolveDiagnostics,
    eps: &'a EpsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral_data: Option<&'a SdReport>,
    warnings: &'a [String],
}

fn write_reconstruction(
    rec: &weyl_inverse::finite::Reconstruction,
    out: &config::InvertOutputs,
    plots: &PlotArgs,
    s: &Settings,
    sd: Option<&SdReport>,
) -> Outcome {
    for w in &rec.warnings {
        log::warn!("{w}");
    }
    emit(out.output.as_deref(), &to_json(&rec.problem)?)?;
    if let Some(path) = &out.csv {
        fs::write(path, reconstruction_csv(rec)?)?;
        if plots.emit_plots {
            fs::write(plot_path(path, "Q"), plot_blocks("Q", &rec.x, &rec.q))?;
            fs::write(plot_path(path, "eps"), plot_blocks("eps", &rec.x, &rec.eps))?;
        }
    }
    if let Some(path) = &out.diagnostics {
        let d = Diagnostics {
            settings: s,
            x: &rec.x,
            solve: &rec.diagnostics,
            eps: &rec.eps_report,
            spectral_data: sd,
            warnings: &rec.warnings,
        };
        write_json(path, &d)?;
    }
    Ok(())
}

struct Edit {
    action: PerturbAction,
    lambda: Option<f64>,
    lambda_im: f64,
    alpha: Option<String>,
    nu: usize,
    index: Option<usize>,
    m: Option<usize>,
}

fn parse_alpha(spec: &str, m: Option<usize>) -> Result<SquareMatrix, Failure> {
    let bad = || usage(format!("cannot read --alpha {spec:?}"));
    let entries: Vec<f64> = spec.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    if entries.len() == 1 {
        return Ok(SquareMatrix::scalar(m.unwrap_or(1), C64::new(entries[0], 0.0)));
    }
    let n = (entries.len() as f64).sqrt().round() as usize;
    if n * n != entries.len() || m.is_some_and(|m| m != n) {
        return Err(bad());
    }
    Ok(SquareMatrix::from_real(n, &entries)?)
}

fn perturb(input: Option<&Path>, output: Option<&Path>, e: &Edit) -> Outcome {
    let doc: Value = match input {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|err| Failure::Domain(format!("{}: {err}", p.display())))?,
        None => Value::Array(Vec::new()),
    };
    let text = if doc.is_array() {
        let mut p: PolePrescription =
            serde_json::from_value(doc).map_err(|err| Failure::Domain(format!("prescription: {err}")))?;
        edit_prescription(&mut p, e)?;
        to_json(&p)?
    } else {
        let mut d: SpectralData =
            serde_json::from_value(doc).map_err(|err| Failure::Domain(format!("spectral data: {err}")))?;
        edit_spectral_data(&mut d, e)?;
        to_json(&d)?
    };
    emit(output, &text)
}

fn need_index(e: &Edit, len: usize) -> Result<usize, Failure> {
    let k = e.index.ok_or_else(|| usage("--index is required"))?;
    if k >= len {
        return Err(usage(format!("--index {k} out of range ({len} poles)")));
    }
    Ok(k)
}

fn need_lambda(e: &Edit) -> Result<f64, Failure> {
    e.lambda.ok_or_else(|| usage("--lambda is required"))
}

fn edit_prescription(p: &mut PolePrescription, e: &Edit) -> Outcome {
    match e.action {
        PerturbAction::Add => {
            let lambda = C64::new(need_lambda(e)?, e.lambda_im);
            let alpha = parse_alpha(e.alpha.as_deref().ok_or_else(|| usage("--alpha is required"))?, e.m.or_else(|| prescription_dim(p)))?;
            let term = PoleTerm { nu: e.nu, alpha };
            match p.0.iter_mut().find(|q| q.lambda == lambda) {
                Some(q) => q.terms.push(term),
                None => p.0.push(PrescribedPole { lambda, terms: vec![term] }),
            }
        }
        PerturbAction::Move => {
            let k = need_index(e, p.0.len())?;
            p.0[k].lambda = C64::new(need_lambda(e)?, e.lambda_im);
        }
        PerturbAction::Remove => {
            let k = need_index(e, p.0.len())?;
            p.0.remove(k);
        }
    }
    let m = prescription_dim(p).unwrap_or(1);
    Ok(p.validate(m)?)
}

fn edit_spectral_data(d: &mut SpectralData, e: &Edit) -> Outcome {
    if e.lambda_im != 0.0 || e.nu != 1 {
        return Err(usage("spectral data take simple real poles only"));
    }
    match e.action {
        PerturbAction::Add => {
            let alpha = parse_alpha(e.alpha.as_deref().ok_or_else(|| usage("--alpha is required"))?, Some(d.m))?;
            d.poles.push(Pole { lambda: need_lambda(e)?, alpha });
        }
        PerturbAction::Move => {
            let k = need_index(e, d.poles.len())?;
            d.poles[k].lambda = need_lambda(e)?;
        }
        PerturbAction::Remove => {
            let k = need_index(e, d.poles.len())?;
            d.poles.remove(k);
        }
    }
    Ok(d.validate_shape()?)
}

fn finite_contour(p: &PolePrescription, n: usize) -> Result<Vec<C64>, Failure> {
    let lambdas: Vec<C64> = p.0.iter().map(|q| q.lambda).collect();
    if lambdas.is_empty() {
        // Nothing to encircle: compare on a circle in the left half-plane.
        return Ok(contour_points(&[C64::new(-1.0, 0.0)], n)?);
    }
    Ok(contour_points(&lambdas, n)?)
}

fn parse_fixture<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Domain(format!("bundled fixture: {e}")))
}

#[allow(clippy::too_many_arguments)]
fn roundtrip(
    fixture: Option<Fixture>,
    model: Option<PathBuf>,
    prescription: Option<PathBuf>,
    truth: Option<PathBuf>,
    n_contour: usize,
    report: Option<PathBuf>,
    text: Option<PathBuf>,
    grid: &GridArgs,
    s: &Settings,
) -> Outcome {
    let g = grid.grid().map_err(usage)?;
    let rep: RoundTripReport = match (fixture, prescription, truth) {
        (Some(Fixture::Bargmann), None, None) => {
            let model: Problem = parse_fixture(BARGMANN_MODEL)?;
            let presc: PolePrescription = parse_fixture(BARGMANN_PRESCRIPTION)?;
            roundtrip_finite(&model, &presc, &finite_contour(&presc, n_contour)?, &g, s)
        }
        (None, Some(path), None) => {
            let presc: PolePrescription = read_json(&path)?;
            let model = load_model(model.as_deref(), prescription_dim(&presc))?;
            roundtrip_finite(&model, &presc, &finite_contour(&presc, n_contour)?, &g, s)
        }
        (None, None, Some(path)) => {
            let truth: Problem = read_json(&path)?;
            let model = load_model(model.as_deref(), Some(truth.m()))?;
            roundtrip_selfadjoint(&truth, &model, &g, s)
        }
        _ => return Err(usage("pass exactly one of --fixture, --prescription, --truth")),
    };
    for line in rep.timings_text().lines() {
        log::info!("{line}");
    }
    let body = rep.to_text();
    print!("{body}");
    if let Some(p) = text {
        fs::write(p, &body)?;
    }
    if let Some(p) = report {
        write_json(&p, &rep)?;
    }
    if rep.passed {
        Ok(())
    } else {
        Err(Failure::Domain("round trip failed".into()))
    }
}
