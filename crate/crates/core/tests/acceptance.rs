//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weyl_inverse::finite::{reconstruct, solve_at, PolePrescription};
use weyl_inverse::model::ExpTerm;
use weyl_inverse::selfadjoint::solve_main;
use weyl_inverse::spectral::{
    continuous_density, extract_poles, extract_spectral_data, find_eigenvalues, weyl_from_spectral_data, Pole,
    SpectralData,
};
use weyl_inverse::verify::{
    asymptotic_exponent, check_xi_unitarity, contour_points, jost_pairing, random_compact_problem, random_hermitian,
    roundtrip_finite, roundtrip_selfadjoint, weyl_symmetry, wronskian_constancy,
};
use weyl_inverse::{lambda_to_rho, Error, PotentialSpec, Problem, Settings, Side, SquareMatrix, C64};

const CORPUS: u64 = 20;

fn c(v: f64) -> C64 {
    C64::new(v, 0.0)
}

fn corpus() -> Vec<Problem> {
    (1..=CORPUS).map(|seed| random_compact_problem(seed, if seed % 2 == 0 { 2 } else { 1 })).collect()
}

fn grid(x_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| x_max * k as f64 / n as f64).collect()
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn time_limit(passed: bool, start: Instant, limit_s: f64, detail: String) -> Outcome {
    let t = start.elapsed().as_secs_f64();
    let ok = t < limit_s;
    outcome(passed && ok, format!("{detail}; runtime {t:.2} s (limit {limit_s} s)"))
}

fn free_field() -> Outcome {
    let start = Instant::now();
    let s = Settings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for m in 1..=3 {
        let h = random_hermitian(&mut rng, m, 1.0);
        let p = Problem::new(m, PotentialSpec::Zero, h.clone(), true).unwrap();
        for _ in 0..50 {
            let im = rng.gen_range(0.1..10.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let lambda = C64::new(rng.gen_range(-10.0..10.0), im);
            let rho = lambda_to_rho(lambda, Side::Auto).unwrap().rho;
            let expect = (SquareMatrix::scalar(m, rho * C64::i()) - &h).try_inverse().unwrap();
            let got = weyl_inverse::forward::weyl_matrix(&p, lambda, Side::Auto, &s).unwrap();
            worst = worst.max(got.dist(&expect) / expect.norm());
        }
    }
    time_limit(worst <= 1e-8, start, 5.0, format!("max relative error {worst:.2e} (limit 1e-8)"))
}

fn wronskians() -> Outcome {
    let start = Instant::now();
    let s = Settings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut wc, mut jp) = (0.0f64, 0.0f64);
    for p in corpus() {
        let g = grid(p.support_end() + 1.0, 20);
        for _ in 0..2 {
            let rho: f64 = rng.gen_range(0.5..10.0);
            wc = wc.max(wronskian_constancy(&p, c(rho * rho), &g, &s).unwrap());
            jp = jp.max(jost_pairing(&p, rho, &g, &s).unwrap());
        }
    }
    time_limit(
        wc <= 1e-7 && jp <= 1e-7,
        start,
        30.0,
        format!("constancy {wc:.2e}, pairing {jp:.2e} (limit 1e-7)"),
    )
}

fn symmetry_and_unitarity() -> Outcome {
    let s = Settings::default();
    let rho_grid = [0.5, 1.0, 2.0, 3.5, 5.0, 7.5, 10.0];
    let points = [C64::new(-2.0, 1.0), C64::new(3.0, 0.5), C64::new(10.0, -2.0), C64::new(-0.5, -0.2)];
    let (mut sym, mut xi, mut forms) = (0.0f64, 0.0f64, 0.0f64);
    for p in corpus() {
        for &l in &points {
            sym = sym.max(weyl_symmetry(&p, l, Side::Auto, &s).unwrap());
        }
        let r = check_xi_unitarity(&p, &rho_grid, &s).unwrap();
        xi = xi.max(r.max_deviation());
        forms = forms.max(r.form_mismatch);
    }
    outcome(
        sym <= 1e-6 && xi <= 1e-6 && forms <= 1e-8,
        format!("M - M* {sym:.2e}, unitarity {xi:.2e} (limit 1e-6), form mismatch {forms:.2e} (limit 1e-8)"),
    )
}

fn asymptotics() -> Outcome {
    let s = Settings::default();
    let worst = corpus()
        .iter()
        .map(|p| asymptotic_exponent(p, (20.0, 200.0), 12, &s).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(worst <= -1.8, format!("largest fitted exponent {worst:.3} (limit -1.8)"))
}

fn spectral_properties() -> Outcome {
    let s = Settings { n_quad: 48, ..Settings::default() };
    let (mut bad_eig, mut min_res, mut bad_v, mut dev) = (0usize, f64::INFINITY, 0usize, 0.0f64);
    let mut n_eig = 0;
    for p in corpus() {
        let eig = find_eigenvalues(&p, &s).unwrap();
        n_eig += eig.len();
        bad_eig += eig.iter().filter(|&&l| !(l < 0.0)).count();
        let data = extract_spectral_data(&p, &s).unwrap();
        for pole in &data.poles {
            if !pole.alpha.is_hermitian(1e-8 * pole.alpha.norm().max(1.0)) {
                bad_eig += 1;
            }
            min_res = min_res.min(pole.alpha.hermitian_eigenvalues()[0]);
        }
        for v in &data.density.values {
            if !v.is_hermitian(1e-8 * v.norm()) || v.hermitian_eigenvalues()[0] <= 0.0 {
                bad_v += 1;
            }
        }
        for lambda in [0.3, 2.0, 25.0, 150.0] {
            dev = dev.max(continuous_density(&p, lambda, &s).unwrap().deviation().unwrap());
        }
    }
    outcome(
        bad_eig == 0 && min_res >= -1e-9 && bad_v == 0 && dev <= 1e-7,
        format!(
            "{n_eig} eigenvalues, {bad_eig} not real negative or non-Hermitian residue; min residue eigenvalue {min_res:.2e}; \
             {bad_v} bad density samples; jump vs product {dev:.2e} (limit 1e-7)"
        ),
    )
}

fn msd_identity() -> Outcome {
    let s = Settings::default();
    let points: Vec<C64> = (0..20)
        .map(|k| {
            let theta = 0.15 * std::f64::consts::PI + 0.7 * std::f64::consts::PI * k as f64 / 19.0;
            let r = 0.5 + 19.5 * ((k * 7) % 20) as f64 / 19.0;
            let z = C64::from_polar(r, theta);
            if k % 2 == 0 { z } else { z.conj() }
        })
        .collect();
    let mut problems = vec![Problem::free(1)];
    problems.extend(corpus().into_iter().take(4));
    let mut worst = 0.0f64;
    let mut free_err = 0.0f64;
    for (i, p) in problems.iter().enumerate() {
        let data = extract_spectral_data(p, &s).unwrap();
        for &l in &points {
            let msd = weyl_from_spectral_data(&data, l, &s).unwrap().value;
            let direct = weyl_inverse::forward::weyl_matrix(p, l, Side::Auto, &s).unwrap();
            let e = msd.dist(&direct) / direct.norm();
            worst = worst.max(e);
            if i == 0 {
                let rho = lambda_to_rho(l, Side::Auto).unwrap().rho;
                free_err = free_err.max((msd.get(0, 0) - 1.0 / (C64::i() * rho)).norm() * rho.norm());
            }
        }
    }
    outcome(
        worst <= 1e-5 && free_err <= 1e-5,
        format!("max relative mismatch {worst:.2e}, free-field closed form {free_err:.2e} (limit 1e-5)"),
    )
}

/// `−2 d/dx [2cosh²x / (1 + x + sinh x cosh x)]`, differentiated by hand.
fn bargmann_oracle(x: f64) -> f64 {
    let (s, ch) = (x.sinh(), x.cosh());
    let g = 1.0 + x + s * ch;
    let dg = 1.0 + ch * ch + s * s;
    -2.0 * (4.0 * ch * s * g - 2.0 * ch * ch * dg) / (g * g)
}

fn bargmann() -> Outcome {
    let start = Instant::now();
    let s = Settings::default();
    let presc = PolePrescription::simple(&[(c(-1.0), SquareMatrix::scalar(1, c(2.0)))]);
    let g = grid(12.0, 2400);
    let rec = reconstruct(&Problem::free(1), &presc, &g, &s).unwrap();
    let h_err = (rec.h.get(0, 0) - c(-2.0)).norm();
    let q0_err = (rec.q[0].get(0, 0) - c(8.0)).norm();
    let q_err = g
        .iter()
        .zip(&rec.q)
        .filter(|(&x, _)| x <= 6.0)
        .map(|(&x, q)| (q.get(0, 0) - c(bargmann_oracle(x))).norm())
        .fold(0.0, f64::max);
    let poles = extract_poles(&rec.problem, &s).unwrap();
    let (eig_err, res_err) = match poles.as_slice() {
        [p] => ((p.lambda + 1.0).abs(), (p.alpha.get(0, 0) - c(2.0)).norm()),
        _ => (f64::INFINITY, f64::INFINITY),
    };
    time_limit(
        h_err <= 1e-8 && q0_err <= 1e-6 && q_err <= 1e-6 && eig_err <= 1e-6 && res_err <= 1e-6,
        start,
        10.0,
        format!(
            "h {h_err:.2e}, Q(0) {q0_err:.2e}, Q on [0,6] {q_err:.2e}, eigenvalue {eig_err:.2e}, residue {res_err:.2e}"
        ),
    )
}

fn matrix_pole() -> Outcome {
    let start = Instant::now();
    let s = Settings::default();
    let alpha = SquareMatrix::diagonal(&[c(2.0), c(0.0)]);
    let presc = PolePrescription::simple(&[(c(-1.0), alpha)]);
    let contour = contour_points(&[c(-1.0)], 16).unwrap();
    let rep = roundtrip_finite(&Problem::free(2), &presc, &contour, &grid(12.0, 1200), &s);
    let mismatch = rep.max_weyl_mismatch.unwrap_or(f64::INFINITY);
    time_limit(
        rep.error.is_none() && mismatch <= 1e-4,
        start,
        30.0,
        format!(
            "max relative Weyl mismatch {mismatch:.2e} (limit 1e-4) on {} points{}",
            contour.len(),
            rep.error.map(|e| format!("; error: {e}")).unwrap_or_default()
        ),
    )
}

fn degeneration() -> Outcome {
    let s = Settings { n_quad: 64, ..Settings::default() };
    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    let alpha1 = SquareMatrix::scalar(1, c(2.0));
    cases.push((Problem::free(1), SpectralData::free(1, 64, s.rho_max, vec![Pole { lambda: -1.0, alpha: alpha1 }])));
    // Non-trivial model: its own spectral data plus one extra pole.
    let model = random_compact_problem(4, 2);
    let mut data = extract_spectral_data(&model, &s).unwrap();
    let extra = SquareMatrix::diagonal(&[c(1.0), c(0.5)]);
    data.poles.push(Pole { lambda: -7.3, alpha: extra });
    cases.push((model, data));
    for (model, data) in &cases {
        let presc = PolePrescription::simple(
            &data.poles[data.poles.len() - 1..]
                .iter()
                .map(|p| (c(p.lambda), p.alpha.clone()))
                .collect::<Vec<_>>(),
        );
        for x in [0.0, 0.5, 1.3, 2.9] {
            let a = solve_main(data, model, x, &s).unwrap();
            let b = solve_at(model, &presc, x, &s).unwrap();
            if a.blocks.len() != b.blocks.len() {
                return outcome(false, format!("block count {} vs {}", a.blocks.len(), b.blocks.len()));
            }
            for (u, v) in a.blocks.iter().zip(&b.blocks) {
                worst = worst.max(u.dist(v));
            }
        }
    }
    outcome(worst <= 1e-12, format!("max block difference {worst:.2e} (limit 1e-12)"))
}

fn full_selfadjoint() -> Outcome {
    let start = Instant::now();
    let truth = Problem::new(
        2,
        PotentialSpec::ExponentialSum {
            terms: vec![
                ExpTerm { coefficient: SquareMatrix::diagonal(&[c(2.0), c(0.0)]), rate: 1.0 },
                ExpTerm { coefficient: SquareMatrix::diagonal(&[c(0.0), c(1.0)]), rate: 2.0 },
            ],
            x_max: 4.0,
        },
        SquareMatrix::zeros(2),
        true,
    )
    .unwrap();
    let g = grid(5.0, 200);
    let mut errs = Vec::new();
    let mut notes = Vec::new();
    for n_quad in [200, 400] {
        let s = Settings { n_quad, ..Settings::default() };
        let rep = roundtrip_selfadjoint(&truth, &Problem::free(2), &g, &s);
        if let Some(e) = &rep.error {
            notes.push(format!("n_quad {n_quad}: {e}"));
        }
        errs.push(rep.q_l1_error.unwrap_or(f64::INFINITY));
    }
    let passed = errs[0] <= 5e-2 && errs[1] <= 2.5e-2;
    time_limit(
        passed && notes.is_empty(),
        start,
        600.0,
        format!(
            "L1 error {:.3e} at n_quad 200 (limit 5e-2), {:.3e} at n_quad 400 (limit 2.5e-2){}",
            errs[0],
            errs[1],
            notes.iter().map(|n| format!("; {n}")).collect::<String>()
        ),
    )
}

fn sign_flip() -> Outcome {
    let s = Settings::default();
    let presc = PolePrescription::simple(&[(c(-1.0), SquareMatrix::scalar(1, c(-2.0)))]);
    // 1 - x - sinh x cosh x vanishes here.
    let (mut a, mut b) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if 1.0 - mid - mid.sinh() * mid.cosh() > 0.0 { a = mid } else { b = mid }
    }
    match reconstruct(&Problem::free(1), &presc, &grid(3.0, 300), &s) {
        Err(Error::SingularMainSystem { x, .. }) => {
            let d = (x - a).abs();
            outcome(d <= 1e-6, format!("SingularMainSystem at x = {x:.10} (root {a:.10}, distance {d:.1e})"))
        }
        Err(e) => outcome(false, format!("unexpected error: {e}")),
        Ok(_) => outcome(false, "a potential was emitted".into()),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("free-field Weyl matrix", free_field),
        ("Wronskian identities", wronskians),
        ("M = M* and unitarity of xi", symmetry_and_unitarity),
        ("large-rho asymptotics", asymptotics),
        ("self-adjoint spectral properties", spectral_properties),
        ("M from spectral data", msd_identity),
        ("Bargmann round trip", bargmann),
        ("matrix one-pole round trip", matrix_pole),
        ("continuous solver degeneration", degeneration),
        ("continuous-data round trip", full_selfadjoint),
        ("sign-flipped residue", sign_flip),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let o = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            });
        if !o.passed {
            failures += 1;
        }
        println!("criterion {:>2} {}: {} ({})", k + 1, if o.passed { "PASS" } else { "FAIL" }, name, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
