use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use weyl_inverse::C64;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn weylinv(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_weylinv"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Upper-half-plane root of `λ`, with the side flag choosing the sign on `λ > 0`.
fn rho_of(lambda: C64, side: &str) -> C64 {
    if lambda.im == 0.0 && lambda.re > 0.0 {
        let r = C64::new(lambda.re.sqrt(), 0.0);
        return if side == "-" { -r } else { r };
    }
    let r = lambda.sqrt();
    if r.im < 0.0 { -r } else { r }
}

#[test]
fn forward_free_field_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = weylinv(
        &["forward", "--problem", p(&fixture("free_field.json")), "--lambdas", p(&fixture("lambdas.csv")), "-o", p(&out), "--emit-plots"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("m.M.dat").exists());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("lambda_re,lambda_im,side,M[0][0]_re,M[0][0]_im,M[0][1]_re"));
    let h = [[0.5, 0.25], [0.25, -1.0]];
    let mut n = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let lambda = C64::new(f[0].parse().unwrap(), f[1].parse().unwrap());
        let ir = C64::i() * rho_of(lambda, f[2]);
        // (iρ − h)⁻¹ for the 2×2 case.
        let a = [[ir - h[0][0], C64::from(-h[0][1])], [C64::from(-h[1][0]), ir - h[1][1]]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        for j in 0..2 {
            for k in 0..2 {
                let col = 3 + 2 * (2 * j + k);
                let got = C64::new(f[col].parse().unwrap(), f[col + 1].parse().unwrap());
                assert!((got - inv[j][k]).norm() <= 1e-8 * inv[j][k].norm().max(1e-3), "{line}");
            }
        }
        n += 1;
    }
    assert_eq!(n, 5);
}

#[test]
fn perturb_add_on_empty_prescription() {
    let o = weylinv(&["perturb", "add", "--lambda=-1", "--alpha=2"], &[]);
    assert!(o.status.success());
    let got: Value = serde_json::from_slice(&o.stdout).unwrap();
    let expect: Value = serde_json::from_str(&std::fs::read_to_string(fixture("bargmann_prescription.json")).unwrap()).unwrap();
    assert_eq!(got, expect);

    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("p.json");
    std::fs::write(&f, &o.stdout).unwrap();
    let o = weylinv(&["perturb", "move", "-i", p(&f), "--index", "0", "--lambda=-2.5"], &[]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["lambda"][0], -2.5);
    let o = weylinv(&["perturb", "remove", "-i", p(&f), "--index", "0"], &[]);
    assert_eq!(serde_json::from_slice::<Value>(&o.stdout).unwrap(), Value::Array(vec![]));
    let o = weylinv(&["perturb", "remove", "-i", p(&f), "--index", "3"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn roundtrip_on_bundled_fixture_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = weylinv(&["roundtrip", "--fixture", "bargmann", "--report", p(&report)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["settings"]["ode_tol"].is_number());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("result: PASS"));

    let o = weylinv(
        &["roundtrip", "--model", p(&fixture("bargmann_model.json")), "--prescription", p(&fixture("bargmann_prescription.json"))],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn singular_prescription_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let presc = dir.path().join("flip.json");
    std::fs::write(&presc, r#"[{"lambda": [-1, 0], "terms": [{"nu": 1, "alpha": [[-2, 0]]}]}]"#).unwrap();
    let out = dir.path().join("q.json");
    let o = weylinv(&["invert-finite", "--prescription", p(&presc), "-o", p(&out), "--x-max", "2"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("singular"));
    assert!(!out.exists());
    let o = weylinv(&["roundtrip", "--prescription", p(&presc), "--x-max", "2"], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(weylinv(&["bogus"], &[]).status.code(), Some(2));
    assert_eq!(weylinv(&["roundtrip"], &[]).status.code(), Some(2));
    let o = weylinv(&["roundtrip", "--fixture", "bargmann"], &[("WEYLINV_N_QUAD", "0")]);
    assert_eq!(o.status.code(), Some(2));
    let o = weylinv(&["invert-finite", "--prescription", p(&fixture("bargmann_prescription.json")), "--emit-plots"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invert_finite_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, threads: &str| {
        let base = dir.path().join(tag);
        let args = [
            "invert-finite",
            "--prescription",
            p(&fixture("bargmann_prescription.json")),
            "-o",
            &format!("{}.json", base.display()),
            "--csv",
            &format!("{}.csv", base.display()),
            "--diagnostics",
            &format!("{}.diag.json", base.display()),
            "--emit-plots",
        ]
        .map(String::from);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = weylinv(&args, &[("WEYLINV_X_MAX", "6"), ("WEYLINV_DX", "0.02"), ("WEYLINV_THREADS", threads)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        ["json", "csv", "Q.dat", "eps.dat", "diag.json"].map(|ext| std::fs::read(format!("{}.{ext}", base.display())).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_eq!(a[..4], c[..4]);
    let diag: Value = serde_json::from_slice(&a[4]).unwrap();
    assert_eq!(diag["x"].as_array().unwrap().len(), 301);
    assert_eq!(diag["solve"]["conditions"].as_array().unwrap().len(), 301);
    let csv = String::from_utf8(a[1].clone()).unwrap();
    assert!(csv.starts_with("x,Q[0][0]_re,Q[0][0]_im,eps[0][0]_re,eps[0][0]_im\n"));
    let problem: Value = serde_json::from_slice(&a[0]).unwrap();
    assert_eq!(problem["h"][0][0], -2.0);
}

#[test]
fn spectrum_then_invert_sd() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.json");
    let dens = dir.path().join("v.csv");
    let knobs = [("WEYLINV_N_QUAD", "48"), ("WEYLINV_RHO_MAX", "12")];
    let o = weylinv(
        &["spectrum", "--problem", p(&fixture("exp_diag.json")), "-o", p(&data), "--density-csv", p(&dens), "--emit-plots"],
        &knobs,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("v.V.dat").exists());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&data).unwrap()).unwrap();
    assert_eq!(v["density"]["rho_nodes"].as_array().unwrap().len(), 48);
    let diag = dir.path().join("d.json");
    let o = weylinv(
        &["invert-sd", "--data", p(&data), "-o", p(&dir.path().join("q.json")), "--diagnostics", p(&diag), "--x-max", "5", "--dx", "0.05"],
        &knobs,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d: Value = serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert!(d["spectral_data"]["rest_v"]["ratio"].as_f64().unwrap() <= 1.1);
    assert!(d["eps"]["weighted_l1"].is_number());
}
