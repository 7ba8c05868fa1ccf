//! Plain-text file formats: JSON documents, CSV tables and gnuplot data blocks.
//!
//! Floats are written in shortest round-trip exponent form so identical inputs
//! always produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite::Reconstruction;
use crate::matrix::{SquareMatrix, C64};
use crate::model::Side;
use crate::spectral::SpectralData;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Parses `re,im[,side]` rows. Blank lines, `#` comments and a non-numeric
/// header row are skipped.
pub fn parse_lambda_list(text: &str) -> Result<Vec<(C64, Side)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("lambda list: {e}")))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if k == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if !(2..=3).contains(&rec.len()) {
            return Err(Error::InvalidInput(format!("lambda list row {}: expected re,im[,side]", k + 1)));
        }
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("lambda list row {}: bad number {:?}", k + 1, &rec[i])))
        };
        let side = Side::parse(rec.get(2).unwrap_or(""))?;
        out.push((C64::new(num(0)?, num(1)?), side));
    }
    Ok(out)
}

fn entry_header(out: &mut Vec<String>, name: &str, m: usize) {
    for j in 0..m {
        for k in 0..m {
            out.push(format!("{name}[{j}][{k}]_re"));
            out.push(format!("{name}[{j}][{k}]_im"));
        }
    }
}

fn push_entries(out: &mut Vec<String>, a: &SquareMatrix) {
    for z in a.to_row_major() {
        out.push(fmt_f64(z.re));
        out.push(fmt_f64(z.im));
    }
}

fn write_table(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `lambda_re,lambda_im,side,M[j][k]_re,M[j][k]_im,...` with entries in row-major order.
pub fn forward_csv(m: usize, rows: &[(C64, Side, SquareMatrix)]) -> Result<String> {
    let mut header = vec!["lambda_re".to_string(), "lambda_im".into(), "side".into()];
    entry_header(&mut header, "M", m);
    write_table(
        header,
        rows.iter().map(|(l, side, mw)| {
            let mut r = vec![fmt_f64(l.re), fmt_f64(l.im), side.as_str().to_string()];
            push_entries(&mut r, mw);
            r
        }),
    )
}

/// `x` followed by the entries of `Q` and `ε`.
pub fn reconstruction_csv(rec: &Reconstruction) -> Result<String> {
    let m = rec.h.dim();
    let mut header = vec!["x".to_string()];
    entry_header(&mut header, "Q", m);
    entry_header(&mut header, "eps", m);
    write_table(
        header,
        rec.x.iter().enumerate().map(|(i, &x)| {
            let mut r = vec![fmt_f64(x)];
            push_entries(&mut r, &rec.q[i]);
            push_entries(&mut r, &rec.eps[i]);
            r
        }),
    )
}

/// `lambda,rho,weight` followed by the entries of `V`.
pub fn density_csv(data: &SpectralData) -> Result<String> {
    let d = &data.density;
    let mut header = vec!["lambda".to_string(), "rho".into(), "weight".into()];
    entry_header(&mut header, "V", data.m);
    write_table(
        header,
        d.rho_nodes.iter().zip(&d.weights).zip(&d.values).map(|((&r, &w), v)| {
            let mut row = vec![fmt_f64(r * r), fmt_f64(r), fmt_f64(w)];
            push_entries(&mut row, v);
            row
        }),
    )
}

/// Gnuplot data with one two-column block per matrix entry and component,
/// selectable with `index`. Purely real components are omitted.
pub fn plot_blocks(name: &str, x: &[f64], values: &[SquareMatrix]) -> String {
    let m = values.first().map_or(0, SquareMatrix::dim);
    let mut s = String::new();
    let mut index = 0;
    for j in 0..m {
        for k in 0..m {
            for (part, pick) in [("re", 0usize), ("im", 1)] {
                let comp = |a: &SquareMatrix| if pick == 0 { a.get(j, k).re } else { a.get(j, k).im };
                if pick == 1 && values.iter().all(|a| comp(a) == 0.0) {
                    continue;
                }
                if index > 0 {
                    s.push_str("\n\n");
                }
                let _ = writeln!(s, "# index {index}: {name}[{j}][{k}] {part}");
                for (xi, a) in x.iter().zip(values) {
                    let _ = writeln!(s, "{} {}", fmt_f64(*xi), fmt_f64(comp(a)));
                }
                index += 1;
            }
        }
    }
    s
}
