//! Human-readable digest of a run directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::run::{Manifest, MANIFEST};
use crate::CliError;

fn rows(dir: &Path, name: &str) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(dir.join(name)).ok()?;
    let header = r.headers().ok()?.iter().map(str::to_string).collect();
    let body = r
        .records()
        .filter_map(|x| x.ok())
        .map(|x| x.iter().map(str::to_string).collect())
        .collect();
    Some((header, body))
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or(usize::MAX)
}

fn get(row: &[String], i: usize) -> &str {
    row.get(i).map_or("", String::as_str)
}

pub fn render(dir: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))
        .map_err(|_| CliError::Config(format!("no {MANIFEST} in {}", dir.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest: {e}")))?;
    let mut out = String::new();
    let _ = writeln!(out, "run: {}", m.command);
    if let Some((h, body)) = rows(dir, "price.csv") {
        for r in &body {
            let _ = writeln!(
                out,
                "CVA ({}): {} +/- {} ({} paths)",
                get(r, col(&h, "estimator")),
                get(r, col(&h, "estimate")),
                get(r, col(&h, "ci_halfwidth")),
                get(r, col(&h, "paths"))
            );
        }
    }
    for (file, label) in [("market-sensis.csv", "market"), ("bump-sensis.csv", "model")] {
        let Some((h, mut body)) = rows(dir, file) else { continue };
        let (ni, vi) = if label == "market" {
            (col(&h, "instrument"), col(&h, "sensitivity"))
        } else {
            (col(&h, "parameter_name"), col(&h, "estimate"))
        };
        let ci = col(&h, "ci_halfwidth");
        let mag = |r: &Vec<String>| get(r, vi).parse::<f64>().map_or(0.0, f64::abs);
        body.sort_by(|a, b| mag(b).total_cmp(&mag(a)));
        let _ = writeln!(out, "top {label} sensitivities:");
        for r in body.iter().take(10) {
            let _ = writeln!(out, "  {:<14} {:>14} +/- {}", get(r, ni), get(r, vi), get(r, ci));
        }
    }
    if let Some((h, body)) = rows(dir, "bs-bench.csv") {
        let _ = writeln!(out, "basket greeks (analytic / estimate / ci):");
        for r in &body {
            let _ = writeln!(
                out,
                "  {:<10} {:>12} {:>12} {}",
                get(r, col(&h, "greek")),
                get(r, col(&h, "analytic")),
                get(r, col(&h, "estimate")),
                get(r, col(&h, "ci_halfwidth"))
            );
        }
    }
    if let Some((h, body)) = rows(dir, "twin.csv") {
        for r in &body {
            let _ = writeln!(
                out,
                "twin {}: err {} ub {}",
                get(r, col(&h, "predictor")),
                get(r, col(&h, "twin_err")),
                get(r, col(&h, "twin_ub"))
            );
        }
    }
    for file in ["risk-runoff.csv", "risk-runon.csv"] {
        let Some((h, body)) = rows(dir, file) else { continue };
        let _ = writeln!(out, "{}:", file.trim_end_matches(".csv"));
        for r in &body {
            let _ = writeln!(
                out,
                "  {:<16} {:<4} {:>6} {}",
                get(r, col(&h, "method")),
                get(r, col(&h, "measure")),
                get(r, col(&h, "alpha")),
                get(r, col(&h, "value"))
            );
        }
    }
    if let Some((h, body)) = rows(dir, "hedge-backtest.csv") {
        let _ = writeln!(out, "compression ratios (UPL / EC):");
        for r in &body {
            let _ = writeln!(
                out,
                "  {:<12} {:<6} {:>10} {:>10}",
                get(r, col(&h, "sample")),
                get(r, col(&h, "method")),
                get(r, col(&h, "upl_ratio")),
                get(r, col(&h, "ec_ratio"))
            );
        }
    }
    Ok(out)
}
