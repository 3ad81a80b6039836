//! CSV and JSON exports of metrics, traces and analysis tables.
//!
//! Numbers are written with 6 significant digits in the style of C's `%g`:
//! fixed notation for exponents in `[-4, 6)`, scientific otherwise, trailing
//! zeros removed. Formatting never depends on locale. Missing values are
//! written as `undefined`.
//!
//! Column orders:
//!
//! | table    | columns |
//! |----------|---------|
//! | curves   | `g,lambda_hat,mu_hat,alpha_hat` |
//! | scatter  | `g,lambda_hat,mu_hat,alpha_hat,e_strain,e_shear,e_total,folding` |
//! | trace    | `level,iteration,sim,regularizer,strain,shear,folding,total,grad_max,singular_voxels,step_accepted` |
//! | dice     | `label,dice` |
//! | summary  | `mean_dice,pct_jac_ge1,pct_jac_le0,strain_energy` |
//! | volume   | `structure,pct_change` |
//! | histogram| `bin,lo,hi,count` |

use std::fmt::Write as _;
use std::path::Path;

use super::write_file;
use crate::error::Result;
use crate::metrics::{CurvePoint, Histogram, MetricsReport, ParamRecord};
use crate::optimizer::OptimizationTrace;

pub const UNDEFINED: &str = "undefined";

/// `%.6g`-style formatting.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // The exponent after rounding to 6 significant digits decides the style.
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        strip_zeros(format!("{x:.decimals$}"))
    } else {
        let mant = strip_zeros(mant.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    }
}

fn strip_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), fmt_num)
}

fn row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("g,lambda_hat,mu_hat,alpha_hat\n");
    for p in points {
        row(&mut s, &[p.g, p.lambda_hat, p.mu_hat, p.alpha_hat].map(fmt_num));
    }
    s
}

pub fn scatter_csv(records: &[ParamRecord]) -> String {
    let mut s = String::from("g,lambda_hat,mu_hat,alpha_hat,e_strain,e_shear,e_total,folding\n");
    for r in records {
        row(
            &mut s,
            &[r.g, r.lambda_hat, r.mu_hat, r.alpha_hat, r.e_strain, r.e_shear, r.e_total, r.folding].map(fmt_num),
        );
    }
    s
}

pub fn trace_csv(trace: &OptimizationTrace) -> String {
    let mut s = String::from(
        "level,iteration,sim,regularizer,strain,shear,folding,total,grad_max,singular_voxels,step_accepted\n",
    );
    for r in &trace.records {
        let e = &r.energy;
        let mut cells = vec![r.level.to_string(), r.iteration.to_string()];
        cells.extend([e.sim, e.regularizer, e.strain, e.shear, e.folding, e.total, r.grad_max].map(fmt_num));
        cells.push(r.singular_voxels.to_string());
        cells.push(r.step_accepted.to_string());
        row(&mut s, &cells);
    }
    s
}

pub fn dice_csv(report: &MetricsReport) -> String {
    let mut s = String::from("label,dice\n");
    for (l, d) in &report.dice_per_label {
        row(&mut s, &[l.to_string(), fmt_num(*d)]);
    }
    s
}

pub fn summary_csv(report: &MetricsReport) -> String {
    let mut s = String::from("mean_dice,pct_jac_ge1,pct_jac_le0,strain_energy\n");
    row(
        &mut s,
        &[
            fmt_opt(report.mean_dice),
            fmt_num(report.pct_jac_ge1),
            fmt_num(report.pct_jac_le0),
            fmt_num(report.strain_energy),
        ],
    );
    s
}

pub fn volume_change_csv(report: &MetricsReport) -> String {
    let mut s = String::from("structure,pct_change\n");
    for (k, v) in &report.volume_changes {
        row(&mut s, &[k.to_string(), fmt_opt(*v)]);
    }
    s
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin,lo,hi,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(k);
        let _ = writeln!(s, "{k},{},{},{c}", fmt_num(lo), fmt_num(hi));
    }
    s
}

pub fn report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

/// Writes the metrics bundle into `dir`: `metrics.json`, `summary.csv`,
/// `dice.csv`, `volume_change.csv`, `neg_jacobian_hist.csv` and
/// `strain_hist.csv`.
pub fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_text(&dir.join("metrics.json"), &report_json(report))?;
    write_text(&dir.join("summary.csv"), &summary_csv(report))?;
    write_text(&dir.join("dice.csv"), &dice_csv(report))?;
    write_text(&dir.join("volume_change.csv"), &volume_change_csv(report))?;
    write_text(&dir.join("neg_jacobian_hist.csv"), &histogram_csv(&report.neg_jac_histogram))?;
    write_text(&dir.join("strain_hist.csv"), &histogram_csv(&report.strain_histogram))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        let cases = [
            (0.0, "0"),
            (2.0, "2"),
            (-1.5, "-1.5"),
            (0.9966535745, "0.996654"),
            (0.75, "0.75"),
            (123456.4, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (999999.5, "1e+06"),
            (1e-300, "1e-300"),
            (100.0, "100"),
            (0.1 + 0.2, "0.3"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_num(x), want, "{x}");
        }
        assert_eq!(fmt_num(f64::NAN), "nan");
        assert_eq!(fmt_opt(None), "undefined");
    }
}
