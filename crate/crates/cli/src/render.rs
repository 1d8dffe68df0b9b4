//! Report and series rendering for the three output formats.

use std::fmt::Write as _;

use calibkit::metrics::{BinStats, SweepRow};
use calibkit::report::{CalibrationReport, PercentTable};
use serde::Serialize;

use crate::args::Format;

pub fn json<T: Serialize + ?Sized>(value: &T) -> calibkit::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub const REPORT_HEADER: &str = "error,nll,brier,ece,mce,ace,cece,sece,kde_ece,n,k,bins,scheme";

pub fn report_csv_row(r: &CalibrationReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.error, r.nll, r.brier, r.ece, r.mce, r.ace, r.cece, r.sece, r.kde_ece, r.n, r.k, r.bins, r.scheme
    )
}

pub fn report(r: &CalibrationReport, format: Format) -> calibkit::Result<String> {
    Ok(match format {
        Format::Json => json(r)?,
        Format::Table => format!("{}\n", PercentTable(r)),
        Format::Csv => format!("{REPORT_HEADER}\n{}\n", report_csv_row(r)),
    })
}

pub fn sweep(rows: &[SweepRow], format: Format) -> calibkit::Result<String> {
    let mut s = String::new();
    match format {
        Format::Json => return json(rows),
        Format::Csv => {
            s.push_str("m,ece,mce\n");
            for r in rows {
                writeln!(s, "{},{},{}", r.m, r.ece, r.mce).unwrap();
            }
        }
        Format::Table => {
            writeln!(s, "{:>6} {:>8} {:>8}", "m", "ece %", "mce %").unwrap();
            for r in rows {
                writeln!(s, "{:>6} {:>8.2} {:>8.2}", r.m, 100.0 * r.ece, 100.0 * r.mce).unwrap();
            }
        }
    }
    Ok(s)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn reliability(stats: &BinStats, format: Format) -> calibkit::Result<String> {
    let mut s = String::new();
    match format {
        Format::Json => return json(stats),
        Format::Csv => {
            s.push_str("bin_lo,bin_hi,count,acc,conf,gap\n");
            for b in &stats.bins {
                writeln!(s, "{},{},{},{},{},{}", b.lo, b.hi, b.count, cell(b.acc), cell(b.conf), cell(b.gap())).unwrap();
            }
        }
        Format::Table => {
            writeln!(s, "{:>8} {:>8} {:>7} {:>8} {:>8} {:>8}", "lo", "hi", "count", "acc", "conf", "gap").unwrap();
            let fixed = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            for b in &stats.bins {
                writeln!(
                    s,
                    "{:>8.4} {:>8.4} {:>7} {:>8} {:>8} {:>8}",
                    b.lo,
                    b.hi,
                    b.count,
                    fixed(b.acc),
                    fixed(b.conf),
                    fixed(b.gap())
                )
                .unwrap();
            }
        }
    }
    Ok(s)
}
