//! The full calibration report for one prediction set.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::metrics::{self, AceSpec, BinningScheme, PredictionSet};
use crate::smoothcal::{self, KernelSpec, DEFAULT_KDE_GRID};

/// All metrics are fractions in `[0, 1]`; see [`PercentTable`] for the
/// percent view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub error: f64,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub mce: f64,
    pub ace: f64,
    pub cece: f64,
    pub sece: f64,
    pub kde_ece: f64,
    pub n: usize,
    pub k: usize,
    pub bins: usize,
    pub scheme: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub scheme: BinningScheme,
    pub ace: AceSpec,
    pub kernel: KernelSpec,
    pub kde_grid: usize,
    pub exec: Exec,
}

impl Default for ReportOptions {
    fn default() -> Self {
        let scheme = BinningScheme::default();
        Self {
            scheme,
            ace: AceSpec::new(scheme.bins()),
            kernel: KernelSpec::default(),
            kde_grid: DEFAULT_KDE_GRID,
            exec: Exec::default(),
        }
    }
}

impl ReportOptions {
    /// Default options with `M` bins for ECE/MCE/classwise ECE and `M`
    /// ranges for ACE.
    pub fn with_bins(scheme: BinningScheme) -> Self {
        Self {
            scheme,
            ace: AceSpec::new(scheme.bins()),
            ..Self::default()
        }
    }
}

/// Computes every metric. If ACE asks for more ranges than there are
/// samples, it is evaluated with `R = N`.
pub fn calibration_report(preds: &PredictionSet, opts: &ReportOptions) -> Result<CalibrationReport> {
    let mut ace_spec = opts.ace;
    if ace_spec.ranges > preds.n() {
        log::warn!("ACE ranges {} exceed N = {}; using R = N", ace_spec.ranges, preds.n());
        ace_spec.ranges = preds.n();
    }
    let stats = metrics::reliability(preds, opts.scheme);
    Ok(CalibrationReport {
        error: metrics::error_rate(preds),
        nll: metrics::nll(preds),
        brier: metrics::brier(preds),
        ece: stats.ece(),
        mce: stats.mce(),
        ace: metrics::adaptive_ece_with(preds, ace_spec, opts.exec)?,
        cece: metrics::classwise_ece_with(preds, opts.scheme.bins(), opts.exec)?,
        sece: smoothcal::sece_hard_with(preds, opts.kernel, opts.exec),
        kde_ece: smoothcal::kde_ece_with(preds, opts.kernel, opts.kde_grid, opts.exec)?,
        n: preds.n(),
        k: preds.k(),
        bins: opts.scheme.bins(),
        scheme: opts.scheme.kind().to_string(),
    })
}

/// Renders a report as a two-column table, rates in percent.
pub struct PercentTable<'a>(pub &'a CalibrationReport);

impl fmt::Display for PercentTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.0;
        let pct = [
            ("error %", r.error),
            ("ece %", r.ece),
            ("mce %", r.mce),
            ("ace %", r.ace),
            ("cece %", r.cece),
            ("sece %", r.sece),
            ("kde_ece %", r.kde_ece),
        ];
        writeln!(f, "{:<10} {:>10.4}", "nll", r.nll)?;
        writeln!(f, "{:<10} {:>10.4}", "brier", r.brier)?;
        for (name, v) in pct {
            writeln!(f, "{name:<10} {:>10.2}", 100.0 * v)?;
        }
        writeln!(f, "{:<10} {:>10}", "n", r.n)?;
        writeln!(f, "{:<10} {:>10}", "k", r.k)?;
        write!(f, "{:<10} {:>10}", "bins", format!("{} {}", r.bins, r.scheme))
    }
}
