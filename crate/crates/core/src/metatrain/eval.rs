use serde::Serialize;

use super::backbone::Backbone;
use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::{self, BinStats, PredictionSet, SweepRow};
use crate::report::{calibration_report, CalibrationReport, ReportOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: CalibrationReport,
    pub reliability: BinStats,
    pub sweep: Vec<SweepRow>,
}

/// Softmax predictions of `backbone` on `data`, logits retained.
pub fn predictions(backbone: &Backbone, data: &Dataset) -> Result<PredictionSet> {
    let (_, logits) = backbone.predict(&data.features)?;
    PredictionSet::from_logits(logits, data.labels.clone())
}

/// Full report, reliability series under `opts.scheme`, and an
/// equal-width bin sweep over `sweep`.
pub fn evaluate(backbone: &Backbone, test: &Dataset, opts: &ReportOptions, sweep: &[usize]) -> Result<Evaluation> {
    let preds = predictions(backbone, test)?;
    Ok(Evaluation {
        report: calibration_report(&preds, opts)?,
        reliability: metrics::reliability(&preds, opts.scheme),
        sweep: metrics::bin_sweep_with(&preds, sweep, opts.exec)?,
    })
}
