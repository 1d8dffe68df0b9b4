//! Binned calibration estimators (ECE, MCE, classwise ECE, adaptive ECE),
//! reliability-diagram statistics and predictive metrics.
//!
//! All values are fractions in `[0, 1]`; conversion to percent happens at
//! presentation time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{argmax, Tensor};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-sum tolerance for probability matrices built in memory.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// `N x K` class probabilities with `N` integer labels, optionally keeping
/// the logits they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Tensor,
    labels: Vec<usize>,
    logits: Option<Tensor>,
}

impl PredictionSet {
    pub fn from_probs(probs: Tensor, labels: Vec<usize>) -> Result<Self> {
        Self::from_probs_with_tolerance(probs, labels, ROW_SUM_TOL)
    }

    /// Like [`PredictionSet::from_probs`] with a custom row-sum tolerance.
    pub fn from_probs_with_tolerance(probs: Tensor, labels: Vec<usize>, tol: f64) -> Result<Self> {
        check_shape(&probs, &labels)?;
        for (i, row) in probs.iter_rows().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Input(format!("row {i}: probability {v} outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::Input(format!("row {i}: probabilities sum to {s}, not 1")));
            }
        }
        Ok(Self {
            probs,
            labels,
            logits: None,
        })
    }

    /// Converts logits with a stable row softmax, keeping the logits.
    pub fn from_logits(logits: Tensor, labels: Vec<usize>) -> Result<Self> {
        check_shape(&logits, &labels)?;
        if !logits.is_finite() {
            return Err(Error::Input("logits contain non-finite values".into()));
        }
        Ok(Self {
            probs: logits.softmax_rows(),
            labels,
            logits: Some(logits),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn logits(&self) -> Option<&Tensor> {
        self.logits.as_ref()
    }

    /// Predicted class per sample (lowest index on ties).
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.argmax_rows()
    }

    /// Top-label probability per sample.
    pub fn confidences(&self) -> Vec<f64> {
        self.probs.iter_rows().map(|r| r[argmax(r)]).collect()
    }

    pub fn correct(&self) -> Vec<bool> {
        self.predictions()
            .into_iter()
            .zip(&self.labels)
            .map(|(p, &y)| p == y)
            .collect()
    }
}

fn check_shape(values: &Tensor, labels: &[usize]) -> Result<()> {
    let (n, k) = values.shape();
    if n == 0 {
        return Err(Error::Input("prediction set is empty".into()));
    }
    if k < 2 {
        return Err(Error::Input(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::Input(format!("row {i}: label {y} out of range for {k} classes")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningKind {
    EqualWidth,
    EqualMass,
}

impl fmt::Display for BinningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinningKind::EqualWidth => "equal-width",
            BinningKind::EqualMass => "equal-mass",
        })
    }
}

impl FromStr for BinningKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-width" => Ok(BinningKind::EqualWidth),
            "equal-mass" => Ok(BinningKind::EqualMass),
            other => Err(Error::Config(format!("unknown binning scheme `{other}`"))),
        }
    }
}

/// How confidences are partitioned: kind and bin count `M >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningScheme {
    kind: BinningKind,
    bins: usize,
}

impl BinningScheme {
    pub fn new(kind: BinningKind, bins: usize) -> Result<Self> {
        if bins < 1 {
            return Err(Error::Config("bin count must be at least 1".into()));
        }
        Ok(Self { kind, bins })
    }

    pub fn equal_width(bins: usize) -> Result<Self> {
        Self::new(BinningKind::EqualWidth, bins)
    }

    pub fn equal_mass(bins: usize) -> Result<Self> {
        Self::new(BinningKind::EqualMass, bins)
    }

    pub fn kind(&self) -> BinningKind {
        self.kind
    }

    pub fn bins(&self) -> usize {
        self.bins
    }
}

impl Default for BinningScheme {
    fn default() -> Self {
        Self {
            kind: BinningKind::EqualWidth,
            bins: 10,
        }
    }
}

/// Bin edges plus the bin index of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    pub edges: Vec<f64>,
    pub assignment: Vec<usize>,
}

/// `M + 1` equally spaced edges on `[0, 1]`.
pub fn equal_width_edges(m: usize) -> Vec<f64> {
    (0..=m).map(|i| i as f64 / m as f64).collect()
}

/// Partitions confidences. Equal-width bins are half-open `[lo, hi)` with
/// the last bin closed at 1. Equal-mass bins split the stably sorted
/// confidences into `M` contiguous runs whose sizes differ by at most 1.
pub fn assign_bins(confidences: &[f64], scheme: BinningScheme) -> Bins {
    let m = scheme.bins;
    match scheme.kind {
        BinningKind::EqualWidth => {
            let edges = equal_width_edges(m);
            let assignment = confidences.iter().map(|&c| width_bin(c, &edges)).collect();
            Bins { edges, assignment }
        }
        BinningKind::EqualMass => {
            let order = stable_order(confidences);
            let n = order.len();
            let mut assignment = vec![0; n];
            let mut edges = Vec::with_capacity(m + 1);
            edges.push(order.first().map_or(0.0, |&i| confidences[i]));
            for b in 0..m {
                let (start, end) = mass_slice(b, n, m);
                for &i in &order[start..end] {
                    assignment[i] = b;
                }
                if b > 0 {
                    let prev = *edges.last().unwrap();
                    edges.push(if start < end { confidences[order[start]] } else { prev });
                }
            }
            edges.push(order.last().map_or(1.0, |&i| confidences[i]));
            Bins { edges, assignment }
        }
    }
}

fn width_bin(c: f64, edges: &[f64]) -> usize {
    let m = edges.len() - 1;
    let mut b = ((c * m as f64).floor().max(0.0) as usize).min(m - 1);
    while b > 0 && c < edges[b] {
        b -= 1;
    }
    while b + 1 < m && c >= edges[b + 1] {
        b += 1;
    }
    b
}

/// Indices sorted by value, ties kept in index order.
pub fn stable_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// Rank range `[floor(b·n/m), floor((b+1)·n/m))` of equal-mass cell `b`.
pub fn mass_slice(b: usize, n: usize, m: usize) -> (usize, usize) {
    (b * n / m, (b + 1) * n / m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub acc: Option<f64>,
    pub conf: Option<f64>,
}

impl BinStat {
    /// `acc - conf`, the reliability-diagram gap.
    pub fn gap(&self) -> Option<f64> {
        Some(self.acc? - self.conf?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStats {
    pub n: usize,
    pub bins: Vec<BinStat>,
}

impl BinStats {
    pub fn gaps(&self) -> Vec<Option<f64>> {
        self.bins.iter().map(BinStat::gap).collect()
    }

    /// Count-weighted mean absolute gap; empty bins weigh nothing.
    pub fn ece(&self) -> f64 {
        let n = self.n as f64;
        let mut total = 0.0;
        for b in &self.bins {
            if let Some(gap) = b.gap() {
                total += (b.count as f64 / n) * gap.abs();
            }
        }
        total
    }

    /// Largest absolute gap over nonempty bins.
    pub fn mce(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(BinStat::gap)
            .map(f64::abs)
            .fold(0.0, f64::max)
    }
}

/// Per-bin statistics from raw confidences and correctness indicators.
pub fn bin_stats(confidences: &[f64], correct: &[bool], scheme: BinningScheme) -> BinStats {
    let Bins { edges, assignment } = assign_bins(confidences, scheme);
    let m = scheme.bins;
    let mut count = vec![0usize; m];
    let mut hits = vec![0.0; m];
    let mut conf_sum = vec![0.0; m];
    for ((&b, &c), &ok) in assignment.iter().zip(confidences).zip(correct) {
        count[b] += 1;
        conf_sum[b] += c;
        if ok {
            hits[b] += 1.0;
        }
    }
    let bins = (0..m)
        .map(|b| {
            let (acc, conf) = if count[b] == 0 {
                (None, None)
            } else {
                let n = count[b] as f64;
                (Some(hits[b] / n), Some(conf_sum[b] / n))
            };
            BinStat {
                lo: edges[b],
                hi: edges[b + 1],
                count: count[b],
                acc,
                conf,
            }
        })
        .collect();
    BinStats {
        n: confidences.len(),
        bins,
    }
}

pub fn reliability(preds: &PredictionSet, scheme: BinningScheme) -> BinStats {
    bin_stats(&preds.confidences(), &preds.correct(), scheme)
}

pub fn ece(preds: &PredictionSet, scheme: BinningScheme) -> f64 {
    reliability(preds, scheme).ece()
}

pub fn mce(preds: &PredictionSet, scheme: BinningScheme) -> f64 {
    reliability(preds, scheme).mce()
}

pub fn classwise_ece(preds: &PredictionSet, bins: usize) -> Result<f64> {
    classwise_ece_with(preds, bins, Exec::default())
}

/// One-vs-rest ECE over every class with equal-width bins, each cell
/// weighted by `|b_mc| / (N·K)`.
pub fn classwise_ece_with(preds: &PredictionSet, bins: usize, exec: Exec) -> Result<f64> {
    let scheme = BinningScheme::equal_width(bins)?;
    let (n, k) = (preds.n(), preds.k());
    let per_class = exec.map(k, |c| {
        let conf: Vec<f64> = preds.probs.iter_rows().map(|r| r[c]).collect();
        let hit: Vec<bool> = preds.labels.iter().map(|&y| y == c).collect();
        let stats = bin_stats(&conf, &hit, scheme);
        stats
            .bins
            .iter()
            .filter_map(|b| Some(b.count as f64 / (n * k) as f64 * b.gap()?.abs()))
            .sum::<f64>()
    });
    Ok(per_class.into_iter().sum())
}

/// Adaptive ECE options: number of equal-mass ranges `R` per class and the
/// minimum class probability for a prediction to be counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceSpec {
    pub ranges: usize,
    pub threshold: f64,
}

impl AceSpec {
    pub fn new(ranges: usize) -> Self {
        Self {
            ranges,
            threshold: 0.0,
        }
    }
}

pub fn adaptive_ece(preds: &PredictionSet, spec: AceSpec) -> Result<f64> {
    adaptive_ece_with(preds, spec, Exec::default())
}

/// Per-class equal-mass ranges over sorted class probabilities; unweighted
/// mean of `|acc - conf|` across the `R·K` cells. Cells left empty by the
/// threshold contribute 0.
pub fn adaptive_ece_with(preds: &PredictionSet, spec: AceSpec, exec: Exec) -> Result<f64> {
    let r = spec.ranges;
    if r < 1 {
        return Err(Error::Config("adaptive ECE needs at least 1 range".into()));
    }
    if r > preds.n() {
        return Err(Error::Config(format!(
            "adaptive ECE with {r} ranges needs at least {r} samples, got {}",
            preds.n()
        )));
    }
    let k = preds.k();
    let per_class = exec.map(k, |c| {
        let kept: Vec<(f64, bool)> = preds
            .probs
            .iter_rows()
            .zip(&preds.labels)
            .filter(|(row, _)| row[c] >= spec.threshold)
            .map(|(row, &y)| (row[c], y == c))
            .collect();
        let probs: Vec<f64> = kept.iter().map(|p| p.0).collect();
        let order = stable_order(&probs);
        let n_c = order.len();
        let mut total = 0.0;
        for cell in 0..r {
            let (start, end) = mass_slice(cell, n_c, r);
            if start == end {
                continue;
            }
            let len = (end - start) as f64;
            let mut hits = 0.0;
            let mut conf = 0.0;
            for &i in &order[start..end] {
                conf += kept[i].0;
                if kept[i].1 {
                    hits += 1.0;
                }
            }
            total += (hits / len - conf / len).abs();
        }
        total
    });
    Ok(per_class.into_iter().sum::<f64>() / (r * k) as f64)
}

/// Mean negative log-likelihood of the true class, probabilities floored at
/// [`PROB_FLOOR`].
pub fn nll(preds: &PredictionSet) -> f64 {
    let total: f64 = preds
        .probs
        .iter_rows()
        .zip(&preds.labels)
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    total / preds.n() as f64
}

/// Mean squared distance between each probability row and its one-hot label.
pub fn brier(preds: &PredictionSet) -> f64 {
    let total: f64 = preds
        .probs
        .iter_rows()
        .zip(&preds.labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(c, &p)| {
                    let t = if c == y { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>()
        })
        .sum();
    total / preds.n() as f64
}

pub fn error_rate(preds: &PredictionSet) -> f64 {
    let wrong = preds.correct().iter().filter(|&&ok| !ok).count();
    wrong as f64 / preds.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub ece: f64,
    pub mce: f64,
}

pub fn bin_sweep(preds: &PredictionSet, ms: &[usize]) -> Result<Vec<SweepRow>> {
    bin_sweep_with(preds, ms, Exec::default())
}

/// ECE and MCE with equal-width bins for each bin count in `ms`.
pub fn bin_sweep_with(preds: &PredictionSet, ms: &[usize], exec: Exec) -> Result<Vec<SweepRow>> {
    if ms.is_empty() {
        return Err(Error::Config("bin sweep needs at least one bin count".into()));
    }
    let schemes = ms
        .iter()
        .map(|&m| BinningScheme::equal_width(m))
        .collect::<Result<Vec<_>>>()?;
    let conf = preds.confidences();
    let correct = preds.correct();
    Ok(exec.map_slice(&schemes, |&s| {
        let stats = bin_stats(&conf, &correct, s);
        SweepRow {
            m: s.bins,
            ece: stats.ece(),
            mce: stats.mce(),
        }
    }))
}

/// Bin counts swept by default.
pub const DEFAULT_SWEEP: [usize; 7] = [10, 20, 50, 100, 200, 500, 1000];
