//! Brute-force reference metrics: plain double loops over bins and
//! classes, sharing no code with the library.

pub struct Instance {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn top(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    (best, row[best])
}

fn in_width_bin(c: f64, m: usize, bins: usize) -> bool {
    let lo = m as f64 / bins as f64;
    let hi = (m + 1) as f64 / bins as f64;
    if m + 1 == bins {
        c >= lo
    } else {
        c >= lo && c < hi
    }
}

/// `(ece, mce)` over top-label confidences with equal-width bins.
pub fn ece_mce(inst: &Instance, bins: usize) -> (f64, f64) {
    let n = inst.labels.len();
    let mut ece = 0.0;
    let mut mce: f64 = 0.0;
    for m in 0..bins {
        let mut count = 0;
        let mut hits = 0;
        let mut conf = 0.0;
        for i in 0..n {
            let (pred, c) = top(&inst.probs[i]);
            if in_width_bin(c, m, bins) {
                count += 1;
                conf += c;
                if pred == inst.labels[i] {
                    hits += 1;
                }
            }
        }
        if count > 0 {
            let gap = (hits as f64 / count as f64 - conf / count as f64).abs();
            ece += count as f64 / n as f64 * gap;
            mce = mce.max(gap);
        }
    }
    (ece, mce)
}

/// One-vs-rest ECE over every class, equal-width bins, cells weighted by
/// `count / (N·K)`.
pub fn classwise_ece(inst: &Instance, bins: usize) -> f64 {
    let n = inst.labels.len();
    let k = inst.probs[0].len();
    let mut total = 0.0;
    for c in 0..k {
        for m in 0..bins {
            let mut count = 0;
            let mut hits = 0;
            let mut conf = 0.0;
            for i in 0..n {
                let p = inst.probs[i][c];
                if in_width_bin(p, m, bins) {
                    count += 1;
                    conf += p;
                    if inst.labels[i] == c {
                        hits += 1;
                    }
                }
            }
            if count > 0 {
                let gap = (hits as f64 / count as f64 - conf / count as f64).abs();
                total += count as f64 / (n * k) as f64 * gap;
            }
        }
    }
    total
}

/// Adaptive ECE: per class, `R` equal-population ranges of the sorted
/// class probabilities (ties by row index), unweighted mean gap.
pub fn adaptive_ece(inst: &Instance, ranges: usize) -> f64 {
    let n = inst.labels.len();
    let k = inst.probs[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let mut ranked: Vec<(f64, usize)> = (0..n).map(|i| (inst.probs[i][c], i)).collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for r in 0..ranges {
            let start = r * n / ranges;
            let end = (r + 1) * n / ranges;
            if start == end {
                continue;
            }
            let mut hits = 0;
            let mut conf = 0.0;
            for &(p, i) in &ranked[start..end] {
                conf += p;
                if inst.labels[i] == c {
                    hits += 1;
                }
            }
            let len = (end - start) as f64;
            total += (hits as f64 / len - conf / len).abs();
        }
    }
    total / (ranges * k) as f64
}
