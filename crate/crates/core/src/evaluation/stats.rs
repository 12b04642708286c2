use serde::Serialize;

use crate::loss::VARIANCE_GUARD;

/// Pearson correlation; 0 when either series is (numerically) constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa / (n as f64) < VARIANCE_GUARD || sbb / (n as f64) < VARIANCE_GUARD {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && values[order[end]] == values[order[k]] {
            end += 1;
        }
        let rank = (k + end + 1) as f64 / 2.0;
        for &i in &order[k..end] {
            ranks[i] = rank;
        }
        k = end;
    }
    ranks
}

/// Spearman rank correlation (Pearson of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    pearson(&average_ranks(&a[..n]), &average_ranks(&b[..n]))
}

/// Equal-width histogram of signed errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins spanning `[-m, m]` with `m` the largest magnitude (or 1e-3 V
    /// when every value is zero).
    pub fn symmetric(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let m = if m > 0.0 { m } else { 1e-3 };
        let width = 2.0 * m / bins as f64;
        let edges = (0..=bins).map(|i| -m + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let b = (((v + m) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}
