//! Small numeric helpers shared by the models and the evaluation code.

use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of a slice; `None` when empty.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

/// Ranks starting at 1, ties sharing their average rank. Infinite values
/// rank above every finite one.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman needs paired samples");
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Per-column z-score transform fitted on a training set. Columns with zero
/// spread map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a, I>(rows: I, width: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut means = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            n += 1;
            for (j, &x) in row.iter().take(width).enumerate() {
                let delta = x - means[j];
                means[j] += delta / n as f64;
                m2[j] += delta * (x - means[j]);
            }
        }
        let sigmas = m2
            .into_iter()
            .zip(&means)
            .map(|(m2, &mean)| {
                let sigma = if n > 0 { (m2 / n as f64).sqrt() } else { 0.0 };
                // Spread swamped by rounding counts as constant.
                if sigma <= 1e-12 * mean.abs().max(1.0) {
                    0.0
                } else {
                    sigma
                }
            })
            .collect();
        Self { means, sigmas }
    }

    pub fn transform_value(&self, j: usize, x: f64) -> f64 {
        if self.sigmas[j] == 0.0 {
            0.0
        } else {
            (x - self.means[j]) / self.sigmas[j]
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &x)| self.transform_value(j, x)).collect()
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.sigmas[j] == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert_eq!(average_ranks(&[f64::INFINITY, 1.0]), vec![2.0, 1.0]);
    }

    #[test]
    fn spearman_extremes() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let down: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
        assert!((spearman(&x, &down) + 1.0).abs() < 1e-12);
        assert!((spearman(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn standardizer_constant_column() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(s.means, vec![2.0, 5.0]);
        assert_eq!(s.sigmas, vec![1.0, 0.0]);
        assert_eq!(s.transform(&[3.0, 100.0]), vec![1.0, 0.0]);
    }
}
