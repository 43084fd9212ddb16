//! Poisson regression baseline.
//!
//! The expected confirmation delay in blocks is modelled as
//! `exp(b0 + b1 * gas_price_std + b2 * gas_limit_std)`, where both inputs are
//! z-scored with constants fitted on the training data. Coefficients are the
//! maximum-likelihood estimate found by iteratively reweighted least squares
//! (Newton's method on the canonical log link) with step halving, so the
//! log-likelihood never decreases between iterations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::Standardizer;
use crate::tx::{Features, LabeledExample, GAS_LIMIT_FEATURE, GAS_PRICE_FEATURE};

pub const MIN_EXAMPLES: usize = 3;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("need at least {MIN_EXAMPLES} examples, got {0}")]
    TooFewExamples(usize),
    #[error("rows and counts differ in length")]
    LengthMismatch,
    #[error("non-finite input at row {0}")]
    NonFiniteInput(usize),
    #[error("all counts are zero; the intercept has no finite estimate")]
    AllZero,
    #[error("IRLS system is singular")]
    Singular,
    #[error("IRLS produced non-finite values")]
    NonFinite,
    #[error("IRLS did not converge within {} iterations", .0.fit_iterations)]
    NotConverged(Box<GlmModel>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Fix both slopes at zero and fit the intercept alone.
    pub intercept_only: bool,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8, intercept_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    /// Intercept, gas-price slope and gas-limit slope on standardized inputs.
    pub coefficients: [f64; 3],
    pub feature_means: [f64; 2],
    pub feature_sigmas: [f64; 2],
    pub fit_iterations: usize,
    pub converged: bool,
    /// Log-likelihood (up to the constant `-sum ln y!`) before the first and
    /// after every iteration.
    pub log_likelihood_trace: Vec<f64>,
}

impl GlmModel {
    fn standardize(&self, raw: [f64; 2]) -> [f64; 3] {
        let z = |j: usize| {
            if self.feature_sigmas[j] == 0.0 {
                0.0
            } else {
                (raw[j] - self.feature_means[j]) / self.feature_sigmas[j]
            }
        };
        [1.0, z(0), z(1)]
    }

    /// `exp(b . x_std)` without the one-block floor.
    pub fn expected_count(&self, raw: [f64; 2]) -> f64 {
        let x = self.standardize(raw);
        dot(&self.coefficients, &x).exp()
    }

    pub fn predict(&self, features: &Features) -> f64 {
        self.expected_count(glm_inputs(features)).max(1.0)
    }

    /// Coefficients expressed on the raw (unstandardized) inputs.
    pub fn raw_coefficients(&self) -> [f64; 3] {
        let mut out = [self.coefficients[0], 0.0, 0.0];
        for j in 0..2 {
            if self.feature_sigmas[j] != 0.0 {
                out[j + 1] = self.coefficients[j + 1] / self.feature_sigmas[j];
                out[0] -= out[j + 1] * self.feature_means[j];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), GlmError> {
        let finite = self
            .coefficients
            .iter()
            .chain(&self.feature_means)
            .chain(&self.feature_sigmas)
            .all(|x| x.is_finite());
        if !finite || self.feature_sigmas.iter().any(|&s| s < 0.0) {
            return Err(GlmError::NonFinite);
        }
        Ok(())
    }
}

/// Gas price (gwei) and gas limit, the two inputs the baseline uses.
pub fn glm_inputs(features: &Features) -> [f64; 2] {
    [features[GAS_PRICE_FEATURE], features[GAS_LIMIT_FEATURE]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Labels become counts by rounding to the nearest integer, floored at 1.
pub fn label_count(label_blocks: f64) -> u64 {
    label_blocks.round().max(1.0) as u64
}

pub fn fit_poisson(
    examples: &[LabeledExample],
    max_iterations: usize,
    tolerance: f64,
) -> Result<GlmModel, GlmError> {
    let options = GlmOptions { max_iterations, tolerance, ..GlmOptions::default() };
    fit_poisson_with(examples, &options)
}

pub fn fit_poisson_with(examples: &[LabeledExample], options: &GlmOptions) -> Result<GlmModel, GlmError> {
    let rows: Vec<[f64; 2]> = examples.iter().map(|e| glm_inputs(&e.features)).collect();
    let counts: Vec<u64> = examples.iter().map(|e| label_count(e.label_blocks)).collect();
    fit_counts(&rows, &counts, options)
}

/// Refit on the examples of the current window; same contract as [`fit_poisson`].
pub fn glm_window_refit(window: &[LabeledExample]) -> Result<GlmModel, GlmError> {
    let options = GlmOptions::default();
    fit_poisson(window, options.max_iterations, options.tolerance)
}

fn log_likelihood(beta: &[f64; 3], x: &[[f64; 3]], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let eta = dot(beta, xi);
            yi * eta - eta.exp()
        })
        .sum()
}

/// Solves the `k x k` system in place by Gaussian elimination with partial
/// pivoting.
fn solve(a: &mut [[f64; 3]; 3], b: &mut [f64; 3], k: usize) -> Result<(), GlmError> {
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if !(a[pivot][col].abs() > 1e-12 * scale) {
            return Err(GlmError::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..k).rev() {
        let mut s = b[row];
        for c in row + 1..k {
            s -= a[row][c] * b[c];
        }
        b[row] = s / a[row][row];
    }
    Ok(())
}

/// Fits the Poisson GLM on raw `(gas price, gas limit)` rows and integer counts.
/// Counts may be zero here; [`fit_poisson`] feeds labels, which never are.
pub fn fit_counts(rows: &[[f64; 2]], counts: &[u64], options: &GlmOptions) -> Result<GlmModel, GlmError> {
    if rows.len() != counts.len() {
        return Err(GlmError::LengthMismatch);
    }
    if rows.len() < MIN_EXAMPLES {
        return Err(GlmError::TooFewExamples(rows.len()));
    }
    if let Some(i) = rows.iter().position(|r| !(r[0].is_finite() && r[1].is_finite())) {
        return Err(GlmError::NonFiniteInput(i));
    }
    let y: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mean_y = y.iter().sum::<f64>() / y.len() as f64;
    if mean_y <= 0.0 {
        return Err(GlmError::AllZero);
    }

    let scaler = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
    let mut model = GlmModel {
        coefficients: [mean_y.ln(), 0.0, 0.0],
        feature_means: [scaler.means[0], scaler.means[1]],
        feature_sigmas: [scaler.sigmas[0], scaler.sigmas[1]],
        fit_iterations: 0,
        converged: false,
        log_likelihood_trace: Vec::new(),
    };
    let x: Vec<[f64; 3]> = rows.iter().map(|r| model.standardize(*r)).collect();

    // Columns in the Newton system: intercept plus every non-constant slope.
    let active: Vec<usize> = std::iter::once(0)
        .chain((1..3).filter(|&j| !options.intercept_only && !scaler.is_constant(j - 1)))
        .collect();
    let k = active.len();

    let mut beta = model.coefficients;
    let mut ll = log_likelihood(&beta, &x, &y);
    model.log_likelihood_trace.push(ll);

    for iteration in 1..=options.max_iterations {
        let mut info = [[0.0; 3]; 3];
        let mut score = [0.0; 3];
        for (xi, &yi) in x.iter().zip(&y) {
            let mu = dot(&beta, xi).exp();
            for (a, &ja) in active.iter().enumerate() {
                score[a] += (yi - mu) * xi[ja];
                for (b, &jb) in active.iter().enumerate() {
                    info[a][b] += mu * xi[ja] * xi[jb];
                }
            }
        }
        let mut step = score;
        solve(&mut info, &mut step, k)?;

        let mut t = 1.0;
        let mut candidate = beta;
        let mut candidate_ll = f64::NEG_INFINITY;
        for _ in 0..MAX_HALVINGS {
            candidate = beta;
            for (a, &j) in active.iter().enumerate() {
                candidate[j] += t * step[a];
            }
            candidate_ll = log_likelihood(&candidate, &x, &y);
            if candidate_ll.is_finite() && candidate_ll >= ll {
                break;
            }
            t *= 0.5;
        }
        if !candidate_ll.is_finite() || candidate.iter().any(|b| !b.is_finite()) {
            return Err(GlmError::NonFinite);
        }
        let max_delta = (0..3).map(|j| (candidate[j] - beta[j]).abs()).fold(0.0, f64::max);
        if candidate_ll >= ll {
            beta = candidate;
            ll = candidate_ll;
        }
        model.log_likelihood_trace.push(ll);
        model.fit_iterations = iteration;
        if max_delta < options.tolerance {
            model.converged = true;
            break;
        }
    }
    model.coefficients = beta;
    if model.converged {
        Ok(model)
    } else {
        Err(GlmError::NotConverged(Box::new(model)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(gas_gwei: f64, gas_limit: f64, label: f64) -> LabeledExample {
        LabeledExample {
            features: [gas_gwei, gas_limit, 0.0, 0.0, 0.0, 20.0, 15.0],
            label_blocks: label,
        }
    }

    #[test]
    fn intercept_only_is_log_mean() {
        let data = [ex(10.0, 21_000.0, 1.0), ex(30.0, 50_000.0, 2.0), ex(5.0, 90_000.0, 3.0)];
        let opts = GlmOptions { intercept_only: true, ..GlmOptions::default() };
        let m = fit_poisson_with(&data, &opts).unwrap();
        assert!((m.coefficients[0] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(&m.coefficients[1..], &[0.0, 0.0]);
    }

    #[test]
    fn constant_design() {
        let data: Vec<_> = (0..10).map(|_| ex(20.0, 21_000.0, 4.0)).collect();
        let m = fit_poisson(&data, 100, 1e-8).unwrap();
        assert!((m.coefficients[0] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(&m.coefficients[1..], &[0.0, 0.0]);
        assert!(m.converged);
    }

    #[test]
    fn prediction_floor_and_constant() {
        let mut m = GlmModel {
            coefficients: [0.0; 3],
            feature_means: [20.0, 21_000.0],
            feature_sigmas: [5.0, 1000.0],
            fit_iterations: 1,
            converged: true,
            log_likelihood_trace: vec![],
        };
        assert_eq!(m.predict(&[30.0, 21_000.0, 0.0, 0.0, 0.0, 0.0, 15.0]), 1.0);
        m.coefficients = [4f64.ln(), 0.0, 0.0];
        for g in [0.0, 10.0, 100.0] {
            assert!((m.predict(&[g, 50_000.0, 0.0, 0.0, 0.0, 0.0, 15.0]) - 4.0).abs() < 1e-12);
        }
        m.coefficients = [2.0, -0.5, 0.0];
        let preds: Vec<f64> = (0..=100)
            .map(|g| m.predict(&[g as f64, 21_000.0, 0.0, 0.0, 0.0, 0.0, 15.0]))
            .collect();
        // Strictly decreasing until the floor takes over.
        for w in preds.windows(2) {
            assert!(w[1] < w[0] || (w[0] == 1.0 && w[1] == 1.0));
        }
        assert!(preds[0] > preds[30]);
    }

    #[test]
    fn too_few_and_empty() {
        assert_eq!(glm_window_refit(&[]), Err(GlmError::TooFewExamples(0)));
        assert_eq!(
            fit_poisson(&[ex(1.0, 1.0, 1.0), ex(2.0, 2.0, 2.0)], 100, 1e-8),
            Err(GlmError::TooFewExamples(2))
        );
    }

    #[test]
    fn non_convergence_carries_iterate() {
        let data: Vec<_> = (0..50).map(|i| ex(i as f64, 21_000.0 + ((i * 7) % 13) as f64, 1.0 + (i % 4) as f64)).collect();
        match fit_poisson(&data, 1, 1e-300) {
            Err(GlmError::NotConverged(last)) => {
                assert_eq!(last.fit_iterations, 1);
                assert!(!last.converged);
                assert!(last.coefficients.iter().all(|c| c.is_finite()));
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn collinear_inputs_are_singular() {
        // Gas limit is an exact affine function of gas price.
        let data: Vec<_> = (0..20).map(|i| ex(i as f64, 1000.0 + 2.0 * i as f64, 1.0 + (i % 3) as f64)).collect();
        assert_eq!(fit_poisson(&data, 100, 1e-8), Err(GlmError::Singular));
    }
}
