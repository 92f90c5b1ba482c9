//! Independent convex solver used to certify the alternating solver.
//!
//! Minimizes the same objective jointly over the stacked variable `Z = [W; U]`
//! with accelerated proximal gradient (monotone FISTA with restart). The
//! smooth part is `‖Ŷ − ZᵀA‖_F²` with `A = [X; E]`; the non-smooth part is
//! handled by group soft-thresholding of each modality and temporal block.
//! Nothing here shares code with the reweighted solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModalityLayout, TrainingSet, WeightU, WeightW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Constant step `1 / L` with `L` from power iteration plus a 1% margin.
    Fixed,
    /// Start at `1 / L` and halve until the quadratic upper bound holds.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub step_rule: StepRule,
    pub max_iters: usize,
    /// Bound on the relative objective decrease of an accepted iterate; its
    /// relative step length must also be below `sqrt(tol)`.
    pub tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            step_rule: StepRule::Backtracking,
            max_iters: 50_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub w: WeightW,
    pub u: WeightU,
    /// Final value of the full objective.
    pub objective: f64,
    /// Objective of the accepted iterate after each iteration (starting at `Z = 0`).
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Proximal operator of `threshold * ‖·‖_F`: shrinks `block` toward zero by
/// `threshold` in Frobenius norm.
pub fn group_prox(block: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    assert!(threshold >= 0.0, "threshold must be nonnegative");
    let norm = block.norm();
    if norm <= threshold {
        DMatrix::zeros(block.nrows(), block.ncols())
    } else {
        block * (1.0 - threshold / norm)
    }
}

/// Row groups of the stacked variable with their penalty weights.
struct Groups {
    rows: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl Groups {
    fn new(layout: &ModalityLayout, lambda1: f64, lambda2: f64) -> Self {
        let d = layout.feature_dim();
        let r = layout.behavior_dim();
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for i in 0..layout.modalities() {
            rows.push(layout.modality_rows(i).collect());
            weights.push(lambda1);
        }
        for k in 0..layout.history() {
            rows.push((d + k * r..d + (k + 1) * r).collect());
            weights.push(lambda2);
        }
        Self { rows, weights }
    }

    fn penalty(&self, z: &DMatrix<f64>) -> f64 {
        self.rows
            .iter()
            .zip(&self.weights)
            .map(|(rows, &lambda)| {
                let sq: f64 = rows.iter().map(|&i| z.row(i).norm_squared()).sum();
                lambda * sq.sqrt()
            })
            .sum()
    }

    fn prox(&self, v: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
        let mut out = v.clone();
        for (rows, &lambda) in self.rows.iter().zip(&self.weights) {
            let block = v.select_rows(rows.iter());
            let shrunk = group_prox(&block, step * lambda);
            for (src, &dst) in rows.iter().enumerate() {
                out.row_mut(dst).copy_from(&shrunk.row(src));
            }
        }
        out
    }
}

struct Problem<'a> {
    stacked: DMatrix<f64>,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    target: &'a DMatrix<f64>,
    groups: Groups,
}

impl Problem<'_> {
    fn smooth(&self, z: &DMatrix<f64>) -> f64 {
        let mut residual = self.target.clone();
        residual.gemm_tr(-1.0, z, &self.stacked, 1.0);
        residual.norm_squared()
    }

    fn gradient(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        (&self.gram * z - &self.cross) * 2.0
    }

    fn total(&self, z: &DMatrix<f64>) -> f64 {
        self.smooth(z) + self.groups.penalty(z)
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    // Fixed, non-degenerate start vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let next = m * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let estimate = v.dot(&next);
        v = next / norm;
        if (estimate - lambda).abs() <= 1e-13 * estimate.abs() {
            return estimate;
        }
        lambda = estimate;
    }
    lambda
}

/// Jointly minimizes `‖Ŷ − WᵀX − UᵀE‖_F² + λ1 ‖W‖_M + λ2 ‖U‖_T` by proximal
/// gradient on the stacked variable.
pub fn oracle_fit(data: &TrainingSet, lambda1: f64, lambda2: f64, opts: &OracleOptions) -> Result<OracleFit> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::InvalidOptions("trade-off weights must be nonnegative".into()));
    }
    if !(opts.tol > 0.0) || opts.max_iters == 0 {
        return Err(Error::InvalidOptions("oracle tol must be > 0 and max_iters >= 1".into()));
    }
    let layout = data.layout();
    let (d, rc, r) = (layout.feature_dim(), layout.difference_dim(), layout.behavior_dim());

    let mut stacked = DMatrix::zeros(d + rc, data.len());
    stacked.rows_mut(0, d).copy_from(data.features());
    stacked.rows_mut(d, rc).copy_from(data.differences());
    let gram = &stacked * stacked.transpose();
    let cross = &stacked * data.actual().transpose();
    let lipschitz = 2.0 * top_eigenvalue(&gram) * 1.01;
    let problem = Problem {
        stacked,
        gram,
        cross,
        target: data.actual(),
        groups: Groups::new(layout, lambda1, lambda2),
    };

    let base_step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    let mut x = DMatrix::zeros(d + rc, r);
    let mut fx = problem.total(&x);
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut trace = vec![fx];
    let mut change = f64::INFINITY;

    for iteration in 1..=opts.max_iters {
        let grad = problem.gradient(&y);
        let fy = problem.smooth(&y);
        let mut step = base_step;
        let z = loop {
            let candidate = problem.groups.prox(&(&y - &grad * step), step);
            if opts.step_rule == StepRule::Fixed {
                break candidate;
            }
            let diff = &candidate - &y;
            let bound = fy + grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if problem.smooth(&candidate) <= bound + 1e-12 * bound.abs() || step < 1e-30 {
                break candidate;
            }
            step *= 0.5;
        };
        let fz = problem.total(&z);
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;

        if fz <= fx {
            let moved = (&z - &x).norm() / z.norm().max(1.0);
            change = ((fx - fz) / fx.abs().max(1e-300)).max(moved * moved);
            let previous = std::mem::replace(&mut x, z.clone());
            fx = fz;
            y = &x + (&x - &previous) * ((momentum - 1.0) / next_momentum);
            momentum = next_momentum;
            trace.push(fx);
            if change < opts.tol {
                return Ok(finish(x, fx, trace, iteration, layout));
            }
        } else {
            // Rejected: keep x and restart momentum from it.
            y = x.clone();
            momentum = 1.0;
            trace.push(fx);
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iters,
        change,
    })
}

fn finish(z: DMatrix<f64>, objective: f64, trace: Vec<f64>, iterations: usize, layout: &ModalityLayout) -> OracleFit {
    let d = layout.feature_dim();
    let rc = layout.difference_dim();
    OracleFit {
        w: WeightW::new(z.rows(0, d).into_owned(), layout.clone()).expect("stacked shape"),
        u: WeightU::new(z.rows(d, rc).into_owned(), layout.clone()).expect("stacked shape"),
        objective,
        trace,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prox_shrinks_by_threshold() {
        let block = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let out = group_prox(&block, 2.0);
        assert!((out - &block * 0.6).amax() < 1e-15);
        assert_eq!(group_prox(&block, 5.0), DMatrix::zeros(1, 2));
        assert_eq!(group_prox(&block, 7.0), DMatrix::zeros(1, 2));
        assert_eq!(group_prox(&block, 0.0), block);
    }

    #[test]
    fn power_iteration_matches_known_spectrum() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 2.5]));
        assert!((top_eigenvalue(&m) - 4.0).abs() < 1e-9);
        assert_eq!(top_eigenvalue(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn scalar_lasso_closed_form() {
        // One feature, one behavior, one frame, no differences:
        // min Σ (ŷ − w x)² + λ |w|  →  w = soft(Σ x ŷ, λ/2) / Σ x².
        let layout = ModalityLayout::new(vec![1], 1, 1).unwrap();
        let x = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, -0.5, 1.5]);
        let y_hat = DMatrix::from_row_slice(1, 4, &[0.8, 2.1, -0.2, 1.0]);
        let data = TrainingSet::new(layout, x.clone(), DMatrix::zeros(1, 4), y_hat.clone(), DMatrix::zeros(1, 4)).unwrap();
        for lambda in [0.0, 0.5, 3.0, 20.0] {
            let xy = x.dot(&y_hat);
            let expected = xy.signum() * (xy.abs() - lambda / 2.0).max(0.0) / x.norm_squared();
            let opts = OracleOptions { tol: 1e-16, ..Default::default() };
            let fit = oracle_fit(&data, lambda, 1.0, &opts).unwrap();
            assert!((fit.w.values()[(0, 0)] - expected).abs() < 1e-8, "lambda {lambda}: {} vs {expected}", fit.w.values()[(0, 0)]);
            assert_eq!(fit.u.values()[(0, 0)], 0.0);
        }
    }

    #[test]
    fn rejects_bad_options() {
        let layout = ModalityLayout::new(vec![1], 1, 1).unwrap();
        let data = TrainingSet::new(
            layout,
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let opts = OracleOptions { tol: 0.0, ..Default::default() };
        assert!(oracle_fit(&data, 1.0, 1.0, &opts).is_err());
        assert!(oracle_fit(&data, -1.0, 1.0, &OracleOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn prox_is_non_expansive(
            a in proptest::collection::vec(-10.0f64..10.0, 6),
            b in proptest::collection::vec(-10.0f64..10.0, 6),
            t in 0.0f64..15.0,
        ) {
            let a = DMatrix::from_vec(3, 2, a);
            let b = DMatrix::from_vec(3, 2, b);
            let lhs = (group_prox(&a, t) - group_prox(&b, t)).norm();
            prop_assert!(lhs <= (a - b).norm() + 1e-12);
        }
    }
}
