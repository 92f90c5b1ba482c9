//! Alternating iteratively-reweighted solver for the doubly regularized
//! least-squares problem
//!
//! ```text
//! min_{W,U} ‖Ŷ − WᵀX − UᵀE‖_F² + λ1 ‖W‖_M + λ2 ‖U‖_T
//! ```
//!
//! Each iteration rebuilds the reweighting diagonal `Q` from the current `W`,
//! solves the `W` normal equations with `U` fixed, then does the same for `P`
//! and `U`. Both half-steps minimize a quadratic majorizer of the objective,
//! so the objective trace never increases. After each half-step, groups for
//! which zero is optimal given the rest of the model are set exactly to zero;
//! the reweighting alone only drives them toward zero.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TrainingSet, WeightU, WeightW};
use crate::norms::{self, ObjectiveBreakdown};

/// How `W` and `U` are initialized before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    Zeros,
    /// Uniform entries in `[-0.5, 0.5)` drawn from a ChaCha8 stream.
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps: f64,
    pub ridge: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub init: WeightInit,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 10.0,
            eps: norms::DEFAULT_EPS,
            ridge: 1e-10,
            tol: 1e-8,
            max_iters: 200,
            init: WeightInit::Zeros,
        }
    }
}

impl FitOptions {
    pub fn with_lambdas(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOptions(msg));
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad(format!("lambda1 must be finite and >= 0, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad(format!("lambda2 must be finite and >= 0, got {}", self.lambda2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub w: WeightW,
    pub u: WeightU,
    /// Objective before the first iteration followed by one entry per iteration.
    pub trace: Vec<ObjectiveBreakdown>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> &ObjectiveBreakdown {
        self.trace.last().expect("trace always holds the initial objective")
    }
}

/// Gram products reused across iterations.
struct NormalEquations<'a> {
    data: &'a TrainingSet,
    xx: DMatrix<f64>,
    xy: DMatrix<f64>,
    xe: DMatrix<f64>,
    ee: DMatrix<f64>,
    ey: DMatrix<f64>,
}

impl<'a> NormalEquations<'a> {
    fn new(data: &'a TrainingSet) -> Self {
        let x = data.features();
        let e = data.differences();
        let y_hat = data.actual();
        Self {
            data,
            xx: x * x.transpose(),
            xy: x * y_hat.transpose(),
            xe: x * e.transpose(),
            ee: e * e.transpose(),
            ey: e * y_hat.transpose(),
        }
    }

    /// `(X Xᵀ + λ1 Q + ridge I) W = X (Ŷ − UᵀE)ᵀ`
    fn solve_w(&self, u: &WeightU, q: &DVector<f64>, lambda1: f64, ridge: f64) -> Result<WeightW> {
        let rhs = &self.xy - &self.xe * u.values();
        let w = solve_spd(&self.xx, q, lambda1, ridge, rhs, "W update")?;
        WeightW::new(w, self.data.layout().clone())
    }

    /// `(E Eᵀ + λ2 P + ridge I) U = E (Ŷ − WᵀX)ᵀ`
    fn solve_u(&self, w: &WeightW, p: &DVector<f64>, lambda2: f64, ridge: f64) -> Result<WeightU> {
        let rhs = &self.ey - self.xe.tr_mul(w.values());
        let u = solve_spd(&self.ee, p, lambda2, ridge, rhs, "U update")?;
        WeightU::new(u, self.data.layout().clone())
    }

    fn prune_w(&self, w: WeightW, u: &WeightU, lambda1: f64) -> WeightW {
        let layout = self.data.layout();
        let groups: Vec<Vec<usize>> = (0..layout.modalities()).map(|i| layout.modality_rows(i).collect()).collect();
        let correlation = &self.xy - &self.xe * u.values();
        let values = prune_groups(w.into_values(), &self.xx, correlation, &groups, lambda1);
        WeightW::new(values, layout.clone()).expect("shape preserved")
    }

    fn prune_u(&self, u: WeightU, w: &WeightW, lambda2: f64) -> WeightU {
        let layout = self.data.layout();
        let r = layout.behavior_dim();
        let groups: Vec<Vec<usize>> = (0..layout.history()).map(|k| (k * r..(k + 1) * r).collect()).collect();
        let correlation = &self.ey - self.xe.tr_mul(w.values());
        let values = prune_groups(u.into_values(), &self.ee, correlation, &groups, lambda2);
        WeightU::new(values, layout.clone()).expect("shape preserved")
    }
}

/// Sets each group to exactly zero, one at a time, when zero minimizes the
/// objective over that group with everything else fixed, i.e. when
/// `2 ‖A_g (Ŷ − predictions without group g)ᵀ‖_F ≤ λ`. Each zeroing is an exact
/// block-coordinate step, so the objective cannot increase.
///
/// `correlation` is `A Ŷᵀ` minus the contribution of the other weight matrix.
fn prune_groups(
    mut values: DMatrix<f64>,
    gram: &DMatrix<f64>,
    correlation: DMatrix<f64>,
    groups: &[Vec<usize>],
    lambda: f64,
) -> DMatrix<f64> {
    // residual correlation A Rᵀ at the current values
    let mut corr = correlation - gram * &values;
    for rows in groups {
        let block = values.select_rows(rows.iter());
        if block.iter().all(|&v| v == 0.0) {
            continue;
        }
        let without = corr.select_rows(rows.iter()) + gram.select_rows(rows.iter()).select_columns(rows.iter()) * &block;
        if 2.0 * without.norm() <= lambda {
            corr += gram.select_columns(rows.iter()) * &block;
            for &row in rows {
                values.row_mut(row).fill(0.0);
            }
        }
    }
    values
}

fn solve_spd(
    gram: &DMatrix<f64>,
    diag: &DVector<f64>,
    lambda: f64,
    ridge: f64,
    rhs: DMatrix<f64>,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    let mut system = gram.clone();
    for (i, &d) in diag.iter().enumerate() {
        system[(i, i)] += lambda * d + ridge;
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(system).ok_or(Error::SingularSystem(what))?;
    let solution = chol.solve(&rhs);
    if solution.iter().all(|v| v.is_finite()) {
        Ok(solution)
    } else {
        Err(Error::SingularSystem(what))
    }
}

fn check_diag(len: usize, diag: &DVector<f64>, what: &'static str) -> Result<()> {
    if diag.len() != len {
        return Err(Error::dim(what, len, diag.len()));
    }
    Ok(())
}

/// Closed-form `W` step for a fixed reweighting diagonal `q` (see [`norms::build_q`]).
pub fn solve_w(data: &TrainingSet, u: &WeightU, q: &DVector<f64>, lambda1: f64, ridge: f64) -> Result<WeightW> {
    norms::check_weights(&WeightW::zeros(data.layout()), u, data)?;
    check_diag(data.layout().feature_dim(), q, "Q diagonal length")?;
    NormalEquations::new(data).solve_w(u, q, lambda1, ridge)
}

/// Closed-form `U` step for a fixed reweighting diagonal `p` (see [`norms::build_p`]).
pub fn solve_u(data: &TrainingSet, w: &WeightW, p: &DVector<f64>, lambda2: f64, ridge: f64) -> Result<WeightU> {
    norms::check_weights(w, &WeightU::zeros(data.layout()), data)?;
    check_diag(data.layout().difference_dim(), p, "P diagonal length")?;
    NormalEquations::new(data).solve_u(w, p, lambda2, ridge)
}

/// Gradients of the reweighted surrogate
/// `‖Ŷ − WᵀX − UᵀE‖² + λ1 Tr(WᵀQW) + λ2 Tr(UᵀPU)` at `(W, U)`.
pub fn surrogate_gradient(
    data: &TrainingSet,
    w: &WeightW,
    u: &WeightU,
    q: &DVector<f64>,
    p: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let residual = norms::residual(w, u, data)?;
    let mut grad_w = data.features() * residual.transpose() * -2.0;
    let mut grad_u = data.differences() * residual.transpose() * -2.0;
    for i in 0..grad_w.nrows() {
        let scale = 2.0 * lambda1 * q[i];
        for j in 0..grad_w.ncols() {
            grad_w[(i, j)] += scale * w.values()[(i, j)];
        }
    }
    for i in 0..grad_u.nrows() {
        let scale = 2.0 * lambda2 * p[i];
        for j in 0..grad_u.ncols() {
            grad_u[(i, j)] += scale * u.values()[(i, j)];
        }
    }
    Ok((grad_w, grad_u))
}

fn initial_weights(data: &TrainingSet, init: WeightInit) -> (WeightW, WeightU) {
    let layout = data.layout();
    match init {
        WeightInit::Zeros => (WeightW::zeros(layout), WeightU::zeros(layout)),
        WeightInit::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = layout.behavior_dim();
            let mut draw = |rows| DMatrix::from_fn(rows, r, |_, _| rng.random_range(-0.5..0.5));
            let w = draw(layout.feature_dim());
            let u = draw(layout.difference_dim());
            (
                WeightW::new(w, layout.clone()).expect("shape from layout"),
                WeightU::new(u, layout.clone()).expect("shape from layout"),
            )
        }
    }
}

/// Runs the alternating reweighted solver until the relative change of the
/// total objective drops below `opts.tol` or `opts.max_iters` is reached.
pub fn fit(data: &TrainingSet, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let equations = NormalEquations::new(data);
    let (mut w, mut u) = initial_weights(data, opts.init);

    let start = norms::objective(&w, &u, data, opts.lambda1, opts.lambda2)?;
    if !start.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    let mut trace = vec![start];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let q = norms::build_q(&w, opts.eps);
        w = equations.solve_w(&u, &q, opts.lambda1, opts.ridge)?;
        w = equations.prune_w(w, &u, opts.lambda1);
        let p = norms::build_p(&u, opts.eps);
        u = equations.solve_u(&w, &p, opts.lambda2, opts.ridge)?;
        u = equations.prune_u(u, &w, opts.lambda2);

        let current = norms::objective(&w, &u, data, opts.lambda1, opts.lambda2)?;
        if !current.is_finite() {
            return Err(Error::NonFiniteObjective(iterations));
        }
        let previous = trace.last().expect("non-empty").total;
        trace.push(current);
        if (previous - current.total).abs() / previous.max(1e-12) < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        w,
        u,
        trace,
        converged,
        iterations,
    })
}
