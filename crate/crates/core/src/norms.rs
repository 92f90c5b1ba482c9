//! Structured regularizers, IRLS reweighting diagonals and the full objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TrainingSet, WeightU, WeightW};

/// Default clamp on block norms when building reweighting diagonals.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Objective value split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// `‖Ŷ − WᵀX − UᵀE‖_F²`
    pub loss: f64,
    /// `‖W‖_M`
    pub modality_penalty: f64,
    /// `‖U‖_T`
    pub temporal_penalty: f64,
    /// `loss + λ1 ‖W‖_M + λ2 ‖U‖_T`
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn new(loss: f64, modality_penalty: f64, temporal_penalty: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            loss,
            modality_penalty,
            temporal_penalty,
            total: loss + lambda1 * modality_penalty + lambda2 * temporal_penalty,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.modality_penalty.is_finite()
            && self.temporal_penalty.is_finite()
            && self.total.is_finite()
    }
}

/// Frobenius norm of each modality block `W_i`.
pub fn modality_block_norms(w: &WeightW) -> Vec<f64> {
    let layout = w.layout();
    let values = w.values();
    (0..layout.modalities())
        .map(|i| {
            layout
                .modality_rows(i)
                .map(|row| values.row(row).norm_squared())
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Frobenius norm of each temporal block `U^(k)`.
pub fn temporal_block_norms(u: &WeightU) -> Vec<f64> {
    let r = u.layout().behavior_dim();
    (0..u.layout().history())
        .map(|k| u.values().rows(k * r, r).norm())
        .collect()
}

/// Feature-modality norm `‖W‖_M = Σ_i ‖W_i‖_F`.
pub fn modality_norm(w: &WeightW) -> f64 {
    modality_block_norms(w).iter().sum()
}

/// Temporal norm `‖U‖_T = Σ_k ‖U^(k)‖_F`.
pub fn temporal_norm(u: &WeightU) -> f64 {
    temporal_block_norms(u).iter().sum()
}

fn reweight(norm: f64, eps: f64) -> f64 {
    1.0 / (2.0 * norm.max(eps))
}

/// Diagonal of the block-diagonal reweighting matrix `Q`: every row of
/// modality `i` (in every frame) gets `1 / (2 max(‖W_i‖_F, eps))`.
pub fn build_q(w: &WeightW, eps: f64) -> DVector<f64> {
    let layout = w.layout();
    let weights: Vec<f64> = modality_block_norms(w).into_iter().map(|n| reweight(n, eps)).collect();
    DVector::from_iterator(
        layout.feature_dim(),
        layout.row_modalities().into_iter().map(|i| weights[i]),
    )
}

/// Diagonal of the block-diagonal reweighting matrix `P`: the `r` rows of
/// frame `k` get `1 / (2 max(‖U^(k)‖_F, eps))`.
pub fn build_p(u: &WeightU, eps: f64) -> DVector<f64> {
    let r = u.layout().behavior_dim();
    let weights = temporal_block_norms(u);
    DVector::from_iterator(
        u.layout().difference_dim(),
        weights.into_iter().flat_map(|n| std::iter::repeat_n(reweight(n, eps), r)),
    )
}

/// Residual `Ŷ − WᵀX − UᵀE`, shape `r x n`.
pub fn residual(w: &WeightW, u: &WeightU, data: &TrainingSet) -> Result<DMatrix<f64>> {
    check_weights(w, u, data)?;
    let mut r = data.actual().clone();
    r.gemm_tr(-1.0, w.values(), data.features(), 1.0);
    r.gemm_tr(-1.0, u.values(), data.differences(), 1.0);
    Ok(r)
}

pub(crate) fn check_weights(w: &WeightW, u: &WeightU, data: &TrainingSet) -> Result<()> {
    let layout = data.layout();
    if w.layout() != layout {
        return Err(Error::dim("W rows", layout.feature_dim(), w.values().nrows()));
    }
    if u.layout() != layout {
        return Err(Error::dim("U rows", layout.difference_dim(), u.values().nrows()));
    }
    Ok(())
}

/// Evaluates `‖Ŷ − WᵀX − UᵀE‖_F² + λ1 ‖W‖_M + λ2 ‖U‖_T`.
pub fn objective(w: &WeightW, u: &WeightU, data: &TrainingSet, lambda1: f64, lambda2: f64) -> Result<ObjectiveBreakdown> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::InvalidOptions(format!(
            "trade-off weights must be nonnegative (got {lambda1}, {lambda2})"
        )));
    }
    let loss = residual(w, u, data)?.norm_squared();
    Ok(ObjectiveBreakdown::new(loss, modality_norm(w), temporal_norm(u), lambda1, lambda2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModalityLayout;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout(widths: &[usize], c: usize, r: usize) -> ModalityLayout {
        ModalityLayout::new(widths.to_vec(), c, r).unwrap()
    }

    fn w_from(rows: usize, cols: usize, vals: &[f64], l: &ModalityLayout) -> WeightW {
        WeightW::new(DMatrix::from_row_slice(rows, cols, vals), l.clone()).unwrap()
    }

    fn u_from(rows: usize, cols: usize, vals: &[f64], l: &ModalityLayout) -> WeightU {
        WeightU::new(DMatrix::from_row_slice(rows, cols, vals), l.clone()).unwrap()
    }

    #[test]
    fn modality_norm_examples() {
        let l = layout(&[2], 1, 1);
        assert_eq!(modality_norm(&w_from(2, 1, &[3.0, 4.0], &l)), 5.0);
        let l = layout(&[1, 1], 1, 1);
        assert_eq!(modality_norm(&w_from(2, 1, &[3.0, 4.0], &l)), 7.0);
        assert_eq!(modality_norm(&WeightW::zeros(&l)), 0.0);
    }

    #[test]
    fn temporal_norm_examples() {
        let l = layout(&[1], 1, 2);
        assert_relative_eq!(temporal_norm(&u_from(2, 2, &[0.0, 1.0, 1.0, 0.0], &l)), 2f64.sqrt());
        let l = layout(&[1], 2, 1);
        assert_eq!(temporal_norm(&u_from(2, 1, &[3.0, 4.0], &l)), 7.0);
        assert_eq!(temporal_norm(&WeightU::zeros(&l)), 0.0);
    }

    #[test]
    fn q_examples() {
        let l = layout(&[2], 1, 1);
        let q = build_q(&w_from(2, 1, &[3.0, 4.0], &l), DEFAULT_EPS);
        assert!(q.iter().all(|&v| v == 0.1));

        let q = build_q(&WeightW::zeros(&l), 1e-8);
        assert!(q.iter().all(|&v| v == 1.0 / 2e-8));

        // Norms 1 and 2, history 2: block structure repeats in every frame.
        let l = layout(&[1, 1], 2, 1);
        let w = w_from(4, 1, &[1.0, 2.0, 0.0, 0.0], &l);
        assert_eq!(build_q(&w, DEFAULT_EPS).as_slice(), &[0.5, 0.25, 0.5, 0.25]);
    }

    #[test]
    fn p_examples() {
        let l = layout(&[1], 1, 2);
        let p = build_p(&u_from(2, 2, &[0.0, 1.0, 1.0, 0.0], &l), DEFAULT_EPS);
        assert!(p.iter().all(|&v| (v - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-15));

        let l = layout(&[1], 1, 1);
        assert_eq!(build_p(&WeightU::zeros(&l), 1e-8)[0], 1.0 / 2e-8);

        let l = layout(&[1], 2, 1);
        let p = build_p(&u_from(2, 1, &[2.0, 4.0], &l), DEFAULT_EPS);
        assert_eq!(p.as_slice(), &[0.25, 0.125]);
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_set(rng: &mut ChaCha8Rng, l: &ModalityLayout, n: usize) -> TrainingSet {
        TrainingSet::new(
            l.clone(),
            random_matrix(rng, l.feature_dim(), n),
            random_matrix(rng, l.behavior_dim(), n),
            random_matrix(rng, l.behavior_dim(), n),
            random_matrix(rng, l.difference_dim(), n),
        )
        .unwrap()
    }

    #[test]
    fn perfect_fit_has_zero_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = layout(&[2, 1], 2, 2);
        let base = random_set(&mut rng, &l, 5);
        let w = WeightW::new(random_matrix(&mut rng, 6, 2), l.clone()).unwrap();
        let u = WeightU::new(random_matrix(&mut rng, 4, 2), l.clone()).unwrap();
        let y_hat = w.values().transpose() * base.features() + u.values().transpose() * base.differences();
        let data = TrainingSet::new(
            l,
            base.features().clone(),
            base.expected().clone(),
            y_hat,
            base.differences().clone(),
        )
        .unwrap();
        let obj = objective(&w, &u, &data, 0.0, 0.0).unwrap();
        assert!(obj.total < 1e-24);
    }

    #[test]
    fn zero_weights_leave_actual_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = layout(&[2], 1, 2);
        let data = random_set(&mut rng, &l, 7);
        let obj = objective(&WeightW::zeros(&l), &WeightU::zeros(&l), &data, 1.0, 1.0).unwrap();
        assert_eq!(obj.loss, data.actual().norm_squared());
        assert_eq!(obj.modality_penalty, 0.0);
        assert_eq!(obj.temporal_penalty, 0.0);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let l = layout(&[1], 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = random_set(&mut rng, &l, 2);
        assert!(objective(&WeightW::zeros(&l), &WeightU::zeros(&l), &data, -1.0, 0.0).is_err());
    }

    #[test]
    fn reweighted_trace_is_half_the_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = layout(&[2, 3, 1], 3, 2);
        let w = WeightW::new(random_matrix(&mut rng, l.feature_dim(), 2), l.clone()).unwrap();
        let q = build_q(&w, DEFAULT_EPS);
        let traced: f64 = w
            .values()
            .row_iter()
            .zip(q.iter())
            .map(|(row, qi)| qi * row.norm_squared())
            .sum();
        assert_relative_eq!(traced, modality_norm(&w) / 2.0, max_relative = 1e-10);
    }

    proptest! {
        #[test]
        fn norms_are_homogeneous_and_subadditive(seed in any::<u64>(), alpha in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = layout(&[1, 2, 3], 2, 2);
            let a = WeightW::new(random_matrix(&mut rng, 12, 2), l.clone()).unwrap();
            let b = WeightW::new(random_matrix(&mut rng, 12, 2), l.clone()).unwrap();
            let scaled = WeightW::new(a.values() * alpha, l.clone()).unwrap();
            let sum = WeightW::new(a.values() + b.values(), l.clone()).unwrap();
            prop_assert!(modality_norm(&a) >= 0.0);
            prop_assert!((modality_norm(&scaled) - alpha.abs() * modality_norm(&a)).abs() < 1e-12);
            prop_assert!(modality_norm(&sum) <= modality_norm(&a) + modality_norm(&b) + 1e-12);

            let ua = WeightU::new(random_matrix(&mut rng, 4, 2), l.clone()).unwrap();
            let ub = WeightU::new(random_matrix(&mut rng, 4, 2), l.clone()).unwrap();
            let uscaled = WeightU::new(ua.values() * alpha, l.clone()).unwrap();
            let usum = WeightU::new(ua.values() + ub.values(), l).unwrap();
            prop_assert!(temporal_norm(&ua) >= 0.0);
            prop_assert!((temporal_norm(&uscaled) - alpha.abs() * temporal_norm(&ua)).abs() < 1e-12);
            prop_assert!(temporal_norm(&usum) <= temporal_norm(&ua) + temporal_norm(&ub) + 1e-12);
        }
    }
}
