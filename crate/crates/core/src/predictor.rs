//! Execution-time behavior generation: current offset `Uᵀe`, predicted future
//! offset, and the final behavior command.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_differences, FeatureInstance, ModalityLayout, WeightU, WeightW};

/// Singular-value cutoff for temporal block inversion. It is applied relative
/// to the largest singular value, and also as an absolute floor so that blocks
/// the solver has driven to (numerical) zero are treated as zero.
pub const SINGULAR_TOL: f64 = 1e-8;

/// How `(U^(k)ᵀ)⁻¹` is formed in [`predicted_offset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseMode {
    /// Fail with [`Error::SingularTemporalBlock`] on an ill-conditioned block.
    #[default]
    Strict,
    /// Substitute the Moore–Penrose pseudo-inverse.
    PseudoInverse,
}

/// One completed control step.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    /// Feature frame `x^(k)`, length `q`.
    pub features: Vec<f64>,
    /// Expected behavior `y^(k)`.
    pub expected: Vec<f64>,
    /// Actual (measured) behavior `ŷ^(k)`.
    pub actual: Vec<f64>,
}

/// Rolling window of the last `c` completed steps, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionState {
    layout: ModalityLayout,
    history: VecDeque<HistoryEntry>,
}

impl ExecutionState {
    pub fn new(layout: ModalityLayout) -> Self {
        let c = layout.history();
        Self {
            layout,
            history: VecDeque::with_capacity(c),
        }
    }

    pub fn layout(&self) -> &ModalityLayout {
        &self.layout
    }

    /// Records a completed step, evicting the oldest entry once `c` are held.
    pub fn push(&mut self, entry: HistoryEntry) -> Result<()> {
        let (q, r) = (self.layout.frame_width(), self.layout.behavior_dim());
        if entry.features.len() != q {
            return Err(Error::dim("history feature frame", q, entry.features.len()));
        }
        if entry.expected.len() != r {
            return Err(Error::dim("history expected behavior", r, entry.expected.len()));
        }
        if entry.actual.len() != r {
            return Err(Error::dim("history actual behavior", r, entry.actual.len()));
        }
        if self.history.len() == self.layout.history() {
            self.history.pop_back();
        }
        self.history.push_front(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.history.len() == self.layout.history()
    }

    /// Entries, most recent first.
    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.history.iter()
    }

    /// Stacked `actual − expected` over the window; zero while warming up.
    pub fn differences(&self) -> DVector<f64> {
        if !self.is_full() {
            return DVector::zeros(self.layout.difference_dim());
        }
        let expected: Vec<&[f64]> = self.history.iter().map(|h| h.expected.as_slice()).collect();
        let actual: Vec<&[f64]> = self.history.iter().map(|h| h.actual.as_slice()).collect();
        build_differences(&expected, &actual, &self.layout).expect("entries validated on push")
    }
}

/// Current offset `v = Uᵀe`.
pub fn current_offset(u: &WeightU, e: &DVector<f64>) -> Result<DVector<f64>> {
    let rc = u.layout().difference_dim();
    if e.len() != rc {
        return Err(Error::dim("difference vector length", rc, e.len()));
    }
    Ok(u.values().tr_mul(e))
}

fn invert_transpose(block: &DMatrix<f64>, k: usize, mode: InverseMode) -> Result<DMatrix<f64>> {
    let svd = block.transpose().svd(true, true);
    let largest = svd.singular_values.max();
    let smallest = svd.singular_values.min();
    let cutoff = SINGULAR_TOL * largest.max(1.0);
    match mode {
        InverseMode::Strict => {
            if largest <= SINGULAR_TOL || smallest < SINGULAR_TOL * largest {
                return Err(Error::SingularTemporalBlock(k));
            }
            svd.pseudo_inverse(0.0).map_err(|_| Error::SingularTemporalBlock(k))
        }
        InverseMode::PseudoInverse => {
            if largest <= cutoff {
                return Ok(DMatrix::zeros(block.ncols(), block.nrows()));
            }
            svd.pseudo_inverse(cutoff).map_err(|_| Error::SingularTemporalBlock(k))
        }
    }
}

/// Predicted future offset
/// `ṽ = Σ_k (U^(k)ᵀ)⁻¹ (y^(k) − W^(k)ᵀ x^(k))` over the stored frames, where
/// entry `k` of the history (0 = most recent) pairs with temporal block `k`
/// and frame slice `W^(k)`. Zero until the window holds `c` entries.
pub fn predicted_offset(w: &WeightW, u: &WeightU, state: &ExecutionState, mode: InverseMode) -> Result<DVector<f64>> {
    let layout = state.layout();
    if w.layout() != layout || u.layout() != layout {
        return Err(Error::dim("weight layout feature rows", layout.feature_dim(), w.values().nrows()));
    }
    let r = layout.behavior_dim();
    let mut offset = DVector::zeros(r);
    if !state.is_full() {
        return Ok(offset);
    }
    for (k, entry) in state.entries().enumerate() {
        let x = DVector::from_column_slice(&entry.features);
        let y = DVector::from_column_slice(&entry.expected);
        let residual = y - w.frame(k)?.tr_mul(&x);
        offset += invert_transpose(&u.block(k)?, k, mode)? * residual;
    }
    Ok(offset)
}

/// Behavior command `Wᵀx + ṽ + Uᵀe`.
pub fn generate_behavior(
    w: &WeightW,
    u: &WeightU,
    x: &FeatureInstance,
    e: &DVector<f64>,
    predicted: &DVector<f64>,
) -> Result<DVector<f64>> {
    let layout = w.layout();
    if x.values().len() != layout.feature_dim() {
        return Err(Error::dim("feature instance length", layout.feature_dim(), x.values().len()));
    }
    if predicted.len() != layout.behavior_dim() {
        return Err(Error::dim("predicted offset length", layout.behavior_dim(), predicted.len()));
    }
    let feed_forward = w.values().tr_mul(x.values());
    Ok(feed_forward + predicted + current_offset(u, e)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(q: usize, c: usize, r: usize) -> ModalityLayout {
        ModalityLayout::new(vec![q], c, r).unwrap()
    }

    fn entry(features: &[f64], expected: &[f64], actual: &[f64]) -> HistoryEntry {
        HistoryEntry {
            features: features.to_vec(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    #[test]
    fn current_offset_examples() {
        let l = layout(1, 1, 1);
        let u = WeightU::new(DMatrix::from_element(1, 1, 0.5), l.clone()).unwrap();
        assert_eq!(current_offset(&u, &DVector::from_vec(vec![2.0])).unwrap()[0], 1.0);
        assert_eq!(current_offset(&u, &DVector::zeros(1)).unwrap()[0], 0.0);

        let l = layout(1, 1, 2);
        let u = WeightU::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), l).unwrap();
        let v = current_offset(&u, &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(v.as_slice(), &[4.0, 3.0]);
        assert!(current_offset(&u, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn predicted_offset_identity_block() {
        let l = layout(2, 1, 2);
        let w = WeightW::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]), l.clone()).unwrap();
        let u = WeightU::new(DMatrix::identity(2, 2), l.clone()).unwrap();
        let mut state = ExecutionState::new(l);
        state.push(entry(&[1.0, 1.0], &[5.0, 2.0], &[0.0, 0.0])).unwrap();
        // Wᵀx = [3, 1]
        let v = predicted_offset(&w, &u, &state, InverseMode::Strict).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn predicted_offset_scalar_inversion() {
        let l = layout(1, 2, 1);
        let w = WeightW::zeros(&l);
        let u = WeightU::new(DMatrix::from_row_slice(2, 1, &[2.0, 4.0]), l.clone()).unwrap();
        let mut state = ExecutionState::new(l);
        state.push(entry(&[0.0], &[8.0], &[0.0])).unwrap();
        state.push(entry(&[0.0], &[6.0], &[0.0])).unwrap();
        let v = predicted_offset(&w, &u, &state, InverseMode::Strict).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn predicted_offset_zero_residuals() {
        let l = layout(1, 2, 1);
        let w = WeightW::new(DMatrix::from_row_slice(2, 1, &[2.0, 3.0]), l.clone()).unwrap();
        let u = WeightU::new(DMatrix::from_row_slice(2, 1, &[0.7, -1.3]), l.clone()).unwrap();
        let mut state = ExecutionState::new(l);
        // Entry pushed first ends up as frame 1.
        state.push(entry(&[1.0], &[3.0], &[0.0])).unwrap();
        state.push(entry(&[1.0], &[2.0], &[0.0])).unwrap();
        let v = predicted_offset(&w, &u, &state, InverseMode::Strict).unwrap();
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn singular_block_is_reported_or_pseudo_inverted() {
        let l = layout(1, 2, 2);
        let w = WeightW::zeros(&l);
        let mut values = DMatrix::zeros(4, 2);
        values.rows_mut(0, 2).copy_from(&DMatrix::identity(2, 2));
        values[(2, 0)] = 1.0; // block 1 = [[1, 0], [0, 0]], rank 1
        let u = WeightU::new(values, l.clone()).unwrap();
        let mut state = ExecutionState::new(l);
        state.push(entry(&[0.0], &[1.0, 1.0], &[0.0, 0.0])).unwrap();
        state.push(entry(&[0.0], &[2.0, 3.0], &[0.0, 0.0])).unwrap();
        assert_eq!(
            predicted_offset(&w, &u, &state, InverseMode::Strict),
            Err(Error::SingularTemporalBlock(1))
        );
        let v = predicted_offset(&w, &u, &state, InverseMode::PseudoInverse).unwrap();
        // Frame 0 contributes [2, 3]; frame 1 keeps only the first channel.
        assert!((v - DVector::from_vec(vec![3.0, 3.0])).amax() < 1e-12);
    }

    #[test]
    fn zero_block_pseudo_inverse_is_zero() {
        let l = layout(1, 1, 2);
        let mut state = ExecutionState::new(l.clone());
        state.push(entry(&[0.0], &[1.0, 1.0], &[0.0, 0.0])).unwrap();
        let v = predicted_offset(&WeightW::zeros(&l), &WeightU::zeros(&l), &state, InverseMode::PseudoInverse).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
        assert!(predicted_offset(&WeightW::zeros(&l), &WeightU::zeros(&l), &state, InverseMode::Strict).is_err());

        let tiny = WeightU::new(DMatrix::identity(2, 2) * 1e-10, l.clone()).unwrap();
        let v = predicted_offset(&WeightW::zeros(&l), &tiny, &state, InverseMode::PseudoInverse).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn warm_up_predicts_zero() {
        let l = layout(1, 3, 1);
        let u = WeightU::new(DMatrix::from_element(3, 1, 1.0), l.clone()).unwrap();
        let mut state = ExecutionState::new(l.clone());
        state.push(entry(&[1.0], &[1.0], &[2.0])).unwrap();
        assert!(!state.is_full());
        let v = predicted_offset(&WeightW::zeros(&l), &u, &state, InverseMode::Strict).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(state.differences(), DVector::zeros(3));
    }

    #[test]
    fn state_keeps_last_c_entries() {
        let l = layout(1, 2, 1);
        let mut state = ExecutionState::new(l);
        for t in 0..5 {
            state.push(entry(&[t as f64], &[0.0], &[t as f64])).unwrap();
        }
        assert_eq!(state.len(), 2);
        assert_eq!(state.differences().as_slice(), &[4.0, 3.0]);
        assert!(state.push(entry(&[0.0, 1.0], &[0.0], &[0.0])).is_err());
    }

    #[test]
    fn generate_behavior_examples() {
        let l = layout(1, 1, 1);
        let w = WeightW::new(DMatrix::from_element(1, 1, 2.0), l.clone()).unwrap();
        let u = WeightU::new(DMatrix::from_element(1, 1, -0.5), l.clone()).unwrap();
        let x = FeatureInstance::from_vector(DVector::from_vec(vec![1.0]), &l).unwrap();
        let zero = DVector::zeros(1);

        let y = generate_behavior(&w, &u, &x, &zero, &zero).unwrap();
        assert_eq!(y[0], 2.0);

        let v = DVector::from_vec(vec![0.3]);
        let y = generate_behavior(&WeightW::zeros(&l), &WeightU::zeros(&l), &x, &zero, &v).unwrap();
        assert_eq!(y[0], 0.3);

        // Wᵀx = 2, ṽ = 0.3, Uᵀe = -0.1
        let e = DVector::from_vec(vec![0.2]);
        let y = generate_behavior(&w, &u, &x, &e, &v).unwrap();
        assert!((y[0] - 2.2).abs() < 1e-15);
        assert!(generate_behavior(&w, &u, &x, &DVector::zeros(2), &v).is_err());
    }
}
