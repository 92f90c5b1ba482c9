//! The scalar inequality behind the descent guarantee,
//! `‖b‖ − ‖b‖²/(2‖a‖) ≤ ‖a‖ − ‖a‖²/(2‖a‖)` for `a ≠ 0`, for vectors and for
//! matrices under the Frobenius norm.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn gap(a: f64, b: f64) -> f64 {
    (a - a * a / (2.0 * a)) - (b - b * b / (2.0 * a))
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().any(|&x| x != 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn holds_for_vectors(
        a in proptest::collection::vec(-100.0f64..100.0, 1..12),
        scale in prop_oneof![Just(1e-6), Just(1.0), Just(1e3)],
        seed in proptest::collection::vec(-100.0f64..100.0, 12),
    ) {
        prop_assume!(nonzero(&a));
        let a = DVector::from_vec(a);
        let b = DVector::from_iterator(a.len(), seed.iter().take(a.len()).map(|v| v * scale));
        let (na, nb) = (a.norm(), b.norm());
        prop_assert!(gap(na, nb) >= -1e-12 * na.max(nb).max(1.0));
    }

    #[test]
    fn holds_for_matrices(
        rows in 1usize..5,
        cols in 1usize..5,
        values in proptest::collection::vec(-10.0f64..10.0, 50),
    ) {
        let a = DMatrix::from_iterator(rows, cols, values.iter().take(rows * cols).copied());
        let b = DMatrix::from_iterator(rows, cols, values.iter().rev().take(rows * cols).copied());
        prop_assume!(nonzero(a.as_slice()));
        let (na, nb) = (a.norm(), b.norm());
        prop_assert!(gap(na, nb) >= -1e-12 * na.max(nb).max(1.0));
    }
}

#[test]
fn equality_exactly_when_norms_match() {
    assert_eq!(gap(2.0, 2.0), 0.0);
    assert!(gap(2.0, 1.0) > 0.0);
    assert!(gap(2.0, 3.0) > 0.0);
}
