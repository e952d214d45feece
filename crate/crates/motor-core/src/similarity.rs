//! Cosine-similarity kernels used by retrieval and re-ranking.
//!
//! Storage is f32; all accumulation happens in f64 because the Sinkhorn
//! solver downstream is sensitive to accumulated error.

use ndarray::Array2;

use crate::error::{MotorError, Result};
use crate::types::EmbeddingVector;

/// Cosine similarity in [-1, 1], clamped to absorb floating-point drift.
///
/// A zero-norm operand yields 0 with a logged warning rather than an error:
/// corpora with padded or absent features should degrade, not crash.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(MotorError::DimensionMismatch {
            context: "cosine similarity".into(),
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for (x, y) in a.iter_f64().zip(b.iter_f64()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        log::warn!("cosine similarity against a zero-norm vector; returning 0");
        return Ok(0.0);
    }
    Ok((dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise cosine similarities, shape `|a| x |b|`.
///
/// Either side may be empty, producing a zero-sized matrix.
pub fn similarity_matrix(a: &[&EmbeddingVector], b: &[&EmbeddingVector]) -> Result<Array2<f64>> {
    let expected = a
        .first()
        .map(|e| e.dim())
        .or_else(|| b.first().map(|e| e.dim()));
    if let Some(dim) = expected {
        for e in a.iter().chain(b.iter()) {
            if e.dim() != dim {
                return Err(MotorError::DimensionMismatch {
                    context: "similarity matrix".into(),
                    expected: dim,
                    got: e.dim(),
                });
            }
        }
    }
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[[i, j]] = cosine_similarity(x, y)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vecf(vals: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(vals.to_vec()).unwrap()
    }

    #[test]
    fn identical_vectors_give_one() {
        let a = vecf(&[0.3, -1.2, 4.0]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_vectors_give_zero() {
        let a = vecf(&[1.0, 0.0]);
        let b = vecf(&[0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn forty_five_degrees() {
        let a = vecf(&[1.0, 0.0]);
        let b = vecf(&[1.0, 1.0]);
        let expected = 1.0 / 2.0_f64.sqrt();
        assert!((cosine_similarity(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_vector_policy() {
        let z = vecf(&[0.0, 0.0]);
        let a = vecf(&[1.0, 2.0]);
        assert_eq!(cosine_similarity(&z, &a).unwrap(), 0.0);
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let a = vecf(&[1.0, 0.0]);
        let b = vecf(&[1.0, 0.0, 0.0]);
        assert!(cosine_similarity(&a, &b).is_err());
    }

    #[test]
    fn matrix_orthonormal_pair() {
        let u = vecf(&[1.0, 0.0]);
        let v = vecf(&[0.0, 1.0]);
        let m = similarity_matrix(&[&u, &v], &[&u, &v]).unwrap();
        assert_eq!(m[[0, 0]], 1.0);
        assert_eq!(m[[0, 1]], 0.0);
        assert_eq!(m[[1, 0]], 0.0);
        assert_eq!(m[[1, 1]], 1.0);
    }

    #[test]
    fn matrix_empty_side() {
        let u = vecf(&[1.0, 0.0]);
        let m = similarity_matrix(&[], &[&u, &u]).unwrap();
        assert_eq!(m.shape(), &[0, 2]);
    }

    #[test]
    fn matrix_row_against_three() {
        let a = vecf(&[1.0, 0.0]);
        let b1 = vecf(&[1.0, 0.0]);
        let b2 = vecf(&[1.0, 1.0]);
        let b3 = vecf(&[0.0, 1.0]);
        let m = similarity_matrix(&[&a], &[&b1, &b2, &b3]).unwrap();
        assert_eq!(m.shape(), &[1, 3]);
        assert!((m[[0, 0]] - 1.0).abs() < 1e-9);
        assert!((m[[0, 1]] - 1.0 / 2.0_f64.sqrt()).abs() < 1e-9);
        assert!(m[[0, 2]].abs() < 1e-9);
    }

    fn arb_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, dim..=dim)
    }

    proptest! {
        #[test]
        fn symmetric(a in arb_vec(6), b in arb_vec(6)) {
            let (a, b) = (vecf(&a), vecf(&b));
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn scale_invariant(a in arb_vec(6), b in arb_vec(6), exp in -6i32..10) {
            // Powers of two keep the f32 scaling exact, so the invariance
            // holds to full precision instead of f32 rounding error.
            let c = 2.0f32.powi(exp);
            let scaled: Vec<f32> = a.iter().map(|x| x * c).collect();
            let (a, b, scaled) = (vecf(&a), vecf(&b), vecf(&scaled));
            let s1 = cosine_similarity(&a, &b).unwrap();
            let s2 = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12, "s1={s1} s2={s2}");
        }

        #[test]
        fn bounded(a in arb_vec(8), b in arb_vec(8)) {
            let s = cosine_similarity(&vecf(&a), &vecf(&b)).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn matrix_transpose_symmetry(
            rows in prop::collection::vec(arb_vec(4), 0..4),
            cols in prop::collection::vec(arb_vec(4), 0..4),
        ) {
            let rows: Vec<EmbeddingVector> = rows.iter().map(|v| vecf(v)).collect();
            let cols: Vec<EmbeddingVector> = cols.iter().map(|v| vecf(v)).collect();
            let a: Vec<&EmbeddingVector> = rows.iter().collect();
            let b: Vec<&EmbeddingVector> = cols.iter().collect();
            let ab = similarity_matrix(&a, &b).unwrap();
            let ba = similarity_matrix(&b, &a).unwrap();
            for i in 0..a.len() {
                for j in 0..b.len() {
                    prop_assert!((ab[[i, j]] - ba[[j, i]]).abs() < 1e-12);
                }
            }
        }
    }
}
