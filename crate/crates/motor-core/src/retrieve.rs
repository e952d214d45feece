//! First-stage top-k retrieval by image-embedding cosine similarity.
//!
//! An exhaustive scan over the store: corpora here are a few hundred records,
//! so exactness beats an index structure and keeps downstream tests simple.

use serde::{Deserialize, Serialize};

use crate::error::{MotorError, Result};
use crate::similarity::cosine_similarity;
use crate::store::CorpusStore;
use crate::types::EmbeddingVector;

/// One first-stage hit. Ranks start at 1; similarities are non-increasing
/// with rank within one result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub record_id: String,
    pub initial_rank: usize,
    pub similarity: f64,
}

/// Retrieve the `min(k, |store|)` most image-similar records, sorted by
/// similarity descending with ties broken by record insertion order.
///
/// Equals a brute-force full-scan argsort by construction. An empty store
/// yields an empty list: the pipeline then degrades to standalone generation.
pub fn retrieve_top_k(
    store: &CorpusStore,
    query_image: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    if k == 0 {
        return Err(MotorError::InvalidConfig("k must be >= 1".into()));
    }
    if !store.is_empty() && query_image.dim() != store.visual_dim() {
        return Err(MotorError::DimensionMismatch {
            context: "query image embedding".into(),
            expected: store.visual_dim(),
            got: query_image.dim(),
        });
    }
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(store.len());
    for (idx, record) in store.records().iter().enumerate() {
        scored.push((
            idx,
            cosine_similarity(query_image, &record.image_embedding)?,
        ));
    }
    // Stable sort keeps insertion order among equal similarities.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, (idx, similarity))| RetrievalResult {
            record_id: store.records()[idx].id.clone(),
            initial_rank: rank + 1,
            similarity,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CandidateRecord, GroundedCaption};
    use proptest::prelude::*;

    fn vecf(vals: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(vals.to_vec()).unwrap()
    }

    fn image_record(id: &str, image: &[f32]) -> CandidateRecord {
        CandidateRecord::new(
            id,
            vecf(image),
            GroundedCaption::empty(),
            format!("report {id}"),
            vecf(&[1.0, 0.0]),
        )
        .unwrap()
    }

    fn store_of(images: &[&[f32]]) -> CorpusStore {
        let records = images
            .iter()
            .enumerate()
            .map(|(i, img)| image_record(&format!("r{i}"), img))
            .collect();
        CorpusStore::from_records(records).unwrap()
    }

    #[test]
    fn k_exceeding_corpus_returns_all() {
        let store = store_of(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let hits = retrieve_top_k(&store, &vecf(&[1.0, 0.0]), 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(
            hits.iter().map(|h| h.initial_rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        for pair in hits.windows(2) {
            assert!(pair[0].similarity >= pair[1].similarity);
        }
    }

    #[test]
    fn identity_retrieval_ranks_first() {
        let store = store_of(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let hits = retrieve_top_k(&store, &vecf(&[0.0, 1.0, 0.0]), 1).unwrap();
        assert_eq!(hits[0].record_id, "r1");
        assert_eq!(hits[0].similarity, 1.0);
    }

    #[test]
    fn hand_constructed_similarities_with_tie() {
        // Against query (1, 0): similarities 0.9, 0.7, 0.7, 0.1, -0.2.
        // The two 0.7 records must come out in insertion order.
        let c = |s: f64| {
            let angle = s.acos();
            [angle.cos() as f32, angle.sin() as f32]
        };
        let store = store_of(&[&c(0.9), &c(0.7), &c(0.7), &c(0.1), &c(-0.2)]);
        let hits = retrieve_top_k(&store, &vecf(&[1.0, 0.0]), 3).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.record_id.as_str()).collect();
        assert_eq!(ids, vec!["r0", "r1", "r2"]);
    }

    #[test]
    fn empty_store_yields_empty_list() {
        let store = CorpusStore::from_records(vec![]).unwrap();
        let hits = retrieve_top_k(&store, &vecf(&[1.0, 0.0]), 5).unwrap();
        assert!(hits.is_empty());
    }

    #[test]
    fn dim_mismatch_rejected() {
        let store = store_of(&[&[1.0, 0.0]]);
        assert!(retrieve_top_k(&store, &vecf(&[1.0, 0.0, 0.0]), 5).is_err());
    }

    fn arb_store_and_query() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<f32>)> {
        (1usize..40, 2usize..5).prop_flat_map(|(n, dim)| {
            (
                prop::collection::vec(prop::collection::vec(-1.0f32..1.0, dim..=dim), n..=n),
                prop::collection::vec(-1.0f32..1.0, dim..=dim),
            )
        })
    }

    proptest! {
        #[test]
        fn equals_bruteforce_argsort((images, query) in arb_store_and_query(), k in 1usize..12) {
            let refs: Vec<&[f32]> = images.iter().map(|v| v.as_slice()).collect();
            let store = store_of(&refs);
            let q = vecf(&query);
            let hits = retrieve_top_k(&store, &q, k).unwrap();

            // Oracle: score everything, argsort descending with index ties.
            let mut scored: Vec<(usize, f64)> = store
                .records()
                .iter()
                .enumerate()
                .map(|(i, r)| (i, cosine_similarity(&q, &r.image_embedding).unwrap()))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let expected: Vec<String> = scored
                .iter()
                .take(k)
                .map(|(i, _)| format!("r{i}"))
                .collect();
            let got: Vec<String> = hits.iter().map(|h| h.record_id.clone()).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn monotone_in_k((images, query) in arb_store_and_query(), k in 1usize..12) {
            let refs: Vec<&[f32]> = images.iter().map(|v| v.as_slice()).collect();
            let store = store_of(&refs);
            let q = vecf(&query);
            let smaller = retrieve_top_k(&store, &q, k).unwrap();
            let larger = retrieve_top_k(&store, &q, k + 1).unwrap();
            prop_assert_eq!(&smaller[..], &larger[..smaller.len()]);
        }

        #[test]
        fn deterministic((images, query) in arb_store_and_query()) {
            let refs: Vec<&[f32]> = images.iter().map(|v| v.as_slice()).collect();
            let store = store_of(&refs);
            let q = vecf(&query);
            let a = retrieve_top_k(&store, &q, 7).unwrap();
            let b = retrieve_top_k(&store, &q, 7).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
