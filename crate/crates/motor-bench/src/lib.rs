//! Shared fixture builders for the criterion benches.

use motor_core::ot::CostMatrix;
use motor_core::types::{
    BoundingBox, CandidateRecord, EmbeddingVector, GroundedCaption, GroundedFinding, QueryContext,
};
use motor_core::CorpusStore;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cost(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CostMatrix {
    let vals: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(0.0..2.0))
        .collect();
    CostMatrix::new(Array2::from_shape_vec((rows, cols), vals).unwrap()).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    EmbeddingVector::new(v.iter().map(|x| (x / norm) as f32).collect()).unwrap()
}

fn finding(rng: &mut ChaCha8Rng, visual_dim: usize, text_dim: usize) -> GroundedFinding {
    GroundedFinding::new(
        "benchmark finding",
        BoundingBox::new(0.1, 0.1, 0.6, 0.6).unwrap(),
        random_unit(rng, text_dim),
        random_unit(rng, visual_dim),
    )
    .unwrap()
}

pub fn random_store(
    rng: &mut ChaCha8Rng,
    n_records: usize,
    visual_dim: usize,
    text_dim: usize,
    findings_each: usize,
) -> CorpusStore {
    let records = (0..n_records)
        .map(|i| {
            let caption = GroundedCaption::new(
                (0..findings_each)
                    .map(|_| finding(rng, visual_dim, text_dim))
                    .collect(),
            );
            CandidateRecord::new(
                format!("r{i}"),
                random_unit(rng, visual_dim),
                caption,
                "benchmark report",
                random_unit(rng, text_dim),
            )
            .unwrap()
        })
        .collect();
    CorpusStore::new(records, visual_dim, text_dim).unwrap()
}

pub fn random_query(
    rng: &mut ChaCha8Rng,
    visual_dim: usize,
    text_dim: usize,
    findings: usize,
) -> QueryContext {
    QueryContext::new(
        random_unit(rng, visual_dim),
        GroundedCaption::new(
            (0..findings)
                .map(|_| finding(rng, visual_dim, text_dim))
                .collect(),
        ),
        "benchmark question",
        random_unit(rng, text_dim),
    )
    .unwrap()
}
