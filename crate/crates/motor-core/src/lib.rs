//! Retrieval and re-ranking engine for multimodal RAG pipelines.
//!
//! The engine takes a query (image embedding, grounded caption, question),
//! pulls the top-k most image-similar records from a corpus of precomputed
//! embeddings, re-scores each candidate with an entropic optimal-transport
//! alignment over the grounded-caption findings, and assembles the best-s
//! reports into a generation request for a downstream VLM service.
//!
//! Modules follow the pipeline stages:
//!
//! - [`types`] — domain types shared by every stage
//! - [`similarity`] — cosine kernels
//! - [`store`] — corpus ingest, persistence, and file formats
//! - [`retrieve`] — first-stage top-k retrieval
//! - [`ot`] — cost matrices, Sinkhorn solver, exact brute-force oracle
//! - [`rerank`] — composite similarity and OT-based re-ordering
//! - [`pipeline`] — end-to-end orchestration and prompt assembly
//! - [`eval`] — offline metrics, ablation sweeps, synthetic corpora

pub mod error;
pub mod eval;
pub mod ot;
pub mod pipeline;
pub mod rerank;
pub mod retrieve;
pub mod similarity;
pub mod store;
pub mod types;

pub use error::{MotorError, Result};
pub use eval::{
    ablation_csv, ablation_sweep, change_rate, change_rate_at_depth, evaluate_config,
    generate_synthetic_corpus, planted_precision, ranking_metrics, AblationRow, EvalReport,
    PlantedMap, RankingMetrics, SyntheticCorpus, SyntheticCorpusSpec,
};
pub use ot::{
    build_cost_matrix, exact_ot_bruteforce, sinkhorn, uniform_marginal, CostMatrix, SinkhornParams,
    TransportPlan,
};
pub use pipeline::{
    assemble_prompt, dispatch_generation, render_caption, run_query, GenerationEndpoint,
    GenerationRequest, RunTrace, StageTimings,
};
pub use rerank::{
    composite_similarity, rerank, score_candidate, select_context, CandidateScore, PlanSummary,
};
pub use retrieve::{retrieve_top_k, RetrievalResult};
pub use similarity::{cosine_similarity, similarity_matrix};
pub use store::{ingest_corpus, load_queries, save_corpus, save_queries, CorpusStore};
pub use types::{
    validate_query, BoundingBox, CandidateRecord, EmbeddingVector, GroundedCaption,
    GroundedFinding, QueryContext, RerankConfig, SinkhornMode, DEFAULT_TEXT_DIM,
    DEFAULT_VISUAL_DIM,
};
