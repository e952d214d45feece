//! OT-based re-ranking of retrieved candidates.
//!
//! For each (query, candidate) pair we compose a multimodal similarity
//! matrix over grounded-caption findings, turn it into a transport cost
//! matrix, solve entropic OT with uniform marginals, and reorder candidates
//! by ascending transport cost. Total transported mass is always 1, so costs
//! are commensurable across candidates with different finding counts.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{MotorError, Result};
use crate::ot::{build_cost_matrix, sinkhorn, uniform_marginal, SinkhornParams};
use crate::retrieve::RetrievalResult;
use crate::similarity::{cosine_similarity, similarity_matrix};
use crate::store::CorpusStore;
use crate::types::{CandidateRecord, QueryContext, RerankConfig};

/// Iteration count and convergence flag of one candidate's OT solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub iterations: usize,
    pub converged: bool,
}

/// One candidate's score and position before/after re-ranking.
///
/// `final_rank` is 0 until assigned by [`rerank`]; ranks are then 1..k with
/// no gaps and costs non-decreasing in rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub record_id: String,
    pub ot_cost: f64,
    pub initial_rank: usize,
    pub final_rank: usize,
    pub fallback_used: bool,
    pub plan_summary: PlanSummary,
    /// Present when scoring failed fatally; such candidates rank last.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Composite similarity matrix over findings, shape `n_q x n_r`:
/// a question-report scalar term plus finding-text and finding-box terms,
/// weighted by the config's alpha/beta/delta.
pub fn composite_similarity(
    q: &QueryContext,
    r: &CandidateRecord,
    cfg: &RerankConfig,
) -> Result<Array2<f64>> {
    let question_report = cosine_similarity(&q.question_embedding, &r.report_embedding)?;
    let f_text = similarity_matrix(&q.caption.text_embeddings(), &r.caption.text_embeddings())?;
    let f_visual = similarity_matrix(&q.caption.box_embeddings(), &r.caption.box_embeddings())?;
    let mut out = Array2::zeros((q.caption.len(), r.caption.len()));
    for i in 0..q.caption.len() {
        for j in 0..r.caption.len() {
            let f = cfg.alpha * question_report
                + cfg.beta * f_text[[i, j]]
                + cfg.delta * f_visual[[i, j]];
            out[[i, j]] = f.clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

fn sinkhorn_params(cfg: &RerankConfig) -> SinkhornParams {
    SinkhornParams::new(cfg.gamma)
        .with_max_iters(cfg.sinkhorn_max_iters)
        .with_tol(cfg.sinkhorn_tol)
        .with_mode(cfg.sinkhorn_mode)
}

/// Score one candidate. When either caption is empty the OT alignment is
/// undefined and the score falls back to `1 - cos(question, report)`, which
/// is the composite restricted to its first term.
pub fn score_candidate(
    q: &QueryContext,
    r: &CandidateRecord,
    cfg: &RerankConfig,
) -> Result<CandidateScore> {
    if q.caption.is_empty() || r.caption.is_empty() {
        let cost = 1.0 - cosine_similarity(&q.question_embedding, &r.report_embedding)?;
        return Ok(CandidateScore {
            record_id: r.id.clone(),
            ot_cost: cost,
            initial_rank: 0,
            final_rank: 0,
            fallback_used: true,
            plan_summary: PlanSummary {
                iterations: 0,
                converged: true,
            },
            error: None,
        });
    }

    let similarity = composite_similarity(q, r, cfg)?;
    let cost = build_cost_matrix(&similarity)?;
    let u = uniform_marginal(q.caption.len());
    let v = uniform_marginal(r.caption.len());
    let plan = sinkhorn(&cost, &u, &v, &sinkhorn_params(cfg))?;
    if !plan.converged() {
        log::warn!(
            "sinkhorn hit max_iters={} for candidate {} (marginal violation {:.3e})",
            cfg.sinkhorn_max_iters,
            r.id,
            plan.marginal_violation()
        );
    }
    Ok(CandidateScore {
        record_id: r.id.clone(),
        ot_cost: plan.cost(),
        initial_rank: 0,
        final_rank: 0,
        fallback_used: false,
        plan_summary: PlanSummary {
            iterations: plan.iterations(),
            converged: plan.converged(),
        },
        error: None,
    })
}

/// Score all candidates and order them by ascending OT cost, ties broken by
/// initial rank. A candidate whose scoring fails fatally is kept with cost
/// +inf and the error attached, so the output is always a permutation of the
/// input.
pub fn rerank(
    q: &QueryContext,
    candidates: &[(CandidateRecord, RetrievalResult)],
    cfg: &RerankConfig,
) -> Result<Vec<CandidateScore>> {
    cfg.validate()?;
    let mut scores: Vec<CandidateScore> = Vec::with_capacity(candidates.len());
    for (record, hit) in candidates {
        let mut score = match score_candidate(q, record, cfg) {
            Ok(s) => s,
            Err(e) => CandidateScore {
                record_id: record.id.clone(),
                ot_cost: f64::INFINITY,
                initial_rank: 0,
                final_rank: 0,
                fallback_used: false,
                plan_summary: PlanSummary {
                    iterations: 0,
                    converged: false,
                },
                error: Some(e.to_string()),
            },
        };
        score.initial_rank = hit.initial_rank;
        scores.push(score);
    }
    scores.sort_by(|a, b| {
        a.ot_cost
            .total_cmp(&b.ot_cost)
            .then(a.initial_rank.cmp(&b.initial_rank))
    });
    for (i, score) in scores.iter_mut().enumerate() {
        score.final_rank = i + 1;
    }
    Ok(scores)
}

/// Report texts of the `s` best-ranked candidates in final-rank order,
/// truncated to the number of available scores.
pub fn select_context(
    scores: &[CandidateScore],
    store: &CorpusStore,
    s: usize,
) -> Result<Vec<String>> {
    scores
        .iter()
        .take(s)
        .map(|score| {
            store
                .get(&score.record_id)
                .map(|r| r.report_text.clone())
                .ok_or_else(|| MotorError::UnknownRecordId(score.record_id.clone()))
        })
        .collect()
}
