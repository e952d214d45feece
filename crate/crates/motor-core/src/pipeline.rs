//! End-to-end orchestration: validate, retrieve, re-rank, assemble the
//! generation request, and optionally dispatch it to a generation service.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{MotorError, Result};
use crate::rerank::{rerank, select_context, CandidateScore};
use crate::retrieve::{retrieve_top_k, RetrievalResult};
use crate::store::CorpusStore;
use crate::types::{validate_query, GroundedCaption, QueryContext, RerankConfig};

/// Wall-clock timings per stage. Kept out of the serialized form so that a
/// request is byte-identical across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub retrieval: Duration,
    pub scoring: Duration,
    pub total: Duration,
}

/// Both orderings plus per-candidate costs and fallback flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub initial_ranking: Vec<RetrievalResult>,
    pub final_ranking: Vec<CandidateScore>,
    #[serde(skip)]
    pub timings: StageTimings,
}

/// The assembled input bundle for a downstream generation service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub question_text: String,
    pub grounded_caption_rendering: String,
    pub context_reports: Vec<String>,
    pub query_image_ref: String,
    pub trace: RunTrace,
    /// Filled in when the request was dispatched to a generation service.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// One line per finding: `<description> [x_min,y_min,x_max,y_max]` with
/// 3-decimal coordinates.
pub fn render_caption(caption: &GroundedCaption) -> String {
    caption
        .findings()
        .iter()
        .map(|f| {
            let b = f.bounding_box;
            format!(
                "{} [{:.3},{:.3},{:.3},{:.3}]",
                f.description, b.x_min, b.y_min, b.x_max, b.y_max
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Run the full retrieval and re-ranking pipeline for one query.
///
/// An empty store degrades to a request with no context reports (standalone
/// generation). The trace always carries both orderings; errors from any
/// stage are wrapped with the stage name.
pub fn run_query(
    query_ref: &str,
    q: &QueryContext,
    store: &CorpusStore,
    cfg: &RerankConfig,
) -> Result<GenerationRequest> {
    let started = Instant::now();
    cfg.validate().map_err(MotorError::at_stage("validate"))?;
    if !store.is_empty()
        && (store.visual_dim() != cfg.visual_dim || store.text_dim() != cfg.text_dim)
    {
        return Err(MotorError::Stage {
            stage: "validate",
            source: Box::new(MotorError::InvalidConfig(format!(
                "store dims ({}, {}) disagree with config dims ({}, {})",
                store.visual_dim(),
                store.text_dim(),
                cfg.visual_dim,
                cfg.text_dim
            ))),
        });
    }
    let q = validate_query(q.clone(), cfg).map_err(MotorError::at_stage("validate"))?;

    let retrieval_started = Instant::now();
    let hits = retrieve_top_k(store, &q.image_embedding, cfg.k)
        .map_err(MotorError::at_stage("retrieve"))?;
    let retrieval = retrieval_started.elapsed();

    let scoring_started = Instant::now();
    let candidates: Vec<_> = hits
        .iter()
        .map(|hit| {
            store
                .get(&hit.record_id)
                .cloned()
                .map(|record| (record, hit.clone()))
                .ok_or_else(|| MotorError::UnknownRecordId(hit.record_id.clone()))
        })
        .collect::<Result<_>>()
        .map_err(MotorError::at_stage("rerank"))?;
    let final_ranking = rerank(&q, &candidates, cfg).map_err(MotorError::at_stage("rerank"))?;
    let scoring = scoring_started.elapsed();

    let context_reports = select_context(&final_ranking, store, cfg.s)
        .map_err(MotorError::at_stage("select_context"))?;

    Ok(GenerationRequest {
        question_text: q.question_text.clone(),
        grounded_caption_rendering: render_caption(&q.caption),
        context_reports,
        query_image_ref: query_ref.to_string(),
        trace: RunTrace {
            initial_ranking: hits,
            final_ranking,
            timings: StageTimings {
                retrieval,
                scoring,
                total: started.elapsed(),
            },
        },
        answer: None,
    })
}

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

/// Render a template containing `{question}`, `{grounded_caption}` and
/// `{contexts}` placeholders. Placeholders the template does not use are
/// fine; names it uses that we do not know are an error.
pub fn assemble_prompt(req: &GenerationRequest, template: &str) -> Result<String> {
    let contexts = if req.context_reports.is_empty() {
        "(no retrieved context)".to_string()
    } else {
        req.context_reports
            .iter()
            .enumerate()
            .map(|(i, report)| format!("{}. {}", i + 1, report))
            .collect::<Vec<_>>()
            .join("\n")
    };

    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
            .count();
        if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
            let name = &after[..name_len];
            match name {
                "question" => out.push_str(&req.question_text),
                "grounded_caption" => out.push_str(&req.grounded_caption_rendering),
                "contexts" => out.push_str(&contexts),
                other => return Err(MotorError::UnknownPlaceholder(other.to_string())),
            }
            rest = &after[name_len + 1..];
        } else {
            // A brace that does not open a well-formed placeholder is literal.
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Generation service client
// ---------------------------------------------------------------------------

/// Where and how to reach the generation service.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationEndpoint {
    pub url: String,
    pub timeout: Duration,
    pub max_attempts: usize,
    pub initial_backoff: Duration,
}

impl GenerationEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Serialize)]
struct GenerationRequestBody<'a> {
    prompt: &'a str,
    image_ref: &'a str,
}

#[derive(Deserialize)]
struct GenerationResponseBody {
    answer: String,
}

/// POST `{prompt, image_ref}` to the service and return its answer verbatim.
///
/// Transport failures are retried with exponential backoff (doubling from
/// `initial_backoff`, `max_attempts` tries total); a non-success HTTP status
/// is not retried and surfaces with its body attached.
pub fn dispatch_generation(
    prompt: &str,
    image_ref: &str,
    endpoint: &GenerationEndpoint,
) -> Result<String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(endpoint.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let body = GenerationRequestBody { prompt, image_ref };

    let mut backoff = endpoint.initial_backoff;
    let mut last_error = String::new();
    for attempt in 1..=endpoint.max_attempts.max(1) {
        log::debug!(
            "dispatching generation request to {} (attempt {attempt})",
            endpoint.url
        );
        match agent.post(&endpoint.url).send_json(&body) {
            Ok(mut response) => {
                let status = response.status();
                if !status.is_success() {
                    let text = response
                        .body_mut()
                        .read_to_string()
                        .unwrap_or_else(|e| format!("<unreadable body: {e}>"));
                    return Err(MotorError::ServiceError {
                        status: status.as_u16(),
                        body: text,
                    });
                }
                let parsed: GenerationResponseBody =
                    response
                        .body_mut()
                        .read_json()
                        .map_err(|e| MotorError::ServiceError {
                            status: status.as_u16(),
                            body: format!("malformed answer payload: {e}"),
                        })?;
                log::debug!(
                    "generation service answered ({} bytes)",
                    parsed.answer.len()
                );
                return Ok(parsed.answer);
            }
            Err(e) => {
                last_error = e.to_string();
                log::warn!(
                    "generation request attempt {attempt}/{} failed: {last_error}",
                    endpoint.max_attempts
                );
                if attempt < endpoint.max_attempts {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
    Err(MotorError::ServiceUnavailable {
        attempts: endpoint.max_attempts.max(1),
        last_error,
    })
}
