//! Offline evaluation: re-ranking change rate, planted-relevance metrics,
//! weighting ablation sweeps, and a seeded synthetic corpus generator.
//!
//! Synthetic relevance is defined by construction (planted records are
//! perturbations of their query), so ground truth is exact and the metrics
//! are falsifiable at desk scale.

use std::collections::{BTreeMap, HashSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MotorError, Result};
use crate::pipeline::{run_query, GenerationRequest};
use crate::store::CorpusStore;
use crate::types::{
    BoundingBox, CandidateRecord, EmbeddingVector, GroundedCaption, GroundedFinding, QueryContext,
    RerankConfig,
};

/// Map from query id to the record ids planted as relevant for it.
pub type PlantedMap = BTreeMap<String, Vec<String>>;

/// A generated corpus with its queries and exact relevance labels.
pub type SyntheticCorpus = (CorpusStore, Vec<(String, QueryContext)>, PlantedMap);

// ---------------------------------------------------------------------------
// Change rate
// ---------------------------------------------------------------------------

/// Fraction of samples whose reranked ordering differs from the initial one
/// in at least one position, compared over the full lists.
pub fn change_rate(initial: &[Vec<String>], reranked: &[Vec<String>]) -> Result<f64> {
    change_rate_at_depth(initial, reranked, None)
}

/// Like [`change_rate`] but comparing only the first `depth` positions when
/// `depth` is given (e.g. the top-s cut instead of the full top-k list).
pub fn change_rate_at_depth(
    initial: &[Vec<String>],
    reranked: &[Vec<String>],
    depth: Option<usize>,
) -> Result<f64> {
    if initial.len() != reranked.len() {
        return Err(MotorError::MisalignedSamples {
            left: initial.len(),
            right: reranked.len(),
        });
    }
    if initial.is_empty() {
        return Ok(0.0);
    }
    let mut changed = 0usize;
    for (sample, (a, b)) in initial.iter().zip(reranked).enumerate() {
        let mut sa: Vec<&String> = a.iter().collect();
        let mut sb: Vec<&String> = b.iter().collect();
        sa.sort();
        sb.sort();
        if sa != sb {
            return Err(MotorError::NotAPermutation { sample });
        }
        let cut = depth.unwrap_or(a.len()).min(a.len());
        if a[..cut] != b[..cut] {
            changed += 1;
        }
    }
    Ok(changed as f64 / initial.len() as f64)
}

// ---------------------------------------------------------------------------
// Planted-relevance metrics
// ---------------------------------------------------------------------------

/// Precision-at-s and mean reciprocal rank against planted relevance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub precision_at_s: f64,
    pub mrr: f64,
}

/// Metrics over arbitrary ranked id lists, one per query id.
///
/// Per query: `|top-s intersected with planted| / min(s, |planted|)`, and the
/// reciprocal rank of the first planted id anywhere in the list (0 when none
/// was retrieved at all).
pub fn ranking_metrics(
    query_ids: &[String],
    rankings: &[Vec<String>],
    planted: &PlantedMap,
    s: usize,
) -> Result<RankingMetrics> {
    if query_ids.len() != rankings.len() {
        return Err(MotorError::MisalignedSamples {
            left: query_ids.len(),
            right: rankings.len(),
        });
    }
    if query_ids.is_empty() {
        return Ok(RankingMetrics {
            precision_at_s: 0.0,
            mrr: 0.0,
        });
    }
    let mut precision_sum = 0.0;
    let mut rr_sum = 0.0;
    for (id, ranking) in query_ids.iter().zip(rankings) {
        let relevant: &Vec<String> = planted
            .get(id)
            .filter(|ids| !ids.is_empty())
            .ok_or_else(|| MotorError::MissingQuery(id.clone()))?;
        let relevant: HashSet<&String> = relevant.iter().collect();
        let hits = ranking
            .iter()
            .take(s)
            .filter(|r| relevant.contains(r))
            .count();
        precision_sum += hits as f64 / s.min(relevant.len()) as f64;
        if let Some(pos) = ranking.iter().position(|r| relevant.contains(r)) {
            rr_sum += 1.0 / (pos + 1) as f64;
        }
    }
    let n = query_ids.len() as f64;
    Ok(RankingMetrics {
        precision_at_s: precision_sum / n,
        mrr: rr_sum / n,
    })
}

/// [`ranking_metrics`] over the final orderings of finished pipeline runs.
pub fn planted_precision(
    query_ids: &[String],
    requests: &[GenerationRequest],
    planted: &PlantedMap,
    s: usize,
) -> Result<RankingMetrics> {
    let rankings: Vec<Vec<String>> = requests.iter().map(final_ids).collect();
    ranking_metrics(query_ids, &rankings, planted, s)
}

/// Final-ranking ids of one request, best first.
pub fn final_ids(req: &GenerationRequest) -> Vec<String> {
    req.trace
        .final_ranking
        .iter()
        .map(|s| s.record_id.clone())
        .collect()
}

/// Initial-ranking ids of one request, best first.
pub fn initial_ids(req: &GenerationRequest) -> Vec<String> {
    req.trace
        .initial_ranking
        .iter()
        .map(|h| h.record_id.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Recipe for a seeded synthetic corpus. The seed fully determines output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_records: usize,
    pub n_queries: usize,
    pub visual_dim: usize,
    pub text_dim: usize,
    /// Planted relevant records per query.
    pub n_planted_relevant: usize,
    /// Inclusive range of findings per record and per query.
    pub findings_per_record: (usize, usize),
    /// Norm of the perturbation applied to a planted record's embeddings.
    pub noise_scale: f64,
    pub seed: u64,
    /// Additionally plant, per query, a distractor whose image embedding is
    /// closer to the query than the planted record's, but whose findings and
    /// report are random. De-emphasizes image similarity so that first-stage
    /// retrieval alone ranks the distractor first.
    pub inject_image_distractor: bool,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_records: 50,
            n_queries: 20,
            visual_dim: 64,
            text_dim: 32,
            n_planted_relevant: 1,
            findings_per_record: (1, 3),
            noise_scale: 0.1,
            seed: 7,
            inject_image_distractor: false,
        }
    }
}

impl SyntheticCorpusSpec {
    fn validate(&self) -> Result<()> {
        if self.visual_dim < 2 || self.text_dim < 2 {
            return Err(MotorError::InvalidSpec("dims must be >= 2".into()));
        }
        if self.n_queries == 0 {
            return Err(MotorError::InvalidSpec("n_queries must be >= 1".into()));
        }
        if self.n_planted_relevant == 0 {
            return Err(MotorError::InvalidSpec(
                "n_planted_relevant must be >= 1".into(),
            ));
        }
        if self.n_planted_relevant > self.n_records {
            return Err(MotorError::InvalidSpec(
                "n_planted_relevant exceeds n_records".into(),
            ));
        }
        let (lo, hi) = self.findings_per_record;
        if lo == 0 || lo > hi {
            return Err(MotorError::InvalidSpec(format!(
                "findings_per_record range ({lo}, {hi}) must satisfy 1 <= lo <= hi"
            )));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(MotorError::InvalidSpec(format!(
                "noise_scale must be nonnegative, got {}",
                self.noise_scale
            )));
        }
        let reserved =
            self.n_queries * (self.n_planted_relevant + usize::from(self.inject_image_distractor));
        if reserved > self.n_records {
            return Err(MotorError::InvalidSpec(format!(
                "n_records = {} cannot hold {reserved} planted/distractor records",
                self.n_records
            )));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn to_embedding(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(v.iter().map(|&x| x as f32).collect()).expect("finite unit vector")
}

/// Unit vector at exactly `noise` distance from `v` (before renormalizing);
/// `noise = 0` returns `v` bit-exactly.
fn perturb(rng: &mut ChaCha8Rng, v: &[f64], noise: f64) -> Vec<f64> {
    if noise == 0.0 {
        return v.to_vec();
    }
    let direction = random_unit(rng, v.len());
    let moved: Vec<f64> = v
        .iter()
        .zip(&direction)
        .map(|(a, d)| a + noise * d)
        .collect();
    let norm = moved.iter().map(|x| x * x).sum::<f64>().sqrt();
    moved.iter().map(|x| x / norm).collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x_min: f64 = rng.random_range(0.0..0.7);
    let y_min: f64 = rng.random_range(0.0..0.7);
    let x_max = x_min + rng.random_range(0.05..0.3);
    let y_max = y_min + rng.random_range(0.05..0.3);
    BoundingBox::new(x_min, y_min, x_max, y_max).expect("generated box is valid")
}

/// A finding plus the f64 master copies of its embeddings (used to derive
/// perturbed planted copies without f32 round-tripping).
struct MasterFinding {
    description: String,
    bounding_box: BoundingBox,
    text: Vec<f64>,
    boxf: Vec<f64>,
}

fn random_findings(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticCorpusSpec,
    label: &str,
) -> Vec<MasterFinding> {
    let (lo, hi) = spec.findings_per_record;
    let n = rng.random_range(lo..=hi);
    (0..n)
        .map(|j| MasterFinding {
            description: format!("synthetic finding {j} of {label}"),
            bounding_box: random_box(rng),
            text: random_unit(rng, spec.text_dim),
            boxf: random_unit(rng, spec.visual_dim),
        })
        .collect()
}

fn to_caption(findings: &[MasterFinding]) -> GroundedCaption {
    GroundedCaption::new(
        findings
            .iter()
            .map(|f| {
                GroundedFinding::new(
                    f.description.clone(),
                    f.bounding_box,
                    to_embedding(&f.text),
                    to_embedding(&f.boxf),
                )
                .expect("synthetic finding is valid")
            })
            .collect(),
    )
}

/// Generate a corpus, queries, and the exact planted-relevance map.
///
/// Planted records perturb their query's image and finding embeddings with
/// `noise_scale` and copy the question embedding as their report embedding;
/// distractors and fillers draw independent random unit vectors.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records: Vec<CandidateRecord> = Vec::with_capacity(spec.n_records);
    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut planted = PlantedMap::new();

    for qi in 0..spec.n_queries {
        let query_id = format!("q{qi}");
        let image = random_unit(&mut rng, spec.visual_dim);
        let question = random_unit(&mut rng, spec.text_dim);
        let findings = random_findings(&mut rng, spec, &query_id);

        let query = QueryContext::new(
            to_embedding(&image),
            to_caption(&findings),
            format!("synthetic question {qi}"),
            to_embedding(&question),
        )?;

        let mut relevant_ids = Vec::with_capacity(spec.n_planted_relevant);
        for p in 0..spec.n_planted_relevant {
            let id = format!("q{qi}-planted{p}");
            let planted_findings: Vec<MasterFinding> = findings
                .iter()
                .map(|f| MasterFinding {
                    description: f.description.clone(),
                    bounding_box: f.bounding_box,
                    text: perturb(&mut rng, &f.text, spec.noise_scale),
                    boxf: perturb(&mut rng, &f.boxf, spec.noise_scale),
                })
                .collect();
            records.push(CandidateRecord::new(
                id.clone(),
                to_embedding(&perturb(&mut rng, &image, spec.noise_scale)),
                to_caption(&planted_findings),
                format!("relevant report for {query_id} ({p})"),
                to_embedding(&question),
            )?);
            relevant_ids.push(id);
        }

        if spec.inject_image_distractor {
            let id = format!("q{qi}-distractor");
            let distractor_findings = random_findings(&mut rng, spec, &id);
            records.push(CandidateRecord::new(
                id,
                to_embedding(&perturb(&mut rng, &image, spec.noise_scale * 0.25)),
                to_caption(&distractor_findings),
                format!("distractor report for {query_id}"),
                to_embedding(&random_unit(&mut rng, spec.text_dim)),
            )?);
        }

        planted.insert(query_id.clone(), relevant_ids);
        queries.push((query_id, query));
    }

    while records.len() < spec.n_records {
        let id = format!("filler{}", records.len());
        let findings = random_findings(&mut rng, spec, &id);
        records.push(CandidateRecord::new(
            id.clone(),
            to_embedding(&random_unit(&mut rng, spec.visual_dim)),
            to_caption(&findings),
            format!("filler report {id}"),
            to_embedding(&random_unit(&mut rng, spec.text_dim)),
        )?);
    }

    let store = CorpusStore::new(records, spec.visual_dim, spec.text_dim)?;
    Ok((store, queries, planted))
}

// ---------------------------------------------------------------------------
// Evaluation runs and ablation sweeps
// ---------------------------------------------------------------------------

/// Metrics of one configuration over a query set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub change_rate: f64,
    pub precision_at_s: f64,
    pub mrr: f64,
}

/// Run the pipeline for every query under `cfg` and aggregate metrics.
///
/// `change_depth` limits the change-rate comparison to the first positions
/// of each list (e.g. the top-s cut); `None` compares full top-k lists,
/// which is the stricter default.
pub fn evaluate_config(
    store: &CorpusStore,
    queries: &[(String, QueryContext)],
    planted: &PlantedMap,
    cfg: &RerankConfig,
    change_depth: Option<usize>,
) -> Result<EvalReport> {
    let mut initial = Vec::with_capacity(queries.len());
    let mut finals = Vec::with_capacity(queries.len());
    let mut ids = Vec::with_capacity(queries.len());
    for (id, q) in queries {
        let req = run_query(id, q, store, cfg)?;
        initial.push(initial_ids(&req));
        finals.push(final_ids(&req));
        ids.push(id.clone());
    }
    let metrics = ranking_metrics(&ids, &finals, planted, cfg.s)?;
    Ok(EvalReport {
        change_rate: change_rate_at_depth(&initial, &finals, change_depth)?,
        precision_at_s: metrics.precision_at_s,
        mrr: metrics.mrr,
    })
}

/// One row of an ablation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub precision_at_s: f64,
    pub mrr: f64,
    pub change_rate: f64,
}

/// Evaluate every (weight tuple, gamma) combination.
pub fn ablation_sweep(
    store: &CorpusStore,
    queries: &[(String, QueryContext)],
    planted: &PlantedMap,
    weight_tuples: &[(f64, f64, f64)],
    gamma_values: &[f64],
    base_cfg: &RerankConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(weight_tuples.len() * gamma_values.len());
    for &(alpha, beta, delta) in weight_tuples {
        for &gamma in gamma_values {
            let mut cfg = base_cfg.clone().with_weights(alpha, beta, delta);
            cfg.gamma = gamma;
            cfg.validate()?;
            let report = evaluate_config(store, queries, planted, &cfg, None)?;
            rows.push(AblationRow {
                alpha,
                beta,
                delta,
                gamma,
                precision_at_s: report.precision_at_s,
                mrr: report.mrr,
                change_rate: report.change_rate,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering with a header row: config columns, then metric columns.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("alpha,beta,delta,gamma,precision_at_s,mrr,change_rate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.alpha, r.beta, r.delta, r.gamma, r.precision_at_s, r.mrr, r.change_rate
        ));
    }
    out
}
