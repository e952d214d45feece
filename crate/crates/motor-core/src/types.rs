//! Domain types shared by all pipeline stages.
//!
//! Every type validates its invariants at construction, so holding a value
//! means the invariants hold. All types are immutable after construction and
//! safe to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{MotorError, Result};

/// Default dimensionality of image and box-feature embeddings.
pub const DEFAULT_VISUAL_DIM: usize = 768;
/// Default dimensionality of text embeddings (questions, reports, findings).
pub const DEFAULT_TEXT_DIM: usize = 512;

/// Absolute tolerance on `alpha + beta + delta = 1`, loose enough to survive
/// a decimal round-trip through text config.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A dense embedding with finite entries. Stored as f32 (matching the on-disk
/// format); all arithmetic on it is done in f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(MotorError::DimensionMismatch {
                context: "embedding".into(),
                expected: 1,
                got: 0,
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(MotorError::NonFiniteInput(format!(
                "embedding contains non-finite entry {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Entries widened to f64 for numerically sensitive downstream math.
    pub fn iter_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|&v| v as f64)
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = MotorError;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(e: EmbeddingVector) -> Self {
        e.values
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(MotorError::MalformedBox(format!(
                "non-finite coordinate in [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        if !(0.0 <= x_min && x_min < x_max && x_max <= 1.0) {
            return Err(MotorError::MalformedBox(format!(
                "x range [{x_min}, {x_max}] must satisfy 0 <= x_min < x_max <= 1"
            )));
        }
        if !(0.0 <= y_min && y_min < y_max && y_max <= 1.0) {
            return Err(MotorError::MalformedBox(format!(
                "y range [{y_min}, {y_max}] must satisfy 0 <= y_min < y_max <= 1"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = MotorError;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// One abnormality description with its localization and precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedFinding {
    pub description: String,
    pub bounding_box: BoundingBox,
    pub text_embedding: EmbeddingVector,
    pub box_embedding: EmbeddingVector,
}

impl GroundedFinding {
    pub fn new(
        description: impl Into<String>,
        bounding_box: BoundingBox,
        text_embedding: EmbeddingVector,
        box_embedding: EmbeddingVector,
    ) -> Result<Self> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(MotorError::EmptyDescription);
        }
        Ok(Self {
            description,
            bounding_box,
            text_embedding,
            box_embedding,
        })
    }
}

/// The grounded caption of one image: zero or more findings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundedCaption {
    findings: Vec<GroundedFinding>,
}

impl GroundedCaption {
    pub fn new(findings: Vec<GroundedFinding>) -> Self {
        Self { findings }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn findings(&self) -> &[GroundedFinding] {
        &self.findings
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn text_embeddings(&self) -> Vec<&EmbeddingVector> {
        self.findings.iter().map(|f| &f.text_embedding).collect()
    }

    pub fn box_embeddings(&self) -> Vec<&EmbeddingVector> {
        self.findings.iter().map(|f| &f.box_embedding).collect()
    }
}

/// A query: image embedding, grounded caption, and the question being asked.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub image_embedding: EmbeddingVector,
    pub caption: GroundedCaption,
    pub question_text: String,
    pub question_embedding: EmbeddingVector,
}

impl QueryContext {
    pub fn new(
        image_embedding: EmbeddingVector,
        caption: GroundedCaption,
        question_text: impl Into<String>,
        question_embedding: EmbeddingVector,
    ) -> Result<Self> {
        let question_text = question_text.into();
        if question_text.trim().is_empty() {
            return Err(MotorError::EmptyQuestion);
        }
        Ok(Self {
            image_embedding,
            caption,
            question_text,
            question_embedding,
        })
    }
}

/// One database element: image embedding, grounded caption, medical report.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub id: String,
    pub image_embedding: EmbeddingVector,
    pub caption: GroundedCaption,
    pub report_text: String,
    pub report_embedding: EmbeddingVector,
}

impl CandidateRecord {
    pub fn new(
        id: impl Into<String>,
        image_embedding: EmbeddingVector,
        caption: GroundedCaption,
        report_text: impl Into<String>,
        report_embedding: EmbeddingVector,
    ) -> Result<Self> {
        let id = id.into();
        let report_text = report_text.into();
        if report_text.trim().is_empty() {
            return Err(MotorError::EmptyReport(id));
        }
        Ok(Self {
            id,
            image_embedding,
            caption,
            report_text,
            report_embedding,
        })
    }
}

/// Which Sinkhorn formulation to run.
///
/// Plain matrix scaling is the default and is fine down to roughly
/// `gamma >= 0.05` for costs in [0, 2]; below that the kernel `exp(-C/gamma)`
/// underflows and the log-domain form must be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornMode {
    #[default]
    Plain,
    LogDomain,
}

/// Weights, regularization, retrieval depths, and solver tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    /// Weight of the question-report similarity term.
    pub alpha: f64,
    /// Weight of the finding-text similarity term.
    pub beta: f64,
    /// Weight of the finding-box visual similarity term.
    pub delta: f64,
    /// Entropic regularization strength.
    pub gamma: f64,
    /// First-stage retrieval depth.
    pub k: usize,
    /// Number of reports kept after re-ranking.
    pub s: usize,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_mode: SinkhornMode,
    /// Expected dimensionality of image and box-feature embeddings.
    pub visual_dim: usize,
    /// Expected dimensionality of text embeddings.
    pub text_dim: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.3,
            delta: 0.5,
            gamma: 1.0,
            k: 10,
            s: 5,
            sinkhorn_max_iters: 1000,
            sinkhorn_tol: 1e-6,
            sinkhorn_mode: SinkhornMode::Plain,
            visual_dim: DEFAULT_VISUAL_DIM,
            text_dim: DEFAULT_TEXT_DIM,
        }
    }
}

impl RerankConfig {
    /// Ablation preset that leans on finding-text similarity.
    pub fn text_prioritized() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.5,
            delta: 0.3,
            ..Self::default()
        }
    }

    /// Ablation preset that leans on box-feature similarity. This is also the
    /// main configuration.
    pub fn visual_prioritized() -> Self {
        Self::default()
    }

    pub fn with_weights(mut self, alpha: f64, beta: f64, delta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.delta = delta;
        self
    }

    pub fn with_dims(mut self, visual_dim: usize, text_dim: usize) -> Self {
        self.visual_dim = visual_dim;
        self.text_dim = text_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(MotorError::InvalidConfig(format!(
                    "{name} must be a nonnegative finite number, got {w}"
                )));
            }
        }
        let sum = self.alpha + self.beta + self.delta;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MotorError::InvalidConfig(format!(
                "alpha + beta + delta must equal 1 (got {sum})"
            )));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(MotorError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.k == 0 {
            return Err(MotorError::InvalidConfig("k must be >= 1".into()));
        }
        if self.s == 0 {
            return Err(MotorError::InvalidConfig("s must be >= 1".into()));
        }
        if self.s > self.k {
            return Err(MotorError::InvalidConfig(format!(
                "s must not exceed k ({} > {})",
                self.s, self.k
            )));
        }
        if self.sinkhorn_max_iters == 0 {
            return Err(MotorError::InvalidConfig(
                "sinkhorn_max_iters must be >= 1".into(),
            ));
        }
        if !self.sinkhorn_tol.is_finite() || self.sinkhorn_tol <= 0.0 {
            return Err(MotorError::InvalidConfig(format!(
                "sinkhorn_tol must be positive, got {}",
                self.sinkhorn_tol
            )));
        }
        if self.visual_dim == 0 || self.text_dim == 0 {
            return Err(MotorError::InvalidConfig(
                "embedding dims must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Check a query's embedding dims against the configured dims and return it
/// unchanged. Type-level invariants (finite entries, box ordering, non-empty
/// question) already hold by construction, so this is idempotent.
pub fn validate_query(q: QueryContext, cfg: &RerankConfig) -> Result<QueryContext> {
    cfg.validate()?;
    check_dim("query image embedding", &q.image_embedding, cfg.visual_dim)?;
    check_dim("question embedding", &q.question_embedding, cfg.text_dim)?;
    for (i, f) in q.caption.findings().iter().enumerate() {
        check_dim(
            &format!("finding {i} text embedding"),
            &f.text_embedding,
            cfg.text_dim,
        )?;
        check_dim(
            &format!("finding {i} box embedding"),
            &f.box_embedding,
            cfg.visual_dim,
        )?;
    }
    Ok(q)
}

fn check_dim(context: &str, e: &EmbeddingVector, expected: usize) -> Result<()> {
    if e.dim() != expected {
        return Err(MotorError::DimensionMismatch {
            context: context.into(),
            expected,
            got: e.dim(),
        });
    }
    Ok(())
}
