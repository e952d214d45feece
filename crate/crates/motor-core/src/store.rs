//! Corpus ingest, persistence, and the on-disk embedding formats.
//!
//! A corpus is stored as two files:
//!
//! - a records file: JSON Lines, one object per record with `id`,
//!   `report_text` (or `question_text` for query files), and `findings`
//!   (array of `{description, box: [x_min, y_min, x_max, y_max]}`);
//! - an embeddings file binding vectors to record ids, either the binary
//!   `MOTOREMB` container or a JSON fallback for small fixtures.
//!
//! Binary container layout, all integers little-endian:
//! 8-byte magic `MOTOREMB`, u32 entry count, then per entry: u32 id length +
//! UTF-8 id, u16 role tag (0 = image, 1 = report/question text, 2 = finding
//! text, 3 = finding box; roles 2 and 3 carry an extra u16 finding index),
//! u32 dim, then dim f32 values.
//!
//! Values are stored as f32; everything downstream computes in f64.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MotorError, Result};
use crate::types::{
    BoundingBox, CandidateRecord, EmbeddingVector, GroundedCaption, GroundedFinding, QueryContext,
    DEFAULT_TEXT_DIM, DEFAULT_VISUAL_DIM,
};

const MAGIC: &[u8; 8] = b"MOTOREMB";
const ROLE_IMAGE: u16 = 0;
const ROLE_TEXT: u16 = 1;
const ROLE_FINDING_TEXT: u16 = 2;
const ROLE_FINDING_BOX: u16 = 3;
/// Sanity cap on id length when reading the binary container.
const MAX_ID_BYTES: u32 = 1 << 20;

/// An immutable, validated collection of candidate records.
///
/// Re-ingesting produces a new store; existing references stay valid.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    records: Vec<CandidateRecord>,
    visual_dim: usize,
    text_dim: usize,
}

impl CorpusStore {
    /// Build a store with explicit dims, validating every record against them.
    pub fn new(records: Vec<CandidateRecord>, visual_dim: usize, text_dim: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if !seen.insert(r.id.clone()) {
                return Err(MotorError::DuplicateId(r.id.clone()));
            }
            check_record_dims(r, visual_dim, text_dim)?;
        }
        Ok(Self {
            records,
            visual_dim,
            text_dim,
        })
    }

    /// Build a store inferring dims from the first record; an empty record
    /// set falls back to the 768/512 defaults.
    pub fn from_records(records: Vec<CandidateRecord>) -> Result<Self> {
        let (visual_dim, text_dim) = match records.first() {
            Some(r) => (r.image_embedding.dim(), r.report_embedding.dim()),
            None => (DEFAULT_VISUAL_DIM, DEFAULT_TEXT_DIM),
        };
        Self::new(records, visual_dim, text_dim)
    }

    pub fn records(&self) -> &[CandidateRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&CandidateRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn visual_dim(&self) -> usize {
        self.visual_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }
}

fn check_record_dims(r: &CandidateRecord, visual_dim: usize, text_dim: usize) -> Result<()> {
    let check = |context: String, got: usize, expected: usize| -> Result<()> {
        if got != expected {
            return Err(MotorError::DimensionMismatch {
                context,
                expected,
                got,
            });
        }
        Ok(())
    };
    check(
        format!("record {} image embedding", r.id),
        r.image_embedding.dim(),
        visual_dim,
    )?;
    check(
        format!("record {} report embedding", r.id),
        r.report_embedding.dim(),
        text_dim,
    )?;
    for (i, f) in r.caption.findings().iter().enumerate() {
        check(
            format!("record {} finding {i} text embedding", r.id),
            f.text_embedding.dim(),
            text_dim,
        )?;
        check(
            format!("record {} finding {i} box embedding", r.id),
            f.box_embedding.dim(),
            visual_dim,
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Records file (JSON Lines)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FindingRow {
    description: String,
    #[serde(rename = "box")]
    bounding_box: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    question_text: Option<String>,
    #[serde(default)]
    findings: Vec<FindingRow>,
}

fn parse_rows(path: &Path) -> Result<Vec<RecordRow>> {
    let text =
        fs::read_to_string(path).map_err(|e| MotorError::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: RecordRow = serde_json::from_str(line).map_err(|e| MotorError::ParseError {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Embeddings file
// ---------------------------------------------------------------------------

/// All embeddings bound to one record id.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct EmbeddingSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    finding_text: BTreeMap<u16, Vec<f32>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    finding_box: BTreeMap<u16, Vec<f32>>,
}

type EmbeddingTable = BTreeMap<String, EmbeddingSet>;

fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let bytes = fs::read(path).map_err(|e| MotorError::io(path.display().to_string(), e))?;
    if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] == MAGIC {
        decode_binary(&bytes, path)
    } else {
        serde_json::from_slice(&bytes).map_err(|e| MotorError::ParseError {
            path: path.display().to_string(),
            line: 0,
            message: format!("embeddings JSON: {e}"),
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
    entry: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> MotorError {
        MotorError::ParseError {
            path: self.path.clone(),
            line: self.entry,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated container: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<EmbeddingTable> {
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
        path: path.display().to_string(),
        entry: 0,
    };
    let count = cur.u32()?;
    let mut table = EmbeddingTable::new();
    for entry in 0..count {
        cur.entry = entry as usize + 1;
        let id_len = cur.u32()?;
        if id_len > MAX_ID_BYTES {
            return Err(cur.fail(format!("id length {id_len} exceeds sanity cap")));
        }
        let id = std::str::from_utf8(cur.take(id_len as usize)?)
            .map_err(|e| cur.fail(format!("id is not UTF-8: {e}")))?
            .to_string();
        let role = cur.u16()?;
        let index = match role {
            ROLE_FINDING_TEXT | ROLE_FINDING_BOX => Some(cur.u16()?),
            _ => None,
        };
        let dim = cur.u32()? as usize;
        let raw = cur.take(dim * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let set = table.entry(id.clone()).or_default();
        let slot_taken = match (role, index) {
            (ROLE_IMAGE, _) => set.image.replace(values).is_some(),
            (ROLE_TEXT, _) => set.text.replace(values).is_some(),
            (ROLE_FINDING_TEXT, Some(i)) => set.finding_text.insert(i, values).is_some(),
            (ROLE_FINDING_BOX, Some(i)) => set.finding_box.insert(i, values).is_some(),
            _ => return Err(cur.fail(format!("unknown role tag {role}"))),
        };
        if slot_taken {
            return Err(cur.fail(format!(
                "duplicate embedding entry for id {id:?} role {role}"
            )));
        }
    }
    if cur.pos != bytes.len() {
        return Err(cur.fail(format!(
            "{} trailing bytes after last entry",
            bytes.len() - cur.pos
        )));
    }
    Ok(table)
}

fn encode_binary(table: &EmbeddingTable) -> Vec<u8> {
    let mut entries: Vec<(&str, u16, Option<u16>, &[f32])> = Vec::new();
    for (id, set) in table {
        if let Some(v) = &set.image {
            entries.push((id, ROLE_IMAGE, None, v));
        }
        if let Some(v) = &set.text {
            entries.push((id, ROLE_TEXT, None, v));
        }
        for (&i, v) in &set.finding_text {
            entries.push((id, ROLE_FINDING_TEXT, Some(i), v));
        }
        for (&i, v) in &set.finding_box {
            entries.push((id, ROLE_FINDING_BOX, Some(i), v));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (id, role, index, values) in entries {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&role.to_le_bytes());
        if let Some(i) = index {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Binding rows to embeddings
// ---------------------------------------------------------------------------

fn embedding_from(
    values: Option<Vec<f32>>,
    id: &str,
    what: &str,
    line: usize,
    path: &Path,
) -> Result<EmbeddingVector> {
    let values = values.ok_or_else(|| MotorError::MissingEmbedding {
        id: id.to_string(),
        detail: what.to_string(),
    })?;
    EmbeddingVector::new(values).map_err(|e| MotorError::ParseError {
        path: path.display().to_string(),
        line,
        message: format!("{what} for {id:?}: {e}"),
    })
}

fn bind_caption(
    row: &RecordRow,
    set: &mut EmbeddingSet,
    line: usize,
    records_path: &Path,
) -> Result<GroundedCaption> {
    let mut findings = Vec::with_capacity(row.findings.len());
    for (i, f) in row.findings.iter().enumerate() {
        let idx = u16::try_from(i).map_err(|_| MotorError::ParseError {
            path: records_path.display().to_string(),
            line,
            message: format!("record {:?} has more than {} findings", row.id, u16::MAX),
        })?;
        let b = f.bounding_box;
        let bounding_box =
            BoundingBox::new(b[0], b[1], b[2], b[3]).map_err(|e| MotorError::ParseError {
                path: records_path.display().to_string(),
                line,
                message: format!("finding {i} of {:?}: {e}", row.id),
            })?;
        let text_embedding = embedding_from(
            set.finding_text.remove(&idx),
            &row.id,
            &format!("finding {i} text embedding"),
            line,
            records_path,
        )?;
        let box_embedding = embedding_from(
            set.finding_box.remove(&idx),
            &row.id,
            &format!("finding {i} box embedding"),
            line,
            records_path,
        )?;
        let finding = GroundedFinding::new(
            f.description.clone(),
            bounding_box,
            text_embedding,
            box_embedding,
        )
        .map_err(|e| MotorError::ParseError {
            path: records_path.display().to_string(),
            line,
            message: format!("finding {i} of {:?}: {e}", row.id),
        })?;
        findings.push(finding);
    }
    Ok(GroundedCaption::new(findings))
}

/// Ingest a corpus from a records file and an embeddings file.
///
/// Returns one [`CandidateRecord`] per input row, in file order, with
/// embeddings bound by id. Dims are inferred from the first record.
pub fn ingest_corpus(records_path: &Path, embeddings_path: &Path) -> Result<CorpusStore> {
    let rows = parse_rows(records_path)?;
    let table = read_embeddings(embeddings_path)?;
    let mut records = Vec::with_capacity(rows.len());
    for (idx, row) in rows.iter().enumerate() {
        let line = idx + 1;
        let report_text = row
            .report_text
            .clone()
            .ok_or_else(|| MotorError::ParseError {
                path: records_path.display().to_string(),
                line,
                message: format!("record {:?} has no report_text", row.id),
            })?;
        let mut set = table.get(&row.id).cloned().unwrap_or_default();
        let image_embedding = embedding_from(
            set.image.take(),
            &row.id,
            "image embedding",
            line,
            records_path,
        )?;
        let report_embedding = embedding_from(
            set.text.take(),
            &row.id,
            "report embedding",
            line,
            records_path,
        )?;
        let caption = bind_caption(row, &mut set, line, records_path)?;
        let record = CandidateRecord::new(
            row.id.clone(),
            image_embedding,
            caption,
            report_text,
            report_embedding,
        )
        .map_err(|e| MotorError::ParseError {
            path: records_path.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    CorpusStore::from_records(records)
}

/// Load query contexts from a records-shaped file (with `question_text`)
/// plus its embeddings file. Returns `(id, query)` pairs in file order.
pub fn load_queries(
    records_path: &Path,
    embeddings_path: &Path,
) -> Result<Vec<(String, QueryContext)>> {
    let rows = parse_rows(records_path)?;
    let table = read_embeddings(embeddings_path)?;
    let mut seen = std::collections::HashSet::new();
    let mut queries = Vec::with_capacity(rows.len());
    for (idx, row) in rows.iter().enumerate() {
        let line = idx + 1;
        if !seen.insert(row.id.clone()) {
            return Err(MotorError::DuplicateId(row.id.clone()));
        }
        let question_text = row
            .question_text
            .clone()
            .ok_or_else(|| MotorError::ParseError {
                path: records_path.display().to_string(),
                line,
                message: format!("query {:?} has no question_text", row.id),
            })?;
        let mut set = table.get(&row.id).cloned().unwrap_or_default();
        let image_embedding = embedding_from(
            set.image.take(),
            &row.id,
            "image embedding",
            line,
            records_path,
        )?;
        let question_embedding = embedding_from(
            set.text.take(),
            &row.id,
            "question embedding",
            line,
            records_path,
        )?;
        let caption = bind_caption(row, &mut set, line, records_path)?;
        let query = QueryContext::new(image_embedding, caption, question_text, question_embedding)
            .map_err(|e| MotorError::ParseError {
                path: records_path.display().to_string(),
                line,
                message: e.to_string(),
            })?;
        queries.push((row.id.clone(), query));
    }
    Ok(queries)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Write bytes atomically: to a sibling temp file, then rename into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    let mut file =
        fs::File::create(&tmp).map_err(|e| MotorError::io(tmp.display().to_string(), e))?;
    file.write_all(bytes)
        .map_err(|e| MotorError::io(tmp.display().to_string(), e))?;
    file.sync_all()
        .map_err(|e| MotorError::io(tmp.display().to_string(), e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| MotorError::io(path.display().to_string(), e))?;
    Ok(())
}

fn caption_rows(caption: &GroundedCaption) -> Vec<FindingRow> {
    caption
        .findings()
        .iter()
        .map(|f| FindingRow {
            description: f.description.clone(),
            bounding_box: f.bounding_box.into(),
        })
        .collect()
}

fn caption_into_set(caption: &GroundedCaption, set: &mut EmbeddingSet) {
    for (i, f) in caption.findings().iter().enumerate() {
        set.finding_text
            .insert(i as u16, f.text_embedding.values().to_vec());
        set.finding_box
            .insert(i as u16, f.box_embedding.values().to_vec());
    }
}

/// Persist a corpus as a records file plus a binary embeddings container.
/// The round trip through [`ingest_corpus`] is bit-exact.
pub fn save_corpus(store: &CorpusStore, records_path: &Path, embeddings_path: &Path) -> Result<()> {
    let mut lines = String::new();
    let mut table = EmbeddingTable::new();
    for r in store.records() {
        let row = RecordRow {
            id: r.id.clone(),
            report_text: Some(r.report_text.clone()),
            question_text: None,
            findings: caption_rows(&r.caption),
        };
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');

        let set = table.entry(r.id.clone()).or_default();
        set.image = Some(r.image_embedding.values().to_vec());
        set.text = Some(r.report_embedding.values().to_vec());
        caption_into_set(&r.caption, set);
    }
    write_atomic(records_path, lines.as_bytes())?;
    write_atomic(embeddings_path, &encode_binary(&table))?;
    Ok(())
}

/// Persist queries in the same two-file shape (`question_text` rows).
pub fn save_queries(
    queries: &[(String, QueryContext)],
    records_path: &Path,
    embeddings_path: &Path,
) -> Result<()> {
    let mut lines = String::new();
    let mut table = EmbeddingTable::new();
    for (id, q) in queries {
        let row = RecordRow {
            id: id.clone(),
            report_text: None,
            question_text: Some(q.question_text.clone()),
            findings: caption_rows(&q.caption),
        };
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');

        let set = table.entry(id.clone()).or_default();
        set.image = Some(q.image_embedding.values().to_vec());
        set.text = Some(q.question_embedding.values().to_vec());
        caption_into_set(&q.caption, set);
    }
    write_atomic(records_path, lines.as_bytes())?;
    write_atomic(embeddings_path, &encode_binary(&table))?;
    Ok(())
}
