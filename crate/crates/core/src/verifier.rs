//! Claim verification: the LLM verifier prompt and decision parser, plus the
//! part/evidence label algebra used as an executable reference model.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, GenerationParams};
use crate::corpus::Claim;
use crate::retriever::{render_evidence, EvidenceList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TernaryLabel {
    Supported,
    Contradicted,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryLabel {
    Supported,
    Unsupported,
}

/// Outcome of the label algebra. The two inconclusive cases are kept apart:
/// `InconclusiveA` means some part is neither supported nor contradicted,
/// `InconclusiveB` means some part is both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlgebraLabel {
    Supported,
    Contradicted,
    InconclusiveA,
    InconclusiveB,
}

impl AlgebraLabel {
    pub fn ternary(self) -> TernaryLabel {
        match self {
            AlgebraLabel::Supported => TernaryLabel::Supported,
            AlgebraLabel::Contradicted => TernaryLabel::Contradicted,
            AlgebraLabel::InconclusiveA | AlgebraLabel::InconclusiveB => TernaryLabel::Inconclusive,
        }
    }
}

/// Reduction to the binary label used for scoring.
pub trait Collapse {
    fn collapse(self) -> BinaryLabel;
}

impl Collapse for TernaryLabel {
    fn collapse(self) -> BinaryLabel {
        match self {
            TernaryLabel::Supported => BinaryLabel::Supported,
            TernaryLabel::Contradicted | TernaryLabel::Inconclusive => BinaryLabel::Unsupported,
        }
    }
}

impl Collapse for AlgebraLabel {
    fn collapse(self) -> BinaryLabel {
        self.ternary().collapse()
    }
}

impl Collapse for BinaryLabel {
    fn collapse(self) -> BinaryLabel {
        self
    }
}

pub fn collapse<L: Collapse>(label: L) -> BinaryLabel {
    label.collapse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Judgment {
    Supports,
    Contradicts,
    Neither,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("a claim needs at least one part")]
    NoParts,
    #[error("part {part} has {got} judgments, expected {expected}")]
    Ragged { part: usize, got: usize, expected: usize },
}

/// Judgments of each evidence item on each part of a claim, indexed
/// `[part][evidence]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartJudgmentMatrix {
    parts: Vec<String>,
    judgments: Vec<Vec<Judgment>>,
}

impl PartJudgmentMatrix {
    pub fn new(parts: Vec<String>, judgments: Vec<Vec<Judgment>>) -> Result<Self, MatrixError> {
        if parts.is_empty() || judgments.len() != parts.len() {
            return Err(MatrixError::NoParts);
        }
        let expected = judgments[0].len();
        if let Some((part, row)) = judgments.iter().enumerate().find(|(_, r)| r.len() != expected) {
            return Err(MatrixError::Ragged {
                part,
                got: row.len(),
                expected,
            });
        }
        Ok(PartJudgmentMatrix { parts, judgments })
    }

    /// Builds a matrix with unnamed parts.
    pub fn from_rows(judgments: Vec<Vec<Judgment>>) -> Result<Self, MatrixError> {
        let parts = (0..judgments.len()).map(|i| format!("p{i}")).collect();
        Self::new(parts, judgments)
    }

    pub fn parts(&self) -> &[String] {
        &self.parts
    }

    pub fn rows(&self) -> &[Vec<Judgment>] {
        &self.judgments
    }

    pub fn evidence_len(&self) -> usize {
        self.judgments[0].len()
    }
}

/// Classifies a claim from its part/evidence judgments.
///
/// Supported needs every part supported by some evidence and contradicted by
/// none. Otherwise the first of Contradicted, InconclusiveB, InconclusiveA
/// whose witness part exists is returned.
pub fn classify_by_algebra(matrix: &PartJudgmentMatrix) -> AlgebraLabel {
    let mut any_contradicted = false;
    let mut any_conflicted = false;
    let mut any_unjudged = false;
    for row in matrix.rows() {
        let supported = row.contains(&Judgment::Supports);
        let contradicted = row.contains(&Judgment::Contradicts);
        match (supported, contradicted) {
            (true, false) => {}
            (false, true) => any_contradicted = true,
            (true, true) => any_conflicted = true,
            (false, false) => any_unjudged = true,
        }
    }
    if any_contradicted {
        AlgebraLabel::Contradicted
    } else if any_conflicted {
        AlgebraLabel::InconclusiveB
    } else if any_unjudged {
        AlgebraLabel::InconclusiveA
    } else {
        AlgebraLabel::Supported
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    Binary,
    Ternary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldOrder {
    #[default]
    Standard,
    /// Evidence, claim, short task, decision.
    Claude,
}

impl std::str::FromStr for LabelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(LabelMode::Binary),
            "ternary" => Ok(LabelMode::Ternary),
            o => Err(format!("unknown label mode {o:?} (expected binary or ternary)")),
        }
    }
}

impl std::str::FromStr for FieldOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(FieldOrder::Standard),
            "claude" | "claude-reordered" => Ok(FieldOrder::Claude),
            o => Err(format!("unknown field order {o:?} (expected standard or claude)")),
        }
    }
}

const TASK: &str = "You need to judge whether a claim is supported or contradicted by Google search results, or whether there is no enough information to make the judgement (i.e., inconclusive). When doing the task, take into consideration whether the link of the search result is of a trustworthy source. Mark your answer with ### signs.";

const SUPPORTED_DEF: &str = "Supported: A claim is supported by the search results if everything in the claim is supported and nothing is contradicted by the search results. There can be some search results that are not fully related to the claim.";

const TERNARY_DEFS: &str = "Contradicted: A claim is contradicted by the search results if something in the claim is contradicted by some search results. There should be no search result that supports the same part.

Inconclusive: A claim is inconclusive based on the search results if:
- a part of a claim cannot be verified by the search results,
- a part of a claim is supported and contradicted by different pieces of evidence,
- the entity/person mentioned in the claim has no clear referent (e.g., \"the approach\", \"Emily\", \"a book\").";

const BINARY_DEFS: &str = "Unsupported: If a claim is not supported by the search results, mark it as unsupported.";

const EXAMPLE_CLAIM: &str = "Vikings used their longships to transport livestock.";

const EXAMPLE_EVIDENCE: &str = "Search result 1
Title: How did the Vikings transport animals on their ships? - Quora
Content: The Vikings transported horses overseas in boats very similar to Viking longships, but with flat flooring built within the hulls, which allowed ...
Link: https://www.quora.com/How-did-the-Vikings-transport-animals-on-their-ships";

fn definitions(mode: LabelMode) -> String {
    match mode {
        LabelMode::Ternary => {
            format!("Below are the definitions of the three categories:\n\n{SUPPORTED_DEF}\n\n{TERNARY_DEFS}")
        }
        LabelMode::Binary => {
            format!("Below are the definitions of the two categories:\n\n{SUPPORTED_DEF}\n\n{BINARY_DEFS}")
        }
    }
}

fn examples(mode: LabelMode) -> String {
    let decision = match mode {
        LabelMode::Ternary => "Contradicted",
        LabelMode::Binary => "Unsupported",
    };
    format!("Here are some examples:\n\nClaim: {EXAMPLE_CLAIM}\n\n{EXAMPLE_EVIDENCE}\n\nYour decision: ###{decision}.###")
}

fn short_task(mode: LabelMode) -> &'static str {
    match mode {
        LabelMode::Ternary => "Task: Given the search results above, is the claim supported, contradicted, or inconclusive? Mark your decision with ### signs.",
        LabelMode::Binary => {
            "Task: Given the search results above, is the claim supported or unsupported? Mark your decision with ### signs."
        }
    }
}

pub fn assemble_verification_prompt(claim: &str, evidence_render: &str, mode: LabelMode, order: FieldOrder) -> String {
    let header = format!("{TASK}\n\n{}\n\n{}", definitions(mode), examples(mode));
    let evidence = evidence_render.trim_end();
    match order {
        FieldOrder::Standard => {
            format!("{header}\n\nYour task:\n\nClaim: {claim}\n\n{evidence}\n\nYour decision:")
        }
        FieldOrder::Claude => format!(
            "{header}\n\nYour task:\n\n{evidence}\n\nClaim: {claim}\n\n{}\n\nYour decision:",
            short_task(mode)
        ),
    }
}

/// A label as written by the verifier in the given mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Binary(BinaryLabel),
    Ternary(TernaryLabel),
}

impl Decision {
    pub fn binary(self) -> BinaryLabel {
        match self {
            Decision::Binary(b) => b,
            Decision::Ternary(t) => t.collapse(),
        }
    }

    pub fn ternary(self) -> Option<TernaryLabel> {
        match self {
            Decision::Ternary(t) => Some(t),
            Decision::Binary(_) => None,
        }
    }

    pub fn label_text(self) -> &'static str {
        match self {
            Decision::Binary(BinaryLabel::Supported) | Decision::Ternary(TernaryLabel::Supported) => "Supported",
            Decision::Binary(BinaryLabel::Unsupported) => "Unsupported",
            Decision::Ternary(TernaryLabel::Contradicted) => "Contradicted",
            Decision::Ternary(TernaryLabel::Inconclusive) => "Inconclusive",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label_text())
    }
}

pub fn mode_labels(mode: LabelMode) -> Vec<Decision> {
    match mode {
        LabelMode::Binary => vec![
            Decision::Binary(BinaryLabel::Supported),
            Decision::Binary(BinaryLabel::Unsupported),
        ],
        LabelMode::Ternary => vec![
            Decision::Ternary(TernaryLabel::Supported),
            Decision::Ternary(TernaryLabel::Contradicted),
            Decision::Ternary(TernaryLabel::Inconclusive),
        ],
    }
}

/// Spans enclosed by `###` markers, pairing markers left to right. A run
/// of three or more `#` counts as one marker.
fn marked_spans(raw: &str) -> Vec<&str> {
    let bytes = raw.as_bytes();
    let mut markers = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'#' {
            let start = i;
            while i < bytes.len() && bytes[i] == b'#' {
                i += 1;
            }
            if i - start >= 3 {
                markers.push((start, i));
            }
        } else {
            i += 1;
        }
    }
    markers.chunks_exact(2).map(|pair| &raw[pair[0].1..pair[1].0]).collect()
}

/// Reads the decision from the last `###...###` span.
pub fn parse_decision(raw: &str, mode: LabelMode) -> Option<Decision> {
    let span = *marked_spans(raw).last()?;
    let word = span.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    mode_labels(mode)
        .into_iter()
        .find(|d| d.label_text().eq_ignore_ascii_case(word))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub claim_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ternary: Option<TernaryLabel>,
    pub binary: BinaryLabel,
    pub raw_output: String,
    pub verifier_id: String,
    #[serde(default)]
    pub parse_failure: bool,
}

#[derive(Debug, Error)]
#[error("verification failed for claim {claim_id}: {source}")]
pub struct VerifyError {
    pub claim_id: String,
    #[source]
    pub source: BackendError,
}

pub fn verification_prompt_for(claim: &Claim, evidence: &EvidenceList, mode: LabelMode, order: FieldOrder) -> String {
    assemble_verification_prompt(&claim.text, &render_evidence(evidence), mode, order)
}

/// Verifies one claim with one backend call. Output that cannot be parsed
/// counts as Unsupported and is flagged.
pub fn verify_claim(
    claim: &Claim,
    evidence: &EvidenceList,
    backend: &dyn ChatBackend,
    params: GenerationParams,
    mode: LabelMode,
    order: FieldOrder,
) -> Result<VerificationRecord, VerifyError> {
    let prompt = verification_prompt_for(claim, evidence, mode, order);
    let raw = backend.complete(&prompt, params).map_err(|source| VerifyError {
        claim_id: claim.id.clone(),
        source,
    })?;
    Ok(record_from_output(&claim.id, raw, backend.id(), mode))
}

pub fn record_from_output(claim_id: &str, raw: String, verifier_id: &str, mode: LabelMode) -> VerificationRecord {
    let decision = parse_decision(&raw, mode);
    if decision.is_none() {
        log::warn!("claim {claim_id}: unparseable verifier output, recording Unsupported");
    }
    VerificationRecord {
        claim_id: claim_id.to_string(),
        ternary: decision.and_then(Decision::ternary),
        binary: decision.map_or(BinaryLabel::Unsupported, Decision::binary),
        raw_output: raw,
        verifier_id: verifier_id.to_string(),
        parse_failure: decision.is_none(),
    }
}

/// Record for an externally supplied judgment matrix.
pub fn record_from_matrix(claim_id: &str, matrix: &PartJudgmentMatrix) -> VerificationRecord {
    let label = classify_by_algebra(matrix);
    VerificationRecord {
        claim_id: claim_id.to_string(),
        ternary: Some(label.ternary()),
        binary: label.collapse(),
        raw_output: format!("{label:?}"),
        verifier_id: "reference-algebra".into(),
        parse_failure: false,
    }
}
