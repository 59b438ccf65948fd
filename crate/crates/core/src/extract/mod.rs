//! Aspect extraction: tokenizer, tagger, gazetteer and sentence patterns.

pub mod gazetteer;
pub mod patterns;
pub mod pos;
pub mod tokenize;

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gazetteer::{match_gazetteer, Candidate, Gazetteer, GazetteerEntry};
pub use patterns::{apply_sentence_patterns, dissect, Dissection, SentencePattern};
pub use pos::{pos_tag, PosTag};
pub use tokenize::{tokenize, Token};

use crate::corpus::CveRecord;

pub const ASPECTS_HEADER: &str = "vaf-aspects/1";

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("rule line {line}: {message}")]
    Rule { line: usize, message: String },
    #[error("pattern {pattern:?} does not compile: {message}")]
    Pattern { pattern: String, message: String },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: line {line}: {message}", path.display())]
    CorruptLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectKind {
    VulnerabilityType,
    RootCause,
    AffectedProduct,
    Impact,
    AttackerType,
    AttackVector,
}

impl AspectKind {
    pub const ALL: [AspectKind; 6] = [
        AspectKind::VulnerabilityType,
        AspectKind::RootCause,
        AspectKind::AffectedProduct,
        AspectKind::Impact,
        AspectKind::AttackerType,
        AspectKind::AttackVector,
    ];

    /// Kinds with a class taxonomy, i.e. the prediction targets.
    pub const TARGETS: [AspectKind; 4] = [
        AspectKind::VulnerabilityType,
        AspectKind::RootCause,
        AspectKind::AttackVector,
        AspectKind::AttackerType,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AspectKind::VulnerabilityType => "vulnerability_type",
            AspectKind::RootCause => "root_cause",
            AspectKind::AffectedProduct => "affected_product",
            AspectKind::Impact => "impact",
            AspectKind::AttackerType => "attacker_type",
            AspectKind::AttackVector => "attack_vector",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            AspectKind::VulnerabilityType => "Vulnerability type",
            AspectKind::RootCause => "Root cause",
            AspectKind::AffectedProduct => "Affected product",
            AspectKind::Impact => "Impact",
            AspectKind::AttackerType => "Attacker type",
            AspectKind::AttackVector => "Attack vector",
        }
    }
}

impl fmt::Display for AspectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AspectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match key.as_str() {
            "vulnerability_type" | "vt" | "type" => AspectKind::VulnerabilityType,
            "root_cause" | "rc" => AspectKind::RootCause,
            "affected_product" | "product" | "ap" => AspectKind::AffectedProduct,
            "impact" | "im" => AspectKind::Impact,
            "attacker_type" | "attacker" | "at" => AspectKind::AttackerType,
            "attack_vector" | "vector" | "av" => AspectKind::AttackVector,
            _ => return Err(format!("unknown aspect kind {s:?}")),
        })
    }
}

/// One extracted phrase, in character offsets into the normalized description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectSpan {
    pub kind: AspectKind,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// The (at most) six aspects of one CVE.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AspectSet {
    pub cve_id: String,
    /// The normalized description the offsets refer to.
    pub description: String,
    spans: [Option<AspectSpan>; 6],
}

impl AspectSet {
    pub fn empty(cve_id: &str, description: &str) -> Self {
        Self {
            cve_id: cve_id.to_string(),
            description: description.to_string(),
            spans: Default::default(),
        }
    }

    /// Builds a set from byte ranges. Ranges must not overlap.
    pub(crate) fn from_byte_spans(
        cve_id: &str,
        description: &str,
        spans: &[(AspectKind, Range<usize>)],
    ) -> Self {
        let mut set = Self::empty(cve_id, description);
        for (kind, r) in spans {
            let start = description[..r.start].chars().count();
            let text = description[r.clone()].to_string();
            let end = start + text.chars().count();
            set.spans[kind.ordinal()] = Some(AspectSpan {
                kind: *kind,
                start,
                end,
                text,
            });
        }
        set
    }

    /// Inserts a span after checking offsets, text and exclusivity.
    pub fn insert(&mut self, span: AspectSpan) -> Result<(), String> {
        let chars: Vec<char> = self.description.chars().collect();
        if !(span.start < span.end && span.end <= chars.len()) {
            return Err(format!("bad offsets {}..{}", span.start, span.end));
        }
        let slice: String = chars[span.start..span.end].iter().collect();
        if slice != span.text {
            return Err(format!("span text {:?} != description slice {slice:?}", span.text));
        }
        if let Some(o) = self
            .spans()
            .find(|o| o.kind != span.kind && o.start < span.end && span.start < o.end)
        {
            return Err(format!("{} overlaps {}", span.kind, o.kind));
        }
        let k = span.kind.ordinal();
        self.spans[k] = Some(span);
        Ok(())
    }

    pub fn get(&self, kind: AspectKind) -> Option<&AspectSpan> {
        self.spans[kind.ordinal()].as_ref()
    }

    pub fn text(&self, kind: AspectKind) -> Option<&str> {
        self.get(kind).map(|s| s.text.as_str())
    }

    pub fn has(&self, kind: AspectKind) -> bool {
        self.spans[kind.ordinal()].is_some()
    }

    pub fn remove(&mut self, kind: AspectKind) -> Option<AspectSpan> {
        self.spans[kind.ordinal()].take()
    }

    /// Present spans in kind order.
    pub fn spans(&self) -> impl Iterator<Item = &AspectSpan> {
        self.spans.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.spans().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Present kinds sorted by start offset.
    pub fn order(&self) -> Vec<AspectKind> {
        let mut v: Vec<&AspectSpan> = self.spans().collect();
        v.sort_by_key(|s| (s.start, s.kind.ordinal()));
        v.into_iter().map(|s| s.kind).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct AspectLine {
    id: String,
    description: String,
    spans: Vec<AspectSpan>,
    order: Vec<AspectKind>,
}

impl Serialize for AspectSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        AspectLine {
            id: self.cve_id.clone(),
            description: self.description.clone(),
            spans: self.spans().cloned().collect(),
            order: self.order(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AspectSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let line = AspectLine::deserialize(d)?;
        let mut set = AspectSet::empty(&line.id, &line.description);
        for span in line.spans {
            set.insert(span).map_err(serde::de::Error::custom)?;
        }
        if set.order() != line.order {
            return Err(serde::de::Error::custom("order disagrees with span offsets"));
        }
        Ok(set)
    }
}

/// Full pipeline output plus the intermediate candidate lists.
#[derive(Debug, Clone)]
pub struct ExtractionTrace {
    pub tags: Vec<PosTag>,
    pub candidates: Vec<Candidate>,
    pub dissection: Dissection,
}

/// Traces extraction on raw description text.
pub fn trace_text(cve_id: &str, description: &str, gazetteer: &Gazetteer) -> ExtractionTrace {
    let tokens = tokenize(description);
    let words: Vec<&str> = tokens.iter().map(|t| t.text).collect();
    let tags = pos_tag(&words);
    let candidates = match_gazetteer(description, gazetteer);
    let dissection = dissect(cve_id, &candidates, description, &tokens, &tags);
    ExtractionTrace {
        tags,
        candidates,
        dissection,
    }
}

pub fn extract_text(cve_id: &str, description: &str, gazetteer: &Gazetteer) -> AspectSet {
    trace_text(cve_id, description, gazetteer).dissection.set
}

/// tokenize → pos_tag → match_gazetteer → apply_sentence_patterns.
pub fn extract_aspects(record: &CveRecord, gazetteer: &Gazetteer) -> AspectSet {
    extract_text(&record.id, &record.description, gazetteer)
}

pub fn store_aspects(sets: &[AspectSet], path: &Path) -> Result<usize, ExtractError> {
    let io = |e: std::io::Error| ExtractError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{ASPECTS_HEADER}").map_err(io)?;
    for set in sets {
        let line = serde_json::to_string(set).expect("aspect sets serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(sets.len())
}

pub fn load_aspects(path: &Path) -> Result<Vec<AspectSet>, ExtractError> {
    let io = |e: std::io::Error| ExtractError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let corrupt = |line: usize, message: String| ExtractError::CorruptLine {
        path: path.to_path_buf(),
        line,
        message,
    };
    let r = BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io)?;
        if i == 0 {
            if line.trim() != ASPECTS_HEADER {
                return Err(corrupt(1, format!("expected header {ASPECTS_HEADER}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| corrupt(i + 1, e.to_string()))?);
    }
    Ok(out)
}
