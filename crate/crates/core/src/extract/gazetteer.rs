use std::path::Path;
use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};

use super::{AspectKind, ExtractError};
use crate::dataset::LabelTaxonomy;

const BUILTIN_GAZETTEER: &str = include_str!("../../data/gazetteer.tsv");

/// One parsed `kind<TAB>label<TAB>priority<TAB>regex` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleLine {
    pub line: usize,
    pub kind: AspectKind,
    pub label: Option<String>,
    pub priority: u32,
    pub pattern: String,
}

/// Parses the tab-separated rule format shared by gazetteer and taxonomy files.
/// Blank lines and `#` comments are skipped.
pub fn parse_rule_lines(text: &str) -> Result<Vec<RuleLine>, ExtractError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(ExtractError::Rule {
                line,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let kind: AspectKind = fields[0]
            .trim()
            .parse()
            .map_err(|message| ExtractError::Rule { line, message })?;
        let priority = fields[2]
            .trim()
            .parse::<u32>()
            .map_err(|e| ExtractError::Rule {
                line,
                message: format!("bad priority {:?}: {e}", fields[2]),
            })?;
        let label = Some(fields[1].trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string);
        out.push(RuleLine {
            line,
            kind,
            label,
            priority,
            pattern: fields[3].trim_end_matches(['\r', '\n']).to_string(),
        });
    }
    Ok(out)
}

/// Compiles a rule regex: case-insensitive unless prefixed with `(?c)`.
pub fn compile_rule(pattern: &str) -> Result<Regex, regex::Error> {
    match pattern.strip_prefix("(?c)") {
        Some(rest) => Regex::new(rest),
        None => RegexBuilder::new(pattern).case_insensitive(true).build(),
    }
}

#[derive(Debug, Clone)]
pub struct GazetteerEntry {
    pub kind: AspectKind,
    pub label: Option<String>,
    pub pattern: String,
    pub priority: u32,
    regex: Regex,
}

impl GazetteerEntry {
    pub fn new(
        kind: AspectKind,
        label: Option<&str>,
        priority: u32,
        pattern: &str,
    ) -> Result<Self, ExtractError> {
        let regex = compile_rule(pattern).map_err(|e| ExtractError::Pattern {
            pattern: pattern.to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            kind,
            label: label.filter(|l| !l.is_empty()).map(str::to_string),
            pattern: pattern.to_string(),
            priority,
            regex,
        })
    }
}

/// A curated phrase dictionary: regex patterns per aspect kind.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
}

impl Gazetteer {
    /// The seed gazetteer shipped with the crate.
    pub fn builtin() -> Self {
        static BUILTIN: OnceLock<Gazetteer> = OnceLock::new();
        BUILTIN
            .get_or_init(|| {
                Self::parse(BUILTIN_GAZETTEER, &LabelTaxonomy::builtin_all())
                    .expect("builtin gazetteer is valid")
            })
            .clone()
    }

    /// Parses gazetteer text, checking labels against the taxonomies of their kinds.
    pub fn parse(text: &str, taxonomies: &[LabelTaxonomy]) -> Result<Self, ExtractError> {
        let mut g = Gazetteer::default();
        for rule in parse_rule_lines(text)? {
            let entry = GazetteerEntry::new(
                rule.kind,
                rule.label.as_deref(),
                rule.priority,
                &rule.pattern,
            )
            .map_err(|e| ExtractError::Rule {
                line: rule.line,
                message: e.to_string(),
            })?;
            if let Some(label) = &entry.label {
                let known = taxonomies
                    .iter()
                    .find(|t| t.kind == entry.kind)
                    .is_some_and(|t| t.index_of(label).is_some());
                if !known {
                    return Err(ExtractError::Rule {
                        line: rule.line,
                        message: format!("label {label:?} is not a {} class", entry.kind),
                    });
                }
            }
            g.entries.push(entry);
        }
        Ok(g)
    }

    pub fn load(path: &Path, taxonomies: &[LabelTaxonomy]) -> Result<Self, ExtractError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExtractError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, taxonomies)
    }

    pub fn push(&mut self, entry: GazetteerEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A gazetteer hit, in byte offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub kind: AspectKind,
    pub label: Option<String>,
    pub priority: u32,
    pub start: usize,
    pub end: usize,
}

impl Candidate {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Candidate) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// All gazetteer matches, with overlaps inside one kind resolved by
/// (higher priority, longer span, earlier start). Sorted by start offset.
pub fn match_gazetteer(description: &str, gazetteer: &Gazetteer) -> Vec<Candidate> {
    let mut raw: Vec<Candidate> = Vec::new();
    for entry in &gazetteer.entries {
        for m in entry.regex.find_iter(description) {
            if m.start() == m.end() {
                continue;
            }
            raw.push(Candidate {
                kind: entry.kind,
                label: entry.label.clone(),
                priority: entry.priority,
                start: m.start(),
                end: m.end(),
            });
        }
    }
    raw.sort_by(|a, b| {
        b.priority
            .cmp(&a.priority)
            .then(b.len().cmp(&a.len()))
            .then(a.start.cmp(&b.start))
    });
    let mut accepted: Vec<Candidate> = Vec::new();
    for c in raw {
        if accepted.iter().any(|a| a.kind == c.kind && a.overlaps(&c)) {
            continue;
        }
        accepted.push(c);
    }
    accepted.sort_by_key(|c| (c.start, c.kind.ordinal(), c.end));
    accepted
}
