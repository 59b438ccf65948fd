//! CVE feed ingestion and the line-delimited record store.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

pub const CORPUS_HEADER: &str = "vaf-corpus/1";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed {format} feed at byte {offset}: {message}")]
    Container {
        format: &'static str,
        offset: u64,
        message: String,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    CorruptLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn cve_id_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^CVE-(\d{4})-(\d{4,})$").unwrap())
}

/// One published CVE entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CveRecord {
    pub id: String,
    pub description: String,
    pub year: u16,
    pub source: String,
}

impl CveRecord {
    /// Builds a record, normalizing the description and deriving the year from the id.
    pub fn new(id: &str, description: &str, source: &str) -> Result<Self, CorpusError> {
        let id = id.trim();
        let year = year_of(id)
            .ok_or_else(|| CorpusError::InvalidRecord(format!("bad CVE identifier {id:?}")))?;
        let description = normalize_description(description);
        if description.is_empty() {
            return Err(CorpusError::InvalidRecord(format!("{id}: empty description")));
        }
        Ok(Self {
            id: id.to_string(),
            description,
            year,
            source: source.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        match year_of(&self.id) {
            None => Err(CorpusError::InvalidRecord(format!(
                "bad CVE identifier {:?}",
                self.id
            ))),
            Some(y) if y != self.year => Err(CorpusError::InvalidRecord(format!(
                "{}: year {} does not match identifier",
                self.id, self.year
            ))),
            Some(_) if self.description.trim().is_empty() => Err(CorpusError::InvalidRecord(
                format!("{}: empty description", self.id),
            )),
            Some(_) => Ok(()),
        }
    }
}

/// Year embedded in a well-formed CVE identifier.
pub fn year_of(id: &str) -> Option<u16> {
    cve_id_pattern()
        .captures(id)
        .and_then(|c| c[1].parse::<u16>().ok())
}

/// Unicode NFC, whitespace runs collapsed to one space, ends trimmed. Case is kept.
pub fn normalize_description(text: &str) -> String {
    let composed: String = text.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Decodes raw bytes (invalid sequences become U+FFFD) and normalizes.
/// Returns the normalized text and the number of invalid sequences replaced.
pub fn normalize_bytes(raw: &[u8]) -> (String, usize) {
    let mut decoded = String::with_capacity(raw.len());
    let mut replaced = 0;
    for chunk in raw.utf8_chunks() {
        decoded.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            decoded.push(char::REPLACEMENT_CHARACTER);
            replaced += 1;
        }
    }
    (normalize_description(&decoded), replaced)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedFormat {
    /// The CVE list CSV export (`Name,Status,Description,...`).
    CsvList,
    /// NVD JSON feeds, either the 1.1 `CVE_Items` layout or the 2.0 `vulnerabilities` layout.
    JsonFeed,
}

impl FeedFormat {
    pub fn tag(self) -> &'static str {
        match self {
            FeedFormat::CsvList => "csv-list",
            FeedFormat::JsonFeed => "json-feed",
        }
    }
}

impl std::str::FromStr for FeedFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv-list" | "csv" => Ok(FeedFormat::CsvList),
            "json-feed" | "json" => Ok(FeedFormat::JsonFeed),
            other => Err(format!("unknown feed format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedReport {
    pub records: Vec<CveRecord>,
    /// Entries that could not be turned into a valid record.
    pub malformed: usize,
    /// RESERVED / REJECT entries.
    pub withdrawn: usize,
    /// Earlier occurrences replaced by a later entry with the same id.
    pub duplicates: usize,
    /// Invalid UTF-8 sequences replaced while decoding descriptions.
    pub replaced_bytes: usize,
}

enum RawEntry {
    Entry { id: String, description: Vec<u8> },
    Withdrawn,
    Malformed,
}

fn is_withdrawn(description: &[u8]) -> bool {
    let text = String::from_utf8_lossy(description);
    let t = text.trim_start();
    t.starts_with("** RESERVED **") || t.starts_with("** REJECT **")
}

/// Parses a feed body into records. Withdrawn entries are dropped and a repeated
/// id keeps its last occurrence (at that occurrence's position).
pub fn parse_cve_feed(raw: &[u8], format: FeedFormat) -> Result<FeedReport, CorpusError> {
    let entries = match format {
        FeedFormat::CsvList => csv_entries(raw)?,
        FeedFormat::JsonFeed => json_entries(raw)?,
    };

    let mut report = FeedReport::default();
    let mut staged: Vec<CveRecord> = Vec::new();
    for entry in entries {
        match entry {
            RawEntry::Withdrawn => report.withdrawn += 1,
            RawEntry::Malformed => report.malformed += 1,
            RawEntry::Entry { id, description } => {
                if is_withdrawn(&description) {
                    report.withdrawn += 1;
                    continue;
                }
                let (text, replaced) = normalize_bytes(&description);
                report.replaced_bytes += replaced;
                let text = text
                    .strip_prefix("** DISPUTED ** ")
                    .map(str::to_string)
                    .unwrap_or(text);
                match CveRecord::new(&id, &text, format.tag()) {
                    Ok(rec) => staged.push(rec),
                    Err(_) => report.malformed += 1,
                }
            }
        }
    }

    let mut last: HashMap<&str, usize> = HashMap::new();
    for (i, r) in staged.iter().enumerate() {
        last.insert(r.id.as_str(), i);
    }
    let keep: Vec<bool> = staged
        .iter()
        .enumerate()
        .map(|(i, r)| last[r.id.as_str()] == i)
        .collect();
    report.duplicates = keep.iter().filter(|k| !**k).count();
    report.records = staged
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    Ok(report)
}

fn csv_entries(raw: &[u8]) -> Result<Vec<RawEntry>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(raw);
    let mut name_col = 0usize;
    let mut desc_col: Option<usize> = None;
    let mut out = Vec::new();
    for row in reader.byte_records() {
        let row = row.map_err(|e| CorpusError::Container {
            format: "csv-list",
            offset: e.position().map(|p| p.byte()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let fields: Vec<String> = row
            .iter()
            .map(|f| String::from_utf8_lossy(f).trim().to_string())
            .collect();
        if let Some(d) = fields
            .iter()
            .position(|f| f.eq_ignore_ascii_case("description"))
        {
            desc_col = Some(d);
            name_col = fields
                .iter()
                .position(|f| {
                    ["name", "id", "cve_id", "cve"]
                        .iter()
                        .any(|h| f.eq_ignore_ascii_case(h))
                })
                .unwrap_or(0);
            continue;
        }
        let Some(name) = fields.get(name_col) else {
            continue;
        };
        // Preamble lines of the export ("CVE Version ...", "Date: ...") are not entries.
        if !name.starts_with("CVE-") {
            continue;
        }
        let col = desc_col.unwrap_or(if row.len() >= 3 { 2 } else { 1 });
        match row.get(col) {
            Some(desc) => out.push(RawEntry::Entry {
                id: name.clone(),
                description: desc.to_vec(),
            }),
            None => out.push(RawEntry::Malformed),
        }
    }
    Ok(out)
}

fn byte_offset(raw: &[u8], line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let mut current = 1usize;
    let mut start = 0usize;
    for (i, b) in raw.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)) as u64
}

fn english_text(list: Option<&Value>) -> Option<Vec<u8>> {
    let list = list?.as_array()?;
    list.iter()
        .find(|d| d.get("lang").and_then(Value::as_str) == Some("en"))
        .or_else(|| list.first())
        .and_then(|d| d.get("value"))
        .and_then(Value::as_str)
        .map(|s| s.as_bytes().to_vec())
}

fn json_entries(raw: &[u8]) -> Result<Vec<RawEntry>, CorpusError> {
    if raw.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    let root: Value = serde_json::from_slice(raw).map_err(|e| CorpusError::Container {
        format: "json-feed",
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let items = root
        .get("CVE_Items")
        .or_else(|| root.get("vulnerabilities"))
        .and_then(Value::as_array)
        .or_else(|| root.as_array())
        .ok_or_else(|| CorpusError::Container {
            format: "json-feed",
            offset: 0,
            message: "expected a `CVE_Items` or `vulnerabilities` array".into(),
        })?;

    Ok(items.iter().map(json_entry).collect())
}

fn json_entry(item: &Value) -> RawEntry {
    let Some(cve) = item.get("cve") else {
        return RawEntry::Malformed;
    };
    // NVD 1.1
    if let Some(meta) = cve.get("CVE_data_meta") {
        let Some(id) = meta.get("ID").and_then(Value::as_str) else {
            return RawEntry::Malformed;
        };
        return match english_text(cve.pointer("/description/description_data")) {
            Some(description) => RawEntry::Entry {
                id: id.to_string(),
                description,
            },
            None => RawEntry::Malformed,
        };
    }
    // NVD 2.0
    let Some(id) = cve.get("id").and_then(Value::as_str) else {
        return RawEntry::Malformed;
    };
    if let Some(status) = cve.get("vulnStatus").and_then(Value::as_str) {
        if matches!(status, "Rejected" | "Reserved") {
            return RawEntry::Withdrawn;
        }
    }
    match english_text(cve.get("descriptions")) {
        Some(description) => RawEntry::Entry {
            id: id.to_string(),
            description,
        },
        None => RawEntry::Malformed,
    }
}

/// Writes the header line followed by one JSON object per record.
pub fn store_records(records: &[CveRecord], path: &Path) -> Result<usize, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "{CORPUS_HEADER}").map_err(io)?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(records.len())
}

pub fn load_records(path: &Path) -> Result<Vec<CveRecord>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let corrupt = |line: usize, message: String| CorpusError::CorruptLine {
        path: path.to_path_buf(),
        line,
        message,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut records = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let lineno = i + 1;
        if lineno == 1 {
            if line.trim() != CORPUS_HEADER {
                return Err(corrupt(1, format!("expected header {CORPUS_HEADER:?}")));
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let rec: CveRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(lineno, e.to_string()))?;
        rec.validate().map_err(|e| corrupt(lineno, e.to_string()))?;
        records.push(rec);
    }
    if !saw_header {
        return Err(corrupt(1, "missing header".into()));
    }
    Ok(records)
}
