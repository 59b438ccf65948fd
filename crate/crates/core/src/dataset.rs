//! Class taxonomies and the aspect-specific classification datasets.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::extract::gazetteer::{compile_rule, parse_rule_lines};
use crate::extract::{tokenize, AspectKind, AspectSet};

pub const DATASET_HEADER: &str = "vaf-dataset/1";
pub const OTHERS: &str = "Others";
/// Reserved token placed between aspects under i-ao / i-ar.
pub const SEPARATOR: &str = "<sep>";
pub const DEFAULT_MIN_ASPECTS: usize = 4;
pub const DEFAULT_RARE_THRESHOLD: f64 = 0.001;

const BUILTIN_TAXONOMY: &str = include_str!("../data/taxonomy.tsv");

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{0}")]
    Argument(String),
    #[error("taxonomy line {line}: {message}")]
    Taxonomy { line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: line {line}: {message}", path.display())]
    CorruptLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct Matcher {
    pub label: usize,
    pub priority: u32,
    pub pattern: String,
    regex: Regex,
}

/// Ordered class labels for one aspect kind, with "Others" last.
#[derive(Debug, Clone)]
pub struct LabelTaxonomy {
    pub kind: AspectKind,
    pub labels: Vec<String>,
    /// Sorted by priority (descending), then file order.
    pub matchers: Vec<Matcher>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyRepr {
    kind: AspectKind,
    labels: Vec<String>,
    matchers: Vec<MatcherRepr>,
}

#[derive(Serialize, Deserialize)]
struct MatcherRepr {
    label: usize,
    priority: u32,
    pattern: String,
}

impl LabelTaxonomy {
    /// Builds a taxonomy from (label, priority, pattern) rows in file order.
    /// Empty patterns declare a label without a matcher.
    pub fn from_rows(
        kind: AspectKind,
        rows: &[(String, u32, String)],
    ) -> Result<Self, DatasetError> {
        let mut labels: Vec<String> = Vec::new();
        let mut raw: Vec<(String, u32, String)> = Vec::new();
        for (label, priority, pattern) in rows {
            if label.is_empty() {
                return Err(DatasetError::Argument("taxonomy rows need a label".into()));
            }
            if !labels.contains(label) && label != OTHERS {
                labels.push(label.clone());
            }
            if !pattern.is_empty() {
                raw.push((label.clone(), *priority, pattern.clone()));
            }
        }
        if !rows.iter().any(|(l, _, _)| l == OTHERS) {
            return Err(DatasetError::Argument(format!(
                "{kind} taxonomy lacks an {OTHERS} class"
            )));
        }
        labels.push(OTHERS.to_string());
        let mut matchers = Vec::new();
        for (label, priority, pattern) in raw {
            let regex = compile_rule(&pattern)
                .map_err(|e| DatasetError::Argument(format!("pattern {pattern:?}: {e}")))?;
            matchers.push(Matcher {
                label: labels.iter().position(|l| *l == label).unwrap(),
                priority,
                pattern,
                regex,
            });
        }
        // Stable sort keeps file order within a priority.
        matchers.sort_by_key(|m| std::cmp::Reverse(m.priority));
        Ok(Self {
            kind,
            labels,
            matchers,
        })
    }

    /// Parses the taxonomy TSV (same shape as gazetteer files), keeping rows of `kind`.
    pub fn parse(text: &str, kind: AspectKind) -> Result<Self, DatasetError> {
        let lines = parse_rule_lines(text).map_err(|e| DatasetError::Taxonomy {
            line: 0,
            message: e.to_string(),
        })?;
        let mut rows = Vec::new();
        for l in lines.into_iter().filter(|l| l.kind == kind) {
            let Some(label) = l.label else {
                return Err(DatasetError::Taxonomy {
                    line: l.line,
                    message: "missing label".into(),
                });
            };
            rows.push((label, l.priority, l.pattern));
        }
        Self::from_rows(kind, &rows)
    }

    pub fn load(path: &Path, kind: AspectKind) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, kind)
    }

    pub fn builtin(kind: AspectKind) -> Self {
        Self::parse(BUILTIN_TAXONOMY, kind).expect("builtin taxonomy is valid")
    }

    /// Built-in taxonomies of the four prediction targets.
    pub fn builtin_all() -> Vec<Self> {
        AspectKind::TARGETS.iter().map(|&k| Self::builtin(k)).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn others(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First matching matcher's label, else Others. Total.
    pub fn canonicalize(&self, raw: &str) -> usize {
        self.matchers
            .iter()
            .find(|m| m.regex.is_match(raw))
            .map_or(self.others(), |m| m.label)
    }

    /// Order-sensitive digest of labels and matchers.
    pub fn fingerprint(&self) -> String {
        let mut s = format!("{}", self.kind);
        for l in &self.labels {
            s.push('\u{1}');
            s.push_str(l);
        }
        for m in &self.matchers {
            s.push_str(&format!("\u{2}{}:{}:{}", m.label, m.priority, m.pattern));
        }
        crate::fingerprint(s.as_bytes())
    }

    fn repr(&self) -> TaxonomyRepr {
        TaxonomyRepr {
            kind: self.kind,
            labels: self.labels.clone(),
            matchers: self
                .matchers
                .iter()
                .map(|m| MatcherRepr {
                    label: m.label,
                    priority: m.priority,
                    pattern: m.pattern.clone(),
                })
                .collect(),
        }
    }

    fn from_repr(r: TaxonomyRepr) -> Result<Self, DatasetError> {
        if r.labels.last().map(String::as_str) != Some(OTHERS)
            || r.labels.iter().filter(|l| *l == OTHERS).count() != 1
        {
            return Err(DatasetError::Argument(format!("{OTHERS} must be the last label")));
        }
        let mut matchers = Vec::new();
        for m in r.matchers {
            if m.label >= r.labels.len() {
                return Err(DatasetError::Argument(format!("matcher label {} out of range", m.label)));
            }
            let regex = compile_rule(&m.pattern)
                .map_err(|e| DatasetError::Argument(format!("pattern {:?}: {e}", m.pattern)))?;
            matchers.push(Matcher {
                label: m.label,
                priority: m.priority,
                pattern: m.pattern,
                regex,
            });
        }
        Ok(Self {
            kind: r.kind,
            labels: r.labels,
            matchers,
        })
    }
}

impl Serialize for LabelTaxonomy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.repr().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelTaxonomy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::from_repr(TaxonomyRepr::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

pub fn canonicalize_label(kind: AspectKind, raw_text: &str, taxonomy: &LabelTaxonomy) -> usize {
    debug_assert_eq!(kind, taxonomy.kind);
    taxonomy.canonicalize(raw_text)
}

/// Merges labels whose share of `class_counts` is below `threshold` into Others.
/// Matchers of merged labels now point at Others.
pub fn group_rare_labels(
    taxonomy: &LabelTaxonomy,
    class_counts: &[usize],
    threshold: f64,
) -> Result<LabelTaxonomy, DatasetError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DatasetError::Argument(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    if class_counts.len() != taxonomy.len() {
        return Err(DatasetError::Argument(format!(
            "{} counts for {} labels",
            class_counts.len(),
            taxonomy.len()
        )));
    }
    let total: usize = class_counts.iter().sum();
    let others = taxonomy.others();
    let keep: Vec<bool> = (0..taxonomy.len())
        .map(|i| i == others || total == 0 || (class_counts[i] as f64 / total as f64) >= threshold)
        .collect();
    let mut remap = vec![0; taxonomy.len()];
    let mut labels = Vec::new();
    for i in 0..taxonomy.len() {
        if keep[i] && i != others {
            remap[i] = labels.len();
            labels.push(taxonomy.labels[i].clone());
        }
    }
    let new_others = labels.len();
    labels.push(OTHERS.to_string());
    for i in 0..taxonomy.len() {
        if !keep[i] || i == others {
            remap[i] = new_others;
        }
    }
    let matchers = taxonomy
        .matchers
        .iter()
        .map(|m| Matcher {
            label: remap[m.label],
            ..m.clone()
        })
        .collect();
    Ok(LabelTaxonomy {
        kind: taxonomy.kind,
        labels,
        matchers,
    })
}

/// One input aspect of an instance, with char offsets into the description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAspect {
    pub kind: AspectKind,
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub cve_id: String,
    pub target_kind: AspectKind,
    pub target_label: usize,
    pub target_text: String,
    /// Present non-target aspects in appearance order.
    pub inputs: Vec<InputAspect>,
    pub description: String,
    /// Char ranges removed from the description for i-fu (target plus ablated kinds).
    pub excised: Vec<(usize, usize)>,
}

impl LabeledInstance {
    pub fn input_kinds(&self) -> Vec<AspectKind> {
        self.inputs.iter().map(|a| a.kind).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AspectDataset {
    pub target_kind: AspectKind,
    pub taxonomy: LabelTaxonomy,
    pub instances: Vec<LabeledInstance>,
    pub provenance: String,
}

impl AspectDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.taxonomy.len()];
        for i in &self.instances {
            c[i.target_label] += 1;
        }
        c
    }

    /// Instances at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> AspectDataset {
        AspectDataset {
            target_kind: self.target_kind,
            taxonomy: self.taxonomy.clone(),
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Re-derives every target label with `taxonomy` (e.g. after rare-label grouping).
    pub fn relabel(&mut self, taxonomy: LabelTaxonomy) {
        for inst in &mut self.instances {
            inst.target_label = taxonomy.canonicalize(&inst.target_text);
        }
        self.taxonomy = taxonomy;
    }

    /// A seeded random sample of at most `cap` instances, in dataset order.
    pub fn subsample(&self, cap: usize, seed: u64) -> AspectDataset {
        if self.len() <= cap {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(cap);
        idx.sort_unstable();
        self.select(&idx)
    }

    pub fn fingerprint(&self) -> String {
        let mut s = format!("{}|{}|{}", self.target_kind, self.taxonomy.fingerprint(), self.provenance);
        for i in &self.instances {
            s.push_str(&format!("|{}:{}", i.cve_id, i.target_label));
            for a in &i.inputs {
                s.push_str(&format!(",{}={}", a.kind, a.text));
            }
        }
        crate::fingerprint(s.as_bytes())
    }
}

/// Digest of the aspect sets a dataset was built from.
pub fn snapshot_id(sets: &[AspectSet]) -> String {
    let mut s = String::new();
    for set in sets {
        s.push_str(&set.cve_id);
        s.push('\u{1}');
        s.push_str(&set.description);
        s.push('\u{2}');
    }
    crate::fingerprint(s.as_bytes())
}

/// One instance per set containing `target_kind` and at least `min_aspects` aspects.
pub fn build_aspect_dataset(
    aspect_sets: &[AspectSet],
    target_kind: AspectKind,
    taxonomy: &LabelTaxonomy,
    min_aspects: usize,
) -> Result<AspectDataset, DatasetError> {
    if !(2..=6).contains(&min_aspects) {
        return Err(DatasetError::Argument(format!(
            "min_aspects {min_aspects} outside [2, 6]"
        )));
    }
    if taxonomy.kind != target_kind {
        return Err(DatasetError::Argument(format!(
            "{} taxonomy used for {target_kind} target",
            taxonomy.kind
        )));
    }
    let mut instances = Vec::new();
    for set in aspect_sets {
        let Some(target) = set.get(target_kind) else {
            continue;
        };
        if set.len() < min_aspects {
            continue;
        }
        let inputs = set
            .order()
            .into_iter()
            .filter(|&k| k != target_kind)
            .map(|k| {
                let s = set.get(k).unwrap();
                InputAspect {
                    kind: k,
                    text: s.text.clone(),
                    start: s.start,
                    end: s.end,
                }
            })
            .collect();
        instances.push(LabeledInstance {
            cve_id: set.cve_id.clone(),
            target_kind,
            target_label: taxonomy.canonicalize(&target.text),
            target_text: target.text.clone(),
            inputs,
            description: set.description.clone(),
            excised: vec![(target.start, target.end)],
        });
    }
    Ok(AspectDataset {
        target_kind,
        taxonomy: taxonomy.clone(),
        instances,
        provenance: snapshot_id(aspect_sets),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputFormat {
    #[serde(rename = "i-ao")]
    Ao,
    #[serde(rename = "i-ar")]
    Ar,
    #[serde(rename = "i-fu")]
    Fu,
}

impl InputFormat {
    pub const ALL: [InputFormat; 3] = [InputFormat::Ao, InputFormat::Ar, InputFormat::Fu];

    pub fn name(self) -> &'static str {
        match self {
            InputFormat::Ao => "i-ao",
            InputFormat::Ar => "i-ar",
            InputFormat::Fu => "i-fu",
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i-ao" | "ao" => Ok(InputFormat::Ao),
            "i-ar" | "ar" => Ok(InputFormat::Ar),
            "i-fu" | "fu" => Ok(InputFormat::Fu),
            _ => Err(DatasetError::Argument(format!("unknown input format {s:?}"))),
        }
    }
}

pub fn text_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text.to_string()).collect()
}

/// Description with the excised char ranges blanked out.
pub fn excised_description(instance: &LabeledInstance) -> String {
    instance
        .description
        .chars()
        .enumerate()
        .map(|(i, c)| {
            if instance.excised.iter().any(|&(s, e)| i >= s && i < e) {
                ' '
            } else {
                c
            }
        })
        .collect()
}

/// Token sequence fed to an early-fusion model.
pub fn render_input<R: Rng + ?Sized>(
    instance: &LabeledInstance,
    format: InputFormat,
    rng: &mut R,
) -> Vec<String> {
    let mut order: Vec<&InputAspect> = instance.inputs.iter().collect();
    match format {
        InputFormat::Fu => return text_tokens(&excised_description(instance)),
        InputFormat::Ar => order.shuffle(rng),
        InputFormat::Ao => {}
    }
    let mut out = Vec::new();
    for (i, a) in order.iter().enumerate() {
        if i > 0 {
            out.push(SEPARATOR.to_string());
        }
        out.extend(text_tokens(&a.text));
    }
    out
}

/// Per-kind token sequences for late fusion, in the fixed non-target kind order.
/// Missing aspects are empty sequences.
pub fn render_segments(instance: &LabeledInstance) -> Vec<(AspectKind, Vec<String>)> {
    AspectKind::ALL
        .iter()
        .filter(|&&k| k != instance.target_kind)
        .map(|&k| {
            let toks = instance
                .inputs
                .iter()
                .find(|a| a.kind == k)
                .map(|a| text_tokens(&a.text))
                .unwrap_or_default();
            (k, toks)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// k-fold plan: test = shard f of a seeded shuffle, validation = shard f+1 (cyclic).
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan, DatasetError> {
    if k < 2 || n < k {
        return Err(DatasetError::Argument(format!(
            "need n >= k >= 2, got n={n}, k={k}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let shards: Vec<&[usize]> = (0..k).map(|j| &perm[j * n / k..(j + 1) * n / k]).collect();
    let folds = (0..k)
        .map(|f| {
            let v = (f + 1) % k;
            Fold {
                test: shards[f].to_vec(),
                validation: shards[v].to_vec(),
                train: (0..k)
                    .filter(|&j| j != f && j != v)
                    .flat_map(|j| shards[j].iter().copied())
                    .collect(),
            }
        })
        .collect();
    Ok(FoldPlan { k, seed, folds })
}

/// Drops `removed_kind` from every instance's inputs. Returns the new dataset and
/// how many instances were dropped for having no inputs left.
pub fn ablate(
    dataset: &AspectDataset,
    removed_kind: AspectKind,
) -> Result<(AspectDataset, usize), DatasetError> {
    if removed_kind == dataset.target_kind {
        return Err(DatasetError::Argument(format!(
            "cannot ablate the target kind {removed_kind}"
        )));
    }
    let mut dropped = 0;
    let mut instances = Vec::with_capacity(dataset.len());
    for inst in &dataset.instances {
        let mut inst = inst.clone();
        if let Some(pos) = inst.inputs.iter().position(|a| a.kind == removed_kind) {
            let a = inst.inputs.remove(pos);
            inst.excised.push((a.start, a.end));
        }
        if inst.inputs.is_empty() {
            dropped += 1;
        } else {
            instances.push(inst);
        }
    }
    Ok((
        AspectDataset {
            instances,
            ..dataset.clone()
        },
        dropped,
    ))
}

/// The first `tenths` of 10 seeded shards; nested in `tenths` for a fixed seed.
pub fn subset_for_curve(
    dataset: &AspectDataset,
    tenths: usize,
    seed: u64,
) -> Result<AspectDataset, DatasetError> {
    Ok(dataset.select(&curve_indices(dataset.len(), tenths, seed)?))
}

/// Positions kept by [`subset_for_curve`] out of `n`, ascending.
pub fn curve_indices(n: usize, tenths: usize, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if !(1..=10).contains(&tenths) {
        return Err(DatasetError::Argument(format!("tenths {tenths} outside [1, 10]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n * tenths / 10);
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Serialize, Deserialize)]
struct Preamble {
    target_kind: AspectKind,
    provenance: String,
    taxonomy: LabelTaxonomy,
}

pub fn store_dataset(dataset: &AspectDataset, path: &Path) -> Result<usize, DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{DATASET_HEADER}").map_err(io)?;
    let pre = Preamble {
        target_kind: dataset.target_kind,
        provenance: dataset.provenance.clone(),
        taxonomy: dataset.taxonomy.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&pre).expect("serializable")).map_err(io)?;
    for inst in &dataset.instances {
        writeln!(w, "{}", serde_json::to_string(inst).expect("serializable")).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(dataset.len())
}

pub fn load_dataset(path: &Path) -> Result<AspectDataset, DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let corrupt = |line: usize, message: String| DatasetError::CorruptLine {
        path: path.to_path_buf(),
        line,
        message,
    };
    let r = BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == DATASET_HEADER => {}
        Some((_, Err(e))) => return Err(io(e)),
        _ => return Err(corrupt(1, format!("expected header {DATASET_HEADER}"))),
    }
    let pre: Preamble = match lines.next() {
        Some((i, Ok(l))) => serde_json::from_str(&l).map_err(|e| corrupt(i + 1, e.to_string()))?,
        Some((_, Err(e))) => return Err(io(e)),
        None => return Err(corrupt(2, "missing taxonomy preamble".into())),
    };
    let mut instances = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: LabeledInstance =
            serde_json::from_str(&line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        if inst.target_label >= pre.taxonomy.len() || inst.target_kind != pre.target_kind {
            return Err(corrupt(i + 1, "instance disagrees with the preamble".into()));
        }
        instances.push(inst);
    }
    Ok(AspectDataset {
        target_kind: pre.target_kind,
        taxonomy: pre.taxonomy,
        instances,
        provenance: pre.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::AspectSpan;
    use proptest::prelude::*;

    fn set_with(id: &str, kinds: &[AspectKind]) -> AspectSet {
        // Each kind gets a 5-char word at offset 6*ordinal.
        let desc: String = AspectKind::ALL
            .iter()
            .map(|k| format!("w{:04}", k.ordinal()))
            .collect::<Vec<_>>()
            .join(" ");
        let mut s = AspectSet::empty(id, &desc);
        for &k in kinds {
            let start = 6 * k.ordinal();
            s.insert(AspectSpan {
                kind: k,
                start,
                end: start + 5,
                text: format!("w{:04}", k.ordinal()),
            })
            .unwrap();
        }
        s
    }

    fn instance(kinds: &[AspectKind]) -> LabeledInstance {
        LabeledInstance {
            cve_id: "CVE-2020-0001".into(),
            target_kind: AspectKind::VulnerabilityType,
            target_label: 0,
            target_text: "x".into(),
            inputs: kinds
                .iter()
                .enumerate()
                .map(|(i, &k)| InputAspect {
                    kind: k,
                    text: format!("t{i} u{i}"),
                    start: 10 * i,
                    end: 10 * i + 5,
                })
                .collect(),
            description: String::new(),
            excised: vec![],
        }
    }

    fn toy_dataset(inputs: &[&[AspectKind]]) -> AspectDataset {
        AspectDataset {
            target_kind: AspectKind::VulnerabilityType,
            taxonomy: LabelTaxonomy::builtin(AspectKind::VulnerabilityType),
            instances: inputs.iter().map(|k| instance(k)).collect(),
            provenance: "test".into(),
        }
    }

    #[test]
    fn builtin_taxonomies_end_with_others() {
        for t in LabelTaxonomy::builtin_all() {
            assert_eq!(t.labels.last().unwrap(), OTHERS);
            assert_eq!(t.labels.iter().filter(|l| *l == OTHERS).count(), 1);
            let mut u = t.labels.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), t.labels.len());
        }
        assert_eq!(LabelTaxonomy::builtin(AspectKind::VulnerabilityType).len(), 13);
        assert_eq!(LabelTaxonomy::builtin(AspectKind::RootCause).len(), 12);
        assert_eq!(LabelTaxonomy::builtin(AspectKind::AttackVector).len(), 6);
        assert_eq!(LabelTaxonomy::builtin(AspectKind::AttackerType).len(), 6);
    }

    #[test]
    fn canonicalize_examples() {
        let vt = LabelTaxonomy::builtin(AspectKind::VulnerabilityType);
        let i = canonicalize_label(AspectKind::VulnerabilityType, "XSS vulnerability", &vt);
        assert_eq!(vt.labels[i], "Cross site scripting(CWE-79)");
        let at = LabelTaxonomy::builtin(AspectKind::AttackerType);
        let i = canonicalize_label(AspectKind::AttackerType, "remote attackers", &at);
        assert_eq!(at.labels[i], "Remote attacker");
        let i = canonicalize_label(AspectKind::AttackerType, "remote authenticated users", &at);
        assert_eq!(at.labels[i], "Authenticated user");
        let rc = LabelTaxonomy::builtin(AspectKind::RootCause);
        assert_eq!(
            canonicalize_label(AspectKind::RootCause, "zzz unheard-of phrase", &rc),
            rc.others()
        );
        let i = rc.canonicalize("does not null terminate strings before calling sscanf");
        assert_eq!(rc.labels[i], "Boundary Condition Error");
    }

    fn ab_taxonomy() -> LabelTaxonomy {
        let rows = [
            ("A".to_string(), 1, "alpha".to_string()),
            ("B".to_string(), 1, "beta".to_string()),
            (OTHERS.to_string(), 0, String::new()),
        ];
        LabelTaxonomy::from_rows(AspectKind::AttackVector, &rows).unwrap()
    }

    #[test]
    fn rare_grouping() {
        let t = ab_taxonomy();
        let g = group_rare_labels(&t, &[995, 5, 0], 0.001).unwrap();
        assert_eq!(g.labels, ["A", "B", OTHERS]);
        let g = group_rare_labels(&t, &[999, 1, 0], 0.01).unwrap();
        assert_eq!(g.labels, ["A", OTHERS]);
        assert_eq!(g.canonicalize("beta"), 1);
        assert!(group_rare_labels(&t, &[1, 1, 1], 0.0).is_err());
        assert!(group_rare_labels(&t, &[1, 1, 1], 1.0).is_err());
    }

    #[test]
    fn attacker_distribution_keeps_five_classes() {
        // Table-2-like attacker-type shares (per mille): 728, 107, 72, 35, 11, Others 47.
        let at = LabelTaxonomy::builtin(AspectKind::AttackerType);
        let g = group_rare_labels(&at, &[728, 107, 72, 35, 11, 47], 0.001).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.labels.last().unwrap(), OTHERS);
    }

    #[test]
    fn build_counts() {
        use AspectKind::*;
        let vt = LabelTaxonomy::builtin(VulnerabilityType);
        let sets = [
            set_with("CVE-2020-0001", &[VulnerabilityType, AffectedProduct, Impact, AttackVector]),
            set_with("CVE-2020-0002", &AspectKind::ALL),
            set_with("CVE-2020-0003", &[RootCause, AffectedProduct, Impact, AttackVector]),
        ];
        let d = build_aspect_dataset(&sets, VulnerabilityType, &vt, 4).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.instances[1].inputs.len(), 5);
        assert!(d.instances.iter().all(|i| !i.input_kinds().contains(&VulnerabilityType)));
        assert_eq!(d.class_counts().iter().sum::<usize>(), 2);
        let none = build_aspect_dataset(&sets[2..], VulnerabilityType, &vt, 4).unwrap();
        assert!(none.is_empty());
        assert!(build_aspect_dataset(&sets, VulnerabilityType, &vt, 1).is_err());
    }

    #[test]
    fn render_orders() {
        use AspectKind::*;
        let one = instance(&[Impact]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            render_input(&one, InputFormat::Ao, &mut rng),
            render_input(&one, InputFormat::Ar, &mut rng)
        );
        let two = instance(&[AffectedProduct, Impact]);
        let toks = render_input(&two, InputFormat::Ao, &mut rng);
        assert_eq!(toks, ["t0", "u0", SEPARATOR, "t1", "u1"]);

        let three = instance(&[AffectedProduct, Impact, AttackVector]);
        let first = render_input(&three, InputFormat::Ar, &mut ChaCha8Rng::seed_from_u64(7));
        for _ in 0..3 {
            let again = render_input(&three, InputFormat::Ar, &mut ChaCha8Rng::seed_from_u64(7));
            assert_eq!(first, again);
        }
        assert_eq!(first, ["t1", "u1", SEPARATOR, "t2", "u2", SEPARATOR, "t0", "u0"]);
    }

    #[test]
    fn render_full_excises_target() {
        let sets = [set_with("CVE-2020-0002", &AspectKind::ALL)];
        let vt = LabelTaxonomy::builtin(AspectKind::VulnerabilityType);
        let d = build_aspect_dataset(&sets, AspectKind::VulnerabilityType, &vt, 4).unwrap();
        let toks = render_input(&d.instances[0], InputFormat::Fu, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(toks, ["w0001", "w0002", "w0003", "w0004", "w0005"]);
        let segs = render_segments(&d.instances[0]);
        assert_eq!(segs.len(), 5);
        assert_eq!(segs[0], (AspectKind::RootCause, vec!["w0001".to_string()]));
    }

    #[test]
    fn format_names() {
        assert_eq!("i-ao".parse::<InputFormat>().unwrap(), InputFormat::Ao);
        assert!("i-xx".parse::<InputFormat>().is_err());
    }

    #[test]
    fn fold_examples() {
        let p = make_folds(100, 10, 1).unwrap();
        for f in &p.folds {
            assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (80, 10, 10));
        }
        let p = make_folds(10, 10, 1).unwrap();
        for f in &p.folds {
            assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (8, 1, 1));
        }
        let p = make_folds(103, 10, 5).unwrap();
        let mut all: Vec<usize> = p.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert!(make_folds(5, 10, 0).is_err());
    }

    #[test]
    fn ablation_examples() {
        use AspectKind::*;
        let d = toy_dataset(&[&[AffectedProduct, Impact]]);
        let (a, dropped) = ablate(&d, RootCause).unwrap();
        assert_eq!((a.instances.clone(), dropped), (d.instances.clone(), 0));
        let (a, _) = ablate(&d, Impact).unwrap();
        assert_eq!(a.instances[0].input_kinds(), [AffectedProduct]);
        let d = toy_dataset(&[
            &[Impact],
            &[Impact, AttackVector],
            &[Impact],
            &[AffectedProduct],
            &[RootCause, Impact],
        ]);
        let (a, dropped) = ablate(&d, Impact).unwrap();
        assert_eq!((a.len(), dropped), (3, 2));
        assert!(ablate(&d, VulnerabilityType).is_err());
    }

    #[test]
    fn curve_examples() {
        let kinds: Vec<&[AspectKind]> = vec![&[AspectKind::Impact]; 100];
        let d = toy_dataset(&kinds);
        assert_eq!(subset_for_curve(&d, 10, 3).unwrap().len(), 100);
        assert_eq!(subset_for_curve(&d, 1, 3).unwrap().len(), 10);
        assert!(subset_for_curve(&d, 0, 3).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        use AspectKind::*;
        let vt = LabelTaxonomy::builtin(VulnerabilityType);
        let sets = [set_with("CVE-2020-0002", &AspectKind::ALL)];
        let d = build_aspect_dataset(&sets, VulnerabilityType, &vt, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vt.jsonl");
        store_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.instances, d.instances);
        assert_eq!(back.taxonomy.labels, d.taxonomy.labels);
        assert_eq!(back.fingerprint(), d.fingerprint());
    }

    proptest! {
        #[test]
        fn canonicalize_is_total(s in "\\PC{0,40}") {
            for t in LabelTaxonomy::builtin_all() {
                prop_assert!(t.canonicalize(&s) < t.len());
            }
        }

        #[test]
        fn folds_partition(n in 10usize..300, k in 2usize..11, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let p = make_folds(n, k, seed).unwrap();
            let mut tests: Vec<usize> = p.folds.iter().flat_map(|f| f.test.clone()).collect();
            tests.sort_unstable();
            prop_assert_eq!(tests, (0..n).collect::<Vec<_>>());
            for f in &p.folds {
                let mut all: Vec<usize> = f.train.iter().chain(&f.validation).chain(&f.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }

        #[test]
        fn curve_nesting(n in 0usize..200, seed in any::<u64>()) {
            let kinds: Vec<&[AspectKind]> = vec![&[AspectKind::Impact]; n];
            let mut d = toy_dataset(&kinds);
            for (i, inst) in d.instances.iter_mut().enumerate() {
                inst.cve_id = format!("CVE-2020-{i:04}");
            }
            let mut prev: Vec<String> = vec![];
            for t in 1..=10 {
                let ids: Vec<String> = subset_for_curve(&d, t, seed).unwrap().instances.into_iter().map(|i| i.cve_id).collect();
                prop_assert!(prev.iter().all(|p| ids.contains(p)));
                prev = ids;
            }
            prop_assert_eq!(prev.len(), n);
        }

        #[test]
        fn ablation_soundness(mask in proptest::collection::vec(0u8..32, 1..20), kind in 1usize..6) {
            let kinds: Vec<Vec<AspectKind>> = mask.iter().map(|m| {
                (0..5).filter(|b| m & (1 << b) != 0).map(|b| AspectKind::ALL[b + 1]).collect()
            }).collect();
            let refs: Vec<&[AspectKind]> = kinds.iter().map(|k| k.as_slice()).collect();
            let mut d = toy_dataset(&refs);
            for (i, inst) in d.instances.iter_mut().enumerate() {
                inst.target_label = i % 3;
                inst.cve_id = format!("CVE-2020-{i:04}");
            }
            let d = AspectDataset { instances: d.instances.into_iter().filter(|i| !i.inputs.is_empty()).collect(), ..d };
            let removed = AspectKind::ALL[kind];
            let (a, dropped) = ablate(&d, removed).unwrap();
            prop_assert_eq!(a.len() + dropped, d.len());
            for inst in &a.instances {
                prop_assert!(!inst.input_kinds().contains(&removed));
                let orig = d.instances.iter().find(|o| o.cve_id == inst.cve_id).unwrap();
                prop_assert_eq!(orig.target_label, inst.target_label);
                prop_assert!(inst.inputs.iter().all(|a| orig.inputs.contains(a)));
            }
        }

        #[test]
        fn render_ao_fu_ignore_rng(seed in any::<u64>()) {
            use AspectKind::*;
            let inst = instance(&[AffectedProduct, Impact, AttackVector]);
            let a = render_input(&inst, InputFormat::Ao, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = render_input(&inst, InputFormat::Ao, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
            prop_assert_eq!(a, b);
            let a = render_input(&inst, InputFormat::Fu, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = render_input(&inst, InputFormat::Fu, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
            prop_assert_eq!(a, b);
        }
    }
}
