//! Sentence-level patterns that confirm gazetteer candidates and delimit aspect spans.
//!
//! Two official description templates drive the layout of the leading clause:
//!
//! 1. `[vulnerability type] in [component] in [vendor][product][version] allows
//!    [attacker type] to [impact] via [attack vector]`
//! 2. `[component] in [vendor][product][version] [root cause], which allows
//!    [attacker type] to [impact] via [attack vector]`
//!
//! Descriptions that skip the `allows` pivot are tried against the auxiliary forms
//! `[attacker] performs [vector] in order to [impact]`, `By [vector], [attacker]
//! can [impact]` and `[vector] can be used (by [attacker]) to [impact]`.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

use super::gazetteer::Candidate;
use super::pos::PosTag;
use super::tokenize::Token;
use super::{AspectKind, AspectSet};

/// Which sentence form delimited the aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentencePattern {
    AllowTo,
    InOrderTo,
    ByGerund,
    CanBeUsed,
    /// No pivot found; only the leading clause was parsed.
    HeadOnly,
}

/// Extraction result together with the candidate bookkeeping behind it.
#[derive(Debug, Clone)]
pub struct Dissection {
    pub set: AspectSet,
    pub pattern: SentencePattern,
    /// Candidates lying inside the span of their own kind.
    pub confirmed: Vec<Candidate>,
    /// Candidates outside every span of their kind (false positives).
    pub rejected: Vec<Candidate>,
}

macro_rules! lazy_regex {
    ($name:ident, $re:expr) => {
        fn $name() -> &'static Regex {
            static RE: OnceLock<Regex> = OnceLock::new();
            RE.get_or_init(|| Regex::new($re).unwrap())
        }
    };
}

lazy_regex!(sentence_end_re, r#"\.(?:\s+[A-Z("]|\s*$)"#);
lazy_regex!(
    pivot_re,
    r"(?i)(?:,\s*)?\b(?:(?:which|that|this|and|it)\s+)?(?:(?:could|might|may|can|will|would|potentially|possibly)\s+)*(?:allows?|allowing|allowed|lets|enables?|permits?)\b"
);
lazy_regex!(
    vector_marker_re,
    r"(?i)\s(?:via|by|using|through|with\s+(?:an?\s+)?(?:crafted|specially|malformed))\s"
);
lazy_regex!(
    trailer_re,
    r"(?i),\s*(?:aka\b|a\s+different\s+(?:vulnerability|issue)|which\s+is\s+a\s+different)|;\s*NOTE|\s+NOTE:"
);
lazy_regex!(in_order_to_re, r"(?i)\bin\s+order\s+to\b");
lazy_regex!(
    performs_re,
    r"(?i)^\s+(?:(?:can|could|may|might)\s+)?(?:performs?|uses?|sends?|submits?|supplies|provides?|conducts?|executes?)\s+"
);
lazy_regex!(
    by_gerund_re,
    r"(?i)^\s*(By\s+\w+ing\b[^,]*),\s*(.+?)\s+(?:can|could|may|might|is\s+able\s+to|are\s+able\s+to)\s+(.+)$"
);
lazy_regex!(
    can_be_used_re,
    r"(?i)^(?:In\s+([^,]+),\s*)?(.+?)\s+(?:can|could|may|might)\s+be\s+(?:used|leveraged|exploited|abused)(?:\s+by\s+(.+?))?\s+to\s+(.+)$"
);
lazy_regex!(
    in_after_re,
    r"(?i)^\s+(?:(?:exists?|(?:was|were)\s+(?:found|discovered|identified)|is\s+present)\s+)?in\s+"
);
lazy_regex!(
    generic_lead_re,
    r"(?i)^(?:[\w\-()]+\s+){0,6}?(?:vulnerabilit(?:y|ies)|flaws?|issues?|bugs?|weakness(?:es)?)\s+(?:(?:exists?|(?:was|were)\s+(?:found|discovered|identified))\s+)?in\s+"
);

const LEAD_SKIP: &[&str] = &[
    "a", "an", "the", "multiple", "several", "two", "three", "four", "five", "various",
    "numerous", "many",
];
const CLAUSE_STARTERS: &[&str] = &["when", "if", "because", "while"];

/// End (exclusive, before the period) of the first sentence group.
fn first_sentence_end(text: &str) -> usize {
    sentence_end_re()
        .find(text)
        .map_or(text.len(), |m| m.start())
}

fn trim_range(text: &str, r: Range<usize>) -> Option<Range<usize>> {
    if r.start >= r.end {
        return None;
    }
    let s = &text[r.clone()];
    let junk = |c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':');
    let lead = s.len() - s.trim_start_matches(junk).len();
    let trail = s.len() - s.trim_end_matches(junk).len();
    let out = (r.start + lead)..(r.end - trail);
    (out.start < out.end).then_some(out)
}

#[derive(Default)]
struct Slots([Option<Range<usize>>; 6]);

impl Slots {
    fn set(&mut self, kind: AspectKind, text: &str, r: Option<Range<usize>>) {
        if let Some(r) = r.and_then(|r| trim_range(text, r)) {
            self.0[kind.ordinal()] = Some(r);
        }
    }
    fn get(&self, kind: AspectKind) -> Option<&Range<usize>> {
        self.0[kind.ordinal()].as_ref()
    }
}

struct Ctx<'a, 't> {
    text: &'a str,
    tokens: &'t [Token<'a>],
    tags: &'t [PosTag],
    candidates: &'t [Candidate],
}

impl Ctx<'_, '_> {
    fn candidates_in(&self, kind: AspectKind, r: &Range<usize>) -> impl Iterator<Item = &Candidate> {
        let r = r.clone();
        self.candidates
            .iter()
            .filter(move |c| c.kind == kind && c.start >= r.start && c.end <= r.end)
    }

    fn token_indices(&self, r: &Range<usize>) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start >= r.start && t.end <= r.end)
            .map(|(i, _)| i)
            .collect()
    }

    fn tag(&self, i: usize) -> Option<PosTag> {
        self.tags.get(i).copied()
    }

    /// Impact and attack vector from the text following "to" (or the pivot).
    fn impact_and_vector(&self, slots: &mut Slots, r: Range<usize>) {
        let text = self.text;
        let body = &text[r.clone()];
        let end = trailer_re()
            .find(body)
            .map_or(r.end, |m| r.start + m.start());
        let body = &text[r.start..end];
        match vector_marker_re().find(body) {
            Some(m) => {
                let vstart = r.start + m.start() + 1;
                slots.set(AspectKind::Impact, text, Some(r.start..vstart));
                slots.set(AspectKind::AttackVector, text, Some(vstart..end));
            }
            None => slots.set(AspectKind::Impact, text, Some(r.start..end)),
        }
    }

    fn allow_pattern(&self, slots: &mut Slots, sentence: Range<usize>) -> Option<usize> {
        let s = &self.text[sentence.clone()];
        let pivots: Vec<_> = pivot_re().find_iter(s).collect();
        let pivot = pivots
            .iter()
            .find(|m| {
                let lower = m.as_str().to_lowercase();
                lower.contains("which") || lower.contains("that")
            })
            .or(pivots.first())?;
        let head_end = sentence.start + pivot.start();
        let after = sentence.start + pivot.end();

        let tail_tokens = self.token_indices(&(after..sentence.end));
        let to = tail_tokens.iter().take(10).copied().find(|&i| {
            self.tokens[i].text.eq_ignore_ascii_case("to")
                && !matches!(
                    self.tag(i + 1),
                    Some(PosTag::Determiner | PosTag::Number | PosTag::Symbol | PosTag::Pronoun)
                        | None
                )
        });
        let mut impact_start = after;
        if let Some(to) = to {
            let region = after..self.tokens[to].start;
            if self
                .candidates_in(AspectKind::AttackerType, &region)
                .next()
                .is_some()
            {
                slots.set(AspectKind::AttackerType, self.text, Some(region));
                impact_start = self.tokens[to].end;
            }
        }
        self.impact_and_vector(slots, impact_start..sentence.end);
        Some(head_end)
    }

    fn in_order_to_pattern(&self, slots: &mut Slots, sentence: Range<usize>) -> Option<usize> {
        let s = &self.text[sentence.clone()];
        let m = in_order_to_re().find(s)?;
        let mark = sentence.start + m.start();
        for c in self.candidates_in(AspectKind::AttackerType, &(sentence.start..mark)) {
            if let Some(p) = performs_re().find(&self.text[c.end..mark]) {
                slots.set(AspectKind::AttackerType, self.text, Some(c.start..c.end));
                slots.set(AspectKind::AttackVector, self.text, Some(c.end + p.end()..mark));
                self.impact_and_vector_plain(
                    slots,
                    sentence.start + m.end()..sentence.end,
                );
                return Some(c.start);
            }
        }
        None
    }

    fn impact_and_vector_plain(&self, slots: &mut Slots, r: Range<usize>) {
        let body = &self.text[r.clone()];
        let end = trailer_re()
            .find(body)
            .map_or(r.end, |m| r.start + m.start());
        slots.set(AspectKind::Impact, self.text, Some(r.start..end));
    }

    fn by_gerund_pattern(&self, slots: &mut Slots, sentence: Range<usize>) -> bool {
        let s = &self.text[sentence.clone()];
        let Some(c) = by_gerund_re().captures(s) else {
            return false;
        };
        let at = |i: usize| c.get(i).map(|m| sentence.start + m.start()..sentence.start + m.end());
        slots.set(AspectKind::AttackVector, self.text, at(1));
        if let Some(r) = at(2) {
            if self.candidates_in(AspectKind::AttackerType, &r).next().is_some() {
                slots.set(AspectKind::AttackerType, self.text, Some(r));
            }
        }
        if let Some(r) = at(3) {
            self.impact_and_vector_plain(slots, r);
        }
        true
    }

    fn can_be_used_pattern(&self, slots: &mut Slots, sentence: Range<usize>) -> Option<Range<usize>> {
        let s = &self.text[sentence.clone()];
        let c = can_be_used_re().captures(s)?;
        let at = |i: usize| c.get(i).map(|m| sentence.start + m.start()..sentence.start + m.end());
        slots.set(AspectKind::AttackVector, self.text, at(2));
        if let Some(r) = at(3) {
            slots.set(AspectKind::AttackerType, self.text, Some(r));
        }
        if let Some(r) = at(4) {
            self.impact_and_vector_plain(slots, r);
        }
        Some(at(1).unwrap_or(sentence.start..sentence.start))
    }

    /// Vulnerability type, affected product and root cause from the leading clause.
    fn head(&self, slots: &mut Slots, r: Range<usize>) {
        let text = self.text;
        let Some(mut r) = trim_range(text, r) else {
            return;
        };
        if text[r.clone()].starts_with("In ") {
            r.start += 3;
        }
        let idx = self.token_indices(&r);
        if idx.is_empty() {
            return;
        }
        let vt_cands: Vec<&Candidate> = self.candidates_in(AspectKind::VulnerabilityType, &r).collect();

        let first = idx
            .iter()
            .copied()
            .find(|&i| !LEAD_SKIP.contains(&self.tokens[i].text.to_lowercase().as_str()))
            .unwrap_or(idx[0]);
        let mut vt: Option<Range<usize>> = None;
        let mut product_start = r.start;
        if let Some(c) = vt_cands.iter().find(|c| c.start == self.tokens[first].start) {
            if let Some(m) = in_after_re().find(&text[c.end..r.end]) {
                vt = Some(c.start..c.end);
                product_start = c.end + m.end();
            }
        }
        if vt.is_none() {
            if let Some(m) = generic_lead_re().find(&text[r.clone()]) {
                product_start = r.start + m.end();
                vt = vt_cands
                    .iter()
                    .find(|c| c.end <= product_start)
                    .map(|c| c.start..c.end);
            }
        }

        let prod_idx: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| self.tokens[i].start >= product_start)
            .collect();
        let rc_cands: Vec<&Candidate> = self.candidates_in(AspectKind::RootCause, &r).collect();
        let rc_start = prod_idx.iter().enumerate().skip(1).find_map(|(k, &i)| {
            let tok = self.tokens[i];
            let lower = tok.text.to_lowercase();
            let tag = self.tag(i);
            let lowercase = tok.text.starts_with(|c: char| c.is_lowercase());
            let verb = tag == Some(PosTag::Verb) && lowercase;
            let adverb_then_verb = tag == Some(PosTag::Adverb)
                && prod_idx[k + 1..]
                    .iter()
                    .take(2)
                    .any(|&j| self.tag(j) == Some(PosTag::Verb));
            let starter = CLAUSE_STARTERS.contains(&lower.as_str());
            let gazetteer = rc_cands.iter().any(|c| c.start == tok.start);
            (verb || adverb_then_verb || starter || gazetteer).then_some(tok.start)
        });

        let product_end = rc_start.unwrap_or(r.end);
        slots.set(AspectKind::AffectedProduct, text, Some(product_start..product_end));
        if let Some(rc) = rc_start {
            slots.set(AspectKind::RootCause, text, Some(rc..r.end));
        }
        if let Some(v) = vt {
            slots.set(AspectKind::VulnerabilityType, text, Some(v));
        }
    }
}

/// Checks candidates against the sentence forms and returns the aspect spans.
pub fn apply_sentence_patterns(
    cve_id: &str,
    candidates: &[Candidate],
    description: &str,
    tokens: &[Token<'_>],
    tags: &[PosTag],
) -> AspectSet {
    dissect(cve_id, candidates, description, tokens, tags).set
}

/// Like [`apply_sentence_patterns`] but also reports which candidates were kept.
pub fn dissect(
    cve_id: &str,
    candidates: &[Candidate],
    description: &str,
    tokens: &[Token<'_>],
    tags: &[PosTag],
) -> Dissection {
    assert_eq!(tokens.len(), tags.len(), "one tag per token");
    let ctx = Ctx {
        text: description,
        tokens,
        tags,
        candidates,
    };
    let sentence = 0..first_sentence_end(description);
    let mut slots = Slots::default();

    let pattern = if let Some(head_end) = ctx.allow_pattern(&mut slots, sentence.clone()) {
        ctx.head(&mut slots, sentence.start..head_end);
        SentencePattern::AllowTo
    } else if let Some(head_end) = ctx.in_order_to_pattern(&mut slots, sentence.clone()) {
        ctx.head(&mut slots, sentence.start..head_end);
        SentencePattern::InOrderTo
    } else if ctx.by_gerund_pattern(&mut slots, sentence.clone()) {
        SentencePattern::ByGerund
    } else if let Some(head) = ctx.can_be_used_pattern(&mut slots, sentence.clone()) {
        ctx.head(&mut slots, head);
        SentencePattern::CanBeUsed
    } else {
        ctx.head(&mut slots, sentence.clone());
        SentencePattern::HeadOnly
    };

    // Kind exclusivity: earlier spans win over later overlapping ones.
    let mut ordered: Vec<(AspectKind, Range<usize>)> = AspectKind::ALL
        .iter()
        .filter_map(|&k| slots.get(k).map(|r| (k, r.clone())))
        .collect();
    ordered.sort_by_key(|(k, r)| (r.start, k.ordinal()));
    let mut kept: Vec<(AspectKind, Range<usize>)> = Vec::new();
    for (k, r) in ordered {
        if kept.iter().all(|(_, o)| o.end <= r.start || r.end <= o.start) {
            kept.push((k, r));
        }
    }

    let (confirmed, rejected): (Vec<Candidate>, Vec<Candidate>) =
        candidates.iter().cloned().partition(|c| {
            kept.iter()
                .any(|(k, r)| *k == c.kind && c.start >= r.start && c.end <= r.end)
        });

    Dissection {
        set: AspectSet::from_byte_spans(cve_id, description, &kept),
        pattern,
        confirmed,
        rejected,
    }
}
