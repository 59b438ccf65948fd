//! Lexicon + suffix part-of-speech tagger.
//!
//! The sentence patterns only need coarse distinctions (finite verbs, adverbs,
//! prepositions, nouns), so a closed-class lexicon plus a handful of context and
//! suffix rules is enough.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Preposition,
    Determiner,
    Pronoun,
    Number,
    Symbol,
    Other,
}

const PREPOSITIONS: &[&str] = &[
    "about", "above", "across", "after", "against", "along", "among", "around", "as", "at",
    "before", "behind", "below", "beneath", "beside", "between", "beyond", "by", "despite",
    "down", "during", "except", "for", "from", "in", "inside", "into", "near", "of", "off", "on",
    "onto", "outside", "over", "per", "since", "than", "through", "throughout", "to", "toward",
    "towards", "under", "until", "up", "upon", "via", "with", "within", "without",
];

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "all", "each", "every",
    "no", "another", "either", "neither", "such",
];

const PRONOUNS: &[&str] = &[
    "it", "its", "they", "them", "their", "theirs", "he", "she", "his", "her", "him", "we", "us",
    "our", "you", "your", "i", "me", "my", "which", "who", "whom", "whose", "what", "itself",
    "themselves", "one",
];

const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "when", "if", "because", "while", "whereas",
    "although", "though", "unless", "whether", "where",
];

const MODALS: &[&str] = &[
    "can", "could", "may", "might", "must", "shall", "should", "will", "would",
];

/// Finite verb forms common in vulnerability descriptions; tagged Verb anywhere.
const FINITE_VERBS: &[&str] = &[
    "accepts", "allow", "allows", "allowed", "applies", "are", "assigns", "attempts", "caches",
    "calls", "checks", "contains", "creates", "did", "does", "doesn't", "discloses", "displays",
    "enables", "executes", "exposes", "fail", "fails", "failed", "follows", "generates", "grants",
    "handles", "has", "had", "have", "ignores", "includes", "installs", "is", "lack", "lacks",
    "leaks", "lets", "loads", "logs", "misinterprets", "mishandles", "omits", "opens", "passes",
    "performs", "permits", "places", "processes", "reads", "relies", "requires", "retains",
    "returns", "runs", "sends", "sets", "stores", "supports", "transmits", "treats", "trusts",
    "uses", "validates", "was", "were", "writes",
];

/// Base verb forms; tagged Verb after "to", a modal, "not" or a do-form.
const BASE_VERBS: &[&str] = &[
    "access", "allow", "append", "bypass", "call", "cause", "change", "check", "conduct",
    "consume", "corrupt", "crash", "create", "delete", "determine", "disclose", "discover",
    "enforce", "enumerate", "escape", "execute", "filter", "free", "gain", "handle", "hijack",
    "impersonate", "include", "inject", "initialize", "intercept", "launch", "leverage", "limit",
    "list", "load", "modify", "obtain", "overwrite", "perform", "process", "read", "redirect",
    "release", "require", "restrict", "sanitize", "send", "spoof", "terminate", "trigger",
    "upload", "use", "validate", "verify", "view", "write",
];

const ADJECTIVES: &[&str] = &[
    "arbitrary", "authenticated", "certain", "context-dependent", "crafted", "different",
    "high", "invalid", "large", "local", "long", "low", "malformed", "malicious", "multiple",
    "normal", "other", "physical", "privileged", "proximate", "remote", "same", "sensitive",
    "specific", "unauthenticated", "unauthorized", "unknown", "unprivileged", "unspecified",
    "various",
];

const BE_FORMS: &[&str] = &["is", "are", "was", "were", "be", "been", "being", "has", "have", "had"];

const GERUND_CONTEXT: &[&str] = &[
    "by", "for", "when", "while", "before", "after", "without", "via", "from", "upon",
];

fn has_alnum(s: &str) -> bool {
    s.chars().any(char::is_alphanumeric)
}

fn is_capitalized(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
}

/// Tags each token. Total: every token gets exactly one tag.
pub fn pos_tag<S: AsRef<str>>(tokens: &[S]) -> Vec<PosTag> {
    let mut tags: Vec<PosTag> = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let raw = tok.as_ref();
        let word = raw.to_lowercase();
        let prev = i
            .checked_sub(1)
            .map(|p| tokens[p].as_ref().to_lowercase())
            .unwrap_or_default();
        let prev_tag = tags.last().copied();
        let in_list = |list: &[&str]| list.contains(&word.as_str());

        let tag = if !has_alnum(raw) {
            PosTag::Symbol
        } else if raw.starts_with(|c: char| c.is_ascii_digit()) {
            PosTag::Number
        } else if word == "not" || word == "never" {
            PosTag::Adverb
        } else if i > 0 && is_capitalized(raw) && !in_list(FINITE_VERBS) {
            // Mid-sentence capitalization marks vendor and product names.
            PosTag::Noun
        } else if in_list(MODALS) || in_list(FINITE_VERBS) {
            PosTag::Verb
        } else if in_list(PREPOSITIONS) {
            PosTag::Preposition
        } else if in_list(DETERMINERS) {
            PosTag::Determiner
        } else if in_list(PRONOUNS) {
            PosTag::Pronoun
        } else if in_list(CONJUNCTIONS) {
            PosTag::Other
        } else if ((prev == "to" || MODALS.contains(&prev.as_str())) && in_list(BASE_VERBS))
            || matches!(prev.as_str(), "not" | "does" | "do" | "did" | "never")
            || (word.ends_with("ing") && GERUND_CONTEXT.contains(&prev.as_str()))
            || (word.ends_with("ed")
                && (BE_FORMS.contains(&prev.as_str()) || prev_tag == Some(PosTag::Adverb)))
        {
            PosTag::Verb
        } else if in_list(ADJECTIVES) {
            PosTag::Adjective
        } else if word.len() > 4 && word.ends_with("ly") {
            PosTag::Adverb
        } else if ["ous", "ful", "ive", "able", "ible", "less"]
            .iter()
            .any(|s| word.len() > s.len() + 2 && word.ends_with(s))
        {
            PosTag::Adjective
        } else {
            PosTag::Noun
        };
        tags.push(tag);
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use PosTag::*;

    #[test]
    fn lexicon_and_suffix_examples() {
        assert_eq!(
            pos_tag(&["allows", "remote", "attackers"]),
            [Verb, Adjective, Noun]
        );
        assert_eq!(pos_tag(&["via"]), [Preposition]);
        assert_eq!(pos_tag(&["0.9"]), [Number]);
        assert_eq!(pos_tag(&[","]), [Symbol]);
        assert!(pos_tag::<&str>(&[]).is_empty());
    }

    #[test]
    fn context_rules() {
        let toks = [
            "Exiv2", "before", "0.9", "does", "not", "null", "terminate", "strings", "before",
            "calling", "sscanf",
        ];
        assert_eq!(
            pos_tag(&toks),
            [Noun, Preposition, Number, Verb, Adverb, Verb, Noun, Noun, Preposition, Verb, Noun]
        );
        assert_eq!(
            pos_tag(&["to", "execute", "arbitrary", "code"]),
            [Preposition, Verb, Adjective, Noun]
        );
        assert_eq!(pos_tag(&["improperly", "processes"]), [Adverb, Verb]);
        // Product names keep their capitalization cue.
        assert_eq!(pos_tag(&["Microsoft", "Access"]), [Noun, Noun]);
    }
}
