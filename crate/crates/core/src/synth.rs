//! Template-driven synthetic CVE descriptions with known aspect spans.
//!
//! Fillers are correlated with the vulnerability type the way real descriptions
//! are: the impact phrase is a strong cue, the product family and root cause are
//! weaker ones, and the attack vector is the noisiest aspect.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::CveRecord;
use crate::extract::{AspectKind, AspectSet, AspectSpan};

pub const SOURCE_TAG: &str = "synthetic";

/// Sentence skeleton used for one description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    /// `[type] in [product] allows [attacker] to [impact] via [vector]`
    TypeFirst,
    /// `[product] [root cause], which allows [attacker] to [impact] via [vector]`
    RootCauseFirst,
    /// `[type] in [product] [root cause], which allows ...`
    TypeAndRootCause,
}

#[derive(Debug, Clone)]
pub struct SynthCve {
    pub record: CveRecord,
    pub truth: AspectSet,
    pub template: Template,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Family {
    Web,
    Native,
}

struct TypeProfile {
    /// (singular phrase, plural phrase or "" when it has none)
    phrases: &'static [(&'static str, &'static str)],
    weight: u32,
    family: Family,
    impacts: &'static [&'static str],
    vector: VectorClass,
    root_cause: RootClass,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VectorClass {
    Field,
    Crafted,
    Script,
    Http,
    Api,
    Other,
}

const VECTOR_CLASSES: [VectorClass; 6] = [
    VectorClass::Field,
    VectorClass::Crafted,
    VectorClass::Script,
    VectorClass::Http,
    VectorClass::Api,
    VectorClass::Other,
];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum RootClass {
    Input,
    Boundary,
    Handling,
    Design,
    Access,
    Race,
    Origin,
    Configuration,
    Serialization,
    Environment,
    Atomicity,
    /// Picked at random from the miscellaneous classes.
    Mixed,
}

const MIXED_ROOTS: [RootClass; 6] = [
    RootClass::Design,
    RootClass::Access,
    RootClass::Race,
    RootClass::Serialization,
    RootClass::Atomicity,
    RootClass::Handling,
];

const ALL_ROOTS: [RootClass; 11] = [
    RootClass::Input,
    RootClass::Boundary,
    RootClass::Handling,
    RootClass::Design,
    RootClass::Access,
    RootClass::Race,
    RootClass::Origin,
    RootClass::Configuration,
    RootClass::Serialization,
    RootClass::Environment,
    RootClass::Atomicity,
];

const PROFILES: &[TypeProfile] = &[
    TypeProfile {
        phrases: &[
            ("Cross-site scripting (XSS) vulnerability", "cross-site scripting (XSS) vulnerabilities"),
            ("XSS vulnerability", "XSS vulnerabilities"),
            ("Cross site scripting flaw", "cross site scripting flaws"),
        ],
        weight: 26,
        family: Family::Web,
        impacts: &[
            "inject arbitrary web script or HTML",
            "inject arbitrary web script",
        ],
        vector: VectorClass::Field,
        root_cause: RootClass::Input,
    },
    TypeProfile {
        phrases: &[
            ("SQL injection vulnerability", "SQL injection vulnerabilities"),
            ("Blind SQL injection vulnerability", "blind SQL injection vulnerabilities"),
        ],
        weight: 18,
        family: Family::Web,
        impacts: &["execute arbitrary SQL commands"],
        vector: VectorClass::Field,
        root_cause: RootClass::Input,
    },
    TypeProfile {
        phrases: &[
            ("Buffer overflow", "buffer overflows"),
            ("Stack-based buffer overflow", "stack-based buffer overflows"),
            ("Heap-based buffer overflow", "heap-based buffer overflows"),
        ],
        weight: 20,
        family: Family::Native,
        impacts: &[
            "execute arbitrary code or cause a denial of service (application crash)",
            "cause a denial of service (memory corruption) or possibly execute arbitrary code",
            "cause a denial of service (daemon crash)",
        ],
        vector: VectorClass::Crafted,
        root_cause: RootClass::Boundary,
    },
    TypeProfile {
        phrases: &[
            ("Directory traversal vulnerability", "directory traversal vulnerabilities"),
            ("Path traversal vulnerability", "path traversal vulnerabilities"),
        ],
        weight: 6,
        family: Family::Web,
        impacts: &["read arbitrary files", "read or write arbitrary files"],
        vector: VectorClass::Field,
        root_cause: RootClass::Input,
    },
    TypeProfile {
        phrases: &[
            ("Cross-site request forgery (CSRF) vulnerability", "cross-site request forgery (CSRF) vulnerabilities"),
            ("CSRF vulnerability", "CSRF vulnerabilities"),
        ],
        weight: 5,
        family: Family::Web,
        impacts: &[
            "hijack the authentication of administrators for requests that change the configuration",
            "hijack the authentication of arbitrary users",
        ],
        vector: VectorClass::Http,
        root_cause: RootClass::Origin,
    },
    TypeProfile {
        phrases: &[
            ("PHP remote file inclusion vulnerability", "PHP remote file inclusion vulnerabilities"),
            ("Local file inclusion vulnerability", "local file inclusion vulnerabilities"),
        ],
        weight: 4,
        family: Family::Web,
        impacts: &["execute arbitrary PHP code"],
        vector: VectorClass::Field,
        root_cause: RootClass::Input,
    },
    TypeProfile {
        phrases: &[("Use-after-free vulnerability", "use-after-free vulnerabilities")],
        weight: 3,
        family: Family::Native,
        impacts: &[
            "execute arbitrary code or cause a denial of service (heap memory corruption)",
            "execute arbitrary code in the renderer process",
        ],
        vector: VectorClass::Script,
        root_cause: RootClass::Handling,
    },
    TypeProfile {
        phrases: &[("Integer overflow", "integer overflows")],
        weight: 3,
        family: Family::Native,
        impacts: &[
            "cause a denial of service (heap corruption) or possibly have unspecified other impact",
            "trigger an out-of-bounds write and execute arbitrary code",
        ],
        vector: VectorClass::Crafted,
        root_cause: RootClass::Boundary,
    },
    TypeProfile {
        phrases: &[("Untrusted search path vulnerability", "untrusted search path vulnerabilities")],
        weight: 2,
        family: Family::Native,
        impacts: &["gain privileges", "execute arbitrary code with the privileges of the user"],
        vector: VectorClass::Other,
        root_cause: RootClass::Environment,
    },
    TypeProfile {
        phrases: &[("Format string vulnerability", "format string vulnerabilities")],
        weight: 2,
        family: Family::Native,
        impacts: &["execute arbitrary code or read process memory"],
        vector: VectorClass::Field,
        root_cause: RootClass::Input,
    },
    TypeProfile {
        phrases: &[("CRLF injection vulnerability", "CRLF injection vulnerabilities")],
        weight: 1,
        family: Family::Web,
        impacts: &["inject arbitrary HTTP headers and conduct HTTP response splitting attacks"],
        vector: VectorClass::Http,
        root_cause: RootClass::Input,
    },
    TypeProfile {
        phrases: &[("XML external entity (XXE) vulnerability", "XML external entity (XXE) vulnerabilities")],
        weight: 1,
        family: Family::Web,
        impacts: &["read arbitrary files or conduct server-side request forgery attacks"],
        vector: VectorClass::Crafted,
        root_cause: RootClass::Configuration,
    },
    TypeProfile {
        phrases: &[
            ("Open redirect vulnerability", "open redirect vulnerabilities"),
            ("Double free vulnerability", "double free vulnerabilities"),
            ("NULL pointer dereference", ""),
            ("Command injection vulnerability", "command injection vulnerabilities"),
            ("Session fixation vulnerability", ""),
        ],
        weight: 9,
        family: Family::Web,
        impacts: &[
            "redirect users to arbitrary web sites and conduct phishing attacks",
            "execute arbitrary commands",
            "hijack web sessions",
        ],
        vector: VectorClass::Api,
        root_cause: RootClass::Mixed,
    },
];

const GENERIC_IMPACTS: &[&str] = &[
    "have unspecified impact",
    "cause a denial of service",
    "obtain sensitive information",
    "bypass intended access restrictions",
];

const PARAMS: &[&str] = &[
    "id", "name", "page", "user", "cat", "search", "q", "file", "path", "lang", "sort", "title",
    "email", "url", "dir", "module",
];
const FILE_TYPES: &[&str] = &["PNG", "JPEG", "PDF", "TIFF", "font", "archive", "image", "MP4", "ELF", "XML"];
const HEADERS: &[&str] = &["Host", "Referer", "User-Agent", "Cookie", "Accept-Language"];
const API_FUNCS: &[&str] = &["getObject", "setAttribute", "parseConfig", "open_session", "readBlock"];
const WEB_FILES: &[&str] = &[
    "index.php", "admin/index.php", "login.php", "search.php", "view.php", "admin.php",
    "upload.php", "profile.php", "default.asp", "download.jsp",
];
const WEB_COMPONENTS: &[&str] = &[
    "the search module", "the admin panel", "the user profile page", "the comment form",
    "the file manager", "the guestbook module",
];
const WEB_PRODUCTS: &[&str] = &["Portal", "CMS", "Forum", "Gallery", "Blog", "Shop", "Wiki", "Board"];
const NATIVE_FUNCS: &[&str] = &[
    "parse_header", "read_chunk", "decode_frame", "png_read_row", "xmlParseNode",
    "tiff_decode", "load_font", "inflate_block",
];
const NATIVE_FILES: &[&str] = &["parser.c", "decoder.c", "io.c", "src/format.c", "lib/read.c"];
const NATIVE_PRODUCTS: &[&str] = &["Library", "Player", "Viewer", "Server", "Kernel", "Toolkit"];
const SYLLABLES: &[&str] = &[
    "ac", "ber", "cor", "dex", "el", "fin", "gal", "hex", "ion", "jet", "kor", "lum", "mor",
    "nex", "ori", "pix", "quo", "ros", "syn", "tor", "ul", "vex", "wor", "zan",
];

fn pick<R: Rng>(rng: &mut R, items: &[&'static str]) -> &'static str {
    items[rng.gen_range(0..items.len())]
}

fn name<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=3);
    let mut s: String = (0..n).map(|_| pick(rng, SYLLABLES)).collect();
    s[..1].make_ascii_uppercase();
    s
}

fn version<R: Rng>(rng: &mut R) -> String {
    let v = format!("{}.{}", rng.gen_range(0..12), rng.gen_range(0..20));
    match rng.gen_range(0..4) {
        0 => format!("before {v}"),
        1 => format!("{v} and earlier"),
        2 => format!("through {v}"),
        _ => v,
    }
}

fn product<R: Rng>(rng: &mut R, family: Family) -> String {
    let vendor = name(rng);
    match family {
        Family::Web => {
            let app = format!("{} {}", name(rng), pick(rng, WEB_PRODUCTS));
            match rng.gen_range(0..3) {
                0 => format!("{} in {vendor} {app} {}", pick(rng, WEB_FILES), version(rng)),
                1 => format!("{} in {vendor} {app} {}", pick(rng, WEB_COMPONENTS), version(rng)),
                _ => format!("{vendor} {app} {}", version(rng)),
            }
        }
        Family::Native => {
            let lib = format!("{} {}", name(rng), pick(rng, NATIVE_PRODUCTS));
            match rng.gen_range(0..3) {
                0 => format!(
                    "the {} function in {} in {vendor} {lib} {}",
                    pick(rng, NATIVE_FUNCS),
                    pick(rng, NATIVE_FILES),
                    version(rng)
                ),
                1 => format!("{} in {vendor} {lib} {}", pick(rng, NATIVE_FILES), version(rng)),
                _ => format!("{vendor} {lib} {}", version(rng)),
            }
        }
    }
}

fn vector_text<R: Rng>(rng: &mut R, class: VectorClass) -> String {
    match class {
        VectorClass::Field => match rng.gen_range(0..3) {
            0 => format!("via the {} parameter", pick(rng, PARAMS)),
            1 => format!("via the {} field", pick(rng, PARAMS)),
            _ => format!("via the {} argument", pick(rng, PARAMS)),
        },
        VectorClass::Crafted => match rng.gen_range(0..3) {
            0 => format!("via a crafted {} file", pick(rng, FILE_TYPES)),
            1 => format!("via malformed {} data", pick(rng, FILE_TYPES)),
            _ => "via a long string".to_string(),
        },
        VectorClass::Script => match rng.gen_range(0..2) {
            0 => "by executing a malicious script".to_string(),
            _ => "via a crafted script".to_string(),
        },
        VectorClass::Http => match rng.gen_range(0..3) {
            0 => "via a crafted HTTP request".to_string(),
            1 => "via a long URL".to_string(),
            _ => format!("via the {} HTTP header", pick(rng, HEADERS)),
        },
        VectorClass::Api => match rng.gen_range(0..2) {
            0 => format!("via a call to the {} API", pick(rng, API_FUNCS)),
            _ => "via a crafted ioctl call".to_string(),
        },
        VectorClass::Other => match rng.gen_range(0..2) {
            0 => "via unknown vectors".to_string(),
            _ => "via a Trojan horse library in the current working directory".to_string(),
        },
    }
}

fn root_cause_text<R: Rng>(rng: &mut R, class: RootClass) -> String {
    let class = match class {
        RootClass::Mixed => MIXED_ROOTS[rng.gen_range(0..MIXED_ROOTS.len())],
        c => c,
    };
    let opts: &[&str] = match class {
        RootClass::Input => &[
            "does not properly sanitize user-supplied input",
            "does not validate the {p} value",
            "fails to filter special characters",
            "does not escape HTML entities",
            "improperly neutralizes user input",
        ],
        RootClass::Boundary => &[
            "does not check the length of the {p} value",
            "does not null terminate strings before calling sscanf",
            "does not validate the size of {t} headers",
            "uses an incorrect array index",
        ],
        RootClass::Handling => &[
            "does not properly handle {t} objects",
            "improperly releases memory",
            "does not initialize a {t} structure",
        ],
        RootClass::Design => &[
            "uses a hard-coded password",
            "stores credentials in cleartext",
            "uses predictable session identifiers",
        ],
        RootClass::Access => &[
            "does not properly restrict access to the {p} page",
            "does not check permissions",
            "does not require authentication",
        ],
        RootClass::Race => &["has a time-of-check time-of-use window"],
        RootClass::Origin => &[
            "does not verify the origin of requests",
            "does not validate the certificate",
        ],
        RootClass::Configuration => &["uses an insecure default configuration"],
        RootClass::Serialization => &["does not restrict deserialized classes"],
        RootClass::Environment => &["trusts the PATH environment variable"],
        RootClass::Atomicity => &["does not perform atomic updates of the {t} file"],
        RootClass::Mixed => unreachable!(),
    };
    pick(rng, opts)
        .replace("{p}", pick(rng, PARAMS))
        .replace("{t}", &pick(rng, FILE_TYPES).to_lowercase())
}

fn attacker_text<R: Rng>(rng: &mut R, profile: &TypeProfile) -> &'static str {
    let roll = rng.gen_range(0..100);
    if profile.root_cause == RootClass::Environment {
        return if roll < 85 { "local users" } else { "remote attackers" };
    }
    match profile.family {
        Family::Web => match roll {
            0..=69 => pick(rng, &["remote attackers", "a remote attacker", "remote unauthenticated attackers"]),
            70..=91 => pick(rng, &["remote authenticated users", "authenticated users", "remote authenticated administrators"]),
            _ => "attackers",
        },
        Family::Native => match roll {
            0..=54 => pick(rng, &["remote attackers", "a remote attacker"]),
            55..=74 => "local users",
            75..=89 => "context-dependent attackers",
            90..=94 => "physically proximate attackers",
            _ => "attackers",
        },
    }
}

#[derive(Default)]
struct Builder {
    text: String,
    spans: Vec<(AspectKind, usize, usize)>,
}

impl Builder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
    }
    fn span(&mut self, kind: AspectKind, s: &str) {
        let start = self.text.len();
        self.text.push_str(s);
        self.spans.push((kind, start, self.text.len()));
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Options controlling how far generated descriptions stray from the bare templates.
#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    /// Probability of omitting the attack vector.
    pub drop_vector: f64,
    /// Probability of a trailing "aka" clause or a second sentence.
    pub trailer: f64,
    /// Probability of replacing the type-specific impact with a generic one.
    pub impact_noise: f64,
    /// Probability of drawing the vector class uniformly instead of from the type.
    pub vector_noise: f64,
    /// Probability of drawing the root-cause class uniformly instead of from the type.
    pub root_noise: f64,
    /// Whether the type-and-root-cause template is used.
    pub mixed_template: bool,
}

impl SynthOptions {
    /// Bare templates with every slot filled.
    pub fn strict() -> Self {
        Self {
            drop_vector: 0.0,
            trailer: 0.0,
            impact_noise: 0.15,
            vector_noise: 0.5,
            root_noise: 0.35,
            mixed_template: false,
        }
    }

    /// Desk-corpus defaults.
    pub fn desk() -> Self {
        Self {
            drop_vector: 0.12,
            trailer: 0.15,
            impact_noise: 0.15,
            vector_noise: 0.5,
            root_noise: 0.35,
            mixed_template: true,
        }
    }
}

fn one<R: Rng>(rng: &mut R, id: &str, opts: &SynthOptions) -> SynthCve {
    let total: u32 = PROFILES.iter().map(|p| p.weight).sum();
    let mut roll = rng.gen_range(0..total);
    let profile = PROFILES
        .iter()
        .find(|p| {
            if roll < p.weight {
                true
            } else {
                roll -= p.weight;
                false
            }
        })
        .unwrap();

    let template = match rng.gen_range(0..100) {
        0..=44 => Template::TypeFirst,
        45..=69 if opts.mixed_template => Template::TypeAndRootCause,
        45..=69 => Template::TypeFirst,
        _ => Template::RootCauseFirst,
    };

    let plural = rng.gen_bool(0.1);
    let (singular, plural_form) = *profile.phrases.choose(rng).unwrap();
    let (vt, many) = if plural && !plural_form.is_empty() {
        (plural_form, true)
    } else {
        (singular, false)
    };
    let product = product(rng, profile.family);
    let root_class = if rng.gen_bool(opts.root_noise) {
        ALL_ROOTS[rng.gen_range(0..ALL_ROOTS.len())]
    } else {
        profile.root_cause
    };
    let root = root_cause_text(rng, root_class);
    let attacker = attacker_text(rng, profile);
    let impact = if rng.gen_bool(opts.impact_noise) {
        pick(rng, GENERIC_IMPACTS)
    } else {
        pick(rng, profile.impacts)
    };
    let vclass = if rng.gen_bool(opts.vector_noise) {
        VECTOR_CLASSES[rng.gen_range(0..VECTOR_CLASSES.len())]
    } else {
        profile.vector
    };
    let vector = (!rng.gen_bool(opts.drop_vector)).then(|| vector_text(rng, vclass));

    let mut b = Builder::default();
    let mut verb = "allows";
    match template {
        Template::TypeFirst | Template::TypeAndRootCause => {
            if many {
                b.push("Multiple ");
                b.span(AspectKind::VulnerabilityType, vt);
                verb = "allow";
            } else {
                b.span(AspectKind::VulnerabilityType, vt);
            }
            b.push(" in ");
            b.span(AspectKind::AffectedProduct, &product);
            if template == Template::TypeAndRootCause {
                b.push(" ");
                b.span(AspectKind::RootCause, &root);
                b.push(", which");
                verb = "allows";
            }
        }
        Template::RootCauseFirst => {
            b.span(AspectKind::AffectedProduct, &capitalize(&product));
            b.push(" ");
            b.span(AspectKind::RootCause, &root);
            b.push(", which");
        }
    }
    b.push(&format!(" {verb} "));
    b.span(AspectKind::AttackerType, attacker);
    b.push(" to ");
    b.span(AspectKind::Impact, impact);
    if let Some(v) = &vector {
        b.push(" ");
        b.span(AspectKind::AttackVector, v);
    }
    let trailer = rng.gen_bool(opts.trailer);
    if trailer && rng.gen_bool(0.5) {
        b.push(&format!(", aka Bug {}", rng.gen_range(10000..99999)));
        b.push(".");
    } else if trailer {
        b.push(". NOTE: this issue exists because of an incomplete fix for an earlier report.");
    } else {
        b.push(".");
    }

    let record = CveRecord::new(id, &b.text, SOURCE_TAG).expect("generated records are valid");
    let mut truth = AspectSet::empty(id, &record.description);
    for (kind, start, end) in b.spans {
        truth
            .insert(AspectSpan {
                kind,
                start,
                end,
                text: b.text[start..end].to_string(),
            })
            .expect("generated spans are consistent");
    }
    SynthCve {
        record,
        truth,
        template,
    }
}

/// `count` descriptions with ids CVE-<year>-<seq>, deterministic in `seed`.
pub fn generate(count: usize, seed: u64, opts: &SynthOptions) -> Vec<SynthCve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let year = 2005 + (i % 15) as u16;
            let id = format!("CVE-{year}-{:05}", 10000 + i);
            one(&mut rng, &id, opts)
        })
        .collect()
}

/// Descriptions that follow the two official templates exactly.
pub fn template_corpus(count: usize, seed: u64) -> Vec<SynthCve> {
    generate(count, seed, &SynthOptions::strict())
}

/// Desk-scale corpus with trailers, omitted vectors and mixed templates.
pub fn desk_corpus(count: usize, seed: u64) -> Vec<SynthCve> {
    generate(count, seed, &SynthOptions::desk())
}

/// Serializes records in the NVD 1.1 JSON feed layout.
pub fn to_json_feed(records: &[CveRecord]) -> String {
    let items: Vec<_> = records
        .iter()
        .map(|r| {
            json!({"cve": {
                "CVE_data_meta": {"ID": r.id},
                "description": {"description_data": [{"lang": "en", "value": r.description}]}
            }})
        })
        .collect();
    serde_json::to_string(&json!({"CVE_data_type": "CVE", "CVE_Items": items}))
        .expect("feed serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_cve_feed, FeedFormat};
    use crate::dataset::LabelTaxonomy;

    #[test]
    fn deterministic_and_valid() {
        let a = desk_corpus(50, 9);
        let b = desk_corpus(50, 9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.truth, y.truth);
            assert!(x.truth.len() >= 4);
        }
    }

    #[test]
    fn feed_round_trip() {
        let recs: Vec<CveRecord> = desk_corpus(20, 1).into_iter().map(|s| s.record).collect();
        let feed = to_json_feed(&recs);
        let report = parse_cve_feed(feed.as_bytes(), FeedFormat::JsonFeed).unwrap();
        assert_eq!(report.records.len(), 20);
        for (a, b) in report.records.iter().zip(&recs) {
            assert_eq!((&a.id, &a.description), (&b.id, &b.description));
        }
    }

    #[test]
    fn root_cause_fillers_hit_their_class() {
        let rc = LabelTaxonomy::builtin(AspectKind::RootCause);
        let expect = [
            (RootClass::Input, "Input Validation Error"),
            (RootClass::Boundary, "Boundary Condition Error"),
            (RootClass::Handling, "Failure to Handle Exceptional Conditions"),
            (RootClass::Design, "Design Error"),
            (RootClass::Access, "Access Validation Error"),
            (RootClass::Race, "Race Condition Error"),
            (RootClass::Origin, "Origin Validation Error"),
            (RootClass::Configuration, "Configuration Error"),
            (RootClass::Serialization, "Serialization Error"),
            (RootClass::Environment, "Environment Error"),
            (RootClass::Atomicity, "Atomicity Error"),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (class, label) in expect {
            for _ in 0..40 {
                let t = root_cause_text(&mut rng, class);
                assert_eq!(rc.labels[rc.canonicalize(&t)], label, "{t}");
            }
        }
    }

    #[test]
    fn vector_fillers_hit_their_class() {
        let av = LabelTaxonomy::builtin(AspectKind::AttackVector);
        let expect = [
            (VectorClass::Field, "Via field, arguments or parameter"),
            (VectorClass::Crafted, "Via some crafted data"),
            (VectorClass::Script, "By executing the script"),
            (VectorClass::Http, "HTTP protocol correlation"),
            (VectorClass::Api, "Call API"),
            (VectorClass::Other, "Others"),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (class, label) in expect {
            for _ in 0..30 {
                let t = vector_text(&mut rng, class);
                assert_eq!(av.labels[av.canonicalize(&t)], label, "{t}");
            }
        }
    }

    #[test]
    fn type_phrases_hit_their_class() {
        let vt = LabelTaxonomy::builtin(AspectKind::VulnerabilityType);
        for (i, p) in PROFILES.iter().enumerate() {
            for (s, pl) in p.phrases {
                assert_eq!(vt.canonicalize(s), i, "{s}");
                if !pl.is_empty() {
                    assert_eq!(vt.canonicalize(pl), i, "{pl}");
                }
            }
        }
    }
}
