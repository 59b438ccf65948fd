//! wasm-bindgen exports for the static demo in `www/`.

use serde_json::json;
use wasm_bindgen::prelude::*;

use vaf_core::eval;
use vaf_core::extract::{extract_text, Gazetteer};

/// Spans as JSON: `[{kind, title, start, end, text}]`, offsets in chars of
/// the normalized description, which is returned alongside.
pub fn extract_json(description: &str) -> String {
    let set = extract_text("input", description, &Gazetteer::builtin());
    let spans: Vec<_> = set
        .spans()
        .map(|s| {
            json!({
                "kind": s.kind.name(),
                "title": s.kind.title(),
                "start": s.start,
                "end": s.end,
                "text": s.text,
            })
        })
        .collect();
    json!({ "description": set.description, "spans": spans }).to_string()
}

/// A population of 0 means unbounded.
pub fn sample_size_of(population: f64, z: f64, e: f64) -> Result<u64, String> {
    if !(population >= 0.0 && population.fract() == 0.0) {
        return Err(format!("population must be a whole number, got {population}"));
    }
    let n = if population == 0.0 { u64::MAX } else { population as u64 };
    eval::sample_size(n, z, e).map_err(|e| e.to_string())
}

/// Parses two whitespace- or comma-separated lists of paired scores.
pub fn wilcoxon_json(a: &str, b: &str) -> Result<String, String> {
    let parse = |s: &str| -> Result<Vec<f64>, String> {
        s.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
            .collect()
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a.len() != b.len() {
        return Err(format!("{} scores paired with {}", a.len(), b.len()));
    }
    let pairs: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
    let w = eval::wilcoxon_signed_rank(&pairs).map_err(|e| e.to_string())?;
    Ok(json!({
        "n": w.n,
        "w_plus": w.w_plus,
        "w_minus": w.w_minus,
        "p_value": w.p_value,
        "p_greater": w.p_greater,
        "p_less": w.p_less,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn extract(description: &str) -> String {
    extract_json(description)
}

#[wasm_bindgen(js_name = sampleSize)]
pub fn sample_size(population: f64, z: f64, e: f64) -> Result<f64, JsError> {
    sample_size_of(population, z, e).map(|n| n as f64).map_err(|m| JsError::new(&m))
}

#[wasm_bindgen]
pub fn wilcoxon(a: &str, b: &str) -> Result<String, JsError> {
    wilcoxon_json(a, b).map_err(|m| JsError::new(&m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_json_has_spans() {
        let v: serde_json::Value = serde_json::from_str(&extract_json(
            "SQL injection vulnerability in login.php in Acme CMS 2.1 allows remote attackers to execute arbitrary SQL commands via the user parameter.",
        ))
        .unwrap();
        let kinds: Vec<&str> = v["spans"].as_array().unwrap().iter().map(|s| s["kind"].as_str().unwrap()).collect();
        assert!(kinds.contains(&"vulnerability_type"), "{kinds:?}");
        assert!(kinds.contains(&"attack_vector"), "{kinds:?}");
    }

    #[test]
    fn sample_size_wrapper() {
        assert_eq!(sample_size_of(0.0, 1.96, 0.05), Ok(385));
        assert_eq!(sample_size_of(10_000.0, 1.96, 0.05), Ok(370));
        assert!(sample_size_of(2.5, 1.96, 0.05).is_err());
    }

    #[test]
    fn wilcoxon_wrapper() {
        let v: serde_json::Value =
            serde_json::from_str(&wilcoxon_json("2 3 4 5 6 7", "1,1,1,1,1,1").unwrap()).unwrap();
        assert!((v["p_value"].as_f64().unwrap() - 0.03125).abs() < 1e-12);
        assert!(wilcoxon_json("1 2", "1").is_err());
        assert!(wilcoxon_json("1 x", "1 2").is_err());
    }
}
