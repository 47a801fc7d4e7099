//! Prompt construction and strict parsing of extraction-service responses.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EntityError, Result};

/// System message sent with every extraction request. The schema it demands
/// is exactly what `parse_extraction` accepts.
pub const SYSTEM_PROMPT: &str = r##"You are a clinical NLP assistant specializing in information extraction from medical ECG (electrocardiogram) reports. Your role is to serve as a strict, schema-aware entity extractor that produces structured annotations for downstream machine learning and clinical data analysis tasks.

Please learn the knowledge including common ECG terminologies and abbreviations first:

**Common ECG terminologies**:
Normal: "normal sinus rhythm", "normal ecg", "sinus rhythm", "within normal limits", "no abnormalities detected", ...
Abnormal: "atrial fibrillation", "ventricular tachycardia", "left ventricular hypertrophy", "right bundle branch block", "ST elevation, "T wave inversion", "prolonged QT interval", "first degree AV block", "pacemaker rhythm", ...
Uncertain: "possible infarction", "borderline ecg", "nonspecific ST-T changes", "probable left ventricular hypertrophy", "cannot rule out ischemia", ...

**Demo Abbreviations**:
NSR: "Normal Sinus Rhythm",
AFIB: "Atrial Fibrillation",
AFL: "Atrial Flutter",
VT": "Ventricular Tachycardia",
PVC: "Premature Ventricular Contraction",
PAC: "Premature Atrial Contraction",
LVH: "Left Ventricular Hypertrophy",
RVH: "Right Ventricular Hypertrophy",
RBBB: "Right Bundle Branch Block",
LBBB: "Left Bundle Branch Block",
AVB1: "First Degree AV Block",
AVB2: "Second Degree AV Block",
AVB3: "Third Degree AV Block",
STEMI: "ST-Elevation Myocardial Infarction",
NSTEMI: "Non-ST-Elevation Myocardial Infarction",
TW": "T Wave Inversion",
QTc: "Corrected QT Interval",
BBB: "Bundle Branch Block",
LAD: "Left Axis Deviation",
RAD: "Right Axis Deviation",
SA: "Sinoatrial",
PVCs: "Premature Ventricular Contractions",
PACs: "Premature Atrial Contractions"

Your primary task is to identify all relevant entities in an ECG report and then classify based on diagnosis certainty, afterwards output them in a **strictly formatted JSON object** that conforms exactly to the following schema:

```json
{
    "global": [...],    # All ECG entities from the provided report
    "classification": {
        "normal": [...],     # Entities confidently labeled as clinically "normal" (e.g., "normal ECG", "sinus rhythm")
        "abnormal": [...],   # Entities labeled as clinically "abnormal" (e.g., "atrial fibrillation", "ST elevation")
        "uncertain": [...]   # Entities with uncertainty or ambiguity in the report context (e.g., "possible LVH", "undetermined".)
    }
}
```

**Strict constraints**:

- Return **only** the JSON object. Do not include any natural language explanation or commentary.
- Do not hallucinate or invent fields not specified above.
- Do not extract adjectives or modifiers (e.g., "nonspecific", "mild", "marked", "possibly", "likely") as standalone entities. If a descriptive modifier qualifies an entity (e.g., "nonspecific ST-T changes", "likely normal ecg"), include it in the full entity string.
- Do not extract entire sentences or diagnostic phrases as a single entity. If a sentence contains multiple medical concepts, extract each as a separate entity.
- If an entity contains conjunctions (e.g., "and", "or", "and/or"), causal phrases (e.g., "due to", "with"), or multiple anatomical locations (e.g., "inferior/lateral"), you must split it into separate entities.
- If there are entities with clinically same meanings in the given report, only retain one with better expression.

**Some examples**:

- [Modifier + Entity]:
  Input: "lateral st-t changes are probably due to ventricular hypertrophy"
  Output: {"global": ["lateral st-t changes", "ventricular hypertrophy"], "classification": {"normal": [], "abnormal": ["lateral st-t changes", "ventricular hypertrophy"], "uncertain": []}}

- [Entity A with/and/or/'/' Entity B]:
  Input: "sinus rhythm with pacs. hypertrophy and/or ischemia. inferior/lateral st-t changes."
  Output: {"global": ["sinus rhythm", "pacs", "hypertrophy", "ischemia", "inferior st-t changes", "lateral st-t changes"], "classification": {"normal": ["sinus rhythm"], "abnormal": ["pacs", "hypertrophy", "ischemia", "inferior st-t changes", "lateral st-t changes"], "uncertain": []}}

- [Entity + Further Description]:
  Input: "inferior infarct - age undetermined. pacemaker rhythm - no further analysis. poor r wave progression - probable normal variant."
  Output: {"global": ["inferior infarct", "age undetermined", "pacemaker rhythm", "poor r wave progression", "probable normal variant"], "classification": {"normal": [], "abnormal": ["inferior infarct", "pacemaker rhythm", "poor r wave progression"], "uncertain": ["age undetermined", "probable normal variant"]}}  # "no further analysis" is not a medical entity

Your output will be used in real-life clinical settings. Any deviation from this format may cause serious issues in downstream applications. Be precise and compliant.
"##;

/// Per-report user message.
pub fn user_prompt(report_text: &str) -> String {
    format!(
        "Please extract all relevant clinical entities from the following ECG report.\n\n\
         Return the output strictly in the JSON format described in the system prompt.\n\
         Do not include any explanation or additional text.\n\n\
         ECG report text:\n\"{report_text}\""
    )
}

/// Entities extracted from one report, partitioned by diagnostic certainty.
/// `normal`, `abnormal` and `uncertain` are pairwise disjoint and every
/// classified entity appears in `global` (case-normalized).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub record_id: String,
    pub global: Vec<String>,
    pub normal: Vec<String>,
    pub abnormal: Vec<String>,
    pub uncertain: Vec<String>,
}

fn schema_err(path: &str, message: impl Into<String>) -> EntityError {
    EntityError::Schema { path: path.to_string(), message: message.into() }
}

/// Strip an optional Markdown code fence (``` or ```json) around the payload.
fn strip_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else { return trimmed };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    let rest = rest.strip_suffix("```").unwrap_or(rest);
    rest.trim()
}

/// Read a string array at `path`, trimming and case-folding each entity and
/// dropping exact duplicates (first occurrence wins).
fn entity_array(value: &Value, path: &str) -> Result<Vec<String>> {
    let arr = value.as_array().ok_or_else(|| schema_err(path, "expected an array"))?;
    let mut out: Vec<String> = Vec::with_capacity(arr.len());
    for (i, item) in arr.iter().enumerate() {
        let s = item
            .as_str()
            .ok_or_else(|| schema_err(&format!("{path}[{i}]"), "expected a string"))?;
        let folded = s.trim().to_lowercase();
        if folded.is_empty() {
            return Err(schema_err(&format!("{path}[{i}]"), "empty entity"));
        }
        if !out.contains(&folded) {
            out.push(folded);
        }
    }
    Ok(out)
}

/// Strict-schema parse of a response body: a JSON object with exactly the
/// keys `global` and `classification`, the latter holding exactly `normal`,
/// `abnormal` and `uncertain` string arrays. Code fences and surrounding
/// whitespace are tolerated; anything else is a schema error carrying the
/// offending path. Classified entities must appear in `global` and no entity
/// may carry two certainty roles.
pub fn parse_extraction(record_id: &str, text: &str) -> Result<ExtractionResult> {
    let body = strip_fences(text);
    let value: Value = serde_json::from_str(body)
        .map_err(|e| schema_err("$", format!("not valid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| schema_err("$", "expected a JSON object"))?;

    for key in obj.keys() {
        if key != "global" && key != "classification" {
            return Err(schema_err(&format!("$.{key}"), "unexpected key"));
        }
    }
    let global_v = obj.get("global").ok_or_else(|| schema_err("$.global", "missing key"))?;
    let class_v = obj
        .get("classification")
        .ok_or_else(|| schema_err("$.classification", "missing key"))?;
    let class = class_v
        .as_object()
        .ok_or_else(|| schema_err("$.classification", "expected an object"))?;
    for key in class.keys() {
        if key != "normal" && key != "abnormal" && key != "uncertain" {
            return Err(schema_err(&format!("$.classification.{key}"), "unexpected key"));
        }
    }

    let global = entity_array(global_v, "$.global")?;
    let mut roles: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (slot, name) in ["normal", "abnormal", "uncertain"].iter().enumerate() {
        let v = class
            .get(*name)
            .ok_or_else(|| schema_err(&format!("$.classification.{name}"), "missing key"))?;
        roles[slot] = entity_array(v, &format!("$.classification.{name}"))?;
    }

    for (slot, name) in ["normal", "abnormal", "uncertain"].iter().enumerate() {
        for (i, entity) in roles[slot].iter().enumerate() {
            let path = format!("$.classification.{name}[{i}]");
            if !global.contains(entity) {
                return Err(schema_err(&path, format!("entity {entity:?} not present in global")));
            }
            if roles.iter().take(slot).any(|earlier| earlier.contains(entity)) {
                return Err(schema_err(&path, format!("entity {entity:?} classified twice")));
            }
        }
    }

    let [normal, abnormal, uncertain] = roles;
    Ok(ExtractionResult { record_id: record_id.to_string(), global, normal, abnormal, uncertain })
}

/// Keep only confidently classified entities: the union of `normal` and
/// `abnormal` in first-occurrence order, with anything that also appears in
/// `uncertain` dropped.
pub fn filter_uncertain(result: &ExtractionResult) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for entity in result.normal.iter().chain(&result.abnormal) {
        if !result.uncertain.contains(entity) && !out.contains(entity) {
            out.push(entity.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_valid_response_parses() {
        let r = parse_extraction(
            "r1",
            r#"{"global":["sinus rhythm"],"classification":{"normal":["sinus rhythm"],"abnormal":[],"uncertain":[]}}"#,
        )
        .unwrap();
        assert_eq!(r.global, ["sinus rhythm"]);
        assert_eq!(r.normal, ["sinus rhythm"]);
        assert!(r.abnormal.is_empty() && r.uncertain.is_empty());
    }

    #[test]
    fn code_fences_and_whitespace_are_tolerated() {
        let fenced = "\n```json\n{\"global\":[\"pacs\"],\"classification\":{\"normal\":[],\"abnormal\":[\"pacs\"],\"uncertain\":[]}}\n```\n";
        let bare = "{\"global\":[\"pacs\"],\"classification\":{\"normal\":[],\"abnormal\":[\"pacs\"],\"uncertain\":[]}}";
        assert_eq!(parse_extraction("r", fenced).unwrap(), parse_extraction("r", bare).unwrap());
    }

    #[test]
    fn entities_are_trimmed_and_case_folded() {
        let r = parse_extraction(
            "r",
            r#"{"global":["  Sinus Rhythm ","PACs"],"classification":{"normal":["sinus rhythm"],"abnormal":["pacs"],"uncertain":[]}}"#,
        )
        .unwrap();
        assert_eq!(r.global, ["sinus rhythm", "pacs"]);
    }

    #[test]
    fn missing_classification_reports_its_path() {
        let err = parse_extraction("r", r#"{"global":[]}"#).unwrap_err();
        match err {
            EntityError::Schema { path, .. } => assert_eq!(path, "$.classification"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn extra_top_level_key_is_rejected() {
        let err = parse_extraction(
            "r",
            r#"{"global":[],"classification":{"normal":[],"abnormal":[],"uncertain":[]},"notes":1}"#,
        )
        .unwrap_err();
        match err {
            EntityError::Schema { path, .. } => assert_eq!(path, "$.notes"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_types_report_element_paths() {
        let err = parse_extraction(
            "r",
            r#"{"global":["ok",3],"classification":{"normal":[],"abnormal":[],"uncertain":[]}}"#,
        )
        .unwrap_err();
        match err {
            EntityError::Schema { path, .. } => assert_eq!(path, "$.global[1]"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn classified_entity_missing_from_global_is_rejected() {
        let err = parse_extraction(
            "r",
            r#"{"global":["pacs"],"classification":{"normal":["sinus rhythm"],"abnormal":[],"uncertain":[]}}"#,
        )
        .unwrap_err();
        match err {
            EntityError::Schema { path, .. } => assert_eq!(path, "$.classification.normal[0]"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn entity_in_two_roles_is_rejected() {
        let err = parse_extraction(
            "r",
            r#"{"global":["pacs"],"classification":{"normal":["pacs"],"abnormal":["pacs"],"uncertain":[]}}"#,
        )
        .unwrap_err();
        match err {
            EntityError::Schema { path, .. } => assert_eq!(path, "$.classification.abnormal[0]"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn worked_example_with_uncertain_descriptions() {
        let response = r#"{"global": ["inferior infarct", "age undetermined", "pacemaker rhythm", "poor r wave progression", "probable normal variant"], "classification": {"normal": [], "abnormal": ["inferior infarct", "pacemaker rhythm", "poor r wave progression"], "uncertain": ["age undetermined", "probable normal variant"]}}"#;
        let r = parse_extraction("ex3", response).unwrap();
        assert_eq!(r.abnormal, ["inferior infarct", "pacemaker rhythm", "poor r wave progression"]);
        assert_eq!(r.uncertain, ["age undetermined", "probable normal variant"]);
        assert_eq!(
            filter_uncertain(&r),
            ["inferior infarct", "pacemaker rhythm", "poor r wave progression"]
        );
    }

    #[test]
    fn filter_preserves_first_occurrence_order_and_drops_uncertain() {
        let r = ExtractionResult {
            record_id: "x".into(),
            global: vec!["a".into(), "b".into(), "c".into()],
            normal: vec!["a".into()],
            abnormal: vec!["b".into(), "c".into()],
            uncertain: vec!["c".into()],
        };
        assert_eq!(filter_uncertain(&r), ["a", "b"]);
        let empty = ExtractionResult {
            record_id: "y".into(),
            global: vec!["c".into()],
            normal: vec![],
            abnormal: vec![],
            uncertain: vec!["c".into()],
        };
        assert!(filter_uncertain(&empty).is_empty());
    }

    #[test]
    fn user_prompt_embeds_the_report_verbatim() {
        let p = user_prompt("sinus rhythm with pacs.");
        assert!(p.contains("\"sinus rhythm with pacs.\""));
        assert!(p.starts_with("Please extract all relevant clinical entities"));
    }
}
