//! Fixed-grid assay batteries.
//!
//! Unlike the adaptive ladder, these batteries walk a predetermined grid of
//! loads and score every cell: the dual-task battery measures how a second
//! concurrent demand degrades counting, and the agent-operation battery
//! measures how counting and verbatim-copy demands degrade an embedded
//! procedural task. Both expose their scoring as pure functions over trial
//! outcomes so that live runs and recorded fixtures share one code path.

pub mod agent;
pub mod dual;

use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum BatteryError {
    #[error("task file {path}, line {line}: {message}")]
    TaskFile { path: String, line: usize, message: String },
    #[error("task file {path}: {message}")]
    TaskFileIo { path: String, message: String },
    #[error("benchmark condition requires at least one task")]
    NoTasks,
    #[error("gateway closed mid-battery")]
    Aborted,
    #[error("invalid battery data: {0}")]
    Config(String),
}

/// Locates the first JSON object in a reply. Returns the object and whether
/// the entire trimmed reply was exactly that object (strict formatting).
pub(crate) fn find_json_object(text: &str) -> Option<(Value, bool)> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
            if v.is_object() {
                return Some((v, true));
            }
        }
    }
    for (start, _) in text.char_indices().filter(|(_, c)| *c == '{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if v.is_object() {
                return Some((v, false));
            }
        }
    }
    None
}

/// Integer field that tolerates numeric strings.
pub(crate) fn value_as_i64(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_object_is_the_whole_reply() {
        let (v, strict) = find_json_object(r#"  {"count": 3, "answer": "none"}  "#).unwrap();
        assert!(strict);
        assert_eq!(v["count"], 3);
    }

    #[test]
    fn embedded_object_is_found_but_not_strict() {
        let text = "Sure! Here is the result:\n```json\n{\"count\": 41, \"answer\": \"none\"}\n```";
        let (v, strict) = find_json_object(text).unwrap();
        assert!(!strict);
        assert_eq!(v["count"], 41);
    }

    #[test]
    fn leading_garbage_braces_are_skipped() {
        let text = "{not json} then {\"count\": 7}";
        let (v, strict) = find_json_object(text).unwrap();
        assert!(!strict);
        assert_eq!(v["count"], 7);
    }

    #[test]
    fn no_object_yields_none() {
        assert!(find_json_object("forty-one").is_none());
        assert!(find_json_object("").is_none());
        assert!(find_json_object("[1, 2, 3]").is_none());
    }

    #[test]
    fn numeric_strings_count_as_integers() {
        assert_eq!(value_as_i64(&serde_json::json!(12)), Some(12));
        assert_eq!(value_as_i64(&serde_json::json!("12")), Some(12));
        assert_eq!(value_as_i64(&serde_json::json!(" 12 ")), Some(12));
        assert_eq!(value_as_i64(&serde_json::json!("twelve")), None);
        assert_eq!(value_as_i64(&serde_json::json!(12.5)), None);
    }
}
