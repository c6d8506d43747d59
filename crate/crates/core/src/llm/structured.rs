//! Pulling the structured part out of free-form model output.

use serde::de::DeserializeOwned;

/// Body of the first fenced code block (```` ```json ```` or a bare fence).
/// Falls back to the first balanced `{...}` span when the model skipped the
/// fence.
pub fn extract_json_block(text: &str) -> Option<&str> {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return Some(body[..end].trim());
        }
    }
    balanced_object(text)
}

fn balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_json_block<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let block = extract_json_block(text).ok_or_else(|| "no JSON block in output".to_string())?;
    serde_json::from_str(block).map_err(|e| format!("bad JSON block: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block() {
        let out = "Let me think.\n```json\n{\"a\": 1}\n```\nmore ```json\n{\"a\": 2}\n```";
        assert_eq!(extract_json_block(out), Some("{\"a\": 1}"));
    }

    #[test]
    fn bare_object_fallback() {
        let out = "Result: {\"a\": \"}{\", \"b\": {\"c\": 1}} trailing";
        assert_eq!(extract_json_block(out), Some("{\"a\": \"}{\", \"b\": {\"c\": 1}}"));
    }

    #[test]
    fn prose_only() {
        assert_eq!(extract_json_block("just words"), None);
        assert!(parse_json_block::<serde_json::Value>("just words").is_err());
    }
}
