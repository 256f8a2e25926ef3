//! Recovering a JSON document from model output that may be wrapped in code
//! fences or surrounded by prose.

use serde_json::Value;

/// Removes a surrounding Markdown code fence (with or without a language tag).
pub fn strip_code_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // Drop the info string (`json`, `JSON`, ...) on the opening line.
    let rest = match rest.find('\n') {
        Some(i) if rest[..i].chars().all(|c| c.is_ascii_alphanumeric()) => &rest[i + 1..],
        _ => rest,
    };
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// First balanced `{...}` or `[...]` span, respecting string literals.
pub fn first_balanced(s: &str) -> Option<&str> {
    let mut in_str = false;
    let mut esc = false;
    let mut stack: Vec<char> = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        if in_str {
            if esc {
                esc = false;
            } else if ch == '\\' {
                esc = true;
            } else if ch == '"' {
                in_str = false;
            }
            continue;
        }
        match ch {
            '"' if start.is_some() => in_str = true,
            '{' | '[' => {
                if start.is_none() {
                    start = Some(i);
                }
                stack.push(ch);
            }
            '}' | ']' if start.is_some() => {
                let open = stack.pop()?;
                if (open == '{') != (ch == '}') {
                    stack.clear();
                    start = None;
                    continue;
                }
                if stack.is_empty() {
                    return Some(&s[start?..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Strict parse after fence stripping, falling back to the first balanced
/// object in the text.
pub fn parse_lenient(raw: &str) -> Result<Value, String> {
    let body = strip_code_fences(raw);
    match serde_json::from_str::<Value>(body) {
        Ok(v) => Ok(v),
        Err(strict) => {
            let span = first_balanced(body).ok_or_else(|| format!("not JSON: {strict}"))?;
            serde_json::from_str(span).map_err(|e| format!("not JSON: {e}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_fences() {
        assert_eq!(strip_code_fences("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(strip_code_fences("```\n[1]\n```"), "[1]");
        assert_eq!(strip_code_fences("  {\"a\":1} "), "{\"a\":1}");
    }

    #[test]
    fn finds_object_inside_prose() {
        let v = parse_lenient("Sure! Here it is: {\"k\": \"}\"} hope that helps").unwrap();
        assert_eq!(v["k"], "}");
    }

    #[test]
    fn rejects_non_json() {
        assert!(parse_lenient("no json here").is_err());
        assert!(parse_lenient("{unclosed").is_err());
        assert!(parse_lenient("").is_err());
    }
}
