//! Shared helpers for the line-oriented log formats.

/// Shortest decimal that parses back to the identical binary64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Machine ids: non-empty ASCII letters, digits, `_` and `-`.
pub fn is_valid_machine_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Escapes `\`, `,`, CR and LF so a free-text field fits in one CSV-ish column.
pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ',' => out.push_str("\\,"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Splits a line on unescaped commas and unescapes every field.
pub(crate) fn split_escaped(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('\\') => cur.push('\\'),
                Some(',') => cur.push(','),
                Some('n') => cur.push('\n'),
                Some('r') => cur.push('\r'),
                Some(other) => return Err(format!("bad escape `\\{other}`")),
                None => return Err("dangling escape".to_string()),
            },
            ',' => fields.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    fields.push(cur);
    Ok(fields)
}
