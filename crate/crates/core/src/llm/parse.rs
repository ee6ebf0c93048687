//! Parsing enumerated candidate lists out of a chat reply.
//!
//! A label is a line that starts (after optional whitespace) with one to three
//! digits followed by `.` or `:` and then whitespace or end of line. Labels must
//! run `1..=k` in order. An item's text runs from its label to the next label
//! line and may span several lines. Text before the first label is ignored.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("expected {expected} enumerated items, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("label {found} appears where {expected} was expected")]
    OutOfOrder { expected: usize, found: usize },
    #[error("label {0} appears more than once")]
    DuplicateLabel(usize),
    #[error("item {0} is empty")]
    EmptyItem(usize),
    #[error("k must be at least 1")]
    InvalidK,
}

/// Returns `(label, byte offset where the item text starts)` for a label line.
fn label_of(line: &str) -> Option<(usize, usize)> {
    let indent = line.len() - line.trim_start().len();
    let rest = &line[indent..];
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 3 {
        return None;
    }
    let after = &rest[digits..];
    let mut chars = after.chars();
    match chars.next() {
        Some('.') | Some(':') => {}
        _ => return None,
    }
    match chars.next() {
        None => {}
        Some(c) if c.is_whitespace() => {}
        _ => return None,
    }
    let label = rest[..digits].parse().ok()?;
    Some((label, indent + digits + 1))
}

pub fn parse_candidates(response: &str, k: usize) -> Result<Vec<String>, FormatError> {
    if k == 0 {
        return Err(FormatError::InvalidK);
    }
    // (label, start of item text) in byte offsets into `response`
    let mut items: Vec<(usize, usize)> = Vec::new();
    let mut offset = 0;
    for line in response.split_inclusive('\n') {
        if let Some((label, start)) = label_of(line) {
            items.push((label, offset + start));
        }
        offset += line.len();
    }

    for (i, &(label, _)) in items.iter().enumerate() {
        if items[..i].iter().any(|&(l, _)| l == label) {
            return Err(FormatError::DuplicateLabel(label));
        }
        if label != i + 1 {
            return Err(FormatError::OutOfOrder {
                expected: i + 1,
                found: label,
            });
        }
    }
    if items.len() != k {
        return Err(FormatError::CountMismatch {
            expected: k,
            found: items.len(),
        });
    }

    let mut out = Vec::with_capacity(k);
    for (i, &(label, start)) in items.iter().enumerate() {
        let end = match items.get(i + 1) {
            // back up to the start of the next label's line
            Some(&(_, next)) => response[..next].rfind('\n').map_or(0, |p| p + 1),
            None => response.len(),
        };
        let text = response[start..end.max(start)].trim();
        if text.is_empty() {
            return Err(FormatError::EmptyItem(label));
        }
        out.push(text.to_string());
    }
    Ok(out)
}

/// Enumerates items as `1. a\n2. b...`, the shape the parser accepts.
pub fn render_candidates<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dot_labels() {
        let got = parse_candidates("1. A\n2. B\n3. C\n4. D\n5. E", 5).unwrap();
        assert_eq!(got, ["A", "B", "C", "D", "E"]);
    }

    #[test]
    fn colon_labels_count_mismatch() {
        assert_eq!(
            parse_candidates("1: A\n2: B", 5),
            Err(FormatError::CountMismatch {
                expected: 5,
                found: 2
            })
        );
        assert_eq!(parse_candidates("1: A\n2: B", 2).unwrap(), ["A", "B"]);
    }

    #[test]
    fn multi_line_item() {
        let got = parse_candidates("1. first\n2. second part\ncontinues here\n3. third", 3).unwrap();
        assert_eq!(got[1], "second part\ncontinues here");
    }

    #[test]
    fn structural_errors() {
        assert_eq!(
            parse_candidates("2. A\n1. B", 2),
            Err(FormatError::OutOfOrder {
                expected: 1,
                found: 2
            })
        );
        assert_eq!(
            parse_candidates("1. A\n1. B", 2),
            Err(FormatError::DuplicateLabel(1))
        );
        assert_eq!(parse_candidates("1. A\n2.\n", 2), Err(FormatError::EmptyItem(2)));
        assert_eq!(parse_candidates("anything", 0), Err(FormatError::InvalidK));
    }

    #[test]
    fn numbers_inside_text_are_not_labels() {
        let got = parse_candidates("1. Sales rose 1.5 percent\n2. In 2023. things changed", 2).unwrap();
        assert_eq!(got, ["Sales rose 1.5 percent", "In 2023. things changed"]);
        let got = parse_candidates("1. meeting at\n10:30 am\n2. other", 2).unwrap();
        assert_eq!(got[0], "meeting at\n10:30 am");
    }

    #[test]
    fn preamble_is_ignored() {
        let got = parse_candidates("Here are two summaries:\n\n1. A\n2. B\n", 2).unwrap();
        assert_eq!(got, ["A", "B"]);
    }

    #[test]
    fn render_round_trips() {
        let items = ["alpha beta", "gamma", "delta: epsilon"];
        assert_eq!(parse_candidates(&render_candidates(&items), 3).unwrap(), items);
    }
}
