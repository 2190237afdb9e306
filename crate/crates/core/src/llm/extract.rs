use super::LlmError;

/// Pulls source code out of a model reply.
///
/// With one or more fenced blocks, the first block's body is returned and its
/// language tag dropped; otherwise the whole reply. Either way surrounding
/// blank lines and trailing whitespace are removed and common indentation is
/// stripped, which makes the operation idempotent.
pub fn extract_code_block(reply: &str) -> Result<String, LlmError> {
    let body = match reply.find("```") {
        Some(open) => {
            let after_tag = &reply[open + 3..];
            let content_start = after_tag.find('\n').map_or(after_tag.len(), |i| i + 1);
            let content = &after_tag[content_start..];
            let end = closing_fence(content).unwrap_or(content.len());
            &content[..end]
        }
        None => reply,
    };
    let out = normalize(body);
    if out.is_empty() {
        Err(LlmError::EmptyReply)
    } else {
        Ok(out)
    }
}

fn closing_fence(content: &str) -> Option<usize> {
    let mut offset = 0;
    for line in content.split_inclusive('\n') {
        if line.trim_start().starts_with("```") {
            return Some(offset);
        }
        offset += line.len();
    }
    None
}

fn normalize(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    let first = lines.iter().position(|l| !l.is_empty());
    let last = lines.iter().rposition(|l| !l.is_empty());
    let (Some(first), Some(last)) = (first, last) else {
        return String::new();
    };
    let lines = &lines[first..=last];
    let indent = lines
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    lines
        .iter()
        .map(|l| if l.len() >= indent { &l[indent..] } else { "" })
        .collect::<Vec<_>>()
        .join("\n")
}
