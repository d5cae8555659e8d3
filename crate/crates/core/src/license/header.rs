/// Lines scanned for a leading comment run.
pub const HEADER_WINDOW_LINES: usize = 50;

/// Text of the first contiguous comment run near the top of a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommentRegion {
    /// Comment text with markers stripped.
    pub text: String,
    /// True when the run holds at least one real comment (as opposed to only
    /// a docstring) with non-blank text.
    pub has_plain_comment: bool,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Open {
    Block,
    Doc(&'static str),
}

fn is_pragma(line: &str) -> bool {
    line.starts_with("#!")
        || (line.starts_with('#') && line.contains("coding") && (line.contains(':') || line.contains('=')))
}

fn docstring_opener(line: &str) -> Option<(&'static str, usize)> {
    let lower = line.to_ascii_lowercase();
    let skip = lower
        .bytes()
        .take_while(|b| matches!(b, b'r' | b'u' | b'b'))
        .count()
        .min(2);
    ["\"\"\"", "'''"]
        .into_iter()
        .find(|q| line[skip..].starts_with(q))
        .map(|q| (q, skip + 3))
}

/// Find the first contiguous comment run (line comments, block comments,
/// or a docstring) within the first [`HEADER_WINDOW_LINES`] lines. Blank
/// lines inside the run are allowed; the first code line ends it.
pub fn leading_comment_region(text: &str) -> Option<CommentRegion> {
    let mut parts: Vec<String> = Vec::new();
    let mut has_plain = false;
    let mut start = None;
    let mut end = 0;
    let mut open: Option<Open> = None;

    for (idx, raw) in text.lines().take(HEADER_WINDOW_LINES).enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();

        if let Some(kind) = open {
            let close = match kind {
                Open::Block => "*/",
                Open::Doc(q) => q,
            };
            let (body, closed) = match line.find(close) {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            let body = body.trim_start_matches('*').trim();
            if matches!(kind, Open::Block) && !body.is_empty() {
                has_plain = true;
            }
            parts.push(body.to_string());
            end = lineno;
            if closed {
                open = None;
            }
            continue;
        }

        if line.is_empty() {
            continue;
        }
        if start.is_none() && is_pragma(line) {
            continue;
        }

        let piece = if let Some(rest) = line.strip_prefix('#').or_else(|| line.strip_prefix("//")) {
            let rest = rest.trim_start_matches(['#', '/', '!']).trim();
            if !rest.is_empty() {
                has_plain = true;
            }
            Some(rest.to_string())
        } else if let Some(rest) = line.strip_prefix("/*") {
            let (body, closed) = match rest.find("*/") {
                Some(pos) => (&rest[..pos], true),
                None => (rest, false),
            };
            let body = body.trim_start_matches('*').trim();
            if !body.is_empty() {
                has_plain = true;
            }
            if !closed {
                open = Some(Open::Block);
            }
            Some(body.to_string())
        } else if let Some((quote, skip)) = docstring_opener(line) {
            let rest = &line[skip..];
            let body = match rest.find(quote) {
                Some(pos) => &rest[..pos],
                None => {
                    open = Some(Open::Doc(quote));
                    rest
                }
            };
            Some(body.trim().to_string())
        } else {
            None
        };

        match piece {
            Some(p) => {
                start.get_or_insert(lineno);
                end = lineno;
                parts.push(p);
            }
            None if start.is_some() => break,
            None => {}
        }
    }

    let start_line = start?;
    Some(CommentRegion {
        text: parts.join("\n"),
        has_plain_comment: has_plain,
        start_line,
        end_line: end,
    })
}
