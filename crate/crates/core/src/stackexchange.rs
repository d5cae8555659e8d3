//! Streaming ingest of StackExchange `Posts.xml` dumps.
//!
//! Each `<row>` carries an HTML-escaped `Body`; every `<code>` element in the
//! unescaped body becomes one candidate source text for block extraction.
//! Answers carry no `Tags`, so the tag filter is applied to them through
//! their parent question. The parent lookup keeps one entry per question seen
//! (an id and a match flag, roughly 16 bytes each), which is the memory cost
//! of streaming a full dump with a tag filter.

use std::collections::HashMap;
use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::corpus::{extract_blocks, CodeBlock, Corpus, SourceKind, SourceLocator};
use crate::error::IngestError;
use crate::ingest::{IngestConfig, IngestLog, Ingested};
use crate::license::{resolve_with, ResolveInput, RuleSet};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PostRow {
    id: u64,
    post_type: u32,
    parent_id: Option<u64>,
    body: String,
    tags: Vec<String>,
    created: Option<i64>,
}

/// Split `<python><list>` or `|python|list|` into tag names.
pub fn parse_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parse a dump timestamp such as `2008-07-31T21:42:52.667` (UTC).
pub fn parse_creation_date(raw: &str) -> Option<i64> {
    let raw = raw.trim().trim_end_matches('Z');
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| chrono::NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// A `<code>` element found in a post body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeElement {
    /// Decoded text of the element.
    pub text: String,
    /// 1-based line of the body on which the element's text starts.
    pub start_line: usize,
}

/// Extract the contents of every `<code>` element of an HTML post body.
pub fn code_elements(body: &str) -> Vec<CodeElement> {
    let mut out = Vec::new();
    let lower = body.to_ascii_lowercase();
    let mut cursor = 0;
    while let Some(rel) = lower[cursor..].find("<code") {
        let open = cursor + rel;
        let after_name = open + "<code".len();
        // `<codefoo>` is not a code element.
        if !lower[after_name..].starts_with(['>', ' ', '\t', '\n', '/']) {
            cursor = after_name;
            continue;
        }
        let Some(gt) = lower[after_name..].find('>') else { break };
        let content_start = after_name + gt + 1;
        let Some(close_rel) = lower[content_start..].find("</code>") else { break };
        let content_end = content_start + close_rel;
        let raw = &body[content_start..content_end];
        let text = html_escape::decode_html_entities(raw).into_owned();
        let start_line = body[..content_start].matches('\n').count() + 1;
        out.push(CodeElement { text, start_line });
        cursor = content_end + "</code>".len();
    }
    out
}

/// Post body as plain text: tags removed, entities decoded.
pub fn body_text(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut in_tag = false;
    for c in body.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    html_escape::decode_html_entities(&out).into_owned()
}

fn parse_row(e: &BytesStart<'_>) -> Result<PostRow, String> {
    let mut row = PostRow::default();
    let mut have_id = false;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| err.to_string())?;
        let value = attr.unescape_value().map_err(|err| err.to_string())?;
        match attr.key.as_ref() {
            b"Id" => {
                row.id = value.parse().map_err(|_| format!("bad Id {value:?}"))?;
                have_id = true;
            }
            b"PostTypeId" => row.post_type = value.parse().map_err(|_| format!("bad PostTypeId {value:?}"))?,
            b"ParentId" => row.parent_id = value.parse().ok(),
            b"Body" => row.body = value.into_owned(),
            b"Tags" => row.tags = parse_tags(&value),
            b"CreationDate" => row.created = parse_creation_date(&value),
            _ => {}
        }
    }
    if !have_id {
        return Err("row without Id".to_string());
    }
    Ok(row)
}

struct Builder<'a> {
    config: &'a IngestConfig,
    rules: &'a RuleSet,
    tag_filter: &'a str,
    corpus_id: String,
    question_matches: HashMap<u64, bool>,
    blocks: Vec<CodeBlock>,
    log: IngestLog,
}

impl Builder<'_> {
    fn wanted(&mut self, row: &PostRow) -> bool {
        let own = self.tag_filter.is_empty() || row.tags.iter().any(|t| t == self.tag_filter);
        match row.post_type {
            2 => match row.parent_id.and_then(|p| self.question_matches.get(&p)) {
                Some(parent) => *parent,
                None => self.tag_filter.is_empty(),
            },
            1 => {
                self.question_matches.insert(row.id, own);
                own
            }
            _ => own,
        }
    }

    fn url(&self, row: &PostRow) -> String {
        let template = if row.post_type == 2 {
            &self.config.answer_url_template
        } else {
            &self.config.question_url_template
        };
        template.replace("{id}", &row.id.to_string())
    }

    fn add(&mut self, row: PostRow) {
        self.log.rows_seen += 1;
        if !self.wanted(&row) {
            return;
        }
        let url = self.url(&row);
        let context = body_text(&row.body);
        for element in code_elements(&row.body) {
            let base = SourceLocator {
                kind: SourceKind::StackexchangePost,
                path: row.id.to_string(),
                start_line: element.start_line,
                end_line: element.start_line,
                url: Some(url.clone()),
            };
            let ex = extract_blocks(
                &element.text,
                &base,
                &self.corpus_id,
                &self.config.granularities,
                self.config.min_tokens,
            );
            if ex.degraded {
                self.log.degraded.push(format!("post {} line {}", row.id, element.start_line));
            }
            for mut block in ex.blocks {
                block.last_modified = row.created;
                block.license = resolve_with(
                    ResolveInput {
                        block_text: &block.raw_text,
                        file_header: None,
                        file_rel_path: None,
                        corpus_default: self.config.default_license.as_deref(),
                    },
                    None,
                    self.rules,
                );
                block.context = Some(context.clone());
                self.blocks.push(block);
            }
        }
    }

    fn finish(self) -> Ingested {
        Ingested {
            corpus: Corpus::new(self.corpus_id, self.blocks),
            log: self.log,
        }
    }
}

/// Ingest a `Posts.xml` stream. `tag_filter` selects questions carrying that
/// tag and answers to them; an empty filter keeps every post.
///
/// Malformed rows are skipped and counted. A stream that ends before the
/// closing root element, or that stops parsing, is fatal; the error carries
/// the corpus built from the rows completed so far.
pub fn ingest_stackexchange_dump<R: BufRead>(
    input: R,
    tag_filter: &str,
    config: &IngestConfig,
    rules: &RuleSet,
) -> Result<Ingested, IngestError> {
    let mut reader = Reader::from_reader(input);
    reader.config_mut().trim_text(true);
    let mut builder = Builder {
        config,
        rules,
        tag_filter: tag_filter.trim(),
        corpus_id: config.corpus_id.clone().unwrap_or_else(|| "stackexchange".to_string()),
        question_matches: HashMap::new(),
        blocks: Vec::new(),
        log: IngestLog::default(),
    };
    let mut buf = Vec::new();
    let mut depth = 0usize;
    let mut saw_root = false;
    let truncated = |builder: Builder<'_>, reason: String| {
        let rows = builder.log.rows_seen;
        let partial = builder.finish().corpus;
        IngestError::Truncated {
            rows,
            reason,
            partial: Box::new(partial),
        }
    };
    loop {
        let event = match reader.read_event_into(&mut buf) {
            Ok(e) => e,
            Err(e) => return Err(truncated(builder, e.to_string())),
        };
        match event {
            Event::Start(e) => {
                if depth == 0 {
                    saw_root = true;
                } else if e.name().as_ref() == b"row" {
                    match parse_row(&e) {
                        Ok(row) => builder.add(row),
                        Err(reason) => {
                            builder.log.malformed_rows += 1;
                            tracing::warn!(%reason, "malformed row skipped");
                        }
                    }
                }
                depth += 1;
            }
            Event::Empty(e) if e.name().as_ref() == b"row" => match parse_row(&e) {
                Ok(row) => builder.add(row),
                Err(reason) => {
                    builder.log.malformed_rows += 1;
                    tracing::warn!(%reason, "malformed row skipped");
                }
            },
            Event::End(_) => depth = depth.saturating_sub(1),
            Event::Eof => {
                if depth > 0 {
                    return Err(truncated(builder, "stream ended inside the posts element".to_string()));
                }
                if !saw_root && builder.log.rows_seen == 0 && builder.log.malformed_rows == 0 {
                    return Err(truncated(builder, "no posts element found".to_string()));
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }
    Ok(builder.finish())
}
