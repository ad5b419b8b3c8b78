//! Question and example span anchors embedded in article markdown.
//!
//! An anchor is an empty inline element of the exact shape
//!
//! ```text
//! <span id="question-how-did-hpc-originate"></span>
//! <span id="example-run-it"></span>
//! ```
//!
//! Anchors inside fenced code blocks are inert. An example anchor binds to the
//! first fenced code block that follows it, provided no other anchor sits in
//! between. Spans whose id does not start with `question`/`example` are
//! ordinary HTML and ignored.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Longest slug accepted by the grammar.
pub const MAX_SLUG_LEN: usize = 100;

const TAG_OPEN: &str = "<span id=\"";
const TAG_CLOSE: &str = "</span>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Question,
    Example,
}

impl SpanKind {
    pub fn prefix(self) -> &'static str {
        match self {
            SpanKind::Question => "question-",
            SpanKind::Example => "example-",
        }
    }

    /// The element id (and URL fragment) for `slug`.
    pub fn anchor(self, slug: &str) -> String {
        format!("{}{}", self.prefix(), slug)
    }

    /// Render a well-formed empty anchor element.
    pub fn tag(self, slug: &str) -> String {
        format!("{TAG_OPEN}{}\">{TAG_CLOSE}", self.anchor(slug))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanTag {
    pub kind: SpanKind,
    pub slug: String,
    /// 0-based offset of the `<` in the raw source.
    pub byte_offset: usize,
    /// 1-based line number.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub slug: String,
    pub display_text: String,
    pub location: SpanTag,
}

impl Question {
    pub fn anchor(&self) -> String {
        SpanKind::Question.anchor(&self.slug)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub slug: String,
    pub location: SpanTag,
    pub code_block: String,
    pub code_language: Option<String>,
}

impl Example {
    pub fn anchor(&self) -> String {
        SpanKind::Example.anchor(&self.slug)
    }
}

/// Index of the anchors found in one article body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedArticle {
    pub source_hash: String,
    pub questions: Vec<Question>,
    pub examples: Vec<Example>,
}

impl ParsedArticle {
    pub fn question(&self, slug: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.slug == slug)
    }

    pub fn example(&self, slug: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.slug == slug)
    }

    /// True when `anchor` (e.g. `question-foo`) names an indexed span.
    pub fn has_anchor(&self, anchor: &str) -> bool {
        if let Some(slug) = anchor.strip_prefix(SpanKind::Question.prefix()) {
            self.question(slug).is_some()
        } else if let Some(slug) = anchor.strip_prefix(SpanKind::Example.prefix()) {
            self.example(slug).is_some()
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    MalformedSpanId,
    DuplicateSlug,
    ExampleWithoutCode,
    UnclosedSpan,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub code: ErrorCode,
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    fn from_errors(errors: Vec<ValidationError>) -> Self {
        ValidationReport {
            ok: errors.is_empty(),
            errors,
        }
    }

    pub fn passed() -> Self {
        Self::from_errors(Vec::new())
    }

    pub fn has(&self, code: ErrorCode) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid slug {0:?}")]
pub struct InvalidSlug(pub String);

/// `[a-z0-9]+(-[a-z0-9]+)*`, at most [`MAX_SLUG_LEN`] bytes.
pub fn is_valid_slug(slug: &str) -> bool {
    !slug.is_empty()
        && slug.len() <= MAX_SLUG_LEN
        && slug
            .split('-')
            .all(|part| !part.is_empty() && part.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()))
}

pub fn slug_to_display(slug: &str) -> Result<String, InvalidSlug> {
    if !is_valid_slug(slug) {
        return Err(InvalidSlug(slug.to_string()));
    }
    let spaced = slug.replace('-', " ");
    let mut chars = spaced.chars();
    Ok(match chars.next() {
        Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    })
}

/// Turn free text into a slug: lowercase, runs of anything that is not an
/// ASCII letter or digit become one hyphen, no leading/trailing hyphen.
/// Returns an empty string when the text has no usable characters.
pub fn slugify(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    if out.len() > MAX_SLUG_LEN {
        out.truncate(MAX_SLUG_LEN);
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

/// Lowercase hex SHA-256 of the raw source.
pub fn content_digest(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDiff {
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    pub moved: BTreeSet<String>,
}

impl QuestionDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.moved.is_empty()
    }
}

pub fn diff_questions(old: &ParsedArticle, new: &ParsedArticle) -> QuestionDiff {
    let before: HashMap<&str, usize> = old
        .questions
        .iter()
        .map(|q| (q.slug.as_str(), q.location.byte_offset))
        .collect();
    let after: HashMap<&str, usize> = new
        .questions
        .iter()
        .map(|q| (q.slug.as_str(), q.location.byte_offset))
        .collect();

    let mut diff = QuestionDiff::default();
    for (slug, offset) in &after {
        match before.get(slug) {
            None => {
                diff.added.insert(slug.to_string());
            }
            Some(prev) if prev != offset => {
                diff.moved.insert(slug.to_string());
            }
            Some(_) => {}
        }
    }
    for slug in before.keys() {
        if !after.contains_key(slug) {
            diff.removed.insert(slug.to_string());
        }
    }
    diff
}

pub fn parse_spans(source: &str) -> ParsedArticle {
    Scan::run(source).into_parsed()
}

pub fn validate_article(source: &str) -> ValidationReport {
    ValidationReport::from_errors(Scan::run(source).errors)
}

/// Parse and validate in one pass over the source.
pub fn analyze(source: &str) -> (ParsedArticle, ValidationReport) {
    let scan = Scan::run(source);
    let report = ValidationReport::from_errors(scan.errors.clone());
    (scan.into_parsed(), report)
}

#[derive(Debug)]
struct Fence {
    /// Byte offset where the opening fence line starts.
    opens_at: usize,
    /// End of the closing fence line (or of the source when unclosed).
    region_end: usize,
    content: Range<usize>,
    info: Option<String>,
}

#[derive(Debug)]
struct Anchor {
    tag: SpanTag,
    duplicate: bool,
}

struct Scan<'a> {
    source: &'a str,
    fences: Vec<Fence>,
    anchors: Vec<Anchor>,
    errors: Vec<ValidationError>,
}

enum TagParse {
    Anchor { kind: SpanKind, slug: String },
    Malformed(String),
    Unclosed(String),
    Foreign,
}

impl<'a> Scan<'a> {
    fn run(source: &'a str) -> Self {
        let mut scan = Scan {
            source,
            fences: find_fences(source),
            anchors: Vec::new(),
            errors: Vec::new(),
        };
        scan.collect_tags();
        scan.check_examples();
        scan.errors.sort_by_key(|e| e.line);
        scan
    }

    fn collect_tags(&mut self) {
        let line_starts = line_starts(self.source);
        let line_of = |offset: usize| line_starts.partition_point(|&start| start <= offset);
        let mut seen: HashSet<(SpanKind, String)> = HashSet::new();

        for (offset, _) in self.source.match_indices(TAG_OPEN) {
            let idx = self.fences.partition_point(|f| f.region_end <= offset);
            if self.fences.get(idx).is_some_and(|f| f.opens_at <= offset) {
                continue;
            }

            let line = line_of(offset);
            match parse_tag(&self.source[offset + TAG_OPEN.len()..]) {
                TagParse::Foreign => {}
                TagParse::Malformed(id) => self.errors.push(ValidationError {
                    code: ErrorCode::MalformedSpanId,
                    line,
                    detail: format!("span id {id:?} is not question-<slug> or example-<slug>"),
                }),
                TagParse::Unclosed(id) => self.errors.push(ValidationError {
                    code: ErrorCode::UnclosedSpan,
                    line,
                    detail: format!("span {id:?} must be written as an empty element: {TAG_OPEN}{id}\">{TAG_CLOSE}"),
                }),
                TagParse::Anchor { kind, slug } => {
                    let duplicate = !seen.insert((kind, slug.clone()));
                    if duplicate {
                        self.errors.push(ValidationError {
                            code: ErrorCode::DuplicateSlug,
                            line,
                            detail: format!("{} is defined more than once", kind.anchor(&slug)),
                        });
                    }
                    self.anchors.push(Anchor {
                        tag: SpanTag {
                            kind,
                            slug,
                            byte_offset: offset,
                            line,
                        },
                        duplicate,
                    });
                }
            }
        }
    }

    /// Index of the fence an example at `anchor_idx` binds to, if any.
    fn bound_fence(&self, anchor_idx: usize) -> Option<&Fence> {
        let start = self.anchors[anchor_idx].tag.byte_offset;
        let limit = self
            .anchors
            .get(anchor_idx + 1)
            .map_or(self.source.len(), |next| next.tag.byte_offset);
        self.fences
            .iter()
            .find(|f| f.opens_at > start)
            .filter(|f| f.opens_at < limit)
    }

    fn check_examples(&mut self) {
        let mut missing = Vec::new();
        for (idx, anchor) in self.anchors.iter().enumerate() {
            if anchor.tag.kind != SpanKind::Example || anchor.duplicate {
                continue;
            }
            let has_code = self
                .bound_fence(idx)
                .is_some_and(|f| !self.source[f.content.clone()].trim().is_empty());
            if !has_code {
                missing.push(ValidationError {
                    code: ErrorCode::ExampleWithoutCode,
                    line: anchor.tag.line,
                    detail: format!(
                        "{} is not followed by a fenced code block",
                        SpanKind::Example.anchor(&anchor.tag.slug)
                    ),
                });
            }
        }
        self.errors.extend(missing);
    }

    fn into_parsed(self) -> ParsedArticle {
        let mut questions = Vec::new();
        let mut examples = Vec::new();
        for (idx, anchor) in self.anchors.iter().enumerate() {
            if anchor.duplicate {
                continue;
            }
            let tag = anchor.tag.clone();
            match tag.kind {
                SpanKind::Question => questions.push(Question {
                    slug: tag.slug.clone(),
                    display_text: slug_to_display(&tag.slug).unwrap_or_default(),
                    location: tag,
                }),
                SpanKind::Example => {
                    let fence = self.bound_fence(idx);
                    examples.push(Example {
                        slug: tag.slug.clone(),
                        code_block: fence
                            .map(|f| self.source[f.content.clone()].to_string())
                            .unwrap_or_default(),
                        code_language: fence.and_then(|f| f.info.clone()),
                        location: tag,
                    });
                }
            }
        }
        ParsedArticle {
            source_hash: content_digest(self.source),
            questions,
            examples,
        }
    }
}

/// `rest` starts right after `<span id="`.
fn parse_tag(rest: &str) -> TagParse {
    let line = rest.split('\n').next().unwrap_or("");
    let Some(quote) = line.find('"') else {
        return if looks_like_anchor(line) {
            TagParse::Malformed(line.trim_end().to_string())
        } else {
            TagParse::Foreign
        };
    };
    let id = &line[..quote];

    let (kind, slug) = if let Some(slug) = id.strip_prefix(SpanKind::Question.prefix()) {
        (SpanKind::Question, slug)
    } else if let Some(slug) = id.strip_prefix(SpanKind::Example.prefix()) {
        (SpanKind::Example, slug)
    } else if looks_like_anchor(id) {
        return TagParse::Malformed(id.to_string());
    } else {
        return TagParse::Foreign;
    };
    if !is_valid_slug(slug) {
        return TagParse::Malformed(id.to_string());
    }

    let after = line[quote + 1..].trim_start_matches([' ', '\t']);
    match after.strip_prefix('>') {
        Some(tail) if tail.starts_with(TAG_CLOSE) => TagParse::Anchor {
            kind,
            slug: slug.to_string(),
        },
        _ => TagParse::Unclosed(id.to_string()),
    }
}

fn looks_like_anchor(id: &str) -> bool {
    let lower = id.to_ascii_lowercase();
    lower.starts_with("question") || lower.starts_with("example")
}

fn line_starts(source: &str) -> Vec<usize> {
    std::iter::once(0)
        .chain(source.match_indices('\n').map(|(i, _)| i + 1))
        .collect()
}

struct FenceMarker {
    ch: u8,
    len: usize,
}

/// Opening fence: up to three spaces, then three or more backticks or tildes.
/// A backtick fence's info string may not contain a backtick.
fn fence_opener(line: &str) -> Option<(FenceMarker, Option<String>)> {
    let bytes = line.as_bytes();
    let indent = bytes.iter().take_while(|&&b| b == b' ').count();
    if indent > 3 {
        return None;
    }
    let ch = *bytes.get(indent)?;
    if ch != b'`' && ch != b'~' {
        return None;
    }
    let len = bytes[indent..].iter().take_while(|&&b| b == ch).count();
    if len < 3 {
        return None;
    }
    let info = &line[indent + len..];
    if ch == b'`' && info.contains('`') {
        return None;
    }
    let language = info.split_whitespace().next().map(str::to_string);
    Some((FenceMarker { ch, len }, language))
}

fn closes(line: &str, open: &FenceMarker) -> bool {
    let bytes = line.as_bytes();
    let indent = bytes.iter().take_while(|&&b| b == b' ').count();
    if indent > 3 {
        return false;
    }
    let run = bytes[indent..].iter().take_while(|&&b| b == open.ch).count();
    run >= open.len
        && bytes[indent + run..]
            .iter()
            .all(|b| matches!(b, b' ' | b'\t' | b'\r'))
}

fn find_fences(source: &str) -> Vec<Fence> {
    let mut fences = Vec::new();
    let mut open: Option<(FenceMarker, usize, usize, Option<String>)> = None;
    let mut pos = 0;
    while pos < source.len() {
        let end = source[pos..].find('\n').map_or(source.len(), |i| pos + i);
        let next = (end + 1).min(source.len());
        let line = source[pos..end].trim_end_matches('\r');
        match open.take() {
            None => {
                if let Some((marker, info)) = fence_opener(line) {
                    open = Some((marker, pos, next, info));
                }
            }
            Some((marker, opens_at, body, info)) => {
                if closes(line, &marker) {
                    fences.push(Fence {
                        opens_at,
                        region_end: end,
                        content: body..pos,
                        info,
                    });
                } else {
                    open = Some((marker, opens_at, body, info));
                }
            }
        }
        pos = next;
        if end == source.len() {
            break;
        }
    }
    if let Some((_, opens_at, body, info)) = open {
        fences.push(Fence {
            opens_at,
            region_end: source.len(),
            content: body.min(source.len())..source.len(),
            info,
        });
    }
    fences
}
