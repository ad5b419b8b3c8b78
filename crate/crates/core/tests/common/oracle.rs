//! Line-at-a-time reference scanner for span anchors.
//!
//! Written from the grammar alone: regexes for ids and tag tails, a simple
//! fence state machine, and a flat event list for example binding.

use std::collections::HashSet;

use kforge_core::{analyze, ErrorCode};
use regex::Regex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Question,
    Example,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Code {
    Malformed,
    Duplicate,
    NoCode,
    Unclosed,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct OracleResult {
    /// First occurrences only, in document order.
    pub anchors: Vec<(String, Kind, usize)>,
    /// Sorted by (line, code).
    pub errors: Vec<(usize, Code)>,
}

enum Event {
    Anchor { kind: Kind, first: bool, line: usize },
    Fence { has_code: bool },
}

struct OpenFence {
    ch: char,
    len: usize,
    event: usize,
    body: String,
}

pub struct Oracle {
    anchor_id: Regex,
    closed_tail: Regex,
    opener: Regex,
}

impl Default for Oracle {
    fn default() -> Self {
        Self::new()
    }
}

impl Oracle {
    pub fn new() -> Self {
        Oracle {
            anchor_id: Regex::new(r"^(question|example)-([a-z0-9]+(?:-[a-z0-9]+)*)$").unwrap(),
            closed_tail: Regex::new(r"^[ \t]*></span>").unwrap(),
            opener: Regex::new(r"^ {0,3}(`{3,}|~{3,})(.*)$").unwrap(),
        }
    }

    fn fence_open(&self, line: &str) -> Option<(char, usize)> {
        let caps = self.opener.captures(line)?;
        let run = caps.get(1).unwrap().as_str();
        let ch = run.chars().next().unwrap();
        if ch == '`' && caps.get(2).unwrap().as_str().contains('`') {
            return None;
        }
        Some((ch, run.len()))
    }

    fn fence_close(line: &str, ch: char, len: usize) -> bool {
        let indent = line.len() - line.trim_start_matches(' ').len();
        if indent > 3 {
            return false;
        }
        let rest = &line[indent..];
        let run = rest.len() - rest.trim_start_matches(ch).len();
        run >= len && rest[run..].chars().all(|c| c == ' ' || c == '\t')
    }

    pub fn scan(&self, source: &str) -> OracleResult {
        let mut events: Vec<Event> = Vec::new();
        let mut errors = Vec::new();
        let mut seen: HashSet<(Kind, String)> = HashSet::new();
        let mut anchors = Vec::new();
        let mut fence: Option<OpenFence> = None;

        for (i, raw) in source.split('\n').enumerate() {
            let line_no = i + 1;
            let plain = raw.strip_suffix('\r').unwrap_or(raw);

            if let Some(open) = fence.as_mut() {
                if Self::fence_close(plain, open.ch, open.len) {
                    let f = fence.take().unwrap();
                    events[f.event] = Event::Fence {
                        has_code: !f.body.trim().is_empty(),
                    };
                } else {
                    open.body.push_str(raw);
                    open.body.push('\n');
                }
                continue;
            }
            if let Some((ch, len)) = self.fence_open(plain) {
                events.push(Event::Fence { has_code: false });
                fence = Some(OpenFence {
                    ch,
                    len,
                    event: events.len() - 1,
                    body: String::new(),
                });
                continue;
            }

            let opener = "<span id=\"";
            let mut from = 0;
            while let Some(pos) = raw[from..].find(opener) {
                let rest = &raw[from + pos + opener.len()..];
                from += pos + opener.len();
                let (id, tail) = match rest.find('"') {
                    Some(q) => (&rest[..q], Some(&rest[q + 1..])),
                    None => (rest, None),
                };
                let lowered = id.to_lowercase();
                let anchorish = lowered.starts_with("question") || lowered.starts_with("example");
                let caps = self.anchor_id.captures(id).filter(|c| c.get(2).unwrap().as_str().len() <= 100);
                let Some(tail) = tail else {
                    if anchorish {
                        errors.push((line_no, Code::Malformed));
                    }
                    continue;
                };
                let Some(caps) = caps else {
                    if anchorish {
                        errors.push((line_no, Code::Malformed));
                    }
                    continue;
                };
                if !self.closed_tail.is_match(tail) {
                    errors.push((line_no, Code::Unclosed));
                    continue;
                }
                let kind = if &caps[1] == "question" { Kind::Question } else { Kind::Example };
                let slug = caps[2].to_string();
                let first = seen.insert((kind, slug.clone()));
                if first {
                    anchors.push((slug, kind, line_no));
                } else {
                    errors.push((line_no, Code::Duplicate));
                }
                events.push(Event::Anchor { kind, first, line: line_no });
            }
        }
        if let Some(f) = fence {
            events[f.event] = Event::Fence {
                has_code: !f.body.trim().is_empty(),
            };
        }

        for (i, event) in events.iter().enumerate() {
            if let Event::Anchor {
                kind: Kind::Example,
                first: true,
                line,
            } = event
            {
                let bound = matches!(events.get(i + 1), Some(Event::Fence { has_code: true }));
                if !bound {
                    errors.push((*line, Code::NoCode));
                }
            }
        }
        errors.sort();
        OracleResult { anchors, errors }
    }
}

/// The library's answer in the oracle's shape.
pub fn from_library(source: &str) -> OracleResult {
    let (parsed, report) = analyze(source);
    let mut anchors: Vec<(String, Kind, usize)> = parsed
        .questions
        .iter()
        .map(|q| (q.slug.clone(), Kind::Question, q.location.line))
        .chain(
            parsed
                .examples
                .iter()
                .map(|e| (e.slug.clone(), Kind::Example, e.location.line)),
        )
        .collect();
    anchors.sort_by_key(|a| (a.2, a.1));
    let mut errors: Vec<(usize, Code)> = report
        .errors
        .iter()
        .map(|e| {
            let code = match e.code {
                ErrorCode::MalformedSpanId => Code::Malformed,
                ErrorCode::DuplicateSlug => Code::Duplicate,
                ErrorCode::ExampleWithoutCode => Code::NoCode,
                ErrorCode::UnclosedSpan => Code::Unclosed,
            };
            (e.line, code)
        })
        .collect();
    errors.sort();
    OracleResult { anchors, errors }
}

/// Oracle output with anchors ordered like `from_library`.
pub fn oracle_sorted(oracle: &Oracle, source: &str) -> OracleResult {
    let mut r = oracle.scan(source);
    r.anchors.sort_by_key(|a| (a.2, a.1));
    r
}
