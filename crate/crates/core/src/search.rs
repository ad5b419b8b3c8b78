//! Ranked search over terms, tags, question and example slugs, and content.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::registry::Article;
use crate::spans::SpanKind;

/// Weights for an exact token hit in each field.
pub const TERM_WEIGHT: u32 = 3;
pub const TAG_WEIGHT: u32 = 3;
pub const SLUG_WEIGHT: u32 = 2;
pub const CONTENT_WEIGHT: u32 = 1;

/// Size of the empty-query feed.
pub const FEED_LIMIT: usize = 100;
const SNIPPET_LEN: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    Article,
    Question,
    Example,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub kind: ResultKind,
    pub term: String,
    pub slug: Option<String>,
    pub snippet: String,
    /// Span id to scroll to, e.g. `question-how-did-hpc-originate`.
    pub anchor: Option<String>,
    pub score: u32,
    pub archived: bool,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

fn snippet(text: &str) -> String {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with("<span"))
        .unwrap_or("");
    let line = line.trim_start_matches('#').trim();
    match line.char_indices().nth(SNIPPET_LEN) {
        Some((cut, _)) => format!("{}...", &line[..cut]),
        None => line.to_string(),
    }
}

fn compare(a: &SearchResult, b: &SearchResult) -> Ordering {
    b.score
        .cmp(&a.score)
        .then_with(|| a.term.cmp(&b.term))
        .then_with(|| a.kind.cmp(&b.kind))
        .then_with(|| a.slug.cmp(&b.slug))
}

/// Score every article, question and example against `query`. Each query
/// token contributes the weight of the best field it hits exactly. Questions
/// and examples must hit their own slug at least once.
pub fn search(articles: &[Article], query: &str) -> Vec<SearchResult> {
    let query: Vec<String> = token_set(query).into_iter().collect();
    if query.is_empty() {
        return recent_feed(articles);
    }
    let mut out = Vec::new();
    for article in articles {
        let term = token_set(&article.term);
        let tags: BTreeSet<String> = article.tags.iter().flat_map(|t| tokenize(t)).collect();
        let content = token_set(&article.content);
        let base = |token: &String| -> u32 {
            if term.contains(token) {
                TERM_WEIGHT
            } else if tags.contains(token) {
                TAG_WEIGHT
            } else {
                0
            }
        };
        let archived = !article.is_active();

        let score: u32 = query
            .iter()
            .map(|t| base(t).max(if content.contains(t) { CONTENT_WEIGHT } else { 0 }))
            .sum();
        if score > 0 {
            out.push(SearchResult {
                kind: ResultKind::Article,
                term: article.term.clone(),
                slug: None,
                snippet: snippet(&article.content),
                anchor: None,
                score,
                archived,
            });
        }

        let spans = article
            .parsed
            .questions
            .iter()
            .map(|q| (ResultKind::Question, SpanKind::Question, &q.slug, q.display_text.clone()))
            .chain(article.parsed.examples.iter().map(|e| {
                (ResultKind::Example, SpanKind::Example, &e.slug, snippet(&e.code_block))
            }));
        for (kind, span_kind, slug, text) in spans {
            let slug_tokens = token_set(slug);
            if !query.iter().any(|t| slug_tokens.contains(t)) {
                continue;
            }
            let score = query
                .iter()
                .map(|t| base(t).max(if slug_tokens.contains(t) { SLUG_WEIGHT } else { 0 }))
                .sum();
            out.push(SearchResult {
                kind,
                term: article.term.clone(),
                slug: Some(slug.clone()),
                snippet: text,
                anchor: Some(span_kind.anchor(slug)),
                score,
                archived,
            });
        }
    }
    out.sort_by(compare);
    out
}

/// Articles by last update, newest first, each followed by its questions.
pub fn recent_feed(articles: &[Article]) -> Vec<SearchResult> {
    let mut sorted: Vec<&Article> = articles.iter().collect();
    sorted.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then_with(|| a.term.cmp(&b.term)));
    let mut out = Vec::new();
    for article in sorted {
        let archived = !article.is_active();
        out.push(SearchResult {
            kind: ResultKind::Article,
            term: article.term.clone(),
            slug: None,
            snippet: snippet(&article.content),
            anchor: None,
            score: 0,
            archived,
        });
        for q in &article.parsed.questions {
            out.push(SearchResult {
                kind: ResultKind::Question,
                term: article.term.clone(),
                slug: Some(q.slug.clone()),
                snippet: q.display_text.clone(),
                anchor: Some(q.anchor()),
                score: 0,
                archived,
            });
        }
    }
    out.truncate(FEED_LIMIT);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_on_punctuation() {
        assert_eq!(tokenize("How did HPC-originate?"), ["how", "did", "hpc", "originate"]);
        assert!(tokenize("  --  ").is_empty());
    }

    #[test]
    fn snippet_skips_anchor_lines() {
        assert_eq!(snippet("<span id=\"question-a\"></span>\n# Title\nbody"), "Title");
    }
}
