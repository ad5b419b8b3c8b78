//! Inbound bridge from discussion boards.
//!
//! A board posts new topics to the server; posts that mention a known term
//! turn into an "external-knowledge" issue on that term's repository.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::forge::{IssueDraft, PayloadError};
use crate::kb::{KnowledgeBase, TaskKind};
use crate::registry::Article;

pub const DISCOURSE_SIGNATURE_HEADER: &str = "X-Discourse-Event-Signature";
pub const DISCOURSE_INSTANCE_HEADER: &str = "X-Discourse-Instance";
pub const DEFAULT_SOURCE: &str = "discourse";
pub const EXCERPT_LIMIT: usize = 500;
pub const ISSUE_LABEL: &str = "external-knowledge";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalPost {
    pub post_id: String,
    pub source: String,
    pub title: String,
    pub body: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub term: String,
    pub matched_tokens: Vec<String>,
    pub score: usize,
}

/// One matchable article: its term and tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownTerm {
    pub term: String,
    pub tags: Vec<String>,
}

impl KnownTerm {
    pub fn active(articles: &[Article]) -> Vec<KnownTerm> {
        articles
            .iter()
            .filter(|a| a.is_active())
            .map(|a| KnownTerm {
                term: a.term.clone(),
                tags: a.tags.iter().cloned().collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PostStatus {
    /// Claimed; the issue has not been opened yet.
    Pending,
    NoMatch,
    IssueOpened { term: String, issue: u64 },
    Failed { reason: String },
}

/// Audit row kept for every (source, post id) ever seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRecord {
    pub source: String,
    pub post_id: String,
    pub title: String,
    pub url: String,
    pub received_at: DateTime<Utc>,
    pub matches: Vec<MatchResult>,
    pub status: PostStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeOutcome {
    IssueOpened { term: String, issue: u64 },
    NoMatch,
    Duplicate,
    /// The forge was unavailable; a retry is queued.
    Queued,
}

pub fn record_key(source: &str, post_id: &str) -> String {
    format!("{source}:{post_id}")
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_sequence(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Whole-word, case-insensitive matching of terms and tags against the
/// post title and body. Multi-word keywords (`high-performance`) must appear
/// as consecutive words.
pub fn match_terms(post: &ExternalPost, known: &[KnownTerm]) -> Vec<MatchResult> {
    let text = words(&format!("{}\n{}", post.title, post.body));
    let mut out: Vec<MatchResult> = known
        .iter()
        .filter_map(|k| {
            let keywords: BTreeSet<&str> = std::iter::once(k.term.as_str())
                .chain(k.tags.iter().map(String::as_str))
                .collect();
            let matched: BTreeSet<String> = keywords
                .into_iter()
                .filter(|kw| contains_sequence(&text, &words(kw)))
                .map(str::to_lowercase)
                .collect();
            (!matched.is_empty()).then(|| MatchResult {
                term: k.term.clone(),
                score: matched.len(),
                matched_tokens: matched.into_iter().collect(),
            })
        })
        .collect();
    out.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
    out
}

pub fn excerpt(text: &str) -> String {
    let trimmed = text.trim();
    match trimmed.char_indices().nth(EXCERPT_LIMIT) {
        Some((cut, _)) => format!("{}...", &trimmed[..cut]),
        None => trimmed.to_string(),
    }
}

fn strip_html(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut in_tag = false;
    for c in html.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                out.push(' ');
            }
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

/// Map a board webhook body `{post: {id, topic_title, raw | cooked, url}}`
/// to an [`ExternalPost`]. `raw` wins over `cooked`, which is HTML and is
/// reduced to its text.
pub fn parse_discourse_post(body: &[u8], source: &str) -> Result<ExternalPost, PayloadError> {
    let value: Value = serde_json::from_slice(body)?;
    let post = value
        .get("post")
        .ok_or_else(|| PayloadError::Malformed("missing field `post`".into()))?;
    let post_id = match post.get("id") {
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        _ => return Err(PayloadError::Malformed("post.id must be a number or non-empty string".into())),
    };
    let text = |field: &str| post.get(field).and_then(Value::as_str).map(str::to_string);
    let body = text("raw")
        .or_else(|| text("cooked").map(|c| strip_html(&c)))
        .unwrap_or_default();
    Ok(ExternalPost {
        post_id,
        source: source.to_string(),
        title: text("topic_title").unwrap_or_default(),
        body,
        url: text("url").unwrap_or_default(),
    })
}

impl KnowledgeBase {
    pub fn external_post(&self, source: &str, post_id: &str) -> Option<PostRecord> {
        self.store
            .read(|s| s.external_posts.get(&record_key(source, post_id)).cloned())
    }

    pub fn handle_discourse_post(&self, post: &ExternalPost) -> Result<BridgeOutcome> {
        if post.post_id.trim().is_empty() {
            return Err(PayloadError::Malformed("post id is empty".into()).into());
        }
        let key = record_key(&post.source, &post.post_id);
        let now = self.clock.now();
        let claimed = self.store.write(|s| {
            if s.external_posts.contains_key(&key) {
                return Ok::<_, Error>(false);
            }
            s.external_posts.insert(
                key.clone(),
                PostRecord {
                    source: post.source.clone(),
                    post_id: post.post_id.clone(),
                    title: post.title.clone(),
                    url: post.url.clone(),
                    received_at: now,
                    matches: Vec::new(),
                    status: PostStatus::Pending,
                },
            );
            Ok(true)
        })?;
        if !claimed {
            return Ok(BridgeOutcome::Duplicate);
        }
        match self.open_post_issue(post) {
            Err(err) if err.is_retryable() => {
                let payload = serde_json::to_value(post).expect("post serializes");
                self.enqueue(TaskKind::ExternalPost, payload, &format!("external:{key}"), None)?;
                Ok(BridgeOutcome::Queued)
            }
            other => other,
        }
    }

    /// Match and open the issue for a claimed post; records the outcome.
    fn open_post_issue(&self, post: &ExternalPost) -> Result<BridgeOutcome> {
        let key = record_key(&post.source, &post.post_id);
        let matches = match_terms(post, &KnownTerm::active(&self.articles()));
        let outcome = match matches.first() {
            None => BridgeOutcome::NoMatch,
            Some(top) => {
                let article = self.require_article(&top.term)?;
                let body = format!(
                    "A post on {} mentions this term ({}).\n\n> {}\n\n{}\n",
                    post.source,
                    top.matched_tokens.join(", "),
                    excerpt(&post.body).replace('\n', "\n> "),
                    post.url
                );
                let issue = self.forge.open_issue(&IssueDraft {
                    target: article.repo,
                    title: format!("New knowledge: {}", post.title),
                    body,
                    labels: vec![ISSUE_LABEL.to_string()],
                });
                match issue {
                    Ok(issue) => BridgeOutcome::IssueOpened {
                        term: top.term.clone(),
                        issue,
                    },
                    Err(err) if err.is_retryable() => return Err(err.into()),
                    Err(err) => {
                        self.set_post_status(&key, matches, PostStatus::Failed { reason: err.to_string() })?;
                        return Err(err.into());
                    }
                }
            }
        };
        let status = match &outcome {
            BridgeOutcome::IssueOpened { term, issue } => PostStatus::IssueOpened {
                term: term.clone(),
                issue: *issue,
            },
            _ => PostStatus::NoMatch,
        };
        self.set_post_status(&key, matches, status)?;
        Ok(outcome)
    }

    fn set_post_status(&self, key: &str, matches: Vec<MatchResult>, status: PostStatus) -> Result<()> {
        self.store.write(|s| {
            if let Some(record) = s.external_posts.get_mut(key) {
                record.matches = matches;
                record.status = status;
            }
            Ok(())
        })
    }

    pub(crate) fn process_external_post_task(&self, payload: &Value) -> Result<()> {
        let post: ExternalPost =
            serde_json::from_value(payload.clone()).map_err(|e| PayloadError::Malformed(e.to_string()))?;
        let pending = self
            .external_post(&post.source, &post.post_id)
            .is_some_and(|r| r.status == PostStatus::Pending);
        if pending {
            self.open_post_issue(&post)?;
        }
        Ok(())
    }
}
