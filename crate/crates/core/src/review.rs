//! Review lifecycle: submission, request-review dispatch, pull request
//! mirroring and template update dispatches.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::accounts::{authorize, AccountId, Action, UserAccount};
use crate::error::{Error, Result};
use crate::forge::{parse_pull_request, DispatchEvent, DispatchType, ForgeError, PrAction, PullRequestInfo, WebhookDelivery, PR_MARKER_PREFIX};
use crate::kb::{KnowledgeBase, TaskKind};
use crate::notify::NotificationKind;
use crate::spans::{content_digest, validate_article};

const REVIEW_BRANCH_PREFIX: &str = "review-";
const TEMPLATE_BRANCH_PREFIX: &str = "update-template";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    PendingDispatch,
    Open,
    Accepted,
    Rejected,
}

impl ReviewStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ReviewStatus::Accepted | ReviewStatus::Rejected)
    }

    /// The only allowed moves: pending_dispatch -> open -> accepted|rejected,
    /// plus pending_dispatch -> rejected when the dispatch is lost.
    pub fn can_become(self, next: ReviewStatus) -> bool {
        use ReviewStatus::*;
        matches!(
            (self, next),
            (PendingDispatch, Open) | (PendingDispatch, Rejected) | (Open, Accepted) | (Open, Rejected)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub status: ReviewStatus,
    pub at: DateTime<Utc>,
    #[serde(default)]
    pub cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub term: String,
    pub author: AccountId,
    pub status: ReviewStatus,
    pub pr: Option<PullRequestInfo>,
    pub submitted_content_hash: String,
    /// Mirrored from a pull request the server did not request.
    #[serde(default)]
    pub orphan: bool,
    #[serde(default)]
    pub cause: Option<String>,
    pub history: Vec<Transition>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl Review {
    fn transition(&mut self, next: ReviewStatus, cause: Option<String>, at: DateTime<Utc>) -> bool {
        if !self.status.can_become(next) {
            return false;
        }
        self.status = next;
        if cause.is_some() {
            self.cause.clone_from(&cause);
        }
        self.history.push(Transition { status: next, at, cause });
        self.updated_at = at;
        true
    }
}

/// Result of mirroring one pull request event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrOutcome {
    pub review: Review,
    /// No server-side review matched; one was created for visibility.
    pub orphan: bool,
    pub changed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TemplateUpdateReport {
    pub dispatched: Vec<String>,
    /// Forge was unavailable; a retry task was queued.
    pub queued: Vec<String>,
    pub skipped_archived: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl TemplateUpdateReport {
    pub fn count(&self) -> usize {
        self.dispatched.len()
    }
}

/// Pull the review id out of a PR's branch name or body marker.
pub fn correlation_id(info: &PullRequestInfo) -> Option<String> {
    if let Some(id) = info.branch.strip_prefix(REVIEW_BRANCH_PREFIX) {
        if !id.is_empty() {
            return Some(id.to_string());
        }
    }
    info.body
        .lines()
        .find_map(|line| line.trim().strip_prefix(PR_MARKER_PREFIX))
        .map(|id| id.trim().to_string())
        .filter(|id| !id.is_empty())
}

fn review_dispatch(review: &Review, content: &str, target: crate::forge::RepoRef) -> DispatchEvent {
    let mut payload = Map::new();
    payload.insert("content".into(), Value::String(content.to_string()));
    payload.insert("author".into(), Value::String(review.author.to_string()));
    payload.insert("review_id".into(), Value::String(review.id.clone()));
    DispatchEvent {
        event_type: DispatchType::RequestReview,
        client_payload: payload,
        target,
    }
}

#[derive(Deserialize)]
struct DispatchRetry {
    review_id: String,
    content: String,
}

#[derive(Deserialize)]
struct TemplateRetry {
    term: String,
}

impl KnowledgeBase {
    pub fn review(&self, id: &str) -> Option<Review> {
        self.store.read(|s| s.reviews.get(id).cloned())
    }

    /// Reviews, newest first, optionally for one term.
    pub fn reviews(&self, term: Option<&str>) -> Vec<Review> {
        let mut out: Vec<Review> = self.store.read(|s| {
            s.reviews
                .values()
                .filter(|r| term.is_none_or(|t| r.term == t))
                .cloned()
                .collect()
        });
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn submit_for_review(&self, term: &str, content: &str, actor: &UserAccount) -> Result<Review> {
        if !authorize(actor, Action::SubmitReview) {
            return Err(Error::Forbidden("submitting edits requires signing in".into()));
        }
        let article = self.require_article(term)?;
        if !article.is_active() {
            return Err(Error::ArchivedArticle(term.to_string()));
        }
        let report = validate_article(content);
        if !report.ok {
            return Err(Error::ValidationFailed(report));
        }

        let now = self.clock.now();
        let review = Review {
            id: uuid::Uuid::new_v4().simple().to_string(),
            term: term.to_string(),
            author: actor.id.clone(),
            status: ReviewStatus::PendingDispatch,
            pr: None,
            submitted_content_hash: content_digest(content),
            orphan: false,
            cause: None,
            history: vec![Transition {
                status: ReviewStatus::PendingDispatch,
                at: now,
                cause: None,
            }],
            created_at: now,
            updated_at: now,
        };
        self.store.write(|s| {
            s.reviews.insert(review.id.clone(), review.clone());
            Ok::<_, Error>(())
        })?;
        self.enqueue_notification(
            NotificationKind::ReviewRequested,
            term,
            format!("[{}] Review requested for {term}", self.settings.branding.site_name),
            format!("{} proposed an edit to {term}.\n\nReview id: {}\n", actor.forge_login, review.id),
        )?;

        match self.forge.send_dispatch(&review_dispatch(&review, content, article.repo)) {
            Ok(()) => Ok(review),
            Err(source) if source.is_retryable() => {
                self.enqueue(
                    TaskKind::ReviewDispatch,
                    json!({ "review_id": review.id, "content": content }),
                    &format!("review-dispatch:{}", review.id),
                    Some(term),
                )?;
                Err(Error::DispatchPending {
                    review_id: review.id,
                    source,
                })
            }
            Err(err) => {
                self.store.write(|s| {
                    if let Some(r) = s.reviews.get_mut(&review.id) {
                        r.transition(ReviewStatus::Rejected, Some(format!("DispatchFailed: {err}")), now);
                    }
                    Ok::<_, Error>(())
                })?;
                Err(Error::Forge(err))
            }
        }
    }

    pub(crate) fn retry_review_dispatch(&self, payload: &Value) -> Result<()> {
        let retry: DispatchRetry =
            serde_json::from_value(payload.clone()).map_err(|e| crate::forge::PayloadError::Malformed(e.to_string()))?;
        let Some(review) = self.review(&retry.review_id) else {
            return Err(Error::UnknownReview(retry.review_id));
        };
        if review.status != ReviewStatus::PendingDispatch {
            return Ok(());
        }
        let article = self.require_article(&review.term)?;
        if !article.is_active() {
            return Err(Error::ArchivedArticle(review.term));
        }
        self.forge
            .send_dispatch(&review_dispatch(&review, &retry.content, article.repo))?;
        Ok(())
    }

    pub fn apply_pull_request_event(&self, term: &str, delivery: &WebhookDelivery) -> Result<PrOutcome> {
        let info = parse_pull_request(&delivery.raw_body)?;
        self.apply_pull_request(term, info)
    }

    pub fn apply_pull_request(&self, term: &str, info: PullRequestInfo) -> Result<PrOutcome> {
        self.require_article(term)?;
        let now = self.clock.now();
        let correlation = correlation_id(&info);

        let outcome = self.store.write(|s| {
            let by_number = s
                .reviews
                .values()
                .find(|r| r.term == term && r.pr.as_ref().is_some_and(|p| p.number == info.number && p.target.name == info.target.name))
                .map(|r| r.id.clone());
            let by_marker = correlation
                .as_ref()
                .filter(|id| s.reviews.get(*id).is_some_and(|r| r.term == term))
                .cloned();
            let (id, orphan) = match by_number.or(by_marker) {
                Some(id) => (id, false),
                None => {
                    let id = uuid::Uuid::new_v4().simple().to_string();
                    let author = AccountId::new(info.author.clone().unwrap_or_else(|| "unknown".into()));
                    s.reviews.insert(
                        id.clone(),
                        Review {
                            id: id.clone(),
                            term: term.to_string(),
                            author,
                            status: ReviewStatus::PendingDispatch,
                            pr: None,
                            submitted_content_hash: String::new(),
                            orphan: true,
                            cause: None,
                            history: vec![Transition {
                                status: ReviewStatus::PendingDispatch,
                                at: now,
                                cause: Some("pull request opened outside the server".into()),
                            }],
                            created_at: now,
                            updated_at: now,
                        },
                    );
                    (id, true)
                }
            };
            let review = s.reviews.get_mut(&id).expect("review just resolved");
            let mut changed = orphan;
            if !review.status.is_terminal() {
                review.pr = Some(info.clone());
                if review.status == ReviewStatus::PendingDispatch {
                    changed |= review.transition(ReviewStatus::Open, None, now);
                }
                if info.action == PrAction::Closed {
                    let next = if info.merged_at.is_some() {
                        ReviewStatus::Accepted
                    } else {
                        ReviewStatus::Rejected
                    };
                    changed |= review.transition(next, None, now);
                }
            }
            let review = review.clone();
            if review.status == ReviewStatus::Accepted && changed {
                if let Some(account) = s.accounts.get_mut(&review.author) {
                    account.subscriptions.insert(term.to_string(), true);
                }
            }
            Ok::<_, Error>(PrOutcome { review, orphan, changed })
        })?;

        if outcome.orphan && info.branch.starts_with(TEMPLATE_BRANCH_PREFIX) {
            self.enqueue_notification(
                NotificationKind::TemplateUpdateOpened,
                term,
                format!("[{}] Template update for {term}", self.settings.branding.site_name),
                format!("A template update pull request is waiting: {}\n", info.url),
            )?;
        }
        Ok(outcome)
    }

    /// Reject reviews whose dispatch never produced a pull request.
    pub fn expire_pending_reviews(&self) -> Result<Vec<String>> {
        let now = self.clock.now();
        let cutoff = now - self.settings.review_timeout;
        self.store.write(|s| {
            let mut expired = Vec::new();
            for review in s.reviews.values_mut() {
                if review.status == ReviewStatus::PendingDispatch && review.created_at <= cutoff {
                    review.transition(ReviewStatus::Rejected, Some("DispatchLost".into()), now);
                    expired.push(review.id.clone());
                }
            }
            Ok(expired)
        })
    }

    /// Send update-template dispatches to every active article, or to the
    /// given subset.
    pub fn trigger_template_update(&self, terms: Option<&[String]>, actor: &UserAccount) -> Result<TemplateUpdateReport> {
        if !authorize(actor, Action::TriggerTemplateUpdate) {
            return Err(Error::Forbidden("template updates require the admin role".into()));
        }
        let selected = match terms {
            None => self.articles(),
            Some(terms) => terms
                .iter()
                .map(|t| self.require_article(t))
                .collect::<Result<Vec<_>>>()?,
        };
        let mut report = TemplateUpdateReport::default();
        for article in selected {
            if !article.is_active() {
                report.skipped_archived.push(article.term);
                continue;
            }
            match self.send_template_dispatch(&article.term) {
                Ok(()) => report.dispatched.push(article.term),
                Err(Error::Forge(err)) if err.is_retryable() => {
                    self.enqueue(
                        TaskKind::TemplateDispatch,
                        json!({ "term": article.term }),
                        &format!("template-dispatch:{}", article.term),
                        Some(&article.term),
                    )?;
                    report.queued.push(article.term);
                }
                Err(err) => report.failed.push((article.term, err.to_string())),
            }
        }
        Ok(report)
    }

    fn send_template_dispatch(&self, term: &str) -> Result<()> {
        let article = self.require_article(term)?;
        if !article.is_active() {
            return Err(Error::ArchivedArticle(term.to_string()));
        }
        let mut payload = Map::new();
        payload.insert("term".into(), Value::String(term.to_string()));
        self.forge
            .send_dispatch(&DispatchEvent {
                event_type: DispatchType::UpdateTemplate,
                client_payload: payload,
                target: article.repo,
            })
            .map_err(|e: ForgeError| Error::Forge(e))
    }

    pub(crate) fn retry_template_dispatch(&self, payload: &Value) -> Result<()> {
        let retry: TemplateRetry =
            serde_json::from_value(payload.clone()).map_err(|e| crate::forge::PayloadError::Malformed(e.to_string()))?;
        self.send_template_dispatch(&retry.term)
    }
}
