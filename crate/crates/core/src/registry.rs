//! Article lifecycle: registration, push and repository sync, archiving,
//! and import/export.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::accounts::{authorize, AccountId, Action, UserAccount};
use crate::error::{BrokenCause, Error, Result};
use crate::forge::{
    parse_push, parse_repository, ForgeError, NewRepo, RepoRef, WebhookDelivery,
};
use crate::kb::KnowledgeBase;
use crate::notify::NotificationKind;
use crate::spans::{analyze, content_digest, diff_questions, is_valid_slug, ParsedArticle, QuestionDiff, ValidationReport};
use crate::store::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticleStatus {
    Active,
    Archived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub term: String,
    pub repo: RepoRef,
    pub content: String,
    /// Index of the last content that passed validation.
    pub parsed: ParsedArticle,
    /// Validation result for `content`; when it failed, `parsed` still
    /// describes the previous valid content.
    pub validation: ValidationReport,
    pub tags: BTreeSet<String>,
    pub status: ArticleStatus,
    #[serde(default)]
    pub archive_cause: Option<String>,
    pub owners: Vec<AccountId>,
    pub webhook_secret: String,
    pub consecutive_failures: u32,
    /// Question slugs asked through the server, with their forge issue.
    #[serde(default)]
    pub asked_questions: BTreeMap<String, u64>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl Article {
    pub fn is_active(&self) -> bool {
        self.status == ArticleStatus::Active
    }

    pub fn content_hash(&self) -> String {
        content_digest(&self.content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticleEventKind {
    Registered,
    Imported,
    Synced,
    Archived,
    Unarchived,
    TagsUpdated,
    OwnerTransferred,
    SecretRotated,
    /// A delivery that was accepted but intentionally changed nothing.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleEvent {
    pub seq: u64,
    pub term: String,
    pub kind: ArticleEventKind,
    pub delivery_id: Option<String>,
    pub detail: Option<String>,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncOutcome {
    Synced { diff: QuestionDiff, valid: bool },
    /// Push to a branch other than the default one.
    IgnoredRef { git_ref: String },
    FetchFailed { error: ForgeError, failures: u32, archived: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepositoryOutcome {
    Archived { cause: String },
    Updated { tags_changed: bool, owner_transferred: bool },
    IgnoredWhileArchived,
    FetchFailed { error: ForgeError, failures: u32, archived: bool },
}

/// Portable representation of one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveDocument {
    pub version: u32,
    pub term: String,
    pub repo: RepoRef,
    pub content: String,
    pub tags: Vec<String>,
    pub owners: Vec<AccountId>,
}

pub const ARCHIVE_VERSION: u32 = 1;

fn new_secret() -> String {
    let mut bytes = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn push_event(
    state: &mut State,
    term: &str,
    kind: ArticleEventKind,
    delivery_id: Option<&str>,
    detail: Option<String>,
    at: DateTime<Utc>,
) {
    let seq = state.next_seq();
    state.article_events.push(ArticleEvent {
        seq,
        term: term.to_string(),
        kind,
        delivery_id: delivery_id.map(str::to_string),
        detail,
        at,
    });
}

fn article_mut<'a>(state: &'a mut State, term: &str) -> Result<&'a mut Article> {
    state
        .articles
        .get_mut(term)
        .ok_or_else(|| Error::UnknownTerm(term.to_string()))
}

/// Store freshly fetched content. Returns the question diff and whether the
/// content validated; invalid content keeps the previous index.
fn apply_content(article: &mut Article, content: String, now: DateTime<Utc>) -> (QuestionDiff, bool) {
    let (parsed, report) = analyze(&content);
    let valid = report.ok;
    let diff = if valid {
        let diff = diff_questions(&article.parsed, &parsed);
        article.parsed = parsed;
        diff
    } else {
        QuestionDiff::default()
    };
    article.content = content;
    article.validation = report;
    article.consecutive_failures = 0;
    article.updated_at = now;
    (diff, valid)
}

impl KnowledgeBase {
    pub fn register_term(&self, term: &str, actor: &UserAccount) -> Result<Article> {
        if !authorize(actor, Action::RegisterTerm) {
            return Err(Error::Forbidden("registering terms requires the owner role".into()));
        }
        if !is_valid_slug(term) {
            return Err(Error::InvalidTerm(term.to_string()));
        }
        if self.article(term).is_some() {
            return Err(Error::TermAlreadyExists(term.to_string()));
        }
        let owner = self
            .settings
            .repo_owner
            .clone()
            .unwrap_or_else(|| actor.forge_login.clone());
        if owner.is_empty() {
            return Err(Error::Forbidden("no forge account to create the repository under".into()));
        }

        let secret = new_secret();
        let name = self.settings.namespace.repo_name(term);
        let hook_url = self.hook_url(term);
        let repo = self
            .forge
            .create_repo_from_template(&NewRepo {
                owner: &owner,
                name: &name,
                hook_url: &hook_url,
                secret: &secret,
            })
            .map_err(|e| match e {
                ForgeError::AlreadyExists(_) => Error::TermAlreadyExists(term.to_string()),
                other => Error::Forge(other),
            })?;
        let repo = RepoRef::for_active_term(&self.settings.namespace, term, repo.owner, repo.name, repo.default_branch)
            .map_err(|e| Error::Forge(ForgeError::Protocol(e.to_string())))?;

        let fetched = self.forge.fetch_article_file(&repo, &self.settings.content_file);
        let now = self.clock.now();
        let (content, failures) = match fetched {
            Ok(content) => (content, 0),
            Err(err) => {
                tracing::warn!(term, error = %err, "initial content fetch failed");
                (String::new(), 1)
            }
        };
        let (parsed, validation) = analyze(&content);
        let article = Article {
            term: term.to_string(),
            repo,
            content,
            parsed,
            validation,
            tags: BTreeSet::new(),
            status: ArticleStatus::Active,
            archive_cause: None,
            owners: vec![actor.id.clone()],
            webhook_secret: secret,
            consecutive_failures: failures,
            asked_questions: BTreeMap::new(),
            created_at: now,
            updated_at: now,
        };

        self.store.write(|state| {
            if state.articles.contains_key(term) {
                return Err(Error::TermAlreadyExists(term.to_string()));
            }
            state.articles.insert(term.to_string(), article.clone());
            if let Some(account) = state.accounts.get_mut(&actor.id) {
                account.subscriptions.insert(term.to_string(), true);
            }
            push_event(state, term, ArticleEventKind::Registered, None, None, now);
            Ok(())
        })?;
        Ok(article)
    }

    pub fn apply_push_event(&self, term: &str, delivery: &WebhookDelivery) -> Result<SyncOutcome> {
        let push = parse_push(&delivery.raw_body)?;
        let article = self.require_article(term)?;
        let now = self.clock.now();
        let delivery_id = delivery.delivery_id.as_str();

        if !article.is_active() {
            self.store.write(|state| {
                push_event(state, term, ArticleEventKind::Skipped, Some(delivery_id), Some("push ignored: article archived".into()), now);
                Ok::<_, Error>(())
            })?;
            return Err(Error::ArchivedArticle(term.to_string()));
        }

        let default_branch = push
            .repository
            .default_branch
            .clone()
            .unwrap_or_else(|| article.repo.default_branch.clone());
        if push.branch() != Some(default_branch.as_str()) {
            self.store.write(|state| {
                push_event(state, term, ArticleEventKind::Skipped, Some(delivery_id), Some(format!("push to {}", push.git_ref)), now);
                Ok::<_, Error>(())
            })?;
            return Ok(SyncOutcome::IgnoredRef { git_ref: push.git_ref });
        }

        let mut repo = article.repo.clone();
        repo.default_branch = default_branch;
        match self.forge.fetch_article_file(&repo, &self.settings.content_file) {
            Ok(content) => self.store.write(|state| {
                let article = article_mut(state, term)?;
                if !article.is_active() {
                    return Err(Error::ArchivedArticle(term.to_string()));
                }
                article.repo = repo;
                let (diff, valid) = apply_content(article, content, now);
                let detail = if valid {
                    format!("+{} -{} ~{} questions", diff.added.len(), diff.removed.len(), diff.moved.len())
                } else {
                    "content stored with validation errors; previous index kept".to_string()
                };
                push_event(state, term, ArticleEventKind::Synced, Some(delivery_id), Some(detail), now);
                Ok(SyncOutcome::Synced { diff, valid })
            }),
            Err(error) => {
                let (failures, archived) = self.record_failure(term, &error, Some(delivery_id))?;
                Ok(SyncOutcome::FetchFailed { error, failures, archived })
            }
        }
    }

    pub fn apply_repository_event(&self, term: &str, delivery: &WebhookDelivery) -> Result<RepositoryOutcome> {
        let event = parse_repository(&delivery.raw_body)?;
        let article = self.require_article(term)?;
        let now = self.clock.now();
        let delivery_id = delivery.delivery_id.as_str();
        let meta = &event.repository;

        if !article.is_active() {
            // Keep following the repository so an admin can unarchive once
            // the name is fixed; nothing else changes.
            self.store.write(|state| {
                let article = article_mut(state, term)?;
                article.repo = meta.to_ref(&article.repo.default_branch);
                push_event(state, term, ArticleEventKind::Skipped, Some(delivery_id), Some(format!("repository {} ignored: article archived", event.action)), now);
                Ok::<_, Error>(())
            })?;
            return Ok(RepositoryOutcome::IgnoredWhileArchived);
        }

        let namespace = &self.settings.namespace;
        let cause = if !namespace.owns(&meta.name, term) {
            Some(format!("repository renamed to {:?}, outside the namespace for {term:?}", meta.name))
        } else if meta.archived {
            Some("repository archived on the forge".to_string())
        } else {
            None
        };
        if let Some(cause) = cause {
            self.store.write(|state| {
                let article = article_mut(state, term)?;
                article.repo = meta.to_ref(&article.repo.default_branch);
                archive(state, term, &cause, Some(delivery_id), now)
            })?;
            self.notify_archived(term, &cause)?;
            return Ok(RepositoryOutcome::Archived { cause });
        }

        let mut repo = meta.to_ref(&article.repo.default_branch);
        let owner_transferred = repo.owner != article.repo.owner;
        if !owner_transferred {
            repo.owner = article.repo.owner.clone();
        }
        let topics = match self.forge.fetch_topics(&repo) {
            Ok(topics) => topics,
            Err(error) => {
                let (failures, archived) = self.record_failure(term, &error, Some(delivery_id))?;
                return Ok(RepositoryOutcome::FetchFailed { error, failures, archived });
            }
        };

        self.store.write(|state| {
            let article = article_mut(state, term)?;
            let previous_owner = std::mem::replace(&mut article.repo, repo.clone()).owner;
            article.consecutive_failures = 0;
            let tags: BTreeSet<String> = topics.into_iter().collect();
            let tags_changed = tags != article.tags;
            if tags_changed {
                article.tags = tags.clone();
                article.updated_at = now;
            }
            if owner_transferred {
                push_event(state, term, ArticleEventKind::OwnerTransferred, Some(delivery_id), Some(format!("{previous_owner} -> {}", repo.owner)), now);
            }
            if tags_changed {
                let list: Vec<&str> = tags.iter().map(String::as_str).collect();
                push_event(state, term, ArticleEventKind::TagsUpdated, Some(delivery_id), Some(list.join(",")), now);
            }
            if !tags_changed && !owner_transferred {
                push_event(state, term, ArticleEventKind::Skipped, Some(delivery_id), Some(format!("repository {}: nothing to update", event.action)), now);
            }
            Ok(RepositoryOutcome::Updated {
                tags_changed,
                owner_transferred,
            })
        })
    }

    /// Count a failed forge interaction; archives at the threshold.
    fn record_failure(&self, term: &str, error: &ForgeError, delivery_id: Option<&str>) -> Result<(u32, bool)> {
        let now = self.clock.now();
        let threshold = self.settings.failure_threshold.max(1);
        let (failures, cause) = self.store.write(|state| {
            let article = article_mut(state, term)?;
            article.consecutive_failures += 1;
            let failures = article.consecutive_failures;
            if failures >= threshold && article.is_active() {
                let cause = format!("{failures} consecutive forge failures, last: {error}");
                archive(state, term, &cause, delivery_id, now)?;
                Ok::<_, Error>((failures, Some(cause)))
            } else {
                Ok((failures, None))
            }
        })?;
        if let Some(cause) = &cause {
            self.notify_archived(term, cause)?;
        }
        Ok((failures, cause.is_some()))
    }

    fn notify_archived(&self, term: &str, cause: &str) -> Result<()> {
        self.enqueue_notification(
            NotificationKind::RepositoryArchived,
            term,
            format!("[{}] {term} was archived", self.settings.branding.site_name),
            format!("Updates for {term} are suspended until the repository is fixed.\n\nCause: {cause}\n"),
        )?;
        Ok(())
    }

    pub fn unarchive(&self, term: &str, actor: &UserAccount) -> Result<Article> {
        if !authorize(actor, Action::Unarchive) {
            return Err(Error::Forbidden("unarchiving requires the admin role".into()));
        }
        let article = self.require_article(term)?;
        if article.is_active() {
            return Ok(article);
        }
        if !self.settings.namespace.owns(&article.repo.name, term) {
            return Err(Error::StillBroken(BrokenCause::BadName(article.repo.name)));
        }
        let content = self
            .forge
            .fetch_article_file(&article.repo, &self.settings.content_file)
            .map_err(|e| Error::StillBroken(BrokenCause::FetchFailed(e)))?;
        let now = self.clock.now();
        self.store.write(|state| {
            let article = article_mut(state, term)?;
            apply_content(article, content, now);
            article.status = ArticleStatus::Active;
            article.archive_cause = None;
            let restored = article.clone();
            push_event(state, term, ArticleEventKind::Unarchived, None, None, now);
            Ok(restored)
        })
    }

    /// Issue a fresh webhook secret and push it to the forge.
    pub fn rotate_webhook_secret(&self, term: &str, actor: &UserAccount) -> Result<()> {
        if !authorize(actor, Action::WebhookAdmin) {
            return Err(Error::Forbidden("webhook administration requires the admin role".into()));
        }
        let article = self.require_article(term)?;
        let secret = new_secret();
        self.forge
            .set_webhook_secret(&article.repo, &self.hook_url(term), &secret)?;
        let now = self.clock.now();
        self.store.write(|state| {
            article_mut(state, term)?.webhook_secret = secret;
            push_event(state, term, ArticleEventKind::SecretRotated, None, None, now);
            Ok(())
        })
    }

    pub fn export_article(&self, term: &str) -> Result<ArchiveDocument> {
        let article = self.require_article(term)?;
        Ok(ArchiveDocument {
            version: ARCHIVE_VERSION,
            term: article.term,
            repo: article.repo,
            content: article.content,
            tags: article.tags.into_iter().collect(),
            owners: article.owners,
        })
    }

    /// Recreate an article from an exported document without contacting the
    /// forge. Content that fails validation, or a repository outside the
    /// namespace, is imported archived.
    pub fn import_article(&self, document: &str) -> Result<Article> {
        let value: Value = serde_json::from_str(document).map_err(|e| Error::MalformedArchive(e.to_string()))?;
        match value.get("version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(ARCHIVE_VERSION) => {}
            Some(v) => return Err(Error::MalformedArchive(format!("unsupported version {v}"))),
            None => return Err(Error::MalformedArchive("missing field `version`".into())),
        }
        let doc: ArchiveDocument = serde_json::from_value(value).map_err(|e| Error::MalformedArchive(e.to_string()))?;
        if !is_valid_slug(&doc.term) {
            return Err(Error::MalformedArchive(format!("invalid term {:?}", doc.term)));
        }

        let now = self.clock.now();
        let (parsed, validation) = analyze(&doc.content);
        let cause = if !validation.ok {
            Some(format!("imported content has {} validation error(s)", validation.errors.len()))
        } else if !self.settings.namespace.owns(&doc.repo.name, &doc.term) {
            Some(format!("repository {:?} is outside the namespace", doc.repo.name))
        } else {
            None
        };
        let article = Article {
            term: doc.term.clone(),
            repo: doc.repo,
            content: doc.content,
            parsed,
            validation,
            tags: doc.tags.into_iter().collect(),
            status: if cause.is_some() {
                ArticleStatus::Archived
            } else {
                ArticleStatus::Active
            },
            archive_cause: cause,
            owners: doc.owners,
            webhook_secret: new_secret(),
            consecutive_failures: 0,
            asked_questions: BTreeMap::new(),
            created_at: now,
            updated_at: now,
        };
        self.store.write(|state| {
            if state.articles.contains_key(&article.term) {
                return Err(Error::TermAlreadyExists(article.term.clone()));
            }
            state.articles.insert(article.term.clone(), article.clone());
            push_event(state, &article.term, ArticleEventKind::Imported, None, article.archive_cause.clone(), now);
            Ok(article)
        })
    }
}

fn archive(state: &mut State, term: &str, cause: &str, delivery_id: Option<&str>, now: DateTime<Utc>) -> Result<()> {
    let article = article_mut(state, term)?;
    article.status = ArticleStatus::Archived;
    article.archive_cause = Some(cause.to_string());
    article.updated_at = now;
    push_event(state, term, ArticleEventKind::Archived, delivery_id, Some(cause.to_string()), now);
    Ok(())
}
