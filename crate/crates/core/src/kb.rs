//! The service object every operation hangs off.

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::Duration;
use serde_json::Value;

use crate::accounts::{AccountId, UserAccount};
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::forge::{Forge, Namespace};
use crate::notify::MailSender;
use crate::queue::{ProcessOutcome, RetryPolicy, Task, TaskQueue};
use crate::registry::{Article, ArticleEvent};
use crate::store::Store;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branding {
    pub site_name: String,
    pub tagline: String,
}

impl Default for Branding {
    fn default() -> Self {
        Branding {
            site_name: "Knowledge Forge".to_string(),
            tagline: "Collaborative, version-controlled answers".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub branding: Branding,
    /// Public URL of this server; webhook targets are derived from it.
    pub base_url: String,
    pub namespace: Namespace,
    pub content_file: String,
    pub failure_threshold: u32,
    pub review_timeout: Duration,
    /// Forge logins granted the admin role on sign-in.
    pub admins: BTreeSet<String>,
    /// Organization new article repositories are created in. When unset the
    /// registering owner's own account is used.
    pub repo_owner: Option<String>,
    pub discourse_secret: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            branding: Branding::default(),
            base_url: "http://localhost:8080".to_string(),
            namespace: Namespace::default(),
            content_file: "README.md".to_string(),
            failure_threshold: 3,
            review_timeout: Duration::hours(1),
            admins: BTreeSet::new(),
            repo_owner: None,
            discourse_secret: None,
        }
    }
}

pub struct KnowledgeBase {
    pub(crate) settings: Settings,
    pub(crate) store: Arc<Store>,
    pub(crate) forge: Arc<dyn Forge>,
    pub(crate) mail: Arc<dyn MailSender>,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) queue: TaskQueue,
}

impl KnowledgeBase {
    pub fn new(
        settings: Settings,
        store: Arc<Store>,
        forge: Arc<dyn Forge>,
        mail: Arc<dyn MailSender>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self::with_retry_policy(settings, store, forge, mail, clock, RetryPolicy::default())
    }

    pub fn with_retry_policy(
        settings: Settings,
        store: Arc<Store>,
        forge: Arc<dyn Forge>,
        mail: Arc<dyn MailSender>,
        clock: Arc<dyn Clock>,
        policy: RetryPolicy,
    ) -> Self {
        let queue = TaskQueue::new(store.clone(), clock.clone(), policy);
        KnowledgeBase {
            settings,
            store,
            forge,
            mail,
            clock,
            queue,
        }
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.queue
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn hook_url(&self, term: &str) -> String {
        format!("{}/hooks/forge/{}", self.settings.base_url.trim_end_matches('/'), term)
    }

    pub fn article(&self, term: &str) -> Option<Article> {
        self.store.read(|s| s.articles.get(term).cloned())
    }

    pub(crate) fn require_article(&self, term: &str) -> Result<Article> {
        self.article(term).ok_or_else(|| Error::UnknownTerm(term.to_string()))
    }

    pub fn articles(&self) -> Vec<Article> {
        self.store.read(|s| s.articles.values().cloned().collect())
    }

    /// Audit trail for one article, oldest first.
    pub fn article_events(&self, term: &str) -> Vec<ArticleEvent> {
        self.store.read(|s| {
            s.article_events
                .iter()
                .filter(|e| e.term == term)
                .cloned()
                .collect()
        })
    }

    pub fn account(&self, id: &AccountId) -> Option<UserAccount> {
        self.store.read(|s| s.accounts.get(id).cloned())
    }

    pub fn account_by_token(&self, token: &str) -> Option<UserAccount> {
        self.store.read(|s| {
            s.accounts
                .values()
                .find(|a| a.api_token.as_deref() == Some(token))
                .cloned()
        })
    }

    /// Run due tasks until nothing is runnable. Returns what happened.
    pub fn run_pending(&self) -> Result<Vec<ProcessOutcome>> {
        let mut outcomes = Vec::new();
        loop {
            let outcome = self.queue.process_next(|task| self.execute_task(task))?;
            if outcome == ProcessOutcome::Idle {
                return Ok(outcomes);
            }
            outcomes.push(outcome);
        }
    }

    /// Handler for one queued task; errors are retried by the queue.
    pub fn execute_task(&self, task: &Task) -> std::result::Result<(), String> {
        let result = match TaskKind::parse(&task.kind) {
            Some(TaskKind::Webhook) => self.process_webhook_task(&task.payload),
            Some(TaskKind::ReviewDispatch) => self.retry_review_dispatch(&task.payload),
            Some(TaskKind::TemplateDispatch) => self.retry_template_dispatch(&task.payload),
            Some(TaskKind::Notify) => self.process_notify_task(&task.payload),
            Some(TaskKind::ExternalPost) => self.process_external_post_task(&task.payload),
            None => {
                tracing::warn!(kind = %task.kind, "dropping task of unknown kind");
                Ok(())
            }
        };
        match result {
            Ok(()) => Ok(()),
            Err(err) if err.is_retryable() => Err(err.to_string()),
            Err(err) => {
                // Permanent failures are recorded by the operation itself.
                tracing::info!(task = task.task_id, error = %err, "task finished with a permanent error");
                Ok(())
            }
        }
    }

    pub(crate) fn enqueue(&self, kind: TaskKind, payload: Value, dedup_key: &str, term: Option<&str>) -> Result<Task> {
        Ok(self.queue.enqueue(kind.as_str(), payload, dedup_key, term)?.task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Webhook,
    ReviewDispatch,
    TemplateDispatch,
    Notify,
    ExternalPost,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Webhook => "webhook",
            TaskKind::ReviewDispatch => "review_dispatch",
            TaskKind::TemplateDispatch => "template_dispatch",
            TaskKind::Notify => "notify",
            TaskKind::ExternalPost => "external_post",
        }
    }

    pub fn parse(kind: &str) -> Option<Self> {
        [
            TaskKind::Webhook,
            TaskKind::ReviewDispatch,
            TaskKind::TemplateDispatch,
            TaskKind::Notify,
            TaskKind::ExternalPost,
        ]
        .into_iter()
        .find(|k| k.as_str() == kind)
    }
}
