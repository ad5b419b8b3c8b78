//! Request-level operations behind the HTTP surface: sign-in, questions,
//! search and webhook intake.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::accounts::{authorize, role_for_scopes, AccountId, Action, Role, UserAccount};
use crate::error::{Error, Result};
use crate::forge::{verify_signature, EventKind, ForgeError, IssueDraft, PayloadError, WebhookDelivery};
use crate::kb::{KnowledgeBase, TaskKind};
use crate::notify::NotificationKind;
use crate::search::{search, SearchResult};
use crate::spans::{slugify, SpanKind};

pub const QUESTION_LABEL: &str = "question";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskOutcome {
    pub term: String,
    pub slug: String,
    pub anchor: String,
    /// The article already answers this question.
    pub existing: bool,
    pub issue: Option<u64>,
}

/// What webhook intake decided; maps 1:1 onto an HTTP status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WebhookStatus {
    Accepted { task_id: u64, duplicate: bool },
    Pong,
    UnknownTerm,
    BadSignature,
    BadRequest(String),
}

impl WebhookStatus {
    pub fn http_status(&self) -> u16 {
        match self {
            WebhookStatus::Accepted { .. } => 202,
            WebhookStatus::Pong => 200,
            WebhookStatus::UnknownTerm => 404,
            WebhookStatus::BadSignature => 401,
            WebhookStatus::BadRequest(_) => 400,
        }
    }
}

/// Raw request pieces of an inbound forge webhook.
#[derive(Debug, Clone)]
pub struct InboundWebhook<'a> {
    pub event: &'a str,
    pub delivery_id: &'a str,
    pub signature: &'a str,
    pub body: &'a [u8],
}

#[derive(Serialize, Deserialize)]
struct WebhookTask {
    term: String,
    delivery_id: String,
    event: EventKind,
    signature: String,
    body_hex: String,
}

fn new_token() -> String {
    let mut bytes = [0u8; 24];
    rand::thread_rng().fill_bytes(&mut bytes);
    format!("kf_{}", hex::encode(bytes))
}

impl KnowledgeBase {
    /// Complete an OAuth authorization-code sign-in and issue an API token.
    pub fn authenticate(&self, code: &str) -> Result<UserAccount> {
        let grant = self.forge.exchange_oauth_code(code).map_err(|e| match e {
            ForgeError::OAuthDenied(m) | ForgeError::PermissionDenied(m) | ForgeError::NotFound(m) => Error::OAuthDenied(m),
            other => Error::Forge(other),
        })?;
        let role = if self.settings.admins.contains(&grant.login) {
            Role::Admin
        } else {
            role_for_scopes(&grant.scopes)
        };
        let token = new_token();
        self.store.write(|s| {
            let id = AccountId::new(grant.login.clone());
            let account = s
                .accounts
                .entry(id.clone())
                .or_insert_with(|| UserAccount::from_login(&grant.login, role));
            account.role = role;
            if grant.email.is_some() {
                account.email.clone_from(&grant.email);
            }
            account.api_token = Some(token);
            Ok(account.clone())
        })
    }

    /// Create or replace a persisted account. Used by operators and tests.
    pub fn upsert_account(&self, account: UserAccount) -> Result<UserAccount> {
        if account.role == Role::Viewer {
            return Err(Error::Forbidden("persisted accounts must be at least editors".into()));
        }
        self.store.write(|s| {
            s.accounts.insert(account.id.clone(), account.clone());
            Ok(account)
        })
    }

    pub fn search(&self, query: &str) -> Vec<SearchResult> {
        search(&self.articles(), query)
    }

    pub fn ask_question(&self, term: &str, text: &str, actor: &UserAccount) -> Result<AskOutcome> {
        if !authorize(actor, Action::AskQuestion) {
            return Err(Error::Forbidden("asking questions requires signing in".into()));
        }
        let article = self.require_article(term)?;
        if !article.is_active() {
            return Err(Error::ArchivedArticle(term.to_string()));
        }
        let text = text.trim();
        let slug = slugify(text);
        if slug.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        let anchor = SpanKind::Question.anchor(&slug);
        let outcome = |existing, issue| AskOutcome {
            term: term.to_string(),
            slug: slug.clone(),
            anchor: anchor.clone(),
            existing,
            issue,
        };
        if article.parsed.question(&slug).is_some() {
            return Ok(outcome(true, None));
        }
        if let Some(&issue) = article.asked_questions.get(&slug) {
            return Ok(outcome(false, Some(issue)));
        }

        let body = format!(
            "Asked by @{} through the knowledge server.\n\nWhen answering, start the answer with:\n\n    {}\n",
            actor.forge_login,
            SpanKind::Question.tag(&slug)
        );
        let issue = self.forge.open_issue(&IssueDraft {
            target: article.repo,
            title: format!("Question: {text}"),
            body,
            labels: vec![QUESTION_LABEL.to_string()],
        })?;
        self.store.write(|s| {
            if let Some(a) = s.articles.get_mut(term) {
                a.asked_questions.insert(slug.clone(), issue);
            }
            Ok::<_, Error>(())
        })?;
        self.enqueue_notification(
            NotificationKind::QuestionAsked,
            term,
            format!("[{}] New question on {term}", self.settings.branding.site_name),
            format!("{text}\n\nTracked as issue #{issue}.\n"),
        )?;
        Ok(outcome(false, Some(issue)))
    }

    /// Verify and enqueue a forge delivery. Processing happens later on the
    /// task queue; replays of a delivery id are accepted without re-running.
    pub fn receive_webhook(&self, term: &str, inbound: &InboundWebhook<'_>) -> Result<WebhookStatus> {
        let Some(article) = self.article(term) else {
            return Ok(WebhookStatus::UnknownTerm);
        };
        let probe = WebhookDelivery {
            delivery_id: inbound.delivery_id.to_string(),
            event_kind: EventKind::Push,
            signature_header: inbound.signature.to_string(),
            raw_body: inbound.body.to_vec(),
            received_at: self.clock.now(),
        };
        if !verify_signature(&probe, &article.webhook_secret) {
            return Ok(WebhookStatus::BadSignature);
        }
        if inbound.event == "ping" {
            return Ok(WebhookStatus::Pong);
        }
        let Some(event) = EventKind::parse(inbound.event) else {
            return Ok(WebhookStatus::BadRequest(format!("unsupported event {:?}", inbound.event)));
        };
        if inbound.delivery_id.trim().is_empty() {
            return Ok(WebhookStatus::BadRequest("missing delivery id".into()));
        }
        let payload = serde_json::to_value(WebhookTask {
            term: term.to_string(),
            delivery_id: inbound.delivery_id.to_string(),
            event,
            signature: inbound.signature.to_string(),
            body_hex: hex::encode(inbound.body),
        })
        .expect("webhook task serializes");
        let enqueued = self
            .queue
            .enqueue(TaskKind::Webhook.as_str(), payload, &format!("forge:{}", inbound.delivery_id), Some(term))?;
        Ok(WebhookStatus::Accepted {
            task_id: enqueued.task.task_id,
            duplicate: !enqueued.created,
        })
    }

    pub(crate) fn process_webhook_task(&self, payload: &Value) -> Result<()> {
        let task: WebhookTask =
            serde_json::from_value(payload.clone()).map_err(|e| PayloadError::Malformed(e.to_string()))?;
        let raw_body = hex::decode(&task.body_hex).map_err(|e| PayloadError::Malformed(e.to_string()))?;
        let delivery = WebhookDelivery {
            delivery_id: task.delivery_id,
            event_kind: task.event,
            signature_header: task.signature,
            raw_body,
            received_at: self.clock.now(),
        };
        let result = match task.event {
            EventKind::Push => self.apply_push_event(&task.term, &delivery).map(|o| json!(format!("{o:?}"))),
            EventKind::PullRequest => self
                .apply_pull_request_event(&task.term, &delivery)
                .map(|o| json!(format!("{:?}", o.review.status))),
            EventKind::Repository => self
                .apply_repository_event(&task.term, &delivery)
                .map(|o| json!(format!("{o:?}"))),
        };
        match result {
            Ok(outcome) => {
                tracing::debug!(term = %task.term, delivery = %delivery.delivery_id, %outcome, "webhook processed");
                Ok(())
            }
            Err(Error::ArchivedArticle(_)) => Ok(()),
            Err(err) => Err(err),
        }
    }
}

impl KnowledgeBase {
    /// Feed one simulator delivery through webhook intake, resolving the
    /// term from the hook URL the way the real route would.
    pub fn deliver(&self, outbound: &crate::forge::OutboundDelivery) -> Result<WebhookStatus> {
        let Some(term) = term_from_hook_url(&outbound.hook_url) else {
            return Ok(WebhookStatus::UnknownTerm);
        };
        let d = &outbound.delivery;
        self.receive_webhook(
            term,
            &InboundWebhook {
                event: d.event_kind.as_str(),
                delivery_id: &d.delivery_id,
                signature: &d.signature_header,
                body: &d.raw_body,
            },
        )
    }
}

/// `https://kb.example/hooks/forge/hpc` -> `hpc`
pub fn term_from_hook_url(url: &str) -> Option<&str> {
    let (_, rest) = url.split_once("/hooks/forge/")?;
    let term = rest.split(['/', '?', '#']).next()?;
    (!term.is_empty()).then_some(term)
}
