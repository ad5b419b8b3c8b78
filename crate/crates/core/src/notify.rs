//! Subscriptions and outbound mail.

use std::collections::BTreeSet;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::accounts::{AccountId, Subscription};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, TaskKind};
use crate::store::State;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum NotifyError {
    #[error("mail backend unavailable: {0}")]
    MailBackendUnavailable(String),
    #[error("invalid mail address {0:?}")]
    InvalidAddress(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MailMessage {
    pub to: String,
    pub subject: String,
    pub body: String,
}

pub trait MailSender: Send + Sync {
    fn send(&self, message: &MailMessage) -> Result<(), NotifyError>;
}

/// Keeps every message in memory. Failures can be injected.
#[derive(Default)]
pub struct RecordingMailer {
    sent: Mutex<Vec<MailMessage>>,
    failures: Mutex<usize>,
    down: Mutex<bool>,
}

impl RecordingMailer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sent(&self) -> Vec<MailMessage> {
        self.sent.lock().clone()
    }

    pub fn sent_to(&self, address: &str) -> Vec<MailMessage> {
        self.sent.lock().iter().filter(|m| m.to == address).cloned().collect()
    }

    /// Fail the next `count` sends.
    pub fn fail_next(&self, count: usize) {
        *self.failures.lock() = count;
    }

    pub fn set_down(&self, down: bool) {
        *self.down.lock() = down;
    }
}

impl MailSender for RecordingMailer {
    fn send(&self, message: &MailMessage) -> Result<(), NotifyError> {
        if *self.down.lock() {
            return Err(NotifyError::MailBackendUnavailable("recording sink is down".into()));
        }
        let mut failures = self.failures.lock();
        if *failures > 0 {
            *failures -= 1;
            return Err(NotifyError::MailBackendUnavailable("injected failure".into()));
        }
        self.sent.lock().push(message.clone());
        Ok(())
    }
}

/// Plain SMTP relay, configured by a `smtp://host[:port]` URL.
pub struct SmtpMailer {
    transport: lettre::SmtpTransport,
    from: lettre::message::Mailbox,
}

impl SmtpMailer {
    pub fn new(url: &str, from: &str, credentials: Option<(String, String)>) -> Result<Self, NotifyError> {
        let parsed = url::Url::parse(url).map_err(|e| NotifyError::MailBackendUnavailable(format!("bad SMTP URL {url:?}: {e}")))?;
        if parsed.scheme() != "smtp" {
            return Err(NotifyError::MailBackendUnavailable(format!("unsupported mail URL scheme {:?}", parsed.scheme())));
        }
        let host = parsed
            .host_str()
            .ok_or_else(|| NotifyError::MailBackendUnavailable(format!("SMTP URL {url:?} has no host")))?;
        let mut builder = lettre::SmtpTransport::builder_dangerous(host).port(parsed.port().unwrap_or(25));
        if let Some((user, pass)) = credentials {
            builder = builder.credentials(lettre::transport::smtp::authentication::Credentials::new(user, pass));
        }
        let from = from.parse().map_err(|_| NotifyError::InvalidAddress(from.to_string()))?;
        Ok(SmtpMailer {
            transport: builder.build(),
            from,
        })
    }
}

impl MailSender for SmtpMailer {
    fn send(&self, message: &MailMessage) -> Result<(), NotifyError> {
        use lettre::Transport;
        let to = message
            .to
            .parse()
            .map_err(|_| NotifyError::InvalidAddress(message.to.clone()))?;
        let email = lettre::Message::builder()
            .from(self.from.clone())
            .to(to)
            .subject(&message.subject)
            .body(message.body.clone())
            .map_err(|e| NotifyError::InvalidAddress(e.to_string()))?;
        self.transport
            .send(&email)
            .map(|_| ())
            .map_err(|e| NotifyError::MailBackendUnavailable(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationKind {
    ReviewRequested,
    TemplateUpdateOpened,
    RepositoryArchived,
    QuestionAsked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationEvent {
    pub event_id: String,
    pub kind: NotificationKind,
    pub term: String,
    pub subject: String,
    pub body: String,
    pub recipients: Vec<AccountId>,
}

/// Owners and active subscribers of `term`, minus anyone who switched the
/// term off. Question notices go to owners only.
pub fn resolve_recipients(state: &State, kind: NotificationKind, term: &str) -> Vec<AccountId> {
    let mut out = BTreeSet::new();
    if let Some(article) = state.articles.get(term) {
        out.extend(article.owners.iter().cloned());
    }
    if kind != NotificationKind::QuestionAsked {
        out.extend(
            state
                .accounts
                .values()
                .filter(|a| a.is_subscribed(term) == Some(true))
                .map(|a| a.id.clone()),
        );
    }
    out.into_iter()
        .filter(|id| {
            state
                .accounts
                .get(id)
                .is_some_and(|a| a.is_subscribed(term) != Some(false))
        })
        .collect()
}

fn delivery_key(event_id: &str, account: &AccountId) -> String {
    format!("{event_id}/{account}")
}

impl KnowledgeBase {
    pub fn set_subscription(&self, account: &AccountId, term: &str, active: bool) -> Result<Subscription> {
        self.require_article(term)?;
        self.store.write(|s| {
            let acc = s
                .accounts
                .get_mut(account)
                .ok_or_else(|| Error::UnknownAccount(account.to_string()))?;
            acc.subscriptions.insert(term.to_string(), active);
            Ok(Subscription {
                account: account.clone(),
                term: term.to_string(),
                active,
            })
        })
    }

    pub fn subscriptions(&self, account: &AccountId) -> Result<Vec<Subscription>> {
        let acc = self
            .account(account)
            .ok_or_else(|| Error::UnknownAccount(account.to_string()))?;
        Ok(acc
            .subscriptions
            .into_iter()
            .map(|(term, active)| Subscription {
                account: account.clone(),
                term,
                active,
            })
            .collect())
    }

    /// Resolve recipients now and queue the delivery.
    pub fn enqueue_notification(
        &self,
        kind: NotificationKind,
        term: &str,
        subject: String,
        body: String,
    ) -> Result<NotificationEvent> {
        let event = self.store.write(|s| {
            let seq = s.next_seq();
            Ok::<_, Error>(NotificationEvent {
                event_id: format!("n{seq}"),
                kind,
                term: term.to_string(),
                subject,
                body,
                recipients: resolve_recipients(s, kind, term),
            })
        })?;
        let payload = serde_json::to_value(&event).expect("notification serializes");
        self.enqueue(TaskKind::Notify, payload, &format!("notify:{}", event.event_id), None)?;
        Ok(event)
    }

    /// Hand one message per recipient to the mail sender, skipping anyone
    /// already served for this event. Fails if any recipient is left over.
    pub fn notify(&self, event: &NotificationEvent) -> Result<usize> {
        let mut sent = 0;
        let mut last_error = None;
        for recipient in &event.recipients {
            let key = delivery_key(&event.event_id, recipient);
            let (done, account) = self.store.read(|s| (s.delivered_notifications.contains(&key), s.accounts.get(recipient).cloned()));
            let Some(account) = account else { continue };
            if done || account.is_subscribed(&event.term) == Some(false) {
                continue;
            }
            let message = MailMessage {
                to: account.mail_address(),
                subject: event.subject.clone(),
                body: event.body.clone(),
            };
            match self.mail.send(&message) {
                Ok(()) => {
                    self.store.write(|s| {
                        s.delivered_notifications.insert(key);
                        Ok::<_, Error>(())
                    })?;
                    sent += 1;
                }
                Err(err) => {
                    tracing::warn!(event = %event.event_id, to = %message.to, error = %err, "mail delivery failed");
                    last_error = Some(err);
                }
            }
        }
        match last_error {
            Some(err @ NotifyError::MailBackendUnavailable(_)) => Err(err.into()),
            _ => Ok(sent),
        }
    }

    pub(crate) fn process_notify_task(&self, payload: &Value) -> Result<()> {
        let event: NotificationEvent =
            serde_json::from_value(payload.clone()).map_err(|e| crate::forge::PayloadError::Malformed(e.to_string()))?;
        self.notify(&event).map(|_| ())
    }
}
