//! Everything that talks to the remote forge.
//!
//! [`Forge`] is the client contract. Two implementations ship: [`HttpForge`]
//! speaks the REST API of a GitHub-compatible host, and [`ForgeSimulator`]
//! keeps repositories, hooks, issues and pull requests in memory and emits
//! signed webhook deliveries the way the real host would.

mod events;
mod http;
mod signature;
mod simulator;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::spans::is_valid_slug;

pub use events::{parse_pull_request, parse_push, parse_repository, PayloadError, PushEvent, RepoMeta, RepositoryEvent};
pub use http::{HttpForge, HttpForgeConfig};
pub use signature::{sign, verify, verify_signature};
pub use simulator::{ForgeSimulator, OutboundDelivery, SimIssue, SimPull, SimRepo, PR_MARKER_PREFIX};

/// Header carrying the `sha256=<hex>` MAC of the body.
pub const SIGNATURE_HEADER: &str = "X-Hub-Signature-256";
pub const EVENT_HEADER: &str = "X-GitHub-Event";
pub const DELIVERY_HEADER: &str = "X-GitHub-Delivery";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum ForgeError {
    #[error("forge unavailable: {0}")]
    Unavailable(String),
    #[error("forge permission denied: {0}")]
    PermissionDenied(String),
    #[error("not found on forge: {0}")]
    NotFound(String),
    #[error("repository already exists: {0}")]
    AlreadyExists(String),
    #[error("oauth authorization denied: {0}")]
    OAuthDenied(String),
    #[error("unexpected forge response: {0}")]
    Protocol(String),
}

impl ForgeError {
    /// Only transient outages are worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ForgeError::Unavailable(_))
    }
}

/// The `<prefix><term>` repository naming rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Namespace {
    prefix: String,
}

impl Default for Namespace {
    fn default() -> Self {
        Namespace::new("askci-term-")
    }
}

impl Namespace {
    pub fn new(prefix: impl Into<String>) -> Self {
        Namespace { prefix: prefix.into() }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn repo_name(&self, term: &str) -> String {
        format!("{}{}", self.prefix, term)
    }

    /// The term a repository name belongs to, if it is inside the namespace.
    pub fn term_of<'a>(&self, repo_name: &'a str) -> Option<&'a str> {
        repo_name
            .strip_prefix(&self.prefix)
            .filter(|term| is_valid_slug(term))
    }

    pub fn owns(&self, repo_name: &str, term: &str) -> bool {
        self.term_of(repo_name) == Some(term)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RepoRef {
    pub owner: String,
    pub name: String,
    pub default_branch: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("repository {name:?} is outside the {prefix:?} namespace for term {term:?}")]
pub struct NamespaceViolation {
    pub name: String,
    pub prefix: String,
    pub term: String,
}

impl RepoRef {
    /// Build the reference for an active article, enforcing the naming rule.
    pub fn for_active_term(
        namespace: &Namespace,
        term: &str,
        owner: impl Into<String>,
        name: impl Into<String>,
        default_branch: impl Into<String>,
    ) -> Result<Self, NamespaceViolation> {
        let name = name.into();
        if !namespace.owns(&name, term) {
            return Err(NamespaceViolation {
                name,
                prefix: namespace.prefix().to_string(),
                term: term.to_string(),
            });
        }
        Ok(RepoRef {
            owner: owner.into(),
            name,
            default_branch: default_branch.into(),
        })
    }

    pub fn full_name(&self) -> String {
        format!("{}/{}", self.owner, self.name)
    }
}

impl fmt::Display for RepoRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.owner, self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Push,
    PullRequest,
    Repository,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::Push, EventKind::PullRequest, EventKind::Repository];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Push => "push",
            EventKind::PullRequest => "pull_request",
            EventKind::Repository => "repository",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

/// One signed inbound webhook request. `raw_body` is kept byte-exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebhookDelivery {
    pub delivery_id: String,
    pub event_kind: EventKind,
    pub signature_header: String,
    pub raw_body: Vec<u8>,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DispatchType {
    #[serde(rename = "request-review")]
    RequestReview,
    #[serde(rename = "update-template")]
    UpdateTemplate,
}

impl DispatchType {
    pub fn as_str(self) -> &'static str {
        match self {
            DispatchType::RequestReview => "request-review",
            DispatchType::UpdateTemplate => "update-template",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchEvent {
    pub event_type: DispatchType,
    pub client_payload: Map<String, Value>,
    pub target: RepoRef,
}

impl DispatchEvent {
    /// Request body for `POST /repos/{owner}/{repo}/dispatches`.
    pub fn wire_body(&self) -> Value {
        serde_json::json!({
            "event_type": self.event_type.as_str(),
            "client_payload": self.client_payload,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueDraft {
    pub target: RepoRef,
    pub title: String,
    pub body: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrAction {
    Opened,
    Closed,
    Reopened,
    Synchronized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullRequestInfo {
    pub target: RepoRef,
    pub number: u64,
    pub url: String,
    pub action: PrAction,
    pub merged_at: Option<DateTime<Utc>>,
    pub branch: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub author: Option<String>,
}

/// What the forge tells us about the user behind an authorization code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OAuthGrant {
    pub login: String,
    pub email: Option<String>,
    pub scopes: Vec<String>,
}

/// Parameters for stamping out a new article repository.
#[derive(Debug, Clone)]
pub struct NewRepo<'a> {
    pub owner: &'a str,
    pub name: &'a str,
    pub hook_url: &'a str,
    pub secret: &'a str,
}

pub trait Forge: Send + Sync {
    /// Copy the term template into `owner/name` and register one webhook for
    /// push, pull_request and repository events signed with `secret`.
    fn create_repo_from_template(&self, repo: &NewRepo<'_>) -> Result<RepoRef, ForgeError>;

    fn set_webhook_secret(&self, repo: &RepoRef, hook_url: &str, secret: &str) -> Result<(), ForgeError>;

    fn send_dispatch(&self, event: &DispatchEvent) -> Result<(), ForgeError>;

    fn open_issue(&self, draft: &IssueDraft) -> Result<u64, ForgeError>;

    /// Contents of `path` on the repository's default branch.
    fn fetch_article_file(&self, repo: &RepoRef, path: &str) -> Result<String, ForgeError>;

    /// Topic list, lowercased, deduplicated and sorted.
    fn fetch_topics(&self, repo: &RepoRef) -> Result<Vec<String>, ForgeError>;

    fn exchange_oauth_code(&self, code: &str) -> Result<OAuthGrant, ForgeError>;
}

pub fn normalize_topics<I, S>(topics: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out: Vec<String> = topics
        .into_iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    out.sort();
    out.dedup();
    out
}
