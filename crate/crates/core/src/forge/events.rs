//! Decoding of push, pull_request and repository webhook bodies.

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::{PrAction, PullRequestInfo, RepoRef};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("malformed webhook payload: {0}")]
    Malformed(String),
    #[error("unsupported pull request action {0:?}")]
    UnsupportedAction(String),
}

impl From<serde_json::Error> for PayloadError {
    fn from(err: serde_json::Error) -> Self {
        PayloadError::Malformed(err.to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct WireOwner {
    login: Option<String>,
    name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct WireRepo {
    name: String,
    owner: WireOwner,
    default_branch: Option<String>,
    #[serde(default)]
    topics: Option<Vec<String>>,
    #[serde(default)]
    archived: bool,
}

/// Repository metadata as reported inside a webhook body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoMeta {
    pub name: String,
    pub owner: String,
    pub default_branch: Option<String>,
    pub topics: Option<Vec<String>>,
    pub archived: bool,
}

impl From<WireRepo> for RepoMeta {
    fn from(repo: WireRepo) -> Self {
        RepoMeta {
            name: repo.name,
            owner: repo.owner.login.or(repo.owner.name).unwrap_or_default(),
            default_branch: repo.default_branch,
            topics: repo.topics,
            archived: repo.archived,
        }
    }
}

impl RepoMeta {
    pub fn to_ref(&self, fallback_branch: &str) -> RepoRef {
        RepoRef {
            owner: self.owner.clone(),
            name: self.name.clone(),
            default_branch: self
                .default_branch
                .clone()
                .unwrap_or_else(|| fallback_branch.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushEvent {
    /// Full ref, e.g. `refs/heads/main`.
    pub git_ref: String,
    pub after: Option<String>,
    pub repository: RepoMeta,
}

impl PushEvent {
    pub fn branch(&self) -> Option<&str> {
        self.git_ref.strip_prefix("refs/heads/")
    }
}

#[derive(Deserialize)]
struct WirePush {
    #[serde(rename = "ref")]
    git_ref: String,
    after: Option<String>,
    repository: WireRepo,
}

pub fn parse_push(body: &[u8]) -> Result<PushEvent, PayloadError> {
    let wire: WirePush = serde_json::from_slice(body)?;
    Ok(PushEvent {
        git_ref: wire.git_ref,
        after: wire.after,
        repository: wire.repository.into(),
    })
}

#[derive(Deserialize)]
struct WireUser {
    login: String,
}

#[derive(Deserialize)]
struct WireHead {
    #[serde(rename = "ref")]
    branch: String,
}

#[derive(Deserialize)]
struct WirePull {
    number: u64,
    html_url: String,
    merged_at: Option<DateTime<Utc>>,
    head: WireHead,
    #[serde(default)]
    body: Option<String>,
    user: Option<WireUser>,
}

#[derive(Deserialize)]
struct WirePullEvent {
    action: String,
    pull_request: WirePull,
    repository: WireRepo,
}

pub fn parse_pull_request(body: &[u8]) -> Result<PullRequestInfo, PayloadError> {
    let wire: WirePullEvent = serde_json::from_slice(body)?;
    let action = match wire.action.as_str() {
        "opened" => PrAction::Opened,
        "closed" => PrAction::Closed,
        "reopened" => PrAction::Reopened,
        "synchronize" | "synchronized" => PrAction::Synchronized,
        other => return Err(PayloadError::UnsupportedAction(other.to_string())),
    };
    let merged_at = wire.pull_request.merged_at;
    if merged_at.is_some() && action != PrAction::Closed {
        return Err(PayloadError::Malformed(format!(
            "merged_at present on a {:?} event",
            wire.action
        )));
    }
    let repo: RepoMeta = wire.repository.into();
    Ok(PullRequestInfo {
        target: repo.to_ref("main"),
        number: wire.pull_request.number,
        url: wire.pull_request.html_url,
        action,
        merged_at,
        branch: wire.pull_request.head.branch,
        body: wire.pull_request.body.unwrap_or_default(),
        author: wire.pull_request.user.map(|u| u.login),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepositoryEvent {
    pub action: String,
    pub repository: RepoMeta,
    pub renamed_from: Option<String>,
}

#[derive(Deserialize)]
struct WireFrom {
    from: String,
}

#[derive(Deserialize)]
struct WireRepoChanges {
    name: Option<WireFrom>,
}

#[derive(Deserialize, Default)]
struct WireChanges {
    repository: Option<WireRepoChanges>,
}

#[derive(Deserialize)]
struct WireRepositoryEvent {
    action: String,
    #[serde(default)]
    changes: Option<WireChanges>,
    repository: WireRepo,
}

pub fn parse_repository(body: &[u8]) -> Result<RepositoryEvent, PayloadError> {
    let wire: WireRepositoryEvent = serde_json::from_slice(body)?;
    let renamed_from = wire
        .changes
        .and_then(|c| c.repository)
        .and_then(|r| r.name)
        .map(|n| n.from);
    Ok(RepositoryEvent {
        action: wire.action,
        repository: wire.repository.into(),
        renamed_from,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_payload() {
        let body = br#"{"ref":"refs/heads/main","after":"abc","repository":{"name":"askci-term-hpc","owner":{"login":"o"},"default_branch":"main"}}"#;
        let push = parse_push(body).unwrap();
        assert_eq!(push.branch(), Some("main"));
        assert_eq!(push.repository.owner, "o");
    }

    #[test]
    fn pull_request_payload() {
        let body = br#"{"action":"closed","number":4,"pull_request":{"number":4,"html_url":"https://x/pull/4","merged_at":"2020-01-12T00:00:00Z","head":{"ref":"review-1"},"body":null,"user":{"login":"ann"}},"repository":{"name":"askci-term-hpc","owner":{"login":"o"},"default_branch":"main"}}"#;
        let info = parse_pull_request(body).unwrap();
        assert_eq!(info.action, PrAction::Closed);
        assert_eq!(info.merged_at.unwrap().to_rfc3339(), "2020-01-12T00:00:00+00:00");
        assert_eq!(info.author.as_deref(), Some("ann"));
    }

    #[test]
    fn merged_at_requires_closed() {
        let body = br#"{"action":"opened","number":4,"pull_request":{"number":4,"html_url":"u","merged_at":"2020-01-12T00:00:00Z","head":{"ref":"b"}},"repository":{"name":"r","owner":{"login":"o"}}}"#;
        assert!(matches!(parse_pull_request(body), Err(PayloadError::Malformed(_))));
    }

    #[test]
    fn repository_rename_payload() {
        let body = br#"{"action":"renamed","changes":{"repository":{"name":{"from":"askci-term-hpc"}}},"repository":{"name":"cooking-blog","owner":{"login":"o"},"topics":["HPC"]}}"#;
        let event = parse_repository(body).unwrap();
        assert_eq!(event.renamed_from.as_deref(), Some("askci-term-hpc"));
        assert_eq!(event.repository.name, "cooking-blog");
        assert_eq!(event.repository.topics, Some(vec!["HPC".to_string()]));
    }
}
