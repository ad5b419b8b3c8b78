//! Blocking REST client for a GitHub-compatible forge.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{normalize_topics, DispatchEvent, EventKind, Forge, ForgeError, IssueDraft, NewRepo, OAuthGrant, RepoRef};

#[derive(Debug, Clone)]
pub struct HttpForgeConfig {
    /// e.g. `https://api.github.com`
    pub api_base: String,
    /// e.g. `https://github.com`
    pub oauth_base: String,
    /// Bot token used for repository automation.
    pub token: String,
    /// `owner/name` of the term template repository.
    pub template_repo: String,
    pub client_id: String,
    pub client_secret: String,
}

pub struct HttpForge {
    config: HttpForgeConfig,
    client: Client,
}

#[derive(Deserialize)]
struct Owner {
    login: String,
}

#[derive(Deserialize)]
struct RepoBody {
    name: String,
    owner: Owner,
    default_branch: Option<String>,
}

#[derive(Deserialize)]
struct HookBody {
    id: u64,
    config: HookConfig,
}

#[derive(Deserialize)]
struct HookConfig {
    url: Option<String>,
}

#[derive(Deserialize)]
struct IssueBody {
    number: u64,
}

#[derive(Deserialize)]
struct TopicsBody {
    names: Vec<String>,
}

#[derive(Deserialize)]
struct TokenBody {
    access_token: Option<String>,
    scope: Option<String>,
    error: Option<String>,
    error_description: Option<String>,
}

#[derive(Deserialize)]
struct UserBody {
    login: String,
    email: Option<String>,
}

/// How a non-success status should be reported for one kind of call.
#[derive(Clone, Copy)]
enum Missing {
    NotFound,
    Denied,
}

impl HttpForge {
    /// Must not be called from inside an async runtime; the blocking client
    /// owns its own.
    pub fn new(config: HttpForgeConfig) -> Result<Self, ForgeError> {
        let client = Client::builder()
            .user_agent(concat!("kforge/", env!("CARGO_PKG_VERSION")))
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ForgeError::Protocol(e.to_string()))?;
        Ok(HttpForge { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.api_base.trim_end_matches('/'), path)
    }

    fn api(&self, builder: RequestBuilder) -> RequestBuilder {
        builder
            .bearer_auth(&self.config.token)
            .header("Accept", "application/vnd.github+json")
            .header("X-GitHub-Api-Version", "2022-11-28")
    }

    fn send(&self, builder: RequestBuilder, missing: Missing, what: &str) -> Result<Response, ForgeError> {
        let response = builder
            .send()
            .map_err(|e| ForgeError::Unavailable(format!("{what}: {e}")))?;
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let detail = format!("{what}: HTTP {}", status.as_u16());
        Err(match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => ForgeError::PermissionDenied(detail),
            StatusCode::NOT_FOUND | StatusCode::GONE => match missing {
                Missing::NotFound => ForgeError::NotFound(detail),
                Missing::Denied => ForgeError::PermissionDenied(detail),
            },
            StatusCode::TOO_MANY_REQUESTS => ForgeError::Unavailable(detail),
            s if s.is_server_error() => ForgeError::Unavailable(detail),
            _ => ForgeError::Protocol(detail),
        })
    }

    fn json<T: for<'de> Deserialize<'de>>(response: Response, what: &str) -> Result<T, ForgeError> {
        response
            .json()
            .map_err(|e| ForgeError::Protocol(format!("{what}: {e}")))
    }

    fn repo_path(repo: &RepoRef) -> String {
        format!("/repos/{}/{}", repo.owner, repo.name)
    }
}

impl Forge for HttpForge {
    fn create_repo_from_template(&self, repo: &NewRepo<'_>) -> Result<RepoRef, ForgeError> {
        let generate = self.api(self.client.post(self.url(&format!("/repos/{}/generate", self.config.template_repo))));
        let response = generate
            .json(&json!({"owner": repo.owner, "name": repo.name, "private": false}))
            .send()
            .map_err(|e| ForgeError::Unavailable(format!("generate: {e}")))?;
        let response = match response.status() {
            StatusCode::UNPROCESSABLE_ENTITY => {
                return Err(ForgeError::AlreadyExists(format!("{}/{}", repo.owner, repo.name)))
            }
            StatusCode::NOT_FOUND | StatusCode::FORBIDDEN | StatusCode::UNAUTHORIZED => {
                return Err(ForgeError::PermissionDenied(format!(
                    "generate from {}: HTTP {}",
                    self.config.template_repo,
                    response.status().as_u16()
                )))
            }
            _ => self.send_ok(response, "generate")?,
        };
        let created: RepoBody = Self::json(response, "generate")?;
        let reference = RepoRef {
            owner: created.owner.login,
            name: created.name,
            default_branch: created.default_branch.unwrap_or_else(|| "main".to_string()),
        };

        let events: Vec<&str> = EventKind::ALL.iter().map(|k| k.as_str()).collect();
        let hook = self
            .api(self.client.post(self.url(&format!("{}/hooks", Self::repo_path(&reference)))))
            .json(&json!({
                "name": "web",
                "active": true,
                "events": events,
                "config": {"url": repo.hook_url, "content_type": "json", "secret": repo.secret, "insecure_ssl": "0"},
            }));
        self.send(hook, Missing::Denied, "create hook")?;
        Ok(reference)
    }

    fn set_webhook_secret(&self, repo: &RepoRef, hook_url: &str, secret: &str) -> Result<(), ForgeError> {
        let list = self.api(self.client.get(self.url(&format!("{}/hooks", Self::repo_path(repo)))));
        let hooks: Vec<HookBody> = Self::json(self.send(list, Missing::NotFound, "list hooks")?, "list hooks")?;
        let hook = hooks
            .into_iter()
            .find(|h| h.config.url.as_deref() == Some(hook_url))
            .ok_or_else(|| ForgeError::NotFound(format!("hook {hook_url} on {repo}")))?;
        let patch = self
            .api(self.client.patch(self.url(&format!("{}/hooks/{}", Self::repo_path(repo), hook.id))))
            .json(&json!({"config": {"url": hook_url, "content_type": "json", "secret": secret, "insecure_ssl": "0"}}));
        self.send(patch, Missing::NotFound, "update hook")?;
        Ok(())
    }

    fn send_dispatch(&self, event: &DispatchEvent) -> Result<(), ForgeError> {
        let request = self
            .api(self.client.post(self.url(&format!("{}/dispatches", Self::repo_path(&event.target)))))
            .json(&event.wire_body());
        self.send(request, Missing::Denied, "dispatch")?;
        Ok(())
    }

    fn open_issue(&self, draft: &IssueDraft) -> Result<u64, ForgeError> {
        let request = self
            .api(self.client.post(self.url(&format!("{}/issues", Self::repo_path(&draft.target)))))
            .json(&json!({"title": draft.title, "body": draft.body, "labels": draft.labels}));
        let issue: IssueBody = Self::json(self.send(request, Missing::Denied, "open issue")?, "open issue")?;
        Ok(issue.number)
    }

    fn fetch_article_file(&self, repo: &RepoRef, path: &str) -> Result<String, ForgeError> {
        let request = self
            .client
            .get(self.url(&format!("{}/contents/{}", Self::repo_path(repo), path)))
            .query(&[("ref", repo.default_branch.as_str())])
            .bearer_auth(&self.config.token)
            .header("Accept", "application/vnd.github.raw");
        self.send(request, Missing::NotFound, "fetch content")?
            .text()
            .map_err(|e| ForgeError::Unavailable(format!("fetch content: {e}")))
    }

    fn fetch_topics(&self, repo: &RepoRef) -> Result<Vec<String>, ForgeError> {
        let request = self.api(self.client.get(self.url(&format!("{}/topics", Self::repo_path(repo)))));
        let topics: TopicsBody = Self::json(self.send(request, Missing::NotFound, "topics")?, "topics")?;
        Ok(normalize_topics(topics.names))
    }

    fn exchange_oauth_code(&self, code: &str) -> Result<OAuthGrant, ForgeError> {
        let token_url = format!("{}/login/oauth/access_token", self.config.oauth_base.trim_end_matches('/'));
        let request = self
            .client
            .post(token_url)
            .header("Accept", "application/json")
            .json(&json!({
                "client_id": self.config.client_id,
                "client_secret": self.config.client_secret,
                "code": code,
            }));
        let body: TokenBody = Self::json(self.send(request, Missing::NotFound, "oauth token")?, "oauth token")?;
        let Some(access_token) = body.access_token else {
            let reason = body
                .error_description
                .or(body.error)
                .unwrap_or_else(|| "no access token issued".to_string());
            return Err(ForgeError::OAuthDenied(reason));
        };

        let request = self
            .client
            .get(self.url("/user"))
            .bearer_auth(&access_token)
            .header("Accept", "application/vnd.github+json");
        let user: UserBody = Self::json(self.send(request, Missing::NotFound, "user")?, "user")?;
        let scopes = body
            .scope
            .unwrap_or_default()
            .split([',', ' '])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        Ok(OAuthGrant {
            login: user.login,
            email: user.email,
            scopes,
        })
    }
}

impl HttpForge {
    fn send_ok(&self, response: Response, what: &str) -> Result<Response, ForgeError> {
        let status = response.status();
        if status.is_success() {
            Ok(response)
        } else if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Err(ForgeError::Unavailable(format!("{what}: HTTP {}", status.as_u16())))
        } else {
            Err(ForgeError::Protocol(format!("{what}: HTTP {}", status.as_u16())))
        }
    }
}
