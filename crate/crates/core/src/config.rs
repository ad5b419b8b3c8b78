//! Server configuration: file, then `KF_*` environment, then flags.
//!
//! Secrets never live in the file. Fields ending in `_env` name the
//! environment variable holding the secret.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::SystemClock;
use crate::forge::{Forge, ForgeSimulator, HttpForge, HttpForgeConfig, Namespace};
use crate::kb::{Branding, KnowledgeBase, Settings};
use crate::notify::{MailSender, RecordingMailer, SmtpMailer};
use crate::store::{Store, StoreError};

/// `forge.api_base` value selecting the in-process forge.
pub const SIMULATOR: &str = "simulator";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("environment variable {var} (for `{field}`) is not set")]
    MissingSecret { field: &'static str, var: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub api_base: String,
    pub oauth_base: String,
    /// `owner/name` of the template every article is copied from.
    pub template_repo: String,
    pub client_id: String,
    pub client_secret_env: Option<String>,
    /// Bot token used for repository creation and dispatches.
    pub token_env: Option<String>,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            api_base: SIMULATOR.to_string(),
            oauth_base: "https://github.com".to_string(),
            template_repo: String::new(),
            client_id: String::new(),
            client_secret_env: None,
            token_env: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MailBackend {
    Recording,
    Smtp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MailConfig {
    pub backend: MailBackend,
    pub url: Option<String>,
    pub from: String,
    pub username: Option<String>,
    pub password_env: Option<String>,
}

impl Default for MailConfig {
    fn default() -> Self {
        MailConfig {
            backend: MailBackend::Recording,
            url: None,
            from: "knowledge@localhost".to_string(),
            username: None,
            password_env: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscourseConfig {
    pub secret_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub site_name: String,
    pub tagline: String,
    pub base_url: String,
    pub listen: String,
    pub store: String,
    pub content_file: String,
    pub namespace_prefix: String,
    pub failure_threshold: u32,
    pub review_timeout_secs: u64,
    pub repo_owner: Option<String>,
    pub admins: Vec<String>,
    pub rate_limit_per_minute: u32,
    pub forge: ForgeConfig,
    pub mail: MailConfig,
    pub discourse: DiscourseConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let settings = Settings::default();
        ServerConfig {
            site_name: settings.branding.site_name,
            tagline: settings.branding.tagline,
            base_url: settings.base_url,
            listen: "127.0.0.1:8080".to_string(),
            store: "memory".to_string(),
            content_file: settings.content_file,
            namespace_prefix: settings.namespace.prefix().to_string(),
            failure_threshold: settings.failure_threshold,
            review_timeout_secs: settings.review_timeout.num_seconds() as u64,
            repo_owner: None,
            admins: Vec::new(),
            rate_limit_per_minute: 600,
            forge: ForgeConfig::default(),
            mail: MailConfig::default(),
            discourse: DiscourseConfig::default(),
        }
    }
}

/// Everything `serve` and the operator commands need.
pub struct Services {
    pub kb: Arc<KnowledgeBase>,
    /// Present when the in-process forge is configured.
    pub simulator: Option<Arc<ForgeSimulator>>,
    pub recorder: Option<Arc<RecordingMailer>>,
}

impl ServerConfig {
    /// Parse a config file; the format follows the extension (`.json`,
    /// otherwise TOML).
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        let parse_err = |reason: String| ConfigError::Parse {
            path: shown.clone(),
            reason,
        };
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&raw).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(&raw).map_err(|e| parse_err(e.to_string()))
        }
    }

    /// Overlay `KF_*` variables from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let set = |target: &mut String, var: &str| {
            if let Some(v) = lookup(var) {
                *target = v;
            }
        };
        set(&mut self.site_name, "KF_SITE_NAME");
        set(&mut self.tagline, "KF_TAGLINE");
        set(&mut self.base_url, "KF_BASE_URL");
        set(&mut self.listen, "KF_LISTEN");
        set(&mut self.store, "KF_STORE");
        set(&mut self.content_file, "KF_CONTENT_FILE");
        set(&mut self.namespace_prefix, "KF_NAMESPACE_PREFIX");
        set(&mut self.forge.api_base, "KF_FORGE_API_BASE");
        set(&mut self.forge.template_repo, "KF_FORGE_TEMPLATE_REPO");
        set(&mut self.mail.from, "KF_MAIL_FROM");
        if let Some(v) = lookup("KF_FAILURE_THRESHOLD") {
            self.failure_threshold = v
                .parse()
                .map_err(|_| invalid("failure_threshold", format!("{v:?} is not a positive integer")))?;
        }
        if let Some(v) = lookup("KF_REPO_OWNER") {
            self.repo_owner = Some(v).filter(|v| !v.is_empty());
        }
        if let Some(v) = lookup("KF_ADMINS") {
            self.admins = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
        }
        if let Some(v) = lookup("KF_MAIL_URL") {
            self.mail.backend = MailBackend::Smtp;
            self.mail.url = Some(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.namespace_prefix.is_empty() {
            return Err(invalid("namespace_prefix", "must not be empty"));
        }
        if self.content_file.trim().is_empty() {
            return Err(invalid("content_file", "must not be empty"));
        }
        if self.failure_threshold == 0 {
            return Err(invalid("failure_threshold", "must be positive"));
        }
        if self.review_timeout_secs == 0 {
            return Err(invalid("review_timeout_secs", "must be positive"));
        }
        if self.rate_limit_per_minute == 0 {
            return Err(invalid("rate_limit_per_minute", "must be positive"));
        }
        match url::Url::parse(&self.base_url) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => {}
            _ => return Err(invalid("base_url", format!("{:?} is not an http(s) URL", self.base_url))),
        }
        self.listen
            .parse::<SocketAddr>()
            .map_err(|e| invalid("listen", format!("{:?}: {e}", self.listen)))?;
        if self.forge.api_base != SIMULATOR {
            url::Url::parse(&self.forge.api_base).map_err(|e| invalid("forge.api_base", e.to_string()))?;
            if self.forge.template_repo.split('/').filter(|p| !p.is_empty()).count() != 2 {
                return Err(invalid("forge.template_repo", "expected owner/name"));
            }
        }
        if self.mail.backend == MailBackend::Smtp && self.mail.url.is_none() {
            return Err(invalid("mail.url", "required for the smtp backend"));
        }
        Ok(())
    }

    pub fn settings(&self, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Settings, ConfigError> {
        let discourse_secret = match &self.discourse.secret_env {
            Some(var) => Some(secret(lookup, "discourse.secret_env", var)?),
            None => None,
        };
        Ok(Settings {
            branding: Branding {
                site_name: self.site_name.clone(),
                tagline: self.tagline.clone(),
            },
            base_url: self.base_url.clone(),
            namespace: Namespace::new(self.namespace_prefix.clone()),
            content_file: self.content_file.clone(),
            failure_threshold: self.failure_threshold,
            review_timeout: chrono::Duration::seconds(self.review_timeout_secs as i64),
            admins: self.admins.iter().cloned().collect::<BTreeSet<_>>(),
            repo_owner: self.repo_owner.clone(),
            discourse_secret,
        })
    }

    /// Validate, open the store and wire up forge and mail backends.
    pub fn build(&self, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Services, ConfigError> {
        self.validate()?;
        let settings = self.settings(lookup)?;
        let store = Arc::new(Store::open(&self.store)?);
        let clock = Arc::new(SystemClock);

        let (forge, simulator): (Arc<dyn Forge>, _) = if self.forge.api_base == SIMULATOR {
            let sim = Arc::new(ForgeSimulator::new(clock.clone()).with_content_file(self.content_file.clone()));
            (sim.clone(), Some(sim))
        } else {
            let token = match &self.forge.token_env {
                Some(var) => secret(lookup, "forge.token_env", var)?,
                None => String::new(),
            };
            let client_secret = match &self.forge.client_secret_env {
                Some(var) => secret(lookup, "forge.client_secret_env", var)?,
                None => String::new(),
            };
            let http = HttpForge::new(HttpForgeConfig {
                api_base: self.forge.api_base.clone(),
                oauth_base: self.forge.oauth_base.clone(),
                token,
                template_repo: self.forge.template_repo.clone(),
                client_id: self.forge.client_id.clone(),
                client_secret,
            })
            .map_err(|e| invalid("forge.api_base", e.to_string()))?;
            (Arc::new(http), None)
        };

        let (mail, recorder): (Arc<dyn MailSender>, _) = match self.mail.backend {
            MailBackend::Recording => {
                let rec = Arc::new(RecordingMailer::new());
                (rec.clone(), Some(rec))
            }
            MailBackend::Smtp => {
                let credentials = match (&self.mail.username, &self.mail.password_env) {
                    (Some(user), Some(var)) => Some((user.clone(), secret(lookup, "mail.password_env", var)?)),
                    _ => None,
                };
                let url = self.mail.url.as_deref().unwrap_or_default();
                let smtp = SmtpMailer::new(url, &self.mail.from, credentials).map_err(|e| invalid("mail", e.to_string()))?;
                (Arc::new(smtp), None)
            }
        };

        let kb = KnowledgeBase::new(settings, store, forge, mail, clock);
        if let Some(sim) = &simulator {
            // The simulator forgets everything between runs; rebuild the
            // repositories the store already knows about.
            for article in kb.articles() {
                let topics: Vec<String> = article.tags.iter().cloned().collect();
                sim.restore_repo(
                    &article.repo,
                    &article.content,
                    &topics,
                    &kb.hook_url(&article.term),
                    &article.webhook_secret,
                );
            }
        }
        Ok(Services {
            kb: Arc::new(kb),
            simulator,
            recorder,
        })
    }
}

fn secret(lookup: &dyn Fn(&str) -> Option<String>, field: &'static str, var: &str) -> Result<String, ConfigError> {
    lookup(var).ok_or_else(|| ConfigError::MissingSecret {
        field,
        var: var.to_string(),
    })
}

/// Process environment lookup.
pub fn process_env(var: &str) -> Option<String> {
    std::env::var(var).ok()
}
