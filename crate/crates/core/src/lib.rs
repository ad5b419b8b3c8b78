//! Knowledge base server where each article lives in its own forge
//! repository.
//!
//! [`KnowledgeBase`] is the entry point. It owns the [`Store`], a [`Forge`]
//! client, a [`MailSender`] and the [`TaskQueue`], and every operation
//! (registration, review submission, webhook processing, search) is a method
//! on it. [`server::router`] exposes the same operations over HTTP.

pub mod accounts;
pub mod api;
pub mod bridge;
pub mod clock;
pub mod config;
pub mod error;
pub mod forge;
pub mod kb;
pub mod notify;
pub mod queue;
pub mod registry;
pub mod review;
pub mod search;
pub mod server;
pub mod spans;
pub mod store;

pub use accounts::{authorize, role_for_scopes, AccountId, Action, Role, Subscription, UserAccount};
pub use api::{AskOutcome, InboundWebhook, WebhookStatus};
pub use bridge::{match_terms, BridgeOutcome, ExternalPost, KnownTerm, MatchResult, PostRecord, PostStatus};
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{ConfigError, ServerConfig, Services};
pub use error::{BrokenCause, Error, Result};
pub use forge::{
    DispatchEvent, DispatchType, EventKind, Forge, ForgeError, ForgeSimulator, HttpForge, HttpForgeConfig, IssueDraft,
    Namespace, OAuthGrant, PrAction, PullRequestInfo, RepoRef, WebhookDelivery,
};
pub use kb::{Branding, KnowledgeBase, Settings, TaskKind};
pub use notify::{MailMessage, MailSender, NotificationEvent, NotificationKind, NotifyError, RecordingMailer, SmtpMailer};
pub use queue::{ProcessOutcome, RetryPolicy, Task, TaskQueue, TaskState};
pub use registry::{ArchiveDocument, Article, ArticleEvent, ArticleEventKind, ArticleStatus, RepositoryOutcome, SyncOutcome};
pub use review::{PrOutcome, Review, ReviewStatus, TemplateUpdateReport};
pub use search::{ResultKind, SearchResult};
pub use spans::{
    analyze, is_valid_slug, parse_spans, slugify, validate_article, ErrorCode, Example, ParsedArticle, Question, SpanKind,
    SpanTag, ValidationError, ValidationReport,
};
pub use store::{State, Store, StoreError};
