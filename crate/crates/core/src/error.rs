use serde::Serialize;

use crate::forge::{ForgeError, PayloadError};
use crate::notify::NotifyError;
use crate::spans::ValidationReport;
use crate::store::StoreError;

/// Why an archived article could not be reactivated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(tag = "cause", content = "detail", rename_all = "snake_case")]
pub enum BrokenCause {
    #[error("repository name {0:?} is outside the namespace")]
    BadName(String),
    #[error("content cannot be fetched: {0}")]
    FetchFailed(ForgeError),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown term {0:?}")]
    UnknownTerm(String),
    #[error("unknown review {0:?}")]
    UnknownReview(String),
    #[error("unknown account {0:?}")]
    UnknownAccount(String),
    #[error("not allowed: {0}")]
    Forbidden(String),
    #[error("authentication required")]
    Unauthenticated,
    #[error("term {0:?} already exists")]
    TermAlreadyExists(String),
    #[error("invalid term {0:?}: terms are lowercase words joined by single hyphens")]
    InvalidTerm(String),
    #[error("article {0:?} is archived")]
    ArchivedArticle(String),
    #[error("article is still broken: {0}")]
    StillBroken(BrokenCause),
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("content failed validation")]
    ValidationFailed(ValidationReport),
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("oauth denied: {0}")]
    OAuthDenied(String),
    #[error("review {review_id} is waiting for the forge: {source}")]
    DispatchPending { review_id: String, source: ForgeError },
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Notify(#[from] NotifyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl Error {
    /// Short machine-readable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownTerm(_) => "unknown_term",
            Error::UnknownReview(_) => "unknown_review",
            Error::UnknownAccount(_) => "unknown_account",
            Error::Forbidden(_) => "forbidden",
            Error::Unauthenticated => "unauthenticated",
            Error::TermAlreadyExists(_) => "term_already_exists",
            Error::InvalidTerm(_) => "invalid_term",
            Error::ArchivedArticle(_) => "archived_article",
            Error::StillBroken(_) => "still_broken",
            Error::MalformedArchive(_) => "malformed_archive",
            Error::ValidationFailed(_) => "validation_failed",
            Error::EmptyQuestion => "empty_question",
            Error::OAuthDenied(_) => "oauth_denied",
            Error::DispatchPending { .. } => "forge_unavailable",
            Error::Payload(_) => "malformed_payload",
            Error::Forge(ForgeError::Unavailable(_)) => "forge_unavailable",
            Error::Forge(ForgeError::PermissionDenied(_)) => "forge_permission_denied",
            Error::Forge(ForgeError::NotFound(_)) => "forge_not_found",
            Error::Forge(ForgeError::AlreadyExists(_)) => "term_already_exists",
            Error::Forge(ForgeError::OAuthDenied(_)) => "oauth_denied",
            Error::Forge(ForgeError::Protocol(_)) => "forge_protocol",
            Error::Notify(_) => "mail_backend_unavailable",
            Error::Store(_) => "store",
        }
    }

    /// Worth retrying later from a background task.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Forge(e) => e.is_retryable(),
            Error::DispatchPending { .. } | Error::Notify(_) | Error::Store(_) => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
