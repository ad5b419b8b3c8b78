//! HTTP routes and the background worker.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::accounts::{authorize, Action, Role, UserAccount};
use crate::api::{InboundWebhook, WebhookStatus};
use crate::bridge::{parse_discourse_post, BridgeOutcome, DEFAULT_SOURCE, DISCOURSE_INSTANCE_HEADER, DISCOURSE_SIGNATURE_HEADER};
use crate::error::Error;
use crate::forge::{verify, ForgeError, ForgeSimulator, RepoRef, DELIVERY_HEADER, EVENT_HEADER, SIGNATURE_HEADER};
use crate::kb::KnowledgeBase;
use crate::registry::{Article, ArticleStatus};
use crate::search::ResultKind;
use crate::spans::{validate_article, ParsedArticle, ValidationReport};

/// Per-token request ceiling over a fixed one-minute window.
struct RateLimiter {
    per_minute: u32,
    windows: Mutex<HashMap<String, (i64, u32)>>,
}

impl RateLimiter {
    fn admit(&self, token: &str, now: DateTime<Utc>) -> bool {
        let minute = now.timestamp() / 60;
        let mut windows = self.windows.lock();
        let slot = windows.entry(token.to_string()).or_insert((minute, 0));
        if slot.0 != minute {
            *slot = (minute, 0);
        }
        slot.1 += 1;
        slot.1 <= self.per_minute
    }
}

#[derive(Clone)]
pub struct AppState {
    kb: Arc<KnowledgeBase>,
    limiter: Arc<RateLimiter>,
}

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "code": code, "message": message.into() }),
        }
    }
}

pub fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::UnknownTerm(_) | Error::UnknownReview(_) | Error::UnknownAccount(_) => StatusCode::NOT_FOUND,
        Error::Forbidden(_) => StatusCode::FORBIDDEN,
        Error::Unauthenticated | Error::OAuthDenied(_) => StatusCode::UNAUTHORIZED,
        Error::TermAlreadyExists(_) | Error::ArchivedArticle(_) | Error::StillBroken(_) => StatusCode::CONFLICT,
        Error::InvalidTerm(_) | Error::EmptyQuestion | Error::MalformedArchive(_) | Error::Payload(_) => StatusCode::BAD_REQUEST,
        Error::ValidationFailed(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::DispatchPending { .. } | Error::Notify(_) => StatusCode::SERVICE_UNAVAILABLE,
        Error::Forge(ForgeError::Unavailable(_)) => StatusCode::SERVICE_UNAVAILABLE,
        Error::Forge(ForgeError::AlreadyExists(_)) => StatusCode::CONFLICT,
        Error::Forge(ForgeError::OAuthDenied(_)) => StatusCode::UNAUTHORIZED,
        Error::Forge(_) => StatusCode::BAD_GATEWAY,
        Error::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let mut body = json!({ "code": err.code(), "message": err.to_string() });
        match &err {
            Error::ValidationFailed(report) => body["report"] = json!(report),
            Error::DispatchPending { review_id, .. } => body["review_id"] = json!(review_id),
            Error::StillBroken(cause) => body["cause"] = json!(cause),
            _ => {}
        }
        ApiError {
            status: status_for(&err),
            body,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Run a blocking service call off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&KnowledgeBase) -> Result<T, Error> + Send + 'static,
{
    let kb = state.kb.clone();
    tokio::task::spawn_blocking(move || f(&kb))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

/// Resolve the caller. No header means the anonymous viewer; an unknown
/// token is rejected outright.
fn caller(state: &AppState, headers: &HeaderMap) -> ApiResult<UserAccount> {
    let Some(value) = headers.get(axum::http::header::AUTHORIZATION) else {
        return Ok(UserAccount::viewer());
    };
    let token = value
        .to_str()
        .ok()
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "expected a bearer token"))?;
    let account = state
        .kb
        .account_by_token(token)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "unknown token"))?;
    if !state.limiter.admit(token, state.kb.clock().now()) {
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "rate_limited", "request ceiling reached"));
    }
    Ok(account)
}

fn require(state: &AppState, headers: &HeaderMap, action: Action) -> ApiResult<UserAccount> {
    let account = caller(state, headers)?;
    if authorize(&account, action) {
        Ok(account)
    } else if account.role == Role::Viewer {
        Err(Error::Unauthenticated.into())
    } else {
        Err(Error::Forbidden(format!("{action:?} requires the {:?} role", action.minimum_role())).into())
    }
}

/// Public view of an article; the webhook secret never leaves the server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArticleView {
    pub term: String,
    pub repo: RepoRef,
    pub status: ArticleStatus,
    pub archive_cause: Option<String>,
    pub tags: Vec<String>,
    pub content: String,
    pub content_hash: String,
    pub parsed: ParsedArticle,
    pub validation: ValidationReport,
    pub owners: Vec<String>,
    pub updated_at: DateTime<Utc>,
}

impl From<Article> for ArticleView {
    fn from(a: Article) -> Self {
        ArticleView {
            content_hash: a.content_hash(),
            term: a.term,
            repo: a.repo,
            status: a.status,
            archive_cause: a.archive_cause,
            tags: a.tags.into_iter().collect(),
            content: a.content,
            parsed: a.parsed,
            validation: a.validation,
            owners: a.owners.into_iter().map(|o| o.0).collect(),
            updated_at: a.updated_at,
        }
    }
}

#[derive(Serialize)]
struct ArticleSummary {
    term: String,
    status: ArticleStatus,
    tags: Vec<String>,
    questions: usize,
    updated_at: DateTime<Utc>,
}

pub fn router(kb: Arc<KnowledgeBase>, rate_limit_per_minute: u32) -> Router {
    let state = AppState {
        kb,
        limiter: Arc::new(RateLimiter {
            per_minute: rate_limit_per_minute,
            windows: Mutex::new(HashMap::new()),
        }),
    };
    Router::new()
        .route("/health", get(health))
        .route("/auth/callback", get(auth_callback))
        .route("/api/v1/site", get(site))
        .route("/api/v1/me", get(me))
        .route("/api/v1/articles", get(list_articles).post(register_article))
        .route("/api/v1/articles/{term}", get(get_article))
        .route("/api/v1/articles/{term}/events", get(article_events))
        .route("/api/v1/articles/{term}/questions", post(ask_question))
        .route("/api/v1/articles/{term}/review", post(submit_review))
        .route("/api/v1/reviews", get(list_reviews))
        .route("/api/v1/reviews/{id}", get(get_review))
        .route("/api/v1/search", get(search))
        .route("/api/v1/questions", get(search_questions))
        .route("/api/v1/validate", post(validate))
        .route("/api/v1/subscriptions", get(list_subscriptions))
        .route("/api/v1/subscriptions/{term}", put(set_subscription))
        .route("/api/v1/admin/template-update", post(template_update))
        .route("/api/v1/admin/articles/{term}/unarchive", post(unarchive))
        .route("/api/v1/admin/articles/{term}/rotate-secret", post(rotate_secret))
        .route("/api/v1/admin/articles/{term}/export", get(export_article))
        .route("/api/v1/admin/import", post(import_article))
        .route("/hooks/forge/{term}", post(forge_hook))
        .route("/hooks/discourse", post(discourse_hook))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let kb = &state.kb;
    Json(json!({
        "status": "ok",
        "site_name": kb.settings().branding.site_name,
        "articles": kb.store().read(|s| s.articles.len()),
        "pending_tasks": kb.queue().pending(),
    }))
}

async fn site(State(state): State<AppState>) -> Json<Value> {
    let s = state.kb.settings();
    Json(json!({
        "site_name": s.branding.site_name,
        "tagline": s.branding.tagline,
        "namespace_prefix": s.namespace.prefix(),
    }))
}

#[derive(Deserialize)]
struct CodeQuery {
    code: Option<String>,
}

async fn auth_callback(State(state): State<AppState>, Query(q): Query<CodeQuery>) -> ApiResult<Json<Value>> {
    let code = q
        .code
        .filter(|c| !c.is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_code", "expected ?code="))?;
    let account = blocking(&state, move |kb| kb.authenticate(&code)).await?;
    Ok(Json(json!({
        "token": account.api_token,
        "login": account.forge_login,
        "role": account.role,
    })))
}

async fn me(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let account = caller(&state, &headers)?;
    Ok(Json(json!({
        "login": account.forge_login,
        "role": account.role,
        "subscriptions": account.subscriptions,
    })))
}

async fn list_articles(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Vec<ArticleSummary>>> {
    require(&state, &headers, Action::Browse)?;
    Ok(Json(
        state
            .kb
            .articles()
            .into_iter()
            .map(|a| ArticleSummary {
                questions: a.parsed.questions.len(),
                term: a.term,
                status: a.status,
                tags: a.tags.into_iter().collect(),
                updated_at: a.updated_at,
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct RegisterBody {
    term: String,
}

async fn register_article(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(body): Json<RegisterBody>,
) -> ApiResult<(StatusCode, Json<ArticleView>)> {
    let actor = require(&state, &headers, Action::RegisterTerm)?;
    let article = blocking(&state, move |kb| kb.register_term(&body.term, &actor)).await?;
    Ok((StatusCode::CREATED, Json(article.into())))
}

async fn get_article(State(state): State<AppState>, headers: HeaderMap, Path(term): Path<String>) -> ApiResult<Json<ArticleView>> {
    require(&state, &headers, Action::Browse)?;
    let article = state.kb.article(&term).ok_or(Error::UnknownTerm(term))?;
    Ok(Json(article.into()))
}

async fn article_events(State(state): State<AppState>, headers: HeaderMap, Path(term): Path<String>) -> ApiResult<Json<Value>> {
    require(&state, &headers, Action::Browse)?;
    state.kb.article(&term).ok_or_else(|| Error::UnknownTerm(term.clone()))?;
    Ok(Json(json!(state.kb.article_events(&term))))
}

#[derive(Deserialize)]
struct QuestionBody {
    text: String,
}

async fn ask_question(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(term): Path<String>,
    Json(body): Json<QuestionBody>,
) -> ApiResult<Json<Value>> {
    let actor = require(&state, &headers, Action::AskQuestion)?;
    let outcome = blocking(&state, move |kb| kb.ask_question(&term, &body.text, &actor)).await?;
    Ok(Json(json!(outcome)))
}

#[derive(Deserialize)]
struct ReviewBody {
    content: String,
}

async fn submit_review(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(term): Path<String>,
    Json(body): Json<ReviewBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let actor = require(&state, &headers, Action::SubmitReview)?;
    let review = blocking(&state, move |kb| kb.submit_for_review(&term, &body.content, &actor)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!(review))))
}

#[derive(Deserialize)]
struct ReviewQuery {
    term: Option<String>,
}

async fn list_reviews(State(state): State<AppState>, headers: HeaderMap, Query(q): Query<ReviewQuery>) -> ApiResult<Json<Value>> {
    require(&state, &headers, Action::Browse)?;
    Ok(Json(json!(state.kb.reviews(q.term.as_deref()))))
}

async fn get_review(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    require(&state, &headers, Action::Browse)?;
    let review = state.kb.review(&id).ok_or(Error::UnknownReview(id))?;
    Ok(Json(json!(review)))
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
}

async fn search(State(state): State<AppState>, headers: HeaderMap, Query(q): Query<SearchQuery>) -> ApiResult<Json<Value>> {
    require(&state, &headers, Action::Search)?;
    Ok(Json(json!(state.kb.search(&q.q))))
}

async fn search_questions(State(state): State<AppState>, headers: HeaderMap, Query(q): Query<SearchQuery>) -> ApiResult<Json<Value>> {
    require(&state, &headers, Action::Search)?;
    let results: Vec<_> = state
        .kb
        .search(&q.q)
        .into_iter()
        .filter(|r| r.kind == ResultKind::Question)
        .collect();
    Ok(Json(json!(results)))
}

async fn validate(Json(body): Json<ReviewBody>) -> Json<ValidationReport> {
    Json(validate_article(&body.content))
}

async fn list_subscriptions(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let actor = require(&state, &headers, Action::ManageSubscriptions)?;
    Ok(Json(json!(state.kb.subscriptions(&actor.id)?)))
}

#[derive(Deserialize)]
struct SubscriptionBody {
    active: bool,
}

async fn set_subscription(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(term): Path<String>,
    Json(body): Json<SubscriptionBody>,
) -> ApiResult<Json<Value>> {
    let actor = require(&state, &headers, Action::ManageSubscriptions)?;
    Ok(Json(json!(state.kb.set_subscription(&actor.id, &term, body.active)?)))
}

#[derive(Deserialize, Default)]
struct TemplateBody {
    terms: Option<Vec<String>>,
}

async fn template_update(State(state): State<AppState>, headers: HeaderMap, body: Option<Json<TemplateBody>>) -> ApiResult<Json<Value>> {
    let actor = require(&state, &headers, Action::TriggerTemplateUpdate)?;
    let terms = body.map(|b| b.0).unwrap_or_default().terms;
    let report = blocking(&state, move |kb| kb.trigger_template_update(terms.as_deref(), &actor)).await?;
    Ok(Json(json!({ "dispatched": report.count(), "report": report })))
}

async fn unarchive(State(state): State<AppState>, headers: HeaderMap, Path(term): Path<String>) -> ApiResult<Json<ArticleView>> {
    let actor = require(&state, &headers, Action::Unarchive)?;
    let article = blocking(&state, move |kb| kb.unarchive(&term, &actor)).await?;
    Ok(Json(article.into()))
}

async fn rotate_secret(State(state): State<AppState>, headers: HeaderMap, Path(term): Path<String>) -> ApiResult<StatusCode> {
    let actor = require(&state, &headers, Action::WebhookAdmin)?;
    blocking(&state, move |kb| kb.rotate_webhook_secret(&term, &actor)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn export_article(State(state): State<AppState>, headers: HeaderMap, Path(term): Path<String>) -> ApiResult<Json<Value>> {
    require(&state, &headers, Action::ImportExport)?;
    Ok(Json(json!(state.kb.export_article(&term)?)))
}

async fn import_article(State(state): State<AppState>, headers: HeaderMap, body: String) -> ApiResult<(StatusCode, Json<ArticleView>)> {
    require(&state, &headers, Action::ImportExport)?;
    let article = blocking(&state, move |kb| kb.import_article(&body)).await?;
    Ok((StatusCode::CREATED, Json(article.into())))
}

fn header<'a>(headers: &'a HeaderMap, name: &str) -> &'a str {
    headers.get(name).and_then(|v| v.to_str().ok()).unwrap_or("")
}

async fn forge_hook(State(state): State<AppState>, Path(term): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let event = header(&headers, EVENT_HEADER).to_string();
    let delivery_id = header(&headers, DELIVERY_HEADER).to_string();
    let signature = header(&headers, SIGNATURE_HEADER).to_string();
    let status = blocking(&state, move |kb| {
        kb.receive_webhook(
            &term,
            &InboundWebhook {
                event: &event,
                delivery_id: &delivery_id,
                signature: &signature,
                body: &body,
            },
        )
    })
    .await?;
    let code = StatusCode::from_u16(status.http_status()).expect("valid status");
    let body = match status {
        WebhookStatus::Accepted { task_id, duplicate } => json!({ "task_id": task_id, "duplicate": duplicate }),
        WebhookStatus::Pong => json!({ "pong": true }),
        WebhookStatus::UnknownTerm => json!({ "code": "unknown_term", "message": "no article for this hook" }),
        WebhookStatus::BadSignature => json!({ "code": "bad_signature", "message": "signature verification failed" }),
        WebhookStatus::BadRequest(m) => json!({ "code": "bad_request", "message": m }),
    };
    Ok((code, Json(body)).into_response())
}

async fn discourse_hook(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let Some(secret) = state.kb.settings().discourse_secret.clone() else {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "bad_signature", "no board secret is configured"));
    };
    if !verify(header(&headers, DISCOURSE_SIGNATURE_HEADER), &body, secret.as_bytes()) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "bad_signature", "signature verification failed"));
    }
    let source = match header(&headers, DISCOURSE_INSTANCE_HEADER) {
        "" => DEFAULT_SOURCE.to_string(),
        s => s.to_string(),
    };
    let post = parse_discourse_post(&body, &source).map_err(Error::from)?;
    let outcome = blocking(&state, move |kb| kb.handle_discourse_post(&post)).await?;
    Ok(Json(match outcome {
        BridgeOutcome::IssueOpened { term, issue } => json!({ "outcome": "issue_opened", "term": term, "issue": issue }),
        BridgeOutcome::NoMatch => json!({ "outcome": "no_match" }),
        BridgeOutcome::Duplicate => json!({ "outcome": "duplicate" }),
        BridgeOutcome::Queued => json!({ "outcome": "queued" }),
    }))
}

/// One worker pass: pull simulator deliveries through intake, run due
/// tasks and expire stale pending reviews.
pub fn work_once(kb: &KnowledgeBase, simulator: Option<&ForgeSimulator>) -> Result<usize, Error> {
    if let Some(sim) = simulator {
        for outbound in sim.take_deliveries() {
            let status = kb.deliver(&outbound)?;
            tracing::debug!(hook = %outbound.hook_url, ?status, "simulated delivery");
        }
    }
    let ran = kb.run_pending()?.len();
    kb.expire_pending_reviews()?;
    Ok(ran)
}

pub fn spawn_worker(
    kb: Arc<KnowledgeBase>,
    simulator: Option<Arc<ForgeSimulator>>,
    every: Duration,
) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(every);
        loop {
            ticker.tick().await;
            let kb = kb.clone();
            let sim = simulator.clone();
            match tokio::task::spawn_blocking(move || work_once(&kb, sim.as_deref())).await {
                Ok(Ok(_)) => {}
                Ok(Err(err)) => tracing::warn!(error = %err, "worker pass failed"),
                Err(err) => tracing::error!(error = %err, "worker pass panicked"),
            }
        }
    })
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    kb: Arc<KnowledgeBase>,
    simulator: Option<Arc<ForgeSimulator>>,
    rate_limit_per_minute: u32,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let worker = spawn_worker(kb.clone(), simulator, Duration::from_millis(250));
    let app = router(kb, rate_limit_per_minute);
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    worker.abort();
    result
}
