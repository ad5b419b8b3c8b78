//! In-memory forge used by tests, benches and the `simulator` forge backend.
//!
//! Mutations that a real forge would announce (pushes, pull request state
//! changes, renames, topic edits) append exactly one signed delivery per
//! subscribed hook to an ordered outbox. Nothing is sent anywhere; callers
//! drain the outbox with [`ForgeSimulator::take_deliveries`] and feed the
//! deliveries to the server.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use parking_lot::Mutex;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{
    normalize_topics, sign, DispatchEvent, DispatchType, EventKind, Forge, ForgeError, IssueDraft, NewRepo,
    OAuthGrant, RepoRef, WebhookDelivery,
};
use crate::clock::{Clock, SystemClock};

/// Line the simulated review workflow writes into pull request bodies so the
/// server can correlate the PR with the review that asked for it.
pub const PR_MARKER_PREFIX: &str = "askci-review-id: ";

const BOT_LOGIN: &str = "github-actions[bot]";
const TEMPLATE_VERSION_FILE: &str = ".github/template-version";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundDelivery {
    /// The hook's configured target, e.g. `https://kb.example/hooks/forge/hpc`.
    pub hook_url: String,
    pub delivery: WebhookDelivery,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimHook {
    pub id: u64,
    pub url: String,
    pub secret: String,
    pub events: Vec<EventKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimIssue {
    pub number: u64,
    pub title: String,
    pub body: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPull {
    pub number: u64,
    pub title: String,
    pub body: String,
    pub head: String,
    pub base: String,
    pub author: String,
    pub open: bool,
    pub merged_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimRepo {
    pub id: u64,
    pub owner: String,
    pub name: String,
    pub default_branch: String,
    pub branches: BTreeMap<String, BTreeMap<String, String>>,
    pub topics: Vec<String>,
    pub hooks: Vec<SimHook>,
    pub issues: Vec<SimIssue>,
    pub pulls: Vec<SimPull>,
    pub archived: bool,
    pub readable: bool,
    next_number: u64,
}

impl SimRepo {
    pub fn to_ref(&self) -> RepoRef {
        RepoRef {
            owner: self.owner.clone(),
            name: self.name.clone(),
            default_branch: self.default_branch.clone(),
        }
    }

    pub fn file(&self, branch: &str, path: &str) -> Option<&str> {
        self.branches.get(branch)?.get(path).map(String::as_str)
    }

    fn allocate_number(&mut self) -> u64 {
        self.next_number += 1;
        self.next_number
    }

    fn meta(&self) -> Value {
        json!({
            "id": self.id,
            "name": self.name,
            "full_name": format!("{}/{}", self.owner, self.name),
            "owner": {"login": self.owner},
            "default_branch": self.default_branch,
            "topics": self.topics,
            "archived": self.archived,
        })
    }
}

struct SimState {
    repos: Vec<SimRepo>,
    oauth: HashMap<String, OAuthGrant>,
    dispatches: Vec<DispatchEvent>,
    outbox: VecDeque<OutboundDelivery>,
    failures: VecDeque<ForgeError>,
    denied_owners: HashSet<String>,
    template: String,
    content_file: String,
    next_repo_id: u64,
    next_hook_id: u64,
    next_delivery: u64,
}

impl SimState {
    fn position(&self, owner: &str, name: &str) -> Option<usize> {
        self.repos.iter().position(|r| r.owner == owner && r.name == name)
    }

    fn injected_failure(&mut self) -> Result<(), ForgeError> {
        match self.failures.pop_front() {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }

    /// Resolve a repository the caller wants to write to.
    fn writable(&self, repo: &RepoRef) -> Result<usize, ForgeError> {
        let idx = self
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::PermissionDenied(format!("no write access to {repo}")))?;
        let found = &self.repos[idx];
        if found.archived || self.denied_owners.contains(&found.owner) {
            return Err(ForgeError::PermissionDenied(format!("{repo} is read-only")));
        }
        Ok(idx)
    }

    fn readable(&self, repo: &RepoRef) -> Result<usize, ForgeError> {
        let idx = self
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(format!("repository {repo}")))?;
        if !self.repos[idx].readable {
            return Err(ForgeError::PermissionDenied(format!("no read access to {repo}")));
        }
        Ok(idx)
    }

    fn emit(&mut self, idx: usize, kind: EventKind, body: Value, now: DateTime<Utc>) {
        let raw = serde_json::to_vec(&body).expect("json encodes");
        let hooks: Vec<SimHook> = self.repos[idx]
            .hooks
            .iter()
            .filter(|h| h.events.contains(&kind))
            .cloned()
            .collect();
        for hook in hooks {
            self.next_delivery += 1;
            self.outbox.push_back(OutboundDelivery {
                hook_url: hook.url.clone(),
                delivery: WebhookDelivery {
                    delivery_id: format!("sim-{:08}-{}", self.next_delivery, uuid::Uuid::new_v4().simple()),
                    event_kind: kind,
                    signature_header: sign(hook.secret.as_bytes(), &raw),
                    raw_body: raw.clone(),
                    received_at: now,
                },
            });
        }
    }

    fn emit_push(&mut self, idx: usize, branch: &str, now: DateTime<Utc>) {
        let files = self.repos[idx].branches.get(branch).cloned().unwrap_or_default();
        let mut hasher = Sha256::new();
        for (path, content) in &files {
            hasher.update(path.as_bytes());
            hasher.update([0]);
            hasher.update(content.as_bytes());
        }
        let body = json!({
            "ref": format!("refs/heads/{branch}"),
            "after": hex::encode(hasher.finalize()),
            "repository": self.repos[idx].meta(),
        });
        self.emit(idx, EventKind::Push, body, now);
    }

    fn emit_pull(&mut self, idx: usize, number: u64, action: &str, now: DateTime<Utc>) {
        let repo = &self.repos[idx];
        let pull = repo.pulls.iter().find(|p| p.number == number).expect("pull exists");
        let body = json!({
            "action": action,
            "number": number,
            "pull_request": {
                "number": number,
                "html_url": format!("https://forge.test/{}/{}/pull/{}", repo.owner, repo.name, number),
                "state": if pull.open { "open" } else { "closed" },
                "merged_at": pull.merged_at.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true)),
                "head": {"ref": pull.head},
                "base": {"ref": pull.base},
                "title": pull.title,
                "body": pull.body,
                "user": {"login": pull.author},
            },
            "repository": repo.meta(),
        });
        self.emit(idx, EventKind::PullRequest, body, now);
    }

    fn emit_repository(&mut self, idx: usize, action: &str, changes: Value, now: DateTime<Utc>) {
        let body = json!({
            "action": action,
            "changes": changes,
            "repository": self.repos[idx].meta(),
        });
        self.emit(idx, EventKind::Repository, body, now);
    }

    fn open_pull(
        &mut self,
        idx: usize,
        head: String,
        files: BTreeMap<String, String>,
        title: String,
        body: String,
        author: &str,
        now: DateTime<Utc>,
    ) -> u64 {
        let repo = &mut self.repos[idx];
        let number = repo.allocate_number();
        let base = repo.default_branch.clone();
        repo.branches.insert(head.clone(), files);
        repo.pulls.push(SimPull {
            number,
            title,
            body,
            head,
            base,
            author: author.to_string(),
            open: true,
            merged_at: None,
        });
        self.emit_pull(idx, number, "opened", now);
        number
    }
}

pub struct ForgeSimulator {
    state: Mutex<SimState>,
    clock: Arc<dyn Clock>,
}

impl Default for ForgeSimulator {
    fn default() -> Self {
        ForgeSimulator::new(Arc::new(SystemClock))
    }
}

impl ForgeSimulator {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        ForgeSimulator {
            state: Mutex::new(SimState {
                repos: Vec::new(),
                oauth: HashMap::new(),
                dispatches: Vec::new(),
                outbox: VecDeque::new(),
                failures: VecDeque::new(),
                denied_owners: HashSet::new(),
                template: "# {term}\n\nThis article has not been written yet.\n".to_string(),
                content_file: "README.md".to_string(),
                next_repo_id: 0,
                next_hook_id: 0,
                next_delivery: 0,
            }),
            clock,
        }
    }

    /// Template body for new repositories; `{term}` is replaced by the term.
    pub fn with_template(self, template: impl Into<String>) -> Self {
        self.state.lock().template = template.into();
        self
    }

    pub fn with_content_file(self, path: impl Into<String>) -> Self {
        self.state.lock().content_file = path.into();
        self
    }

    fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    // ----- test controls -------------------------------------------------

    pub fn grant_oauth_code(&self, code: impl Into<String>, grant: OAuthGrant) {
        self.state.lock().oauth.insert(code.into(), grant);
    }

    /// The next `count` client calls fail with a transient outage.
    pub fn fail_next(&self, count: usize) {
        let mut state = self.state.lock();
        for _ in 0..count {
            state
                .failures
                .push_back(ForgeError::Unavailable("simulated outage".into()));
        }
    }

    pub fn inject_failure(&self, err: ForgeError) {
        self.state.lock().failures.push_back(err);
    }

    /// Credentials for `owner` lose write scope.
    pub fn deny_owner(&self, owner: &str) {
        self.state.lock().denied_owners.insert(owner.to_string());
    }

    pub fn set_readable(&self, owner: &str, name: &str, readable: bool) {
        let mut state = self.state.lock();
        if let Some(idx) = state.position(owner, name) {
            state.repos[idx].readable = readable;
        }
    }

    /// Seed a repository without a hook (as if created by hand).
    pub fn create_repo(&self, owner: &str, name: &str, content: &str) -> RepoRef {
        let mut state = self.state.lock();
        state.next_repo_id += 1;
        let content_file = state.content_file.clone();
        let repo = SimRepo {
            id: state.next_repo_id,
            owner: owner.to_string(),
            name: name.to_string(),
            default_branch: "main".to_string(),
            branches: BTreeMap::from([(
                "main".to_string(),
                BTreeMap::from([(content_file, content.to_string())]),
            )]),
            topics: Vec::new(),
            hooks: Vec::new(),
            issues: Vec::new(),
            pulls: Vec::new(),
            archived: false,
            readable: true,
            next_number: 0,
        };
        let reference = repo.to_ref();
        state.repos.push(repo);
        reference
    }

    /// Recreate a known repository with its hook, e.g. from persisted
    /// articles when a process starts. Existing repositories are left alone.
    pub fn restore_repo(&self, repo: &RepoRef, content: &str, topics: &[String], hook_url: &str, secret: &str) {
        let mut state = self.state.lock();
        if state.position(&repo.owner, &repo.name).is_some() {
            return;
        }
        state.next_repo_id += 1;
        state.next_hook_id += 1;
        let content_file = state.content_file.clone();
        let sim = SimRepo {
            id: state.next_repo_id,
            owner: repo.owner.clone(),
            name: repo.name.clone(),
            default_branch: repo.default_branch.clone(),
            branches: BTreeMap::from([(
                repo.default_branch.clone(),
                BTreeMap::from([(content_file, content.to_string())]),
            )]),
            topics: topics.to_vec(),
            hooks: vec![SimHook {
                id: state.next_hook_id,
                url: hook_url.to_string(),
                secret: secret.to_string(),
                events: EventKind::ALL.to_vec(),
            }],
            issues: Vec::new(),
            pulls: Vec::new(),
            archived: false,
            readable: true,
            next_number: 0,
        };
        state.repos.push(sim);
    }

    /// Commit `content` to `path` on `branch` and announce the push.
    pub fn push_file(&self, repo: &RepoRef, branch: &str, path: &str, content: &str) -> Result<(), ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        state.repos[idx]
            .branches
            .entry(branch.to_string())
            .or_default()
            .insert(path.to_string(), content.to_string());
        state.emit_push(idx, branch, now);
        Ok(())
    }

    /// Commit to the content file on the default branch.
    pub fn push_content(&self, repo: &RepoRef, content: &str) -> Result<(), ForgeError> {
        let (branch, path) = {
            let state = self.state.lock();
            let idx = state
                .position(&repo.owner, &repo.name)
                .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
            (state.repos[idx].default_branch.clone(), state.content_file.clone())
        };
        self.push_file(repo, &branch, &path, content)
    }

    pub fn delete_file(&self, repo: &RepoRef, path: &str) -> Result<(), ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        let branch = state.repos[idx].default_branch.clone();
        if let Some(files) = state.repos[idx].branches.get_mut(&branch) {
            files.remove(path);
        }
        state.emit_push(idx, &branch, now);
        Ok(())
    }

    /// A pull request opened directly on the forge by `author`.
    pub fn open_pull_request(
        &self,
        repo: &RepoRef,
        branch: &str,
        content: &str,
        title: &str,
        author: &str,
    ) -> Result<u64, ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        let content_file = state.content_file.clone();
        let default_branch = state.repos[idx].default_branch.clone();
        let mut files = state.repos[idx].branches.get(&default_branch).cloned().unwrap_or_default();
        files.insert(content_file, content.to_string());
        Ok(state.open_pull(idx, branch.to_string(), files, title.to_string(), String::new(), author, now))
    }

    pub fn merge_pull_request(&self, repo: &RepoRef, number: u64) -> Result<(), ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        let sim = &mut state.repos[idx];
        let pull = sim
            .pulls
            .iter_mut()
            .find(|p| p.number == number && p.open)
            .ok_or_else(|| ForgeError::NotFound(format!("open pull request #{number}")))?;
        pull.open = false;
        pull.merged_at = Some(now);
        let (head, base) = (pull.head.clone(), pull.base.clone());
        let merged = sim.branches.get(&head).cloned().unwrap_or_default();
        sim.branches.entry(base.clone()).or_default().extend(merged);
        state.emit_pull(idx, number, "closed", now);
        state.emit_push(idx, &base, now);
        Ok(())
    }

    pub fn close_pull_request(&self, repo: &RepoRef, number: u64) -> Result<(), ForgeError> {
        self.set_pull_open(repo, number, false, "closed")
    }

    pub fn reopen_pull_request(&self, repo: &RepoRef, number: u64) -> Result<(), ForgeError> {
        self.set_pull_open(repo, number, true, "reopened")
    }

    fn set_pull_open(&self, repo: &RepoRef, number: u64, open: bool, action: &str) -> Result<(), ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        let pull = state.repos[idx]
            .pulls
            .iter_mut()
            .find(|p| p.number == number && p.merged_at.is_none())
            .ok_or_else(|| ForgeError::NotFound(format!("pull request #{number}")))?;
        pull.open = open;
        state.emit_pull(idx, number, action, now);
        Ok(())
    }

    /// Rename a repository; returns the reference under its new name.
    pub fn rename_repo(&self, repo: &RepoRef, new_name: &str) -> Result<RepoRef, ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        let old = std::mem::replace(&mut state.repos[idx].name, new_name.to_string());
        state.emit_repository(idx, "renamed", json!({"repository": {"name": {"from": old}}}), now);
        Ok(state.repos[idx].to_ref())
    }

    pub fn set_topics(&self, repo: &RepoRef, topics: &[&str]) -> Result<(), ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        state.repos[idx].topics = topics.iter().map(|t| t.to_string()).collect();
        state.emit_repository(idx, "edited", json!({}), now);
        Ok(())
    }

    pub fn transfer_repo(&self, repo: &RepoRef, new_owner: &str) -> Result<RepoRef, ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        let old = std::mem::replace(&mut state.repos[idx].owner, new_owner.to_string());
        state.emit_repository(idx, "transferred", json!({"owner": {"from": {"login": old}}}), now);
        Ok(state.repos[idx].to_ref())
    }

    pub fn set_archived(&self, repo: &RepoRef, archived: bool) -> Result<(), ForgeError> {
        let now = self.now();
        let mut state = self.state.lock();
        let idx = state
            .position(&repo.owner, &repo.name)
            .ok_or_else(|| ForgeError::NotFound(repo.to_string()))?;
        state.repos[idx].archived = archived;
        let action = if archived { "archived" } else { "unarchived" };
        state.emit_repository(idx, action, json!({}), now);
        Ok(())
    }

    // ----- inspection ----------------------------------------------------

    pub fn take_deliveries(&self) -> Vec<OutboundDelivery> {
        self.state.lock().outbox.drain(..).collect()
    }

    pub fn pending_deliveries(&self) -> usize {
        self.state.lock().outbox.len()
    }

    /// Every dispatch event accepted so far, oldest first.
    pub fn dispatches(&self) -> Vec<DispatchEvent> {
        self.state.lock().dispatches.clone()
    }

    pub fn repo(&self, owner: &str, name: &str) -> Option<SimRepo> {
        let state = self.state.lock();
        state.position(owner, name).map(|idx| state.repos[idx].clone())
    }

    pub fn repos(&self) -> Vec<SimRepo> {
        self.state.lock().repos.clone()
    }

    pub fn issues(&self, repo: &RepoRef) -> Vec<SimIssue> {
        self.repo(&repo.owner, &repo.name).map(|r| r.issues).unwrap_or_default()
    }

    pub fn pulls(&self, repo: &RepoRef) -> Vec<SimPull> {
        self.repo(&repo.owner, &repo.name).map(|r| r.pulls).unwrap_or_default()
    }

    pub fn total_issues(&self) -> usize {
        self.state.lock().repos.iter().map(|r| r.issues.len()).sum()
    }

    fn respond_to_dispatch(&self, state: &mut SimState, idx: usize, event: &DispatchEvent) -> Result<(), ForgeError> {
        let now = self.now();
        let default_branch = state.repos[idx].default_branch.clone();
        let mut files = state.repos[idx].branches.get(&default_branch).cloned().unwrap_or_default();
        match event.event_type {
            DispatchType::RequestReview => {
                let content = event
                    .client_payload
                    .get("content")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ForgeError::Protocol("request-review payload lacks content".into()))?;
                let author = event.client_payload.get("author").and_then(Value::as_str).unwrap_or("unknown");
                let review_id = event.client_payload.get("review_id").and_then(Value::as_str);
                let number_hint = state.repos[idx].next_number + 1;
                let branch = match review_id {
                    Some(id) => format!("review-{id}"),
                    None => format!("review-{number_hint}"),
                };
                let mut body = String::new();
                if let Some(id) = review_id {
                    body.push_str(&format!("{PR_MARKER_PREFIX}{id}\n\n"));
                }
                body.push_str(&format!("Requested by @{author} through the knowledge server.\n"));
                files.insert(state.content_file.clone(), content.to_string());
                state.open_pull(idx, branch, files, format!("Review request from {author}"), body, BOT_LOGIN, now);
            }
            DispatchType::UpdateTemplate => {
                let number_hint = state.repos[idx].next_number + 1;
                let version = files
                    .get(TEMPLATE_VERSION_FILE)
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .unwrap_or(0);
                files.insert(TEMPLATE_VERSION_FILE.to_string(), format!("{}\n", version + 1));
                state.open_pull(
                    idx,
                    format!("update-template-{number_hint}"),
                    files,
                    "Update term template".to_string(),
                    "The upstream template changed; please review the automation updates.\n".to_string(),
                    BOT_LOGIN,
                    now,
                );
            }
        }
        Ok(())
    }
}

impl Forge for ForgeSimulator {
    fn create_repo_from_template(&self, repo: &NewRepo<'_>) -> Result<RepoRef, ForgeError> {
        let mut state = self.state.lock();
        state.injected_failure()?;
        if state.denied_owners.contains(repo.owner) {
            return Err(ForgeError::PermissionDenied(format!("cannot create repositories for {}", repo.owner)));
        }
        if state.position(repo.owner, repo.name).is_some() {
            return Err(ForgeError::AlreadyExists(format!("{}/{}", repo.owner, repo.name)));
        }
        let term = repo.name.rsplit_once("-term-").map_or(repo.name, |(_, t)| t);
        let content = state.template.replace("{term}", term);
        let content_file = state.content_file.clone();
        state.next_repo_id += 1;
        state.next_hook_id += 1;
        let sim = SimRepo {
            id: state.next_repo_id,
            owner: repo.owner.to_string(),
            name: repo.name.to_string(),
            default_branch: "main".to_string(),
            branches: BTreeMap::from([("main".to_string(), BTreeMap::from([(content_file, content)]))]),
            topics: Vec::new(),
            hooks: vec![SimHook {
                id: state.next_hook_id,
                url: repo.hook_url.to_string(),
                secret: repo.secret.to_string(),
                events: EventKind::ALL.to_vec(),
            }],
            issues: Vec::new(),
            pulls: Vec::new(),
            archived: false,
            readable: true,
            next_number: 0,
        };
        let reference = sim.to_ref();
        state.repos.push(sim);
        Ok(reference)
    }

    fn set_webhook_secret(&self, repo: &RepoRef, hook_url: &str, secret: &str) -> Result<(), ForgeError> {
        let mut state = self.state.lock();
        state.injected_failure()?;
        let idx = state.writable(repo)?;
        let hook = state.repos[idx]
            .hooks
            .iter_mut()
            .find(|h| h.url == hook_url)
            .ok_or_else(|| ForgeError::NotFound(format!("hook {hook_url} on {repo}")))?;
        hook.secret = secret.to_string();
        Ok(())
    }

    fn send_dispatch(&self, event: &DispatchEvent) -> Result<(), ForgeError> {
        let mut state = self.state.lock();
        state.injected_failure()?;
        let idx = state.writable(&event.target)?;
        state.dispatches.push(event.clone());
        self.respond_to_dispatch(&mut state, idx, event)
    }

    fn open_issue(&self, draft: &IssueDraft) -> Result<u64, ForgeError> {
        let mut state = self.state.lock();
        state.injected_failure()?;
        if draft.title.trim().is_empty() {
            return Err(ForgeError::Protocol("issue title must not be empty".into()));
        }
        let idx = state.writable(&draft.target)?;
        let repo = &mut state.repos[idx];
        let number = repo.allocate_number();
        repo.issues.push(SimIssue {
            number,
            title: draft.title.clone(),
            body: draft.body.clone(),
            labels: draft.labels.clone(),
        });
        Ok(number)
    }

    fn fetch_article_file(&self, repo: &RepoRef, path: &str) -> Result<String, ForgeError> {
        let mut state = self.state.lock();
        state.injected_failure()?;
        let idx = state.readable(repo)?;
        let sim = &state.repos[idx];
        sim.file(&sim.default_branch, path)
            .map(str::to_string)
            .ok_or_else(|| ForgeError::NotFound(format!("{path} in {repo}")))
    }

    fn fetch_topics(&self, repo: &RepoRef) -> Result<Vec<String>, ForgeError> {
        let mut state = self.state.lock();
        state.injected_failure()?;
        let idx = state.readable(repo)?;
        Ok(normalize_topics(&state.repos[idx].topics))
    }

    fn exchange_oauth_code(&self, code: &str) -> Result<OAuthGrant, ForgeError> {
        let mut state = self.state.lock();
        state.injected_failure()?;
        state
            .oauth
            .remove(code)
            .ok_or_else(|| ForgeError::OAuthDenied("bad_verification_code".into()))
    }
}
