//! The role ladder written out cell by cell, and a runner that probes every
//! (role, action) pair through the HTTP API.

use std::collections::BTreeMap;

use kforge_core::accounts::Action;
use kforge_core::Role;
use reqwest::{Client, Method, StatusCode};
use serde_json::json;

use super::http::TestServer;
use super::Harness;

/// Allowed actions per role, listed explicitly rather than derived from
/// `minimum_role`.
pub fn expected(role: Role, action: Action) -> bool {
    use Action::*;
    let allowed: &[Action] = match role {
        Role::Viewer => &[Browse, Search],
        Role::Editor => &[Browse, Search, SubmitReview, AskQuestion, ManageSubscriptions],
        Role::Owner => &[Browse, Search, SubmitReview, AskQuestion, ManageSubscriptions, RegisterTerm],
        Role::Admin => &[
            Browse,
            Search,
            SubmitReview,
            AskQuestion,
            ManageSubscriptions,
            RegisterTerm,
            TriggerTemplateUpdate,
            Unarchive,
            WebhookAdmin,
            ImportExport,
        ],
    };
    allowed.contains(&action)
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::Viewer => "viewer",
        Role::Editor => "editor",
        Role::Owner => "owner",
        Role::Admin => "admin",
    }
}

/// Accounts `eve` (editor), `olive` (owner), `ada` (admin) and article `hpc`.
pub fn seed(h: &Harness) {
    h.editor("eve");
    let owner = h.owner();
    h.admin();
    h.kb.register_term("hpc", &owner).unwrap();
}

fn token(role: Role) -> Option<&'static str> {
    match role {
        Role::Viewer => None,
        Role::Editor => Some("token-eve"),
        Role::Owner => Some("token-olive"),
        Role::Admin => Some("token-ada"),
    }
}

/// Status code for `action` performed by `role`.
pub async fn probe(client: &Client, server: &TestServer, role: Role, action: Action) -> StatusCode {
    let fresh = format!("grid-{}", role_name(role));
    let (method, path, body) = match action {
        Action::Browse => (Method::GET, "/api/v1/articles/hpc".to_string(), None),
        Action::Search => (Method::GET, "/api/v1/search?q=hpc".to_string(), None),
        Action::SubmitReview => (
            Method::POST,
            "/api/v1/articles/hpc/review".to_string(),
            Some(json!({ "content": "# hpc\n" })),
        ),
        Action::AskQuestion => (
            Method::POST,
            "/api/v1/articles/hpc/questions".to_string(),
            Some(json!({ "text": "What is a node?" })),
        ),
        Action::ManageSubscriptions => (
            Method::PUT,
            "/api/v1/subscriptions/hpc".to_string(),
            Some(json!({ "active": true })),
        ),
        Action::RegisterTerm => (Method::POST, "/api/v1/articles".to_string(), Some(json!({ "term": fresh }))),
        Action::TriggerTemplateUpdate => (
            Method::POST,
            "/api/v1/admin/template-update".to_string(),
            Some(json!({ "terms": ["hpc"] })),
        ),
        Action::Unarchive => (Method::POST, "/api/v1/admin/articles/hpc/unarchive".to_string(), None),
        Action::WebhookAdmin => (Method::POST, "/api/v1/admin/articles/hpc/rotate-secret".to_string(), None),
        Action::ImportExport => (Method::GET, "/api/v1/admin/articles/hpc/export".to_string(), None),
    };
    let mut request = client.request(method, server.url(&path));
    if let Some(t) = token(role) {
        request = request.bearer_auth(t);
    }
    if let Some(body) = body {
        request = request.json(&body);
    }
    request.send().await.unwrap().status()
}

/// `true` where the server let the call past authorization.
pub async fn observe(client: &Client, server: &TestServer) -> BTreeMap<(Role, Action), bool> {
    let mut out = BTreeMap::new();
    for role in Role::ALL {
        for action in Action::ALL {
            let status = probe(client, server, role, action).await;
            let denied = status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN;
            out.insert((role, action), !denied);
        }
    }
    out
}

/// Each role's allowed set contains the previous role's.
pub fn monotone(grid: &BTreeMap<(Role, Action), bool>) -> bool {
    Role::ALL.windows(2).all(|pair| {
        Action::ALL
            .iter()
            .all(|&a| !grid[&(pair[0], a)] || grid[&(pair[1], a)])
    })
}
