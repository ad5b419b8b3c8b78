//! Accounts, roles and the permission ladder.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Self {
        AccountId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered from least to most privileged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Viewer,
    Editor,
    Owner,
    Admin,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Viewer, Role::Editor, Role::Owner, Role::Admin];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
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
}

impl Action {
    pub const ALL: [Action; 10] = [
        Action::Browse,
        Action::Search,
        Action::SubmitReview,
        Action::AskQuestion,
        Action::ManageSubscriptions,
        Action::RegisterTerm,
        Action::TriggerTemplateUpdate,
        Action::Unarchive,
        Action::WebhookAdmin,
        Action::ImportExport,
    ];

    pub fn minimum_role(self) -> Role {
        match self {
            Action::Browse | Action::Search => Role::Viewer,
            Action::SubmitReview | Action::AskQuestion | Action::ManageSubscriptions => Role::Editor,
            Action::RegisterTerm => Role::Owner,
            Action::TriggerTemplateUpdate | Action::Unarchive | Action::WebhookAdmin | Action::ImportExport => {
                Role::Admin
            }
        }
    }

    /// Actions that change server or forge state.
    pub fn is_mutation(self) -> bool {
        !matches!(self, Action::Browse | Action::Search)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub id: AccountId,
    pub forge_login: String,
    pub role: Role,
    #[serde(default)]
    pub email: Option<String>,
    #[serde(default)]
    pub api_token: Option<String>,
    /// term -> active. At most one entry per term.
    #[serde(default)]
    pub subscriptions: BTreeMap<String, bool>,
}

impl UserAccount {
    /// The synthetic account behind every unauthenticated request.
    pub fn viewer() -> Self {
        UserAccount {
            id: AccountId::new("anonymous"),
            forge_login: String::new(),
            role: Role::Viewer,
            email: None,
            api_token: None,
            subscriptions: BTreeMap::new(),
        }
    }

    /// The synthetic administrator the operator CLI acts as.
    pub fn operator() -> Self {
        UserAccount {
            id: AccountId::new("operator"),
            forge_login: String::new(),
            role: Role::Admin,
            ..UserAccount::viewer()
        }
    }

    pub fn from_login(login: &str, role: Role) -> Self {
        UserAccount {
            id: AccountId::new(login),
            forge_login: login.to_string(),
            role,
            ..UserAccount::viewer()
        }
    }

    pub fn is_subscribed(&self, term: &str) -> Option<bool> {
        self.subscriptions.get(term).copied()
    }

    pub fn mail_address(&self) -> String {
        self.email
            .clone()
            .unwrap_or_else(|| format!("{}@users.noreply.github.com", self.forge_login))
    }
}

pub fn authorize(account: &UserAccount, action: Action) -> bool {
    account.role >= action.minimum_role()
}

/// Role implied by the scopes an OAuth grant carries. Repository-creation
/// plus webhook scopes make an owner; anything less is an editor.
pub fn role_for_scopes<S: AsRef<str>>(scopes: &[S]) -> Role {
    let has = |name: &str| scopes.iter().any(|s| s.as_ref() == name);
    let full_repo = has("repo");
    let public_repo = has("public_repo");
    let hooks = has("admin:repo_hook") || has("write:repo_hook");
    if full_repo || (public_repo && hooks) {
        Role::Owner
    } else {
        Role::Editor
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub account: AccountId,
    pub term: String,
    pub active: bool,
}
