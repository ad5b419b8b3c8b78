#![allow(dead_code)]

pub mod docgen;
pub mod grid;
pub mod hmac_oracle;
pub mod http;
pub mod oracle;

use std::sync::Arc;

use kforge_core::forge::RepoRef;
use kforge_core::server::work_once;
use kforge_core::{
    AccountId, ForgeSimulator, KnowledgeBase, ManualClock, RecordingMailer, RetryPolicy, Role, Settings, Store,
    UserAccount,
};

pub const HPC_SPAN: &str = r#"<span id="question-how-did-hpc-originate"></span>"#;

/// A knowledge base wired to the forge simulator, a recording mail sink and
/// a manual clock.
pub struct Harness {
    pub kb: Arc<KnowledgeBase>,
    pub sim: Arc<ForgeSimulator>,
    pub mail: Arc<RecordingMailer>,
    pub clock: ManualClock,
}

impl Harness {
    pub fn new() -> Self {
        Self::with_settings(Settings::default())
    }

    pub fn with_settings(settings: Settings) -> Self {
        Self::with_store(settings, Arc::new(Store::memory()))
    }

    pub fn with_store(settings: Settings, store: Arc<Store>) -> Self {
        let clock = ManualClock::default();
        let sim = Arc::new(ForgeSimulator::new(Arc::new(clock.clone())));
        let mail = Arc::new(RecordingMailer::new());
        let kb = KnowledgeBase::with_retry_policy(
            settings,
            store,
            sim.clone(),
            mail.clone(),
            Arc::new(clock.clone()),
            RetryPolicy::default(),
        );
        Harness {
            kb: Arc::new(kb),
            sim,
            mail,
            clock,
        }
    }

    /// Persist an account with a predictable token and mail address.
    pub fn account(&self, login: &str, role: Role) -> UserAccount {
        let mut account = UserAccount::from_login(login, role);
        account.api_token = Some(format!("token-{login}"));
        account.email = Some(format!("{login}@example.org"));
        self.kb.upsert_account(account).unwrap()
    }

    pub fn owner(&self) -> UserAccount {
        self.account("olive", Role::Owner)
    }

    pub fn admin(&self) -> UserAccount {
        self.account("ada", Role::Admin)
    }

    pub fn editor(&self, login: &str) -> UserAccount {
        self.account(login, Role::Editor)
    }

    /// Deliver simulator webhooks and run queued work until both are idle.
    /// Retry backoff is skipped over by advancing the clock.
    pub fn pump(&self) {
        for _ in 0..100 {
            let ran = work_once(&self.kb, Some(&self.sim)).unwrap();
            if ran == 0 && self.sim.pending_deliveries() == 0 {
                match self.kb.queue().next_due() {
                    Some(due) if self.kb.queue().pending() > 0 => {
                        let now = self.clock_now();
                        if due > now {
                            self.clock.set(due);
                        } else {
                            return;
                        }
                    }
                    _ => return,
                }
            }
        }
        panic!("pump did not settle");
    }

    pub fn clock_now(&self) -> chrono::DateTime<chrono::Utc> {
        use kforge_core::Clock;
        self.clock.now()
    }

    pub fn repo(&self, term: &str) -> RepoRef {
        self.kb.article(term).expect("article").repo
    }

    pub fn account_id(login: &str) -> AccountId {
        AccountId::new(login)
    }
}

impl Default for Harness {
    fn default() -> Self {
        Self::new()
    }
}

/// A small valid article body for `term`.
pub fn article_body(term: &str) -> String {
    format!(
        "# {term}\n\nIntro text about {term}.\n\n{HPC_SPAN}\n## How did HPC originate\n\nIt started with big machines.\n\n<span id=\"example-hello-world\"></span>\n```bash\necho hello\n```\n"
    )
}
