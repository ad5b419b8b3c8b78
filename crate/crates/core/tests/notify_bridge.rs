mod common;

use common::{article_body, Harness};
use kforge_core::bridge::{BridgeOutcome, PostStatus, ISSUE_LABEL};
use kforge_core::forge::ForgeError;
use kforge_core::{Error, ExternalPost, Role};

fn add_owner(h: &Harness, term: &str, login: &str) {
    let account = h.account(login, Role::Owner);
    h.kb
        .store()
        .write(|s| {
            s.articles.get_mut(term).unwrap().owners.push(account.id.clone());
            Ok::<_, Error>(())
        })
        .unwrap();
}

fn post(id: &str, title: &str, body: &str) -> ExternalPost {
    ExternalPost {
        post_id: id.into(),
        source: "discourse".into(),
        title: title.into(),
        body: body.into(),
        url: format!("https://forum.example.org/t/{id}"),
    }
}

#[test]
fn review_requests_reach_owners_and_subscribers_once() {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    add_owner(&h, "hpc", "oscar");
    let sub = h.editor("sue");
    h.kb.set_subscription(&sub.id, "hpc", true).unwrap();
    h.editor("bob");
    let author = h.editor("eve");

    h.kb.submit_for_review("hpc", &article_body("hpc"), &author).unwrap();
    h.pump();
    h.pump();

    for who in ["olive", "oscar", "sue"] {
        let mail = h.mail.sent_to(&format!("{who}@example.org"));
        assert_eq!(mail.len(), 1, "{who}");
        assert!(mail[0].subject.contains("hpc"));
    }
    assert!(h.mail.sent_to("bob@example.org").is_empty());
    assert!(h.mail.sent_to("eve@example.org").is_empty());
    assert_eq!(h.mail.sent().len(), 3);
}

#[test]
fn opting_out_silences_an_owner() {
    let h = Harness::new();
    let owner = h.owner();
    h.kb.register_term("hpc", &owner).unwrap();
    h.kb.set_subscription(&owner.id, "hpc", false).unwrap();
    h.kb.submit_for_review("hpc", &article_body("hpc"), &h.editor("eve")).unwrap();
    h.pump();
    assert!(h.mail.sent().is_empty());
    let subs = h.kb.subscriptions(&owner.id).unwrap();
    assert_eq!(subs.len(), 1);
    assert!(!subs[0].active);
}

#[test]
fn mail_outage_delivers_each_recipient_exactly_once() {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    add_owner(&h, "hpc", "oscar");
    h.mail.set_down(true);
    h.kb.submit_for_review("hpc", &article_body("hpc"), &h.editor("eve")).unwrap();
    // One retry round while the backend is still down.
    kforge_core::server::work_once(&h.kb, Some(&h.sim)).unwrap();
    assert!(h.mail.sent().is_empty());
    h.mail.set_down(false);
    h.pump();
    assert_eq!(h.mail.sent_to("olive@example.org").len(), 1);
    assert_eq!(h.mail.sent_to("oscar@example.org").len(), 1);
}

#[test]
fn partial_failure_does_not_resend() {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    add_owner(&h, "hpc", "oscar");
    add_owner(&h, "hpc", "otto");
    h.mail.fail_next(1);
    h.kb.submit_for_review("hpc", &article_body("hpc"), &h.editor("eve")).unwrap();
    h.pump();
    for who in ["olive", "oscar", "otto"] {
        assert_eq!(h.mail.sent_to(&format!("{who}@example.org")).len(), 1, "{who}");
    }
}

#[test]
fn subscription_errors() {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    let eve = h.editor("eve");
    assert!(matches!(h.kb.set_subscription(&eve.id, "nope", true), Err(Error::UnknownTerm(_))));
    assert!(matches!(
        h.kb.set_subscription(&Harness::account_id("ghost"), "hpc", true),
        Err(Error::UnknownAccount(_))
    ));
}

#[test]
fn question_notices_go_to_owners_only() {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    let sub = h.editor("sue");
    h.kb.set_subscription(&sub.id, "hpc", true).unwrap();
    h.kb.ask_question("hpc", "What is a node?", &sub).unwrap();
    h.pump();
    assert_eq!(h.mail.sent_to("olive@example.org").len(), 1);
    assert!(h.mail.sent_to("sue@example.org").is_empty());
}

fn bridge_setup() -> Harness {
    let h = Harness::new();
    let owner = h.owner();
    h.kb.register_term("hpc", &owner).unwrap();
    h.kb.register_term("containers", &owner).unwrap();
    h.sim.set_topics(&h.repo("containers"), &["docker", "singularity"]).unwrap();
    h.pump();
    h
}

#[test]
fn matching_post_opens_one_issue_and_redelivery_none() {
    let h = bridge_setup();
    let p = post("101", "Scheduling jobs", "Tips for running HPC workloads on a cluster.");
    let outcome = h.kb.handle_discourse_post(&p).unwrap();
    let BridgeOutcome::IssueOpened { term, issue } = outcome else {
        panic!("expected an issue, got {outcome:?}");
    };
    assert_eq!(term, "hpc");
    let issues = h.sim.issues(&h.repo("hpc"));
    assert_eq!(issues.len(), 1);
    assert_eq!(issues[0].number, issue);
    assert!(issues[0].title.starts_with("New knowledge: "));
    assert_eq!(issues[0].labels, [ISSUE_LABEL]);
    assert!(issues[0].body.contains("https://forum.example.org/t/101"));

    assert_eq!(h.kb.handle_discourse_post(&p).unwrap(), BridgeOutcome::Duplicate);
    assert_eq!(h.sim.total_issues(), 1);
    let record = h.kb.external_post("discourse", "101").unwrap();
    assert_eq!(record.status, PostStatus::IssueOpened { term: "hpc".into(), issue });
}

#[test]
fn tags_match_and_unrelated_posts_do_nothing() {
    let h = bridge_setup();
    let tagged = h.kb.handle_discourse_post(&post("7", "Help", "my singularity image fails")).unwrap();
    assert!(matches!(tagged, BridgeOutcome::IssueOpened { ref term, .. } if term == "containers"));

    assert_eq!(h.sim.issues(&h.repo("containers")).len(), 1);

    let miss = h.kb.handle_discourse_post(&post("9", "Lunch", "Where should we eat today")).unwrap();
    assert_eq!(miss, BridgeOutcome::NoMatch);
    assert_eq!(h.kb.external_post("discourse", "9").unwrap().status, PostStatus::NoMatch);
    assert_eq!(h.sim.total_issues(), 1);
}

#[test]
fn substrings_do_not_match() {
    let h = bridge_setup();
    let outcome = h.kb.handle_discourse_post(&post("5", "hpcx", "ahpc and hpcs are not terms")).unwrap();
    assert_eq!(outcome, BridgeOutcome::NoMatch);
    assert_eq!(h.sim.total_issues(), 0);
}

#[test]
fn archived_articles_are_not_matched() {
    let h = bridge_setup();
    h.sim.rename_repo(&h.repo("hpc"), "retired").unwrap();
    h.pump();
    let outcome = h.kb.handle_discourse_post(&post("11", "HPC", "hpc question")).unwrap();
    assert_eq!(outcome, BridgeOutcome::NoMatch);
    assert_eq!(h.sim.total_issues(), 0);
}

#[test]
fn unavailable_forge_queues_the_issue() {
    let h = bridge_setup();
    h.sim.inject_failure(ForgeError::Unavailable("down".into()));
    let p = post("12", "HPC", "hpc question");
    assert_eq!(h.kb.handle_discourse_post(&p).unwrap(), BridgeOutcome::Queued);
    assert_eq!(h.kb.handle_discourse_post(&p).unwrap(), BridgeOutcome::Duplicate);
    h.pump();
    assert_eq!(h.sim.issues(&h.repo("hpc")).len(), 1);
    assert!(matches!(
        h.kb.external_post("discourse", "12").unwrap().status,
        PostStatus::IssueOpened { .. }
    ));
}
