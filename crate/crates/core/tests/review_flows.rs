mod common;

use chrono::Duration;
use common::{article_body, Harness};
use kforge_core::forge::{DispatchType, ForgeError};
use kforge_core::spans::content_digest;
use kforge_core::{Error, ErrorCode, ReviewStatus, UserAccount};

fn setup() -> (Harness, UserAccount) {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    let editor = h.editor("eve");
    (h, editor)
}

#[test]
fn merged_review_is_accepted_and_synced() {
    let (h, editor) = setup();
    let content = article_body("hpc");
    let review = h.kb.submit_for_review("hpc", &content, &editor).unwrap();
    assert_eq!(review.status, ReviewStatus::PendingDispatch);

    let dispatches = h.sim.dispatches();
    assert_eq!(dispatches.len(), 1);
    assert_eq!(dispatches[0].event_type, DispatchType::RequestReview);
    assert_eq!(dispatches[0].client_payload["review_id"], review.id.as_str());
    assert_eq!(dispatches[0].client_payload["content"], content.as_str());
    assert_eq!(dispatches[0].client_payload["author"], "eve");

    h.pump();
    let open = h.kb.review(&review.id).unwrap();
    assert_eq!(open.status, ReviewStatus::Open);
    let pr = open.pr.clone().unwrap();
    assert!(pr.url.contains("askci-term-hpc"));

    h.sim.merge_pull_request(&h.repo("hpc"), pr.number).unwrap();
    h.pump();
    let accepted = h.kb.review(&review.id).unwrap();
    assert_eq!(accepted.status, ReviewStatus::Accepted);
    assert!(accepted.pr.unwrap().merged_at.is_some());
    let article = h.kb.article("hpc").unwrap();
    assert_eq!(article.content_hash(), accepted.submitted_content_hash);
    assert_eq!(content_digest(&content), accepted.submitted_content_hash);

    let statuses: Vec<_> = accepted.history.iter().map(|t| t.status).collect();
    assert_eq!(statuses, [ReviewStatus::PendingDispatch, ReviewStatus::Open, ReviewStatus::Accepted]);
    // Contributors follow what they helped write.
    assert_eq!(h.kb.account(&editor.id).unwrap().is_subscribed("hpc"), Some(true));
}

#[test]
fn closed_without_merge_is_rejected_and_stays_rejected() {
    let (h, editor) = setup();
    let review = h.kb.submit_for_review("hpc", &article_body("hpc"), &editor).unwrap();
    h.pump();
    let number = h.kb.review(&review.id).unwrap().pr.unwrap().number;
    h.sim.close_pull_request(&h.repo("hpc"), number).unwrap();
    h.pump();
    assert_eq!(h.kb.review(&review.id).unwrap().status, ReviewStatus::Rejected);

    h.sim.reopen_pull_request(&h.repo("hpc"), number).unwrap();
    h.pump();
    assert_eq!(h.kb.review(&review.id).unwrap().status, ReviewStatus::Rejected);
    assert_eq!(h.kb.account(&editor.id).unwrap().is_subscribed("hpc"), None);
}

#[test]
fn invalid_submission_sends_nothing() {
    let (h, editor) = setup();
    let dup = "<span id=\"question-a\"></span>\n<span id=\"question-a\"></span>\n";
    match h.kb.submit_for_review("hpc", dup, &editor) {
        Err(Error::ValidationFailed(report)) => assert!(report.has(ErrorCode::DuplicateSlug)),
        other => panic!("expected ValidationFailed, got {other:?}"),
    }
    assert!(h.sim.dispatches().is_empty());
    assert!(h.kb.reviews(None).is_empty());
}

#[test]
fn viewers_and_archived_articles_are_refused() {
    let (h, _) = setup();
    assert!(matches!(
        h.kb.submit_for_review("hpc", "ok\n", &UserAccount::viewer()),
        Err(Error::Forbidden(_))
    ));
    h.sim.rename_repo(&h.repo("hpc"), "gone").unwrap();
    h.pump();
    assert!(matches!(
        h.kb.submit_for_review("hpc", "ok\n", &h.editor("eve")),
        Err(Error::ArchivedArticle(_))
    ));
    assert!(h.sim.dispatches().is_empty());
}

#[test]
fn unavailable_forge_queues_the_dispatch() {
    let (h, editor) = setup();
    h.sim.inject_failure(ForgeError::Unavailable("503".into()));
    let review_id = match h.kb.submit_for_review("hpc", &article_body("hpc"), &editor) {
        Err(Error::DispatchPending { review_id, .. }) => review_id,
        other => panic!("expected DispatchPending, got {other:?}"),
    };
    assert_eq!(h.kb.review(&review_id).unwrap().status, ReviewStatus::PendingDispatch);
    assert!(h.sim.dispatches().is_empty());

    h.sim.fail_next(1);
    h.pump();
    assert_eq!(h.sim.dispatches().len(), 1);
    assert_eq!(h.kb.review(&review_id).unwrap().status, ReviewStatus::Open);
}

#[test]
fn lost_dispatch_times_out() {
    let (h, editor) = setup();
    let review = h.kb.submit_for_review("hpc", &article_body("hpc"), &editor).unwrap();
    // Drop the PR webhook on the floor.
    h.sim.take_deliveries();
    h.clock.advance(Duration::minutes(59));
    assert!(h.kb.expire_pending_reviews().unwrap().is_empty());
    h.clock.advance(Duration::minutes(1));
    assert_eq!(h.kb.expire_pending_reviews().unwrap(), vec![review.id.clone()]);
    let expired = h.kb.review(&review.id).unwrap();
    assert_eq!(expired.status, ReviewStatus::Rejected);
    assert_eq!(expired.cause.as_deref(), Some("DispatchLost"));
}

#[test]
fn orphan_pull_requests_are_mirrored() {
    let (h, _) = setup();
    let repo = h.repo("hpc");
    let number = h
        .sim
        .open_pull_request(&repo, "fix-typo", "# hpc\n\nFixed.\n", "Fix typo", "mallory")
        .unwrap();
    h.pump();
    let reviews = h.kb.reviews(Some("hpc"));
    assert_eq!(reviews.len(), 1);
    assert!(reviews[0].orphan);
    assert_eq!(reviews[0].status, ReviewStatus::Open);
    assert_eq!(reviews[0].author.as_str(), "mallory");

    h.sim.merge_pull_request(&repo, number).unwrap();
    h.pump();
    let reviews = h.kb.reviews(Some("hpc"));
    assert_eq!(reviews.len(), 1);
    assert_eq!(reviews[0].status, ReviewStatus::Accepted);
    assert_eq!(h.kb.article("hpc").unwrap().content, "# hpc\n\nFixed.\n");
}

#[test]
fn concurrent_submissions_correlate_independently() {
    let (h, editor) = setup();
    let other = h.editor("sam");
    let a = h.kb.submit_for_review("hpc", "# A\n", &editor).unwrap();
    let b = h.kb.submit_for_review("hpc", "# B\n", &other).unwrap();
    h.pump();
    let pr_a = h.kb.review(&a.id).unwrap().pr.unwrap();
    let pr_b = h.kb.review(&b.id).unwrap().pr.unwrap();
    assert_ne!(pr_a.number, pr_b.number);
    h.sim.close_pull_request(&h.repo("hpc"), pr_a.number).unwrap();
    h.sim.merge_pull_request(&h.repo("hpc"), pr_b.number).unwrap();
    h.pump();
    assert_eq!(h.kb.review(&a.id).unwrap().status, ReviewStatus::Rejected);
    assert_eq!(h.kb.review(&b.id).unwrap().status, ReviewStatus::Accepted);
    assert_eq!(h.kb.article("hpc").unwrap().content, "# B\n");
}

#[test]
fn template_updates_skip_archived_articles() {
    let h = Harness::new();
    let owner = h.owner();
    for term in ["a", "b", "c", "d", "e", "f"] {
        h.kb.register_term(term, &owner).unwrap();
    }
    h.sim.rename_repo(&h.repo("f"), "moved").unwrap();
    h.pump();

    let admin = h.admin();
    let report = h.kb.trigger_template_update(None, &admin).unwrap();
    assert_eq!(report.count(), 5);
    assert_eq!(report.skipped_archived, ["f"]);
    assert!(h
        .sim
        .dispatches()
        .iter()
        .all(|d| d.event_type == DispatchType::UpdateTemplate));

    let subset = h.kb.trigger_template_update(Some(&["c".to_string()]), &admin).unwrap();
    assert_eq!(subset.count(), 1);
    assert_eq!(h.sim.dispatches().last().unwrap().target.name, "askci-term-c");

    assert!(matches!(h.kb.trigger_template_update(None, &owner), Err(Error::Forbidden(_))));
    assert!(matches!(
        h.kb.trigger_template_update(Some(&["zzz".to_string()]), &admin),
        Err(Error::UnknownTerm(_))
    ));
}

#[test]
fn template_update_pull_requests_notify_owners() {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    h.kb.trigger_template_update(None, &h.admin()).unwrap();
    h.pump();
    let reviews = h.kb.reviews(Some("hpc"));
    assert_eq!(reviews.len(), 1);
    assert_eq!(reviews[0].status, ReviewStatus::Open);
    let mail = h.mail.sent_to("olive@example.org");
    assert_eq!(mail.len(), 1);
    assert!(mail[0].subject.contains("Template update"));
}

#[test]
fn unavailable_forge_queues_template_dispatch() {
    let h = Harness::new();
    h.kb.register_term("hpc", &h.owner()).unwrap();
    h.sim.inject_failure(ForgeError::Unavailable("down".into()));
    let report = h.kb.trigger_template_update(None, &h.admin()).unwrap();
    assert_eq!(report.count(), 0);
    assert_eq!(report.queued, ["hpc"]);
    h.pump();
    assert_eq!(h.sim.dispatches().len(), 1);
}
