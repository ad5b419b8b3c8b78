mod common;

use common::docgen;
use common::oracle::{from_library, oracle_sorted, Oracle};
use kforge_core::{analyze, parse_spans, validate_article, SpanKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn agrees_with_reference_scanner_on_seeded_corpus() {
    let oracle = Oracle::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for i in 0..2000 {
        let doc = docgen::document(&mut rng, 50);
        assert_eq!(from_library(&doc), oracle_sorted(&oracle, &doc), "document #{i}:\n{doc}");
    }
}

#[test]
fn hand_written_edge_cases() {
    let oracle = Oracle::new();
    let cases = [
        "",
        "<span id=\"question-a\"></span>",
        "<span id=\"question-a\"></span><span id=\"question-a\"></span>",
        "```\n<span id=\"question-in-fence\"></span>\n```\n<span id=\"question-after\"></span>",
        "~~~~\n```\n<span id=\"question-still-inside\"></span>\n~~~~\n",
        "```\nunclosed fence <span id=\"question-x\"></span>",
        "<span id=\"example-e\"></span>\n\n```\n   \n```\n",
        "<span id=\"example-e\"></span>\n<span id=\"question-q\"></span>\n```\ncode\n```",
        "<span id=\"example-e\"></span>\r\n```sh\r\nls\r\n```\r\n",
        "    ```\n<span id=\"question-not-a-fence\"></span>",
        "``` a`b\n<span id=\"question-tick-info\"></span>\n",
        "<span id=\"question-split\n\"></span>",
        "<span id=\"Question-A\"></span> <span id=\"note\"></span>",
    ];
    for doc in cases {
        assert_eq!(from_library(doc), oracle_sorted(&oracle, doc), "{doc:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_documents_match_oracle(seed in any::<u64>(), max in 0usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = docgen::document(&mut rng, max);
        prop_assert_eq!(from_library(&doc), oracle_sorted(&Oracle::new(), &doc));
    }

    #[test]
    fn arbitrary_text_never_panics_and_agrees(doc in "[a-z<>\"=/ `~\\-\n]{0,200}") {
        prop_assert_eq!(from_library(&doc), oracle_sorted(&Oracle::new(), &doc));
    }

    #[test]
    fn parse_and_validate_match_analyze(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = docgen::document(&mut rng, 20);
        let (parsed, report) = analyze(&doc);
        prop_assert_eq!(parse_spans(&doc), parsed);
        prop_assert_eq!(validate_article(&doc), report);
    }

    #[test]
    fn indexed_anchors_resolve(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = docgen::document(&mut rng, 30);
        let parsed = parse_spans(&doc);
        for q in &parsed.questions {
            prop_assert!(parsed.has_anchor(&q.anchor()));
            let at = &doc[q.location.byte_offset..];
            let open = format!("<span id=\"{}\"", SpanKind::Question.anchor(&q.slug));
            prop_assert!(at.starts_with(&open));
        }
        let mut slugs: Vec<_> = parsed.questions.iter().map(|q| &q.slug).collect();
        slugs.sort();
        slugs.dedup();
        prop_assert_eq!(slugs.len(), parsed.questions.len());
    }

    #[test]
    fn report_ok_iff_no_errors(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = docgen::document(&mut rng, 30);
        let report = validate_article(&doc);
        prop_assert_eq!(report.ok, report.errors.is_empty());
        let lines: Vec<usize> = report.errors.iter().map(|e| e.line).collect();
        let mut sorted = lines.clone();
        sorted.sort();
        prop_assert_eq!(lines, sorted);
    }
}
