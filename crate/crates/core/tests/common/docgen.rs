//! Random markdown documents exercising the span grammar.

use rand::seq::SliceRandom;
use rand::Rng;

const SLUGS: &[&str] = &[
    "how-did-hpc-originate",
    "what-is-a-node",
    "run-it",
    "a",
    "x1-y2",
    "setup",
    "use-containers",
];

const MALFORMED_IDS: &[&str] = &[
    "question-Bad",
    "Question-upper",
    "EXAMPLE-shout",
    "question_",
    "questionnaire",
    "question-",
    "question-a--b",
    "example--lead",
    "example-trail-",
    "question-with space",
    "examples-list",
];

const PROSE: &[&str] = &[
    "Some prose about clusters.",
    "",
    "# Heading",
    "- a list item",
    "    indented code line",
    "Inline `code` and <b>html</b>.",
    "<span id=\"note\"></span> a foreign span",
    "<span class=\"x\">styled</span>",
    "text with a quote \" in it",
];

fn slug(rng: &mut impl Rng) -> String {
    if rng.gen_ratio(1, 40) {
        // Longer than the 100-character limit.
        return "a".repeat(101);
    }
    if rng.gen_ratio(1, 40) {
        return "b".repeat(100);
    }
    SLUGS.choose(rng).unwrap().to_string()
}

fn span(rng: &mut impl Rng) -> String {
    let kind = if rng.gen_bool(0.5) { "question" } else { "example" };
    match rng.gen_range(0..12) {
        0..=5 => format!("<span id=\"{kind}-{}\"></span>", slug(rng)),
        6 => format!("<span id=\"{kind}-{}\" \t></span>", slug(rng)),
        7 => format!("<span id=\"{}\"></span>", MALFORMED_IDS.choose(rng).unwrap()),
        8 => format!("<span id=\"{kind}-{}\">text</span>", slug(rng)),
        9 => format!("<span id=\"{kind}-{}\"/>", slug(rng)),
        10 => format!("<span id=\"{kind}-{}", slug(rng)),
        _ => format!("<span id=\"{kind}-{}\">", slug(rng)),
    }
}

fn fence_marker(rng: &mut impl Rng) -> String {
    let ch = if rng.gen_bool(0.7) { '`' } else { '~' };
    let len = rng.gen_range(3..6);
    let indent = " ".repeat(rng.gen_range(0..4));
    format!("{indent}{}", ch.to_string().repeat(len))
}

/// A document with up to `max_spans` span tags mixed with prose and fences.
pub fn document(rng: &mut impl Rng, max_spans: usize) -> String {
    let target = rng.gen_range(0..=max_spans);
    let mut lines: Vec<String> = Vec::new();
    let mut spans = 0;
    while spans < target || rng.gen_ratio(1, 4) {
        match rng.gen_range(0..10) {
            0..=3 if spans < max_spans => {
                let mut line = span(rng);
                spans += 1;
                if spans < max_spans && rng.gen_ratio(1, 5) {
                    line.push_str(" and ");
                    line.push_str(&span(rng));
                    spans += 1;
                }
                if rng.gen_ratio(1, 6) {
                    line = format!("Lead text {line}");
                }
                lines.push(line);
            }
            0..=6 => lines.push(PROSE.choose(rng).unwrap().to_string()),
            _ => {
                let open = fence_marker(rng);
                let info = match rng.gen_range(0..5) {
                    0 => "",
                    1 => "bash",
                    2 => " python extra",
                    3 => "with`tick",
                    _ => "rust",
                };
                lines.push(format!("{open}{info}"));
                for _ in 0..rng.gen_range(0..4) {
                    if spans < max_spans && rng.gen_ratio(1, 3) {
                        lines.push(span(rng));
                        spans += 1;
                    } else if rng.gen_ratio(1, 4) {
                        lines.push("   ".into());
                    } else {
                        lines.push("echo inside".into());
                    }
                }
                if rng.gen_ratio(1, 6) {
                    // Shorter or mismatched closers leave the fence open.
                    lines.push("``".into());
                }
                if !rng.gen_ratio(1, 8) {
                    let close = open.trim_start().to_string();
                    let extra = if rng.gen_bool(0.3) { close.chars().next().unwrap().to_string() } else { String::new() };
                    lines.push(format!("{close}{extra}"));
                }
            }
        }
    }
    let newline = if rng.gen_ratio(1, 10) { "\r\n" } else { "\n" };
    let mut doc = lines.join(newline);
    if rng.gen_bool(0.5) {
        doc.push_str(newline);
    }
    doc
}
