//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use kforge_core::server::work_once;
use kforge_core::{ForgeSimulator, KnowledgeBase, ServerConfig, UserAccount};

/// A well-formed article with `sections` questions and as many examples.
pub fn article(term: &str, sections: usize) -> String {
    let mut doc = format!("# {term}\n\nAn overview of {term} for cluster users.\n");
    for i in 0..sections {
        doc.push_str(&format!(
            "\n<span id=\"question-how-does-{term}-step-{i}-work\"></span>\n## How does {term} step {i} work?\n\n\
             Step {i} loads modules and submits a batch job.\n\
             \n<span id=\"example-{term}-run-{i}\"></span>\n```bash\nmodule load {term}\nsbatch job-{i}.sh\n```\n"
        ));
    }
    doc
}

/// A knowledge base on the in-memory simulator with `terms` synced articles.
pub fn populated(terms: usize, sections: usize) -> (Arc<KnowledgeBase>, Arc<ForgeSimulator>) {
    let services = ServerConfig {
        repo_owner: Some("bench-org".into()),
        ..ServerConfig::default()
    }
    .build(&|_| None)
    .expect("default config builds");
    let sim = services.simulator.expect("simulator backend");
    let kb = services.kb;
    let operator = UserAccount::operator();
    for t in 0..terms {
        let term = format!("term{t}");
        let created = kb.register_term(&term, &operator).expect("register");
        sim.push_content(&created.repo, &article(&term, sections)).expect("push");
    }
    while work_once(&kb, Some(&sim)).expect("worker") > 0 {}
    (kb, sim)
}
