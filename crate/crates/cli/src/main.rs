//! `kforge`: run the knowledge server and perform operator tasks against
//! its store.
//!
//! Exit codes: 0 ok, 1 operation failed, 2 usage, 3 config or store,
//! 4 forge or mail backend.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kforge_core::config::{process_env, ConfigError, Services};
use kforge_core::{Error, ServerConfig, UserAccount};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "kforge", version, about = "Operate a forge-backed knowledge server")]
struct Cli {
    /// Config file (.toml or .json).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output style for reports.
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,

    /// Store location: `memory`, `file:PATH` or a path.
    #[arg(long, global = true)]
    store: Option<String>,

    #[arg(long, global = true)]
    site_name: Option<String>,

    #[arg(long, global = true)]
    base_url: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API and run background workers.
    Serve {
        /// Address to bind, e.g. 0.0.0.0:8080.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Write one article as a portable archive document.
    Export {
        term: String,
        /// Destination file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Load an archive document (`-` reads stdin).
    Import { file: PathBuf },
    /// Ask every active article, or the listed ones, to pull the template.
    UpdateTemplates {
        #[arg(long, value_delimiter = ',')]
        terms: Option<Vec<String>>,
    },
    /// Issue a fresh webhook secret for an article.
    RotateSecret { term: String },
    /// Print the effective configuration.
    Config,
}

enum Failure {
    Config(ConfigError),
    Op(Error),
    /// Some forge calls in a batch failed.
    Remote(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Op(Error::Store(_)) => 3,
            Failure::Op(Error::Forge(_) | Error::DispatchPending { .. } | Error::Notify(_)) | Failure::Remote(_) => 4,
            Failure::Op(_) | Failure::Io(_) => 1,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            Failure::Config(ConfigError::Store(_)) => "store_unreachable",
            Failure::Config(_) => "config_invalid",
            Failure::Op(e) => e.code(),
            Failure::Remote(_) => "forge_failed",
            Failure::Io(_) => "io",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(e) => e.to_string(),
            Failure::Op(e) => e.to_string(),
            Failure::Remote(m) | Failure::Io(m) => m.clone(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Op(e)
    }
}

fn load_config(cli: &Cli, listen: Option<&String>) -> Result<ServerConfig, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => ServerConfig::from_file(path)?,
        None => ServerConfig::default(),
    };
    config.apply_env(process_env)?;
    let flags = [
        (&mut config.store, &cli.store),
        (&mut config.site_name, &cli.site_name),
        (&mut config.base_url, &cli.base_url),
        (&mut config.listen, &listen.cloned()),
    ];
    for (target, flag) in flags {
        if let Some(value) = flag {
            target.clone_from(value);
        }
    }
    config.validate()?;
    Ok(config)
}

fn emit(format: Format, text: &str, value: Value) {
    match format {
        Format::Text => println!("{text}"),
        Format::Json => println!("{value}"),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let listen = match &cli.command {
        Command::Serve { listen } => listen.as_ref(),
        _ => None,
    };
    let config = load_config(cli, listen)?;
    if let Command::Config = cli.command {
        let text = toml::to_string_pretty(&config).map_err(|e| Failure::Io(e.to_string()))?;
        emit(cli.format, text.trim_end(), json!(config));
        return Ok(());
    }

    // The blocking forge client must be created outside any async runtime.
    let services = config.build(&process_env)?;
    let kb = &services.kb;
    let operator = UserAccount::operator();

    match &cli.command {
        Command::Serve { .. } => serve(&config, services),
        Command::Export { term, output } => {
            let doc = kb.export_article(term)?;
            let text = serde_json::to_string_pretty(&doc).expect("archive serializes");
            match output {
                None => println!("{text}"),
                Some(path) => {
                    std::fs::write(path, format!("{text}\n"))
                        .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
                    emit(
                        cli.format,
                        &format!("exported {term} to {}", path.display()),
                        json!({"term": term, "path": path}),
                    );
                }
            }
            Ok(())
        }
        Command::Import { file } => {
            let text = if file.as_os_str() == "-" {
                let mut buf = String::new();
                std::io::stdin()
                    .read_to_string(&mut buf)
                    .map_err(|e| Failure::Io(format!("cannot read stdin: {e}")))?;
                buf
            } else {
                std::fs::read_to_string(file).map_err(|e| Failure::Io(format!("cannot read {}: {e}", file.display())))?
            };
            let article = kb.import_article(&text)?;
            let status = if article.is_active() { "active" } else { "archived" };
            emit(
                cli.format,
                &format!(
                    "imported {} ({status}, {} questions, {} examples)",
                    article.term,
                    article.parsed.questions.len(),
                    article.parsed.examples.len()
                ),
                json!({
                    "term": article.term,
                    "status": status,
                    "content_hash": article.content_hash(),
                    "questions": article.parsed.questions.len(),
                    "examples": article.parsed.examples.len(),
                }),
            );
            Ok(())
        }
        Command::UpdateTemplates { terms } => {
            let report = kb.trigger_template_update(terms.as_deref(), &operator)?;
            let mut text = format!("dispatched {}", report.count());
            for (label, list) in [
                ("dispatched", &report.dispatched),
                ("queued", &report.queued),
                ("skipped (archived)", &report.skipped_archived),
            ] {
                if !list.is_empty() {
                    text.push_str(&format!("\n  {label}: {}", list.join(", ")));
                }
            }
            for (term, reason) in &report.failed {
                text.push_str(&format!("\n  failed: {term}: {reason}"));
            }
            emit(cli.format, &text, json!(report));
            if report.failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Remote(format!("{} template dispatches failed", report.failed.len())))
            }
        }
        Command::RotateSecret { term } => {
            kb.rotate_webhook_secret(term, &operator)?;
            emit(cli.format, &format!("rotated webhook secret for {term}"), json!({"term": term, "rotated": true}));
            Ok(())
        }
        Command::Config => unreachable!("handled before services are built"),
    }
}

fn serve(config: &ServerConfig, services: Services) -> Result<(), Failure> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Io(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .map_err(|e| Failure::Io(format!("cannot bind {}: {e}", config.listen)))?;
        let addr = listener.local_addr().map_err(|e| Failure::Io(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        kforge_core::server::serve(
            listener,
            services.kb,
            services.simulator,
            config.rate_limit_per_minute,
            async {
                let _ = tokio::signal::ctrl_c().await;
            },
        )
        .await
        .map_err(|e| Failure::Io(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match cli.format {
                Format::Text => eprintln!("error: {}", failure.message()),
                Format::Json => eprintln!("{}", json!({"error": failure.code(), "message": failure.message()})),
            }
            ExitCode::from(failure.exit_code())
        }
    }
}
