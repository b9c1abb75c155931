//! Subcommands of the `pegkit` binary.
//!
//! Exit status is 0 on success, 1 when a check fails (validation errors,
//! holes under `--strict`, a session that cannot be finalized) and 2 when
//! an input cannot be read.

use std::fs;
use std::io::{self, BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use pegkit::corpus::{corpus_stats, import_brat_dir, load_document, read_peg, read_peg_dir, write_peg, LabelMap};
use pegkit::evaluation::{decompose, relation_prf, smatch, SmatchOptions};
use pegkit::lowering::{emit_json, lower, LoweringError};
use pegkit::simulator::{replay_script, Session};
use pegkit::validator::{has_errors, lint, validate};
use serde_json::json;

use crate::service::{serve, AppState};

#[derive(Parser, Debug)]
#[command(name = "pegkit", version, about = "Annotate, check, score and lower process execution graphs")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Check a PEG file against the ontology and structural rules.
    Validate { peg: PathBuf },
    /// Report connected components and unattached mentions.
    Lint { peg: PathBuf },
    /// Compare a predicted PEG with a gold PEG.
    Score {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Add argument, predicate, core-role and re-entrancy agreement.
        #[arg(long)]
        decompose: bool,
        /// Add span-exact per-role relation scores.
        #[arg(long)]
        relations: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
    },
    /// Run an annotation session over a document, interactively or from a script.
    Simulate {
        /// A document file (or a PEG file, whose document is used).
        document: PathBuf,
        /// Replay this command log instead of reading commands from stdin.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Where to write the finalized PEG.
        #[arg(short, long, default_value = "out.peg.json")]
        output: PathBuf,
        /// Also write the accepted command log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compile a PEG to an instruction program.
    Lower {
        peg: PathBuf,
        /// Write the program here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Fail if the program has unresolved holes.
        #[arg(long)]
        strict: bool,
    },
    /// Corpus statistics over a directory of `*.peg.json` files.
    Stats { dir: PathBuf },
    /// Convert BRAT `.txt`/`.ann` pairs to document files.
    ImportBrat {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Label map (TSV) replacing the built-in one.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of `*.doc.json` / `*.peg.json` documents to annotate.
        #[arg(long, env = "PEGKIT_CORPUS")]
        corpus: PathBuf,
        /// Directory for append-only session logs; sessions are restored from it.
        #[arg(long, env = "PEGKIT_SESSIONS")]
        sessions: Option<PathBuf>,
    },
    /// Print the ontology (types, roles, legality rules) as JSON.
    ExportOntology,
}

/// Entry point shared by the binary and the tests.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn failed(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
}

pub fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let json = cli.json;
    match &cli.command {
        Cmd::Validate { peg } => {
            let g = read_peg(peg)?;
            let diags = validate(&g);
            if json {
                print_json(&json!({ "valid": !has_errors(&diags), "diagnostics": diags }));
            } else {
                for d in &diags {
                    println!("{d}");
                }
                if diags.is_empty() {
                    println!("{}: ok", peg.display());
                }
            }
            Ok(failed(!has_errors(&diags)))
        }
        Cmd::Lint { peg } => {
            let report = lint(&read_peg(peg)?);
            if json {
                print_json(&json!(report));
            } else {
                println!("components {}", report.component_count);
                println!("isolated mentions {}", report.isolated_mentions.join(" "));
                println!("score {}", report.score);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Score { gold, pred, decompose: dec, relations, seed, restarts } => {
            let (g, p) = (read_peg(gold)?, read_peg(pred)?);
            let opts = SmatchOptions { restarts: *restarts, seed: *seed, ..SmatchOptions::default() };
            if *dec || *relations {
                let mut report = decompose(&g, &p, opts);
                if *relations {
                    report.relations = Some(relation_prf(&g, &p)?);
                }
                if json {
                    print_json(&json!(report));
                } else {
                    print!("{}", report.to_table());
                    if let Some(r) = &report.relations {
                        print!("\n{}", r.to_table());
                    }
                }
            } else {
                let (prf, alignment) = smatch(&g, &p, opts);
                if json {
                    print_json(&json!({ "smatch": prf, "alignment": alignment }));
                } else {
                    println!("precision {:.4}\nrecall {:.4}\nf1 {:.4}", prf.precision, prf.recall, prf.f1);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate { document, script, output, log } => {
            let text = fs::read_to_string(document).with_context(|| document.display().to_string())?;
            let doc = load_document(&text).with_context(|| document.display().to_string())?;
            let session = match script {
                Some(path) => {
                    let script = fs::read_to_string(path).with_context(|| path.display().to_string())?;
                    match replay_script(doc, &script) {
                        Ok(s) => s,
                        Err(e) => {
                            eprintln!("{}: {e}", path.display());
                            return Ok(ExitCode::from(1));
                        }
                    }
                }
                None => repl(Session::new(doc), json)?,
            };
            if let Some(path) = log {
                fs::write(path, session.log_text()).with_context(|| path.display().to_string())?;
            }
            finish_session(&session, output, json)
        }
        Cmd::Lower { peg, output, strict } => {
            let program = match lower(&read_peg(peg)?) {
                Ok(p) => p,
                Err(LoweringError::Invalid(diags)) => {
                    for d in diags {
                        eprintln!("{d}");
                    }
                    return Ok(ExitCode::from(1));
                }
            };
            let bytes = emit_json(&program);
            match output {
                Some(path) => fs::write(path, &bytes).with_context(|| path.display().to_string())?,
                None => io::stdout().write_all(&bytes)?,
            }
            for h in &program.holes {
                eprintln!(
                    "hole: instruction {} parameter {} ({:?}{})",
                    h.instruction,
                    h.parameter,
                    h.reason,
                    h.source.as_deref().map(|s| format!(", from {s}")).unwrap_or_default()
                );
            }
            Ok(failed(!(*strict && !program.holes.is_empty())))
        }
        Cmd::Stats { dir } => {
            let graphs: Vec<_> = read_peg_dir(dir)?.into_iter().map(|(_, g)| g).collect();
            if graphs.is_empty() {
                bail!("no *.peg.json files in {}", dir.display());
            }
            let stats = corpus_stats(&graphs);
            if json {
                print_json(&json!(stats));
            } else {
                print!("{}", stats.to_table());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ImportBrat { dir, output, labels } => {
            let map = match labels {
                Some(path) => LabelMap::parse(&fs::read_to_string(path).with_context(|| path.display().to_string())?)?,
                None => LabelMap::default(),
            };
            let docs = import_brat_dir(dir, &map)?;
            fs::create_dir_all(output).with_context(|| output.display().to_string())?;
            let mut written = Vec::new();
            for doc in &docs {
                let path = output.join(format!("{}.doc.json", doc.document.id()));
                fs::write(&path, doc.to_json()).with_context(|| path.display().to_string())?;
                for w in &doc.warnings {
                    eprintln!("{}: {w}", doc.document.id());
                }
                written.push(path);
            }
            if json {
                print_json(&json!({ "written": written }));
            } else {
                for p in &written {
                    println!("{}", p.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve { port, corpus, sessions } => {
            let docs = AppState::load_corpus(corpus)?;
            eprintln!("{} document(s) from {}", docs.len(), corpus.display());
            let state = AppState::new(docs, sessions.clone())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, *port))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ExportOntology => {
            print_json(&json!(pegkit::ontology::export()));
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Reads commands from stdin until EOF or `quit`. A line starting with `?`
/// lists completions for the rest of the line.
fn repl(mut session: Session, json: bool) -> anyhow::Result<Session> {
    let stdin = io::stdin();
    for line in stdin.lock().lines() {
        let raw = line?;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "quit" || line == "exit" {
            break;
        }
        if let Some(prefix) = raw.trim_start().strip_prefix('?') {
            // Trailing whitespace is significant: it asks for the next word.
            for c in session.autocomplete(prefix.trim_start()) {
                println!("{c}");
            }
            continue;
        }
        match session.issue_line(line) {
            Ok(outcome) if json => print_json(&json!(outcome)),
            Ok(outcome) => {
                if let Some(out) = &outcome.output {
                    print!("{out}");
                }
                if let Some(l) = &outcome.lint {
                    println!("components {} isolated {}", l.component_count, l.isolated_mentions.len());
                }
                for d in &outcome.diagnostics {
                    println!("{d}");
                }
                if !outcome.accepted {
                    println!("rejected");
                }
            }
            Err(e) => println!("parse error: {e}"),
        }
    }
    Ok(session)
}

fn finish_session(session: &Session, output: &Path, json: bool) -> anyhow::Result<ExitCode> {
    match session.finalize() {
        Ok(done) => {
            write_peg(output, &done.graph)?;
            if json {
                print_json(&json!({ "output": output, "lint": done.lint, "commands": session.log().len() }));
            } else {
                println!("wrote {} ({} commands)", output.display(), session.log().len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("cannot finalize: {e}");
            Ok(ExitCode::from(1))
        }
    }
}
