use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ats_bias::audit::{
    self, emit_report, read_report, render_text, AuditConfig, BackendKind, LexiconOptions, Overrides, ReportFormat,
    RunEnv,
};
use ats_bias::lexicon::Lexicon;
use ats_bias::par::Execution;
use clap::{Args, Parser, Subcommand};

/// Gender-bias audits for language-model resume screening.
#[derive(Parser)]
#[command(name = "ats-bias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an audit and write its reports.
    Audit {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Build or query the bias lexicon.
    #[command(subcommand)]
    Lexicon(LexiconCommand),
    /// Fine-tuning dataset tools.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Completion fixture tools.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
    /// Report tools.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long)]
    cutoff: Option<f64>,
    /// Write reports here instead of the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score profiles on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum LexiconCommand {
    /// Merge word lists into a lexicon file.
    Build {
        /// Word-list files; the bundled lists when omitted.
        #[arg(long = "source")]
        sources: Vec<PathBuf>,
        /// File with one drop word per line, replacing the default list.
        #[arg(long)]
        drop_words: Option<PathBuf>,
        #[arg(long, default_value = "lexicon.json")]
        out: PathBuf,
    },
    /// Print lexicon statistics, or how words match.
    Inspect {
        words: Vec<String>,
        /// A lexicon file from `lexicon build`; the bundled lexicon otherwise.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value = "")]
        job: String,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build the dataset described by a config's [dataset] section.
    Build {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Run an audit against a live or simulated backend and save every
    /// completion for replay.
    Record {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Re-render a JSON report in other formats.
    Render {
        report: PathBuf,
        /// Formats to write; text to stdout when no --out is given.
        #[arg(long = "format", value_parser = parse_format)]
        formats: Vec<ReportFormat>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

type Fallible = Result<ExitCode, Box<dyn std::error::Error>>;

const WARNINGS: u8 = 1;

fn load_config(path: &Path, run: &RunArgs) -> Result<(AuditConfig, RunEnv), Box<dyn std::error::Error>> {
    let (mut cfg, base) = AuditConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: run.seed,
        backend: run.backend,
        cutoff: run.cutoff,
    });
    cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    let execution = if run.sequential { Execution::Sequential } else { Execution::Parallel };
    Ok((cfg, RunEnv::new(base).with_execution(execution)))
}

fn run_and_emit(cfg: &AuditConfig, env: &RunEnv, out: Option<&Path>) -> Fallible {
    let report = audit::run_audit(cfg, env)?;
    let dir = out.map_or_else(|| env.base_dir.join(&cfg.output_dir), Path::to_path_buf);
    for path in emit_report(&report, &dir, &cfg.formats)? {
        println!("{}", path.display());
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(if report.has_warnings() { ExitCode::from(WARNINGS) } else { ExitCode::SUCCESS })
}

fn audit_cmd(config: &Path, run: &RunArgs) -> Fallible {
    let (cfg, env) = load_config(config, run)?;
    run_and_emit(&cfg, &env, run.out.as_deref())
}

fn record_cmd(config: &Path, run: &RunArgs) -> Fallible {
    let (mut cfg, env) = load_config(config, run)?;
    if cfg.backend == BackendKind::Replay {
        return Err("fixtures record needs the live or simulate backend".into());
    }
    cfg.record = true;
    let code = run_and_emit(&cfg, &env, run.out.as_deref())?;
    println!("fixtures in {}", env.base_dir.join(&cfg.fixtures).display());
    Ok(code)
}

fn read_lines(path: &Path) -> Result<BTreeSet<String>, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn lexicon_cmd(cmd: &LexiconCommand) -> Fallible {
    match cmd {
        LexiconCommand::Build { sources, drop_words, out } => {
            let options = LexiconOptions {
                sources: sources.clone(),
                drop_words: drop_words.as_deref().map(read_lines).transpose()?,
                ..LexiconOptions::default()
            };
            let lex = audit::build_lexicon(&options, &RunEnv::new(""))?;
            fs::write(out, lex.to_json()).map_err(|e| format!("{}: {e}", out.display()))?;
            print_stats(&lex);
            println!("wrote {}", out.display());
        }
        LexiconCommand::Inspect { words, lexicon, job } => {
            let lex = match lexicon {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                    Lexicon::from_json(&text)?
                }
                None => audit::build_lexicon(&LexiconOptions::default(), &RunEnv::new(""))?,
            };
            if words.is_empty() {
                print_stats(&lex);
            }
            let matcher = if job.is_empty() { lex.unrestricted() } else { lex.matcher(job) };
            for w in words {
                match matcher.is_biased(w) {
                    Some(m) => println!(
                        "{w}: biased ({:?} match on {:?}, tag {}, sources {})",
                        m.rule,
                        m.entry.lemma,
                        m.entry.gender_tag,
                        m.entry.sources.iter().cloned().collect::<Vec<_>>().join(",")
                    ),
                    None => println!("{w}: not biased"),
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_stats(lex: &Lexicon) {
    let s = lex.stats();
    println!(
        "entries {}: female {}, male {}, unspecified {} (female:male {:.2})",
        s.total,
        s.female_tagged,
        s.male_tagged,
        s.unspecified,
        s.female_male_ratio()
    );
}

fn dataset_cmd(cmd: &DatasetCommand) -> Fallible {
    let DatasetCommand::Build { config, seed } = cmd;
    let run = RunArgs {
        seed: *seed,
        backend: None,
        cutoff: None,
        out: None,
        sequential: false,
    };
    let (cfg, env) = load_config(config, &run)?;
    let out = audit::build_dataset(&cfg, &env)?;
    println!(
        "{} records ({} annotation, {} value-added) in {}",
        out.meta.records,
        out.meta.annotation_records,
        out.meta.va_records,
        out.path.display()
    );
    let fmt = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    println!(
        "annotated mean score: in-role {}, out-of-role {}",
        fmt(out.sanity.in_role_mean),
        fmt(out.sanity.out_of_role_mean)
    );
    Ok(if out.sanity.holds { ExitCode::SUCCESS } else { ExitCode::from(WARNINGS) })
}

fn report_cmd(cmd: &ReportCommand) -> Fallible {
    let ReportCommand::Render { report, formats, out } = cmd;
    let r = read_report(report)?;
    match out {
        Some(dir) => {
            let formats: BTreeSet<ReportFormat> = if formats.is_empty() {
                ReportFormat::ALL.into_iter().collect()
            } else {
                formats.iter().copied().collect()
            };
            for path in emit_report(&r, dir, &formats)? {
                println!("{}", path.display());
            }
        }
        None => print!("{}", render_text(&r)),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Audit { config, run } => audit_cmd(config, run),
        Command::Lexicon(cmd) => lexicon_cmd(cmd),
        Command::Dataset(cmd) => dataset_cmd(cmd),
        Command::Fixtures(FixturesCommand::Record { config, run }) => record_cmd(config, run),
        Command::Report(cmd) => report_cmd(cmd),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
