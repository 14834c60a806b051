use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use texstruct::classify::ObjectKind;
use texstruct::cli::{self, RunConfig, Selector};
use texstruct::taskgen::ContextSize;

/// Parses scientific-paper LaTeX sources into structured JSONL documents and
/// derives context-aware text-generation datasets.
#[derive(Parser)]
#[command(name = "texstruct", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory shared by all stages
    #[arg(long = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse every paper under the input root into corpus.jsonl
    Parse {
        /// Directory of paper directories (or bare .tex files)
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Alias table file (pattern kind per line)
        #[arg(long)]
        aliases: Option<PathBuf>,
        /// Worker threads
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Resolve bibliography entries against a metadata database
    Link {
        #[command(flatten)]
        common: CommonArgs,
        /// JSONL metadata database: {"id","title","authors"} per line
        #[arg(long)]
        db: PathBuf,
        /// Normalized title-distance threshold in (0,1)
        #[arg(long, default_value_t = 0.15)]
        threshold: f64,
    },
    /// Print corpus statistics
    Stats {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Derive description and paragraph datasets
    Derive {
        #[command(flatten)]
        common: CommonArgs,
        /// Object kind: table, figure, algorithm, theorem, or all
        #[arg(long, default_value = "all")]
        kind: String,
        /// Context window: a sentence count or "inf"
        #[arg(long, default_value = "20")]
        context: ContextSize,
        /// Context selector: all, rand, or dist
        #[arg(long, default_value = "all")]
        selector: Selector,
        /// Seed for the rand selector
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Figure chart/bar label file (JSONL)
        #[arg(long = "figure-labels")]
        figure_labels: Option<PathBuf>,
    },
    /// Check output files against schemas and invariants
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Parse {
            input,
            common,
            aliases,
            workers,
        } => cli::cmd_parse(&RunConfig {
            input_root: input,
            output_root: common.out,
            alias_table_path: aliases,
            workers,
            ..RunConfig::default()
        }),
        Command::Link {
            common,
            db,
            threshold,
        } => cli::cmd_link(&RunConfig {
            output_root: common.out,
            db_path: Some(db),
            threshold,
            ..RunConfig::default()
        }),
        Command::Stats { common } => cli::cmd_stats(&RunConfig {
            output_root: common.out,
            ..RunConfig::default()
        }),
        Command::Derive {
            common,
            kind,
            context,
            selector,
            seed,
            figure_labels,
        } => {
            let kinds = match kind.as_str() {
                "all" => Vec::new(),
                name => match ObjectKind::from_name(name) {
                    Some(k) if texstruct::taskgen::DESCRIPTION_KINDS.contains(&k) => vec![k],
                    _ => {
                        eprintln!("error: --kind must be table, figure, algorithm, theorem, or all");
                        return ExitCode::from(cli::EXIT_CONFIG as u8);
                    }
                },
            };
            cli::cmd_derive(&RunConfig {
                output_root: common.out,
                context,
                selector,
                seed,
                figure_label_path: figure_labels,
                kinds,
                ..RunConfig::default()
            })
        }
        Command::Validate { common } => cli::cmd_validate(&RunConfig {
            output_root: common.out,
            ..RunConfig::default()
        }),
    };
    ExitCode::from(code as u8)
}
