use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use dashtalk_core::catalog::EntityCatalog;
use dashtalk_core::resolver::DEFAULT_THRESHOLD;
use dashtalk_core::vocab::GlobalVocabulary;
use dashtalk_eval::dataset::{load_dataset, to_jsonl};
use dashtalk_eval::report::AccuracyReport;
use dashtalk_eval::run::{
    load_script, oracle_replies, prompt_pack, run_eval, script_replies, write_replay, LlmMode,
    RunConfig, DEFAULT_CONCURRENCY,
};
use dashtalk_eval::stats::compare_runs;
use dashtalk_eval::synth::{generate_dataset, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "eval", about = "Score the extraction pipeline against a labelled query set")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn default_catalog() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/monitoring")
}

#[derive(Subcommand)]
enum Command {
    /// Run the parser over a dataset and write a report.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "replay")]
        mode: Mode,
        #[arg(long)]
        replay_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "on")]
        few_shot: Toggle,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_os_t = default_catalog())]
        catalog: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
        concurrency: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired significance test between two reports.
    Compare { a: PathBuf, b: PathBuf },
    /// Write the synthetic dataset.
    GenDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_os_t = default_catalog())]
        catalog: PathBuf,
    },
    /// Write a replay file: oracle replies for a dataset, or the replies of
    /// a script (`{query, widget_type_reply, extraction_reply}` per line).
    MakeReplay {
        #[arg(long, conflicts_with = "script", required_unless_present = "script")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "on")]
        few_shot: Toggle,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_report(path: &Path) -> anyhow::Result<AccuracyReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Run {
            dataset,
            mode,
            replay_file,
            few_shot,
            threshold,
            catalog,
            concurrency,
            out,
        } => {
            let config = RunConfig {
                dataset_path: dataset,
                mode: match mode {
                    Mode::Live => LlmMode::Live,
                    Mode::Replay => LlmMode::Replay,
                },
                replay_file,
                few_shot: matches!(few_shot, Toggle::On),
                threshold,
                catalog_dir: catalog,
                concurrency,
                output_path: out,
            };
            let report = run_eval(&config).await?;
            print!("{}", report.render_table());
        }
        Command::Compare { a, b } => {
            let c = compare_runs(&read_report(&a)?, &read_report(&b)?)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
        Command::GenDataset { out, seed, catalog } => {
            let catalog = EntityCatalog::from_fixture_dir(&catalog)?;
            let records = generate_dataset(seed, &GlobalVocabulary::embedded(), &catalog);
            std::fs::write(&out, to_jsonl(&records))?;
            let grouped = records.iter().filter(|r| r.grouping.is_some()).count();
            eprintln!("wrote {} records ({grouped} grouped) to {}", records.len(), out.display());
        }
        Command::MakeReplay {
            dataset,
            script,
            few_shot,
            out,
        } => {
            let pack = prompt_pack(matches!(few_shot, Toggle::On));
            let records = match (dataset, script) {
                (Some(d), _) => oracle_replies(&pack, &load_dataset(&d)?.records),
                (None, Some(s)) => script_replies(&pack, &load_script(&s)?),
                (None, None) => unreachable!("clap requires one of the two"),
            };
            write_replay(&out, &records)?;
            eprintln!("wrote {} replay records to {}", records.len(), out.display());
        }
    }
    Ok(())
}
