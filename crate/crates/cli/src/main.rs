use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fss_sam::pipeline::{self, parse_folds, PartialConfig, RunConfig, RunReport};
use fss_sam::prompt::PromptMode;
use fss_sam::prs::Threshold;

#[derive(Parser)]
#[command(name = "fss-sam", version, about = "Boost few-shot segmentation masks with a promptable segmenter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive prompts from the FSS masks and write prompts.jsonl.
    GenPrompts(RunArgs),
    /// Prompts, segmenter, selection and evaluation at one threshold.
    Run(RunArgs),
    /// Evaluate several thresholds against one set of segmenter outputs.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = pipeline::SWEEP_GRID.to_vec())]
        thresholds: Vec<f64>,
    },
    /// Run once per prompt mode (point, box, mixed) and compare.
    AblatePrompts(RunArgs),
    /// Check class ids and referenced files of a dataset manifest.
    ValidateManifest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Sample (or import) episodes and write them as JSON lines.
    SampleEpisodes {
        #[command(flatten)]
        run: RunArgs,
        /// Destination file; defaults to <out>/episodes.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Fold index, comma list, or `all`.
    #[arg(long, value_parser = parse_fold_list)]
    fold: Option<FoldList>,
    #[arg(long)]
    shots: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of episodes to sample per fold (default 1000).
    #[arg(long)]
    num_episodes: Option<usize>,
    /// Import episodes from a JSON-lines file instead of sampling.
    #[arg(long)]
    episodes: Option<PathBuf>,
    #[arg(long)]
    fss_dir: Option<PathBuf>,
    /// remote:<url> | precomputed:<dir> | mock:{identity,gt,dilate:<r>}
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    prompt_mode: Option<PromptMode>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct FoldList(Vec<u8>);

fn parse_fold_list(text: &str) -> Result<FoldList, String> {
    parse_folds(text).map(FoldList)
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => PartialConfig::from_file(path)?,
            None => PartialConfig::default(),
        };
        let flags = PartialConfig {
            manifest: self.manifest,
            fold: self.fold.map(|f| f.0),
            shots: self.shots,
            seed: self.seed,
            num_episodes: self.num_episodes,
            episodes: self.episodes,
            fss_dir: self.fss_dir,
            backend: self.backend,
            prompt_mode: self.prompt_mode,
            threshold: self.threshold,
            parallelism: self.parallelism,
            out: self.out,
        };
        Ok(file.overlay(flags).resolve()?)
    }
}

fn print_run(report: &RunReport) {
    for f in &report.folds {
        println!(
            "fold {}: {} episodes  mIoU {:.4} -> {:.4}  FB-mIoU {:.4} -> {:.4}  FB-mIoU-S {}",
            f.fold,
            f.episodes,
            f.base.miou,
            f.selected.miou,
            f.base.fb_miou,
            f.selected.fb_miou,
            f.fb_miou_s.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
        );
        println!(
            "  selected: SAM {}  FSS {}  | situations: improved {}  degraded {}  unchanged {}",
            f.sources.sam,
            f.sources.fss,
            f.situations.improved.samples,
            f.situations.degraded.samples,
            f.situations.unchanged.samples
        );
    }
    if let (Some(m), true) = (&report.mean, report.folds.len() > 1) {
        println!(
            "mean over folds: mIoU {:.4} -> {:.4}  FB-mIoU {:.4} -> {:.4}",
            m.base_miou, m.selected_miou, m.base_fb_miou, m.selected_fb_miou
        );
    }
    println!(
        "fallbacks: empty foreground {}  segmenter error {}",
        report.fallbacks.fallback_empty, report.fallbacks.fallback_error
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenPrompts(args) => {
            let cfg = args.resolve()?;
            let records = pipeline::gen_prompts(&cfg)?;
            let skipped = records.iter().filter(|r| r.skipped.is_some()).count();
            println!(
                "wrote {} prompt records ({skipped} skipped) to {}",
                records.len(),
                cfg.out_dir.join("prompts.jsonl").display()
            );
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let report = pipeline::run(&cfg)?;
            print_run(&report);
            println!("reports written to {}", cfg.out_dir.display());
        }
        Command::Sweep { run, thresholds } => {
            let cfg = run.resolve()?;
            let grid = thresholds
                .into_iter()
                .map(Threshold::new)
                .collect::<Result<Vec<_>, _>>()?;
            let report = pipeline::sweep(&cfg, &grid)?;
            print!("{}", pipeline::sweep_csv(&report));
        }
        Command::AblatePrompts(args) => {
            let cfg = args.resolve()?;
            let report = pipeline::ablate_prompts(&cfg)?;
            print!("{}", pipeline::ablation_csv(&report));
        }
        Command::ValidateManifest { manifest } => {
            let summary = pipeline::validate_manifest(&manifest)?;
            println!("{} entries, {} classes", summary.entries, summary.entries_per_class.len());
            for (class, n) in &summary.entries_per_class {
                println!("  class {class}: {n}");
            }
        }
        Command::SampleEpisodes { run, output } => {
            let cfg = run.resolve()?;
            let path = output.unwrap_or_else(|| cfg.out_dir.join("episodes.jsonl"));
            let n = pipeline::export_episodes(&cfg, &path)
                .with_context(|| format!("exporting episodes to {}", path.display()))?;
            println!("wrote {n} episodes to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
