//! End-to-end orchestration: load episodes and masks, derive prompts, call
//! the segmenter, select per episode, score, and write reports.
//!
//! Output files (under the configured output directory):
//! `prompts.jsonl`, `selections.jsonl`, `report.json`, `report.csv`, and for
//! the sweep and ablation commands `sweep.{json,csv}` / `ablation.{json,csv}`.

mod config;
mod report;

pub use config::{parse_folds, ConfigError, EpisodeSource, PartialConfig, RunConfig};
pub use report::{
    ablation_csv, run_csv, sweep_csv, AblationReport, AblationRow, ClassRow, FoldEvaluation,
    FoldMean, MetricSet, RunReport, SegmentFailure, SourceCounts, SweepReport, SweepRow,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::{
    fold_classes, read_episodes, resolve_ref, sample_episodes, write_episodes, DatasetManifest,
    Episode, ManifestSummary,
};
use crate::mask::{read_mask_file, BinaryMask, MaskIoError};
use crate::metrics::{self, situation_split, DatasetAccumulator, Scored, SituationTally};
use crate::par::{self, Execution};
use crate::prompt::{generate_prompts, PromptError, PromptMode, PromptSet};
use crate::prs::{select_batch, SamCandidate, Selection, SelectionSource, Threshold};
use crate::segmenter::{
    segment_batch, BackendSpec, ImageSource, MockSegmenter, PrecomputedSegmenter,
    RemoteSegmenter, SegmentRequest, Segmenter,
};

/// Thresholds evaluated by the sweep when none are given.
pub const SWEEP_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    GenPrompts,
    Segment,
    Select,
    Metrics,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::GenPrompts => "gen-prompts",
            Stage::Segment => "segment",
            Stage::Select => "select",
            Stage::Metrics => "metrics",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{stage}] {message}")]
    Stage { stage: Stage, message: String },
    #[error("[gen-prompts] missing FSS mask for episode {episode_id}: {}", .path.display())]
    MissingMask { episode_id: String, path: PathBuf },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::MissingMask { .. } => Some(Stage::GenPrompts),
            PipelineError::Config(_) => None,
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

/// An episode with its masks in memory.
#[derive(Debug, Clone)]
pub struct LoadedEpisode {
    pub episode: Episode,
    pub image_path: PathBuf,
    pub gt: BinaryMask,
    pub fss: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct FoldData {
    pub fold: u8,
    pub classes: Vec<u32>,
    pub episodes: Vec<LoadedEpisode>,
}

/// One line of `prompts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub episode_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PromptSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

pub const SKIP_EMPTY_FOREGROUND: &str = "empty_foreground";

pub fn validate_manifest(path: &Path) -> Result<ManifestSummary, PipelineError> {
    let manifest = DatasetManifest::load(path).map_err(|e| stage_err(Stage::Load)(&e))?;
    manifest
        .validate(path.parent().unwrap_or(Path::new(".")))
        .map_err(|e| stage_err(Stage::Load)(&e))
}

/// Resolves the episode list for each configured fold.
pub fn episodes_for(config: &RunConfig) -> Result<BTreeMap<u8, Vec<Episode>>, PipelineError> {
    let load = stage_err(Stage::Load);
    let manifest = DatasetManifest::load(&config.manifest).map_err(|e| load(&e))?;
    let imported = match &config.episodes {
        EpisodeSource::Import(path) => {
            let file = File::open(path).map_err(|e| load(&format!("{}: {e}", path.display())))?;
            Some(read_episodes(BufReader::new(file)).map_err(|e| load(&e))?)
        }
        EpisodeSource::Sample { .. } => None,
    };
    let mut out = BTreeMap::new();
    for &fold in &config.folds {
        let classes = fold_classes(&manifest, fold).map_err(|e| load(&e))?;
        let episodes = match (&imported, &config.episodes) {
            (Some(all), _) => all.iter().filter(|e| e.fold == fold).cloned().collect(),
            (None, EpisodeSource::Sample { seed, count }) => {
                sample_episodes(&manifest, fold, *count, config.shots, *seed).map_err(|e| load(&e))?
            }
            (None, EpisodeSource::Import(_)) => unreachable!(),
        };
        for e in &episodes {
            e.check(&classes).map_err(|m| load(&m))?;
        }
        out.insert(fold, episodes);
    }
    Ok(out)
}

/// Writes the resolved episode list as JSON lines.
pub fn export_episodes(config: &RunConfig, path: &Path) -> Result<usize, PipelineError> {
    let all: Vec<Episode> = episodes_for(config)?.into_values().flatten().collect();
    write_file(path, |w| write_episodes(w, &all))?;
    Ok(all.len())
}

fn read_fss(config: &RunConfig, e: &Episode) -> Result<BinaryMask, PipelineError> {
    let path = resolve_ref(&config.fss_dir, &e.fss_mask_ref);
    read_mask_file(&path).map_err(|err| match err {
        MaskIoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            PipelineError::MissingMask {
                episode_id: e.id.clone(),
                path,
            }
        }
        other => stage_err(Stage::GenPrompts)(&format!("{}: {other}", e.id)),
    })
}

/// Loads ground truth and FSS masks for every episode of every fold.
pub fn load(config: &RunConfig) -> Result<Vec<FoldData>, PipelineError> {
    let manifest = DatasetManifest::load(&config.manifest).map_err(|e| stage_err(Stage::Load)(&e))?;
    let base = config.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut folds = Vec::new();
    for (fold, episodes) in episodes_for(config)? {
        let loaded = par::map(Execution::Parallel, &episodes, |e| {
            let gt_path = resolve_ref(&base, &e.query.gt_mask_ref);
            let gt = read_mask_file(&gt_path)
                .map_err(|err| stage_err(Stage::Load)(&format!("{}: {err}", e.id)))?;
            let fss = read_fss(config, e)?;
            if fss.dims() != gt.dims() {
                return Err(stage_err(Stage::Load)(&format!(
                    "{}: FSS mask is {}x{}, ground truth {}x{}",
                    e.id,
                    fss.width(),
                    fss.height(),
                    gt.width(),
                    gt.height()
                )));
            }
            Ok(LoadedEpisode {
                image_path: resolve_ref(&base, &e.query.image_ref),
                episode: e.clone(),
                gt,
                fss,
            })
        });
        let episodes = loaded.into_iter().collect::<Result<Vec<_>, _>>()?;
        folds.push(FoldData {
            fold,
            classes: fold_classes(&manifest, fold).map_err(|e| stage_err(Stage::Load)(&e))?,
            episodes,
        });
    }
    Ok(folds)
}

/// Prompts per episode; `None` marks an empty FSS foreground.
pub fn prompts_for(episodes: &[LoadedEpisode], mode: PromptMode) -> Vec<Option<PromptSet>> {
    par::map(Execution::Parallel, episodes, |e| match generate_prompts(&e.fss, mode) {
        Ok(p) => Some(p),
        Err(PromptError::EmptyForeground) => None,
        Err(other) => unreachable!("prompt generation from a mask failed: {other}"),
    })
}

fn prompt_records(folds: &[FoldData], prompts: &[Vec<Option<PromptSet>>]) -> Vec<PromptRecord> {
    folds
        .iter()
        .zip(prompts)
        .flat_map(|(fold, ps)| {
            fold.episodes.iter().zip(ps).map(|(e, p)| PromptRecord {
                episode_id: e.episode.id.clone(),
                prompts: *p,
                skipped: p.is_none().then(|| SKIP_EMPTY_FOREGROUND.to_string()),
            })
        })
        .collect()
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), PipelineError> {
    let werr = |e: std::io::Error| stage_err(Stage::Write)(&format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(werr)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(werr)?);
    body(&mut w).and_then(|_| w.flush()).map_err(werr)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    write_file(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    write_file(path, |w| w.write_all(text.as_bytes()))
}

/// Writes `prompts.jsonl` for every episode and returns the records.
pub fn gen_prompts(config: &RunConfig) -> Result<Vec<PromptRecord>, PipelineError> {
    let folds = load(config)?;
    let prompts: Vec<_> = folds
        .iter()
        .map(|f| prompts_for(&f.episodes, config.prompt_mode))
        .collect();
    let records = prompt_records(&folds, &prompts);
    write_jsonl(&config.out_dir.join("prompts.jsonl"), &records)?;
    Ok(records)
}

fn build_backend(
    spec: &BackendSpec,
    mode: PromptMode,
    episodes: &[LoadedEpisode],
) -> Result<Box<dyn Segmenter>, PipelineError> {
    Ok(match spec {
        BackendSpec::Remote(url) => Box::new(RemoteSegmenter::new(url)),
        BackendSpec::Precomputed(dir) => Box::new(
            PrecomputedSegmenter::open_for_mode(dir, mode).map_err(|e| stage_err(Stage::Segment)(&e))?,
        ),
        BackendSpec::Mock(kind) => {
            let fixtures: HashMap<String, BinaryMask> = episodes
                .iter()
                .map(|e| {
                    let m = if kind.reads_ground_truth() { &e.gt } else { &e.fss };
                    (e.episode.id.clone(), m.clone())
                })
                .collect();
            Box::new(MockSegmenter::new(*kind, fixtures))
        }
    })
}

/// Queries the backend for every episode that has a prompt.
fn segment_fold(
    config: &RunConfig,
    fold: &FoldData,
    prompts: &[Option<PromptSet>],
    mode: PromptMode,
    failures: &mut Vec<SegmentFailure>,
) -> Result<Vec<SamCandidate>, PipelineError> {
    let backend = build_backend(&config.backend, mode, &fold.episodes)?;
    let mut slots = Vec::new();
    let mut requests = Vec::new();
    for (i, (e, p)) in fold.episodes.iter().zip(prompts).enumerate() {
        if let Some(prompts) = p {
            slots.push(i);
            requests.push(SegmentRequest {
                episode_id: e.episode.id.clone(),
                image: Some(ImageSource::Uri(e.image_path.display().to_string())),
                prompts: *prompts,
                expected_dims: Some(e.fss.dims()),
            });
        }
    }
    let responses = segment_batch(&requests, backend.as_ref(), config.parallelism);
    if !requests.is_empty() && responses.iter().all(|r| r.is_err()) {
        let first = responses[0].as_ref().err().map(|e| e.to_string()).unwrap_or_default();
        return Err(stage_err(Stage::Segment)(&format!(
            "all {} requests to {} failed; first error: {first}",
            requests.len(),
            backend.backend_id()
        )));
    }
    let mut out = vec![SamCandidate::SkippedEmpty; fold.episodes.len()];
    for (slot, response) in slots.into_iter().zip(responses) {
        out[slot] = match response {
            Ok(r) => SamCandidate::Mask(r.mask),
            Err(e) => {
                failures.push(SegmentFailure {
                    fold: fold.fold,
                    episode_id: fold.episodes[slot].episode.id.clone(),
                    error: e.to_string(),
                });
                SamCandidate::Failed
            }
        };
    }
    Ok(out)
}

fn select_fold(
    fold: &FoldData,
    sam: &[SamCandidate],
    threshold: Threshold,
) -> Result<Vec<Selection>, PipelineError> {
    let ids: Vec<String> = fold.episodes.iter().map(|e| e.episode.id.clone()).collect();
    let fss: Vec<BinaryMask> = fold.episodes.iter().map(|e| e.fss.clone()).collect();
    select_batch(&ids, &fss, sam, threshold).map_err(|e| stage_err(Stage::Select)(&e))
}

fn score_fold<'a>(
    fold: &'a FoldData,
    pick: impl Fn(usize) -> &'a BinaryMask,
) -> Result<DatasetAccumulator, PipelineError> {
    let items: Vec<Scored> = fold
        .episodes
        .iter()
        .enumerate()
        .map(|(i, e)| Scored {
            class_id: e.episode.class_id,
            pred: pick(i),
            gt: &e.gt,
        })
        .collect();
    metrics::accumulate(&items).map_err(|e| stage_err(Stage::Metrics)(&e))
}

/// Scores base, selected and unselected predictions of one fold.
pub fn evaluate_fold(
    fold: &FoldData,
    sam: &[SamCandidate],
    selections: &[Selection],
    mode: PromptMode,
    threshold: Threshold,
) -> Result<FoldEvaluation, PipelineError> {
    let merr = stage_err(Stage::Metrics);
    let observed: BTreeSet<u32> = fold.episodes.iter().map(|e| e.episode.class_id).collect();
    let classes: Vec<u32> = fold
        .classes
        .iter()
        .copied()
        .filter(|c| observed.contains(c))
        .collect();

    let sam_or_fss = |i: usize| match &sam[i] {
        SamCandidate::Mask(m) => m,
        _ => &fold.episodes[i].fss,
    };
    let base = score_fold(fold, |i| &fold.episodes[i].fss)?;
    let selected = score_fold(fold, |i| &selections[i].chosen)?;
    let unselected = score_fold(fold, sam_or_fss)?;

    let mut situations = SituationTally::default();
    let mut raw = SituationTally::default();
    for (i, e) in fold.episodes.iter().enumerate() {
        let fss_gt = e.fss.overlap(&e.gt).map_err(|e| merr(&e))?;
        let sam_gt = match &sam[i] {
            SamCandidate::Mask(m) => Some(m.overlap(&e.gt).map_err(|e| merr(&e))?),
            _ => None,
        };
        let chosen_gt = selections[i].chosen.overlap(&e.gt).map_err(|e| merr(&e))?;
        situations.add(situation_split(fss_gt, sam_gt, selections[i].source), chosen_gt);
        let raw_source = if sam_gt.is_some() {
            SelectionSource::Sam
        } else {
            selections[i].source
        };
        raw.add(situation_split(fss_gt, sam_gt, raw_source), sam_gt.unwrap_or(fss_gt));
    }

    let set = |acc: &DatasetAccumulator| MetricSet::from_accumulator(acc, &classes).map_err(|e| merr(&e));
    Ok(FoldEvaluation {
        fold: fold.fold,
        threshold,
        prompt_mode: mode,
        episodes: fold.episodes.len(),
        base: set(&base)?,
        selected: set(&selected)?,
        without_selection: set(&unselected)?,
        fb_miou_s: metrics::fb_miou_s(&situations).ok(),
        situations,
        situations_without_selection: raw,
        sources: report::SourceCounts::tally(selections),
        classes,
    })
}

fn mean_of(evals: &[FoldEvaluation]) -> Option<FoldMean> {
    FoldMean::of(&evals.iter().collect::<Vec<_>>())
}

/// Prompts, segmenter output and failures for every fold under one mode.
struct Segmented {
    prompts: Vec<Vec<Option<PromptSet>>>,
    sam: Vec<Vec<SamCandidate>>,
    failures: Vec<SegmentFailure>,
}

fn segment_all(config: &RunConfig, folds: &[FoldData], mode: PromptMode) -> Result<Segmented, PipelineError> {
    let mut failures = Vec::new();
    let prompts: Vec<_> = folds.iter().map(|f| prompts_for(&f.episodes, mode)).collect();
    let sam = folds
        .iter()
        .zip(&prompts)
        .map(|(f, p)| segment_fold(config, f, p, mode, &mut failures))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Segmented {
        prompts,
        sam,
        failures,
    })
}

/// The full pipeline at the configured threshold and prompt mode.
pub fn run(config: &RunConfig) -> Result<RunReport, PipelineError> {
    let folds = load(config)?;
    run_loaded(config, &folds)
}

pub fn run_loaded(config: &RunConfig, folds: &[FoldData]) -> Result<RunReport, PipelineError> {
    let mode = config.prompt_mode;
    let seg = segment_all(config, folds, mode)?;
    write_jsonl(&config.out_dir.join("prompts.jsonl"), &prompt_records(folds, &seg.prompts))?;

    let mut evals = Vec::new();
    let mut audit = Vec::new();
    for (fold, sam) in folds.iter().zip(&seg.sam) {
        let selections = select_fold(fold, sam, config.threshold)?;
        audit.extend(selections.iter().map(Selection::record));
        evals.push(evaluate_fold(fold, sam, &selections, mode, config.threshold)?);
    }
    let mut fallbacks = SourceCounts::default();
    for e in &evals {
        fallbacks.fallback_empty += e.sources.fallback_empty;
        fallbacks.fallback_error += e.sources.fallback_error;
    }
    let report = RunReport {
        backend: config.backend.to_string(),
        prompt_mode: mode,
        threshold: config.threshold,
        mean: mean_of(&evals),
        folds: evals,
        fallbacks,
        failures: seg.failures,
    };
    write_jsonl(&config.out_dir.join("selections.jsonl"), &audit)?;
    write_json(&config.out_dir.join("report.json"), &report)?;
    write_text(&config.out_dir.join("report.csv"), &run_csv(&report))?;
    Ok(report)
}

/// Evaluates every threshold against one set of segmenter outputs.
pub fn sweep(config: &RunConfig, thresholds: &[Threshold]) -> Result<SweepReport, PipelineError> {
    let folds = load(config)?;
    sweep_loaded(config, &folds, thresholds)
}

pub fn sweep_loaded(
    config: &RunConfig,
    folds: &[FoldData],
    thresholds: &[Threshold],
) -> Result<SweepReport, PipelineError> {
    let mode = config.prompt_mode;
    let seg = segment_all(config, folds, mode)?;
    let mut rows = Vec::new();
    for &t in thresholds {
        let mut evals = Vec::new();
        for (fold, sam) in folds.iter().zip(&seg.sam) {
            let selections = select_fold(fold, sam, t)?;
            evals.push(evaluate_fold(fold, sam, &selections, mode, t)?);
        }
        rows.push(SweepRow {
            threshold: t,
            mean: mean_of(&evals),
            folds: evals,
        });
    }
    let report = SweepReport {
        backend: config.backend.to_string(),
        prompt_mode: mode,
        thresholds: thresholds.to_vec(),
        rows,
        failures: seg.failures,
    };
    write_json(&config.out_dir.join("sweep.json"), &report)?;
    write_text(&config.out_dir.join("sweep.csv"), &sweep_csv(&report))?;
    Ok(report)
}

/// Runs the pipeline once per prompt mode at the configured threshold.
pub fn ablate_prompts(config: &RunConfig) -> Result<AblationReport, PipelineError> {
    let folds = load(config)?;
    ablate_loaded(config, &folds)
}

pub fn ablate_loaded(config: &RunConfig, folds: &[FoldData]) -> Result<AblationReport, PipelineError> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for mode in PromptMode::ALL {
        let seg = segment_all(config, folds, mode)?;
        let mut evals = Vec::new();
        for (fold, sam) in folds.iter().zip(&seg.sam) {
            let selections = select_fold(fold, sam, config.threshold)?;
            evals.push(evaluate_fold(fold, sam, &selections, mode, config.threshold)?);
        }
        failures.extend(seg.failures);
        rows.push(AblationRow {
            prompt_mode: mode,
            mean: mean_of(&evals),
            folds: evals,
        });
    }
    let report = AblationReport {
        backend: config.backend.to_string(),
        threshold: config.threshold,
        rows,
        failures,
    };
    write_json(&config.out_dir.join("ablation.json"), &report)?;
    write_text(&config.out_dir.join("ablation.csv"), &ablation_csv(&report))?;
    Ok(report)
}

/// The default sweep grid.
pub fn default_grid() -> Vec<Threshold> {
    SWEEP_GRID
        .iter()
        .map(|&t| Threshold::new(t).expect("grid values lie in [0, 1]"))
        .collect()
}
