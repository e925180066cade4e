use std::fmt::Write as _;

use serde::Serialize;

use crate::metrics::{ClassAccumulator, DatasetAccumulator, EpisodeCounts, MetricsError, SituationTally};
use crate::prompt::PromptMode;
use crate::prs::{Selection, SelectionSource, Threshold};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class_id: u32,
    pub episodes: u64,
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

impl From<&ClassAccumulator> for ClassRow {
    fn from(acc: &ClassAccumulator) -> Self {
        Self {
            class_id: acc.class_id,
            episodes: acc.episodes,
            intersection: acc.intersection_sum,
            union: acc.union_sum,
            iou: acc.iou(),
        }
    }
}

/// Scores of one set of predictions against the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSet {
    pub miou: f64,
    pub fb_miou: f64,
    pub fg_iou: f64,
    pub bg_iou: f64,
    pub totals: EpisodeCounts,
    pub per_class: Vec<ClassRow>,
}

impl MetricSet {
    pub fn from_accumulator(acc: &DatasetAccumulator, classes: &[u32]) -> Result<Self, MetricsError> {
        Ok(Self {
            miou: acc.miou(classes)?,
            fb_miou: acc.fb_miou()?,
            fg_iou: acc.totals.fg().ratio(),
            bg_iou: acc.totals.bg().ratio(),
            totals: acc.totals,
            per_class: classes
                .iter()
                .filter_map(|c| acc.classes.get(c))
                .map(ClassRow::from)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SourceCounts {
    pub sam: u64,
    pub fss: u64,
    pub fallback_empty: u64,
    pub fallback_error: u64,
}

impl SourceCounts {
    pub fn tally(selections: &[Selection]) -> Self {
        let mut c = Self::default();
        for s in selections {
            match s.source {
                SelectionSource::Sam => c.sam += 1,
                SelectionSource::Fss => c.fss += 1,
                SelectionSource::FssFallbackEmpty => c.fallback_empty += 1,
                SelectionSource::FssFallbackError => c.fallback_error += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.sam + self.fss + self.fallback_empty + self.fallback_error
    }
}

/// Everything measured for one fold at one threshold and prompt mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldEvaluation {
    pub fold: u8,
    pub threshold: Threshold,
    pub prompt_mode: PromptMode,
    pub episodes: usize,
    pub classes: Vec<u32>,
    /// The FSS predictions as given.
    pub base: MetricSet,
    /// The selected predictions.
    pub selected: MetricSet,
    /// Boosted masks wherever one exists, no selection.
    pub without_selection: MetricSet,
    /// Sum of final-mask intersections over sum of unions across situations;
    /// `None` when every union is zero.
    pub fb_miou_s: Option<f64>,
    /// Situations after selection.
    pub situations: SituationTally,
    /// Situations if every available boosted mask had been taken.
    pub situations_without_selection: SituationTally,
    pub sources: SourceCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMean {
    pub base_miou: f64,
    pub selected_miou: f64,
    pub base_fb_miou: f64,
    pub selected_fb_miou: f64,
    pub fb_miou_s: Option<f64>,
}

impl FoldMean {
    pub fn of(folds: &[&FoldEvaluation]) -> Option<Self> {
        if folds.is_empty() {
            return None;
        }
        let n = folds.len() as f64;
        let mean = |f: &dyn Fn(&FoldEvaluation) -> f64| folds.iter().map(|e| f(e)).sum::<f64>() / n;
        let fb_s: Option<Vec<f64>> = folds.iter().map(|e| e.fb_miou_s).collect();
        Some(Self {
            base_miou: mean(&|e| e.base.miou),
            selected_miou: mean(&|e| e.selected.miou),
            base_fb_miou: mean(&|e| e.base.fb_miou),
            selected_fb_miou: mean(&|e| e.selected.fb_miou),
            fb_miou_s: fb_s.map(|v| v.iter().sum::<f64>() / n),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentFailure {
    pub fold: u8,
    pub episode_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub backend: String,
    pub prompt_mode: PromptMode,
    pub threshold: Threshold,
    pub folds: Vec<FoldEvaluation>,
    /// Per-fold values averaged over folds.
    pub mean: Option<FoldMean>,
    pub fallbacks: SourceCounts,
    pub failures: Vec<SegmentFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub backend: String,
    pub prompt_mode: PromptMode,
    pub thresholds: Vec<Threshold>,
    /// One entry per threshold, folds inside.
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SegmentFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: Threshold,
    pub folds: Vec<FoldEvaluation>,
    pub mean: Option<FoldMean>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub backend: String,
    pub threshold: Threshold,
    pub rows: Vec<AblationRow>,
    pub failures: Vec<SegmentFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub prompt_mode: PromptMode,
    pub folds: Vec<FoldEvaluation>,
    pub mean: Option<FoldMean>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `fold,metric,base,selected,without_selection`, one row per fold and metric.
pub fn run_csv(report: &RunReport) -> String {
    let mut out = String::from("fold,metric,base,selected,without_selection\n");
    for e in &report.folds {
        let f = e.fold;
        let mut row = |metric: &str, base: String, sel: String, raw: String| {
            let _ = writeln!(out, "{f},{metric},{base},{sel},{raw}");
        };
        for (name, pick) in [
            ("miou", (|m: &MetricSet| m.miou) as fn(&MetricSet) -> f64),
            ("fb_miou", |m| m.fb_miou),
            ("fg_iou", |m| m.fg_iou),
            ("bg_iou", |m| m.bg_iou),
        ] {
            row(
                name,
                pick(&e.base).to_string(),
                pick(&e.selected).to_string(),
                pick(&e.without_selection).to_string(),
            );
        }
        row("fb_miou_s", String::new(), opt(e.fb_miou_s), String::new());
        let counts = [
            ("sam_selected", e.sources.sam),
            ("fss_selected", e.sources.fss),
            ("fallback_empty", e.sources.fallback_empty),
            ("fallback_error", e.sources.fallback_error),
            ("improved", e.situations.improved.samples),
            ("degraded", e.situations.degraded.samples),
            ("unchanged", e.situations.unchanged.samples),
        ];
        for (name, v) in counts {
            row(name, String::new(), v.to_string(), String::new());
        }
    }
    if let (Some(m), true) = (&report.mean, report.folds.len() > 1) {
        let _ = writeln!(out, "mean,miou,{},{},", m.base_miou, m.selected_miou);
        let _ = writeln!(out, "mean,fb_miou,{},{},", m.base_fb_miou, m.selected_fb_miou);
        let _ = writeln!(out, "mean,fb_miou_s,,{},", opt(m.fb_miou_s));
    }
    out
}

const ROW_HEADER: &str = "miou,fb_miou,fb_miou_s,sam_selected,improved,degraded,unchanged,base_miou,base_fb_miou";

fn row_values(e: &FoldEvaluation) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        e.selected.miou,
        e.selected.fb_miou,
        opt(e.fb_miou_s),
        e.sources.sam,
        e.situations.improved.samples,
        e.situations.degraded.samples,
        e.situations.unchanged.samples,
        e.base.miou,
        e.base.fb_miou
    )
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = format!("fold,threshold,{ROW_HEADER}\n");
    for row in &report.rows {
        for e in &row.folds {
            let _ = writeln!(out, "{},{},{}", e.fold, row.threshold, row_values(e));
        }
    }
    out
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = format!("fold,prompt_mode,{ROW_HEADER}\n");
    for row in &report.rows {
        for e in &row.folds {
            let _ = writeln!(out, "{},{},{}", e.fold, row.prompt_mode, row_values(e));
        }
    }
    out
}
