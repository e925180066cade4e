//! Evaluation: per-class mIoU, class-blind FB-mIoU, the situation-grouped
//! FB-mIoU-S ratio, and the improved/degraded/unchanged decomposition.
//!
//! Per-class IoU aggregates intersections and unions over all of a class's
//! episodes before dividing once (not a mean of per-episode IoUs). A ratio
//! whose union is zero (both sets empty) is 1.0, matching [`crate::mask::iou`].
//!
//! All accumulators are commutative monoids under `merge`, so partial sums
//! from worker threads can be combined in any grouping.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BinaryMask, MaskError, Overlap};
use crate::par::{self, Execution};
use crate::prs::SelectionSource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("class {0} has no evaluated episodes")]
    EmptyClass(u32),
    #[error("no episodes to evaluate")]
    EmptySet,
    #[error("total union is zero")]
    ZeroUnion,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Foreground and background intersection/union counts of one prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeCounts {
    pub fg_intersection: u64,
    pub fg_union: u64,
    pub bg_intersection: u64,
    pub bg_union: u64,
}

impl EpisodeCounts {
    pub fn fg(&self) -> Overlap {
        Overlap {
            intersection: self.fg_intersection,
            union: self.fg_union,
        }
    }

    pub fn bg(&self) -> Overlap {
        Overlap {
            intersection: self.bg_intersection,
            union: self.bg_union,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            fg_intersection: self.fg_intersection + other.fg_intersection,
            fg_union: self.fg_union + other.fg_union,
            bg_intersection: self.bg_intersection + other.bg_intersection,
            bg_union: self.bg_union + other.bg_union,
        }
    }

    /// Mean of the foreground and background IoU of these counts.
    pub fn fb_iou(&self) -> f64 {
        (self.fg().ratio() + self.bg().ratio()) / 2.0
    }
}

pub fn episode_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<EpisodeCounts, MaskError> {
    let fg = pred.overlap(gt)?;
    // De Morgan: |~p ∩ ~g| = N - |p ∪ g| and |~p ∪ ~g| = N - |p ∩ g|.
    let area = pred.area();
    Ok(EpisodeCounts {
        fg_intersection: fg.intersection,
        fg_union: fg.union,
        bg_intersection: area - fg.union,
        bg_union: area - fg.intersection,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassAccumulator {
    pub class_id: u32,
    pub intersection_sum: u64,
    pub union_sum: u64,
    pub episodes: u64,
}

impl ClassAccumulator {
    pub fn new(class_id: u32) -> Self {
        Self {
            class_id,
            intersection_sum: 0,
            union_sum: 0,
            episodes: 0,
        }
    }

    pub fn add(&mut self, fg: Overlap) {
        self.intersection_sum += fg.intersection;
        self.union_sum += fg.union;
        self.episodes += 1;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        debug_assert_eq!(self.class_id, other.class_id);
        self.intersection_sum += other.intersection_sum;
        self.union_sum += other.union_sum;
        self.episodes += other.episodes;
        self
    }

    pub fn iou(&self) -> f64 {
        Overlap {
            intersection: self.intersection_sum,
            union: self.union_sum,
        }
        .ratio()
    }
}

/// Mean over `fold_classes` of each class's aggregate IoU.
pub fn miou(
    accumulators: &BTreeMap<u32, ClassAccumulator>,
    fold_classes: &[u32],
) -> Result<f64, MetricsError> {
    if fold_classes.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut total = 0.0;
    for &class in fold_classes {
        match accumulators.get(&class) {
            Some(acc) if acc.episodes > 0 => total += acc.iou(),
            _ => return Err(MetricsError::EmptyClass(class)),
        }
    }
    Ok(total / fold_classes.len() as f64)
}

/// Class-blind `(IoU_fg + IoU_bg) / 2` over summed counts.
pub fn fb_miou(episodes: &[EpisodeCounts]) -> Result<f64, MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let total = episodes
        .iter()
        .fold(EpisodeCounts::default(), |acc, e| acc.merge(*e));
    Ok(total.fb_iou())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Situation {
    Improved,
    Degraded,
    Unchanged,
}

impl Situation {
    pub const ALL: [Situation; 3] = [Situation::Improved, Situation::Degraded, Situation::Unchanged];

    fn index(self) -> usize {
        match self {
            Situation::Improved => 0,
            Situation::Degraded => 1,
            Situation::Unchanged => 2,
        }
    }
}

/// Exact comparison of two IoU ratios by cross-multiplication.
pub fn compare_iou(a: Overlap, b: Overlap) -> Ordering {
    let norm = |o: Overlap| {
        if o.union == 0 {
            (1u128, 1u128)
        } else {
            (o.intersection as u128, o.union as u128)
        }
    };
    let ((ai, au), (bi, bu)) = (norm(a), norm(b));
    (ai * bu).cmp(&(bi * au))
}

/// Classifies one episode by whether the selection changed its accuracy.
///
/// Only an episode that took the boosted mask can improve or degrade; equal
/// IoUs count as unchanged.
pub fn situation_split(
    fss_vs_gt: Overlap,
    sam_vs_gt: Option<Overlap>,
    source: SelectionSource,
) -> Situation {
    match (source, sam_vs_gt) {
        (SelectionSource::Sam, Some(sam)) => match compare_iou(sam, fss_vs_gt) {
            Ordering::Greater => Situation::Improved,
            Ordering::Less => Situation::Degraded,
            Ordering::Equal => Situation::Unchanged,
        },
        _ => Situation::Unchanged,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSums {
    pub samples: u64,
    pub intersection: u64,
    pub union: u64,
}

/// Episode counts and foreground sums per situation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SituationTally {
    pub improved: GroupSums,
    pub degraded: GroupSums,
    pub unchanged: GroupSums,
}

impl SituationTally {
    fn groups(&self) -> [&GroupSums; 3] {
        [&self.improved, &self.degraded, &self.unchanged]
    }

    fn group_mut(&mut self, situation: Situation) -> &mut GroupSums {
        match situation.index() {
            0 => &mut self.improved,
            1 => &mut self.degraded,
            _ => &mut self.unchanged,
        }
    }

    pub fn group(&self, situation: Situation) -> &GroupSums {
        self.groups()[situation.index()]
    }

    /// Records one sample: its situation and the final mask's foreground
    /// overlap with the ground truth.
    pub fn add(&mut self, situation: Situation, final_vs_gt: Overlap) {
        let g = self.group_mut(situation);
        g.samples += 1;
        g.intersection += final_vs_gt.intersection;
        g.union += final_vs_gt.union;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for s in Situation::ALL {
            let o = *other.group(s);
            let g = self.group_mut(s);
            g.samples += o.samples;
            g.intersection += o.intersection;
            g.union += o.union;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.groups().iter().map(|g| g.samples).sum()
    }
}

/// Sum of intersections over sum of unions across all situation groups.
pub fn fb_miou_s(tally: &SituationTally) -> Result<f64, MetricsError> {
    let (i, u) = tally
        .groups()
        .iter()
        .fold((0u64, 0u64), |(i, u), g| (i + g.intersection, u + g.union));
    if u == 0 {
        return Err(MetricsError::ZeroUnion);
    }
    Ok(i as f64 / u as f64)
}

/// Per-class and class-blind sums for one set of predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetAccumulator {
    pub classes: BTreeMap<u32, ClassAccumulator>,
    pub totals: EpisodeCounts,
    pub episodes: u64,
}

impl DatasetAccumulator {
    pub fn add(&mut self, class_id: u32, counts: EpisodeCounts) {
        self.classes
            .entry(class_id)
            .or_insert_with(|| ClassAccumulator::new(class_id))
            .add(counts.fg());
        self.totals = self.totals.merge(counts);
        self.episodes += 1;
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (class, acc) in other.classes {
            self.classes
                .entry(class)
                .and_modify(|a| *a = a.merge(&acc))
                .or_insert(acc);
        }
        self.totals = self.totals.merge(other.totals);
        self.episodes += other.episodes;
        self
    }

    pub fn miou(&self, fold_classes: &[u32]) -> Result<f64, MetricsError> {
        miou(&self.classes, fold_classes)
    }

    pub fn fb_miou(&self) -> Result<f64, MetricsError> {
        if self.episodes == 0 {
            return Err(MetricsError::EmptySet);
        }
        Ok(self.totals.fb_iou())
    }
}

/// One prediction to score: its class, the predicted mask and the truth.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub class_id: u32,
    pub pred: &'a BinaryMask,
    pub gt: &'a BinaryMask,
}

pub fn accumulate(items: &[Scored<'_>]) -> Result<DatasetAccumulator, MetricsError> {
    accumulate_with(Execution::default(), items)
}

pub fn accumulate_with(
    exec: Execution,
    items: &[Scored<'_>],
) -> Result<DatasetAccumulator, MetricsError> {
    par::fold_merge(
        exec,
        items,
        || Ok(DatasetAccumulator::default()),
        |acc: Result<DatasetAccumulator, MetricsError>, item| {
            let mut acc = acc?;
            acc.add(item.class_id, episode_iou(item.pred, item.gt)?);
            Ok(acc)
        },
        |a, b| Ok(a?.merge(b?)),
    )
}
