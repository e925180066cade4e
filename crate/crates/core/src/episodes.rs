//! Dataset manifests, four-fold class splits and seeded episode sampling.
//!
//! Sampling draws from a ChaCha20 stream keyed by the little-endian seed
//! (remaining key bytes zero, stream 0). Uniform indices use rejection on
//! full 64-bit outputs, so a given `(manifest, fold, n, shots, seed)`
//! produces the same episode list on every platform.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FOLDS: u8 = 4;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("class count {0} is not divisible into {FOLDS} folds")]
    IndivisibleClassCount(u32),
    #[error("fold {0} out of range 0..{FOLDS}")]
    InvalidFold(u8),
    #[error("shot count must be at least 1")]
    InvalidShots,
    #[error("class {class} has {available} entries, need at least {needed}")]
    InsufficientSamples {
        class: u32,
        available: usize,
        needed: usize,
    },
    #[error("fold {0} has no entries to sample from")]
    NoEntries(u8),
    #[error("invalid manifest:\n  {}", .0.join("\n  "))]
    InvalidManifest(Vec<String>),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Pascal5i,
    Coco20i,
    Custom,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Pascal5i => "pascal5i",
            DatasetName::Coco20i => "coco20i",
            DatasetName::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitScheme {
    /// Fold `f` holds classes `f*n/4 + 1 ..= (f+1)*n/4`.
    Contiguous,
    /// Fold `f` holds classes `c` with `(c - 1) mod 4 == f`.
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_ref: String,
    pub gt_mask_ref: String,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: DatasetName,
    pub class_count: u32,
    /// Defaults to contiguous for PASCAL-5i and custom sets, interleaved for COCO-20i.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_scheme: Option<SplitScheme>,
    pub entries: Vec<ManifestEntry>,
}

/// Counts gathered while validating a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestSummary {
    pub entries: usize,
    pub entries_per_class: BTreeMap<u32, usize>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, EpisodeError> {
        let text = std::fs::read_to_string(path).map_err(|source| EpisodeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| EpisodeError::Json {
            context: path.display().to_string(),
            source,
        })
    }

    pub fn scheme(&self) -> SplitScheme {
        self.split_scheme.unwrap_or(match self.name {
            DatasetName::Coco20i => SplitScheme::Interleaved,
            DatasetName::Pascal5i | DatasetName::Custom => SplitScheme::Contiguous,
        })
    }

    /// Checks class ids and that every referenced file exists under `base`.
    pub fn validate(&self, base: &Path) -> Result<ManifestSummary, EpisodeError> {
        let mut problems = Vec::new();
        let expected = match self.name {
            DatasetName::Pascal5i => Some(20),
            DatasetName::Coco20i => Some(80),
            DatasetName::Custom => None,
        };
        if let Some(n) = expected.filter(|&n| n != self.class_count) {
            problems.push(format!(
                "{} has {n} classes, manifest declares {}",
                self.name.as_str(),
                self.class_count
            ));
        }
        let mut per_class = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.class_id == 0 || e.class_id > self.class_count {
                problems.push(format!(
                    "entry {i}: class_id {} outside 1..={}",
                    e.class_id, self.class_count
                ));
            }
            for r in [&e.image_ref, &e.gt_mask_ref] {
                if !resolve_ref(base, r).is_file() {
                    problems.push(format!("entry {i}: missing file {r}"));
                }
            }
            *per_class.entry(e.class_id).or_insert(0) += 1;
        }
        if problems.is_empty() {
            Ok(ManifestSummary {
                entries: self.entries.len(),
                entries_per_class: per_class,
            })
        } else {
            Err(EpisodeError::InvalidManifest(problems))
        }
    }
}

/// Resolves a manifest reference relative to the manifest's directory.
pub fn resolve_ref(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn fold_classes(manifest: &DatasetManifest, fold: u8) -> Result<Vec<u32>, EpisodeError> {
    split_classes(manifest.class_count, manifest.scheme(), fold)
}

pub fn split_classes(class_count: u32, scheme: SplitScheme, fold: u8) -> Result<Vec<u32>, EpisodeError> {
    if fold >= FOLDS {
        return Err(EpisodeError::InvalidFold(fold));
    }
    if class_count == 0 || !class_count.is_multiple_of(FOLDS as u32) {
        return Err(EpisodeError::IndivisibleClassCount(class_count));
    }
    let per_fold = class_count / FOLDS as u32;
    let fold = fold as u32;
    Ok(match scheme {
        SplitScheme::Contiguous => (fold * per_fold + 1..=(fold + 1) * per_fold).collect(),
        SplitScheme::Interleaved => (1..=class_count)
            .filter(|c| (c - 1) % FOLDS as u32 == fold)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryRef {
    pub image_ref: String,
    pub gt_mask_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SupportRef {
    pub image_ref: String,
    pub mask_ref: String,
}

/// One query with its K supports. Supports are carried for the upstream
/// FSS model only; nothing here reads them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub fold: u8,
    pub class_id: u32,
    pub shots: u32,
    pub query: QueryRef,
    pub supports: Vec<SupportRef>,
    /// Location of the FSS prediction, relative to the FSS mask directory.
    pub fss_mask_ref: String,
}

impl Episode {
    pub fn check(&self, fold_classes: &[u32]) -> Result<(), String> {
        if !fold_classes.contains(&self.class_id) {
            return Err(format!("{}: class {} not in fold {}", self.id, self.class_id, self.fold));
        }
        if self.supports.len() != self.shots as usize {
            return Err(format!(
                "{}: {} supports for {}-shot episode",
                self.id,
                self.supports.len(),
                self.shots
            ));
        }
        if self.supports.iter().any(|s| s.image_ref == self.query.image_ref) {
            return Err(format!("{}: query appears among its supports", self.id));
        }
        Ok(())
    }
}

/// Deterministic index source for sampling.
struct IndexStream(ChaCha20Rng);

impl IndexStream {
    fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self(ChaCha20Rng::from_seed(key))
    }

    /// Uniform in `0..n` by rejection on 64-bit draws.
    fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.0.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }
}

fn stem_of(reference: &str) -> String {
    let stem = Path::new(reference)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("query");
    stem.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect()
}

pub fn sample_episodes(
    manifest: &DatasetManifest,
    fold: u8,
    n: usize,
    shots: u32,
    seed: u64,
) -> Result<Vec<Episode>, EpisodeError> {
    let classes = fold_classes(manifest, fold)?;
    if shots == 0 {
        return Err(EpisodeError::InvalidShots);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut pool = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        if classes.contains(&e.class_id) {
            by_class.entry(e.class_id).or_default().push(i);
            pool.push(i);
        }
    }
    if pool.is_empty() {
        return Err(EpisodeError::NoEntries(fold));
    }
    let needed = shots as usize + 1;
    if let Some((&class, members)) = by_class.iter().find(|(_, m)| m.len() < needed) {
        return Err(EpisodeError::InsufficientSamples {
            class,
            available: members.len(),
            needed,
        });
    }

    let mut rng = IndexStream::new(seed);
    let mut episodes = Vec::with_capacity(n);
    for index in 0..n {
        let query_idx = pool[rng.below(pool.len())];
        let query = &manifest.entries[query_idx];
        let mut candidates: Vec<usize> = by_class[&query.class_id]
            .iter()
            .copied()
            .filter(|&i| i != query_idx)
            .collect();
        // Partial Fisher-Yates: the first `shots` slots become the supports.
        for slot in 0..shots as usize {
            let pick = slot + rng.below(candidates.len() - slot);
            candidates.swap(slot, pick);
        }
        let supports = candidates[..shots as usize]
            .iter()
            .map(|&i| SupportRef {
                image_ref: manifest.entries[i].image_ref.clone(),
                mask_ref: manifest.entries[i].gt_mask_ref.clone(),
            })
            .collect();
        let id = format!(
            "{}_f{fold}_c{}_{}_s{seed}_{index:04}",
            manifest.name.as_str(),
            query.class_id,
            stem_of(&query.image_ref)
        );
        episodes.push(Episode {
            fss_mask_ref: format!("{id}.png"),
            id,
            fold,
            class_id: query.class_id,
            shots,
            query: QueryRef {
                image_ref: query.image_ref.clone(),
                gt_mask_ref: query.gt_mask_ref.clone(),
            },
            supports,
        });
    }
    Ok(episodes)
}

pub fn write_episodes<W: Write>(mut out: W, episodes: &[Episode]) -> std::io::Result<()> {
    for e in episodes {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episodes<R: BufRead>(input: R) -> Result<Vec<Episode>, EpisodeError> {
    let mut episodes = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|source| EpisodeError::Io {
            path: PathBuf::from("<episodes>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|source| EpisodeError::Json {
            context: format!("episode line {}", n + 1),
            source,
        })?;
        episodes.push(e);
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(name: DatasetName, class_count: u32, per_class: &[(u32, usize)]) -> DatasetManifest {
        let entries = per_class
            .iter()
            .flat_map(|&(class_id, k)| {
                (0..k).map(move |i| ManifestEntry {
                    image_ref: format!("img/c{class_id}_{i}.jpg"),
                    gt_mask_ref: format!("gt/c{class_id}_{i}.png"),
                    class_id,
                })
            })
            .collect();
        DatasetManifest {
            name,
            class_count,
            split_scheme: None,
            entries,
        }
    }

    #[test]
    fn pascal_contiguous_folds() {
        let m = manifest(DatasetName::Pascal5i, 20, &[]);
        assert_eq!(fold_classes(&m, 0).unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(fold_classes(&m, 3).unwrap(), vec![16, 17, 18, 19, 20]);
    }

    #[test]
    fn coco_interleaved_folds() {
        let m = manifest(DatasetName::Coco20i, 80, &[]);
        let expected: Vec<u32> = (0..20).map(|k| 2 + 4 * k).collect();
        let got = fold_classes(&m, 1).unwrap();
        assert_eq!(got, expected);
        assert_eq!(got.last(), Some(&78));
    }

    #[test]
    fn folds_partition_classes_under_both_schemes() {
        for scheme in [SplitScheme::Contiguous, SplitScheme::Interleaved] {
            for n in [4, 20, 80, 12] {
                let mut all: Vec<u32> = (0..FOLDS)
                    .flat_map(|f| split_classes(n, scheme, f).unwrap())
                    .collect();
                all.sort_unstable();
                assert_eq!(all, (1..=n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn fold_errors() {
        assert!(matches!(
            split_classes(10, SplitScheme::Contiguous, 0),
            Err(EpisodeError::IndivisibleClassCount(10))
        ));
        assert!(matches!(
            split_classes(20, SplitScheme::Contiguous, 4),
            Err(EpisodeError::InvalidFold(4))
        ));
    }

    #[test]
    fn zero_episodes() {
        let m = manifest(DatasetName::Custom, 4, &[(1, 3)]);
        assert!(sample_episodes(&m, 0, 0, 1, 7).unwrap().is_empty());
    }

    #[test]
    fn tiny_manifest_supports_exclude_query() {
        let m = manifest(DatasetName::Custom, 4, &[(1, 3)]);
        let eps = sample_episodes(&m, 0, 4, 1, 7).unwrap();
        assert_eq!(eps.len(), 4);
        for e in &eps {
            assert_eq!(e.supports.len(), 1);
            assert_ne!(e.supports[0].image_ref, e.query.image_ref);
            e.check(&[1]).unwrap();
        }
    }

    #[test]
    fn same_seed_same_list() {
        let m = manifest(DatasetName::Pascal5i, 20, &[(1, 6), (2, 9), (3, 7), (4, 6), (5, 8)]);
        let a = sample_episodes(&m, 0, 50, 5, 123).unwrap();
        let b = sample_episodes(&m, 0, 50, 5, 123).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_episodes(&mut buf_a, &a).unwrap();
        write_episodes(&mut buf_b, &b).unwrap();
        assert_eq!(buf_a, buf_b);
        let c = sample_episodes(&m, 0, 50, 5, 124).unwrap();
        let differing = a.iter().zip(&c).filter(|(x, y)| x.query != y.query).count();
        assert!(differing > 10, "seeds 123 and 124 agree on {} of 50 queries", 50 - differing);
    }

    #[test]
    fn insufficient_samples() {
        let m = manifest(DatasetName::Custom, 4, &[(1, 5)]);
        assert!(matches!(
            sample_episodes(&m, 0, 3, 5, 0),
            Err(EpisodeError::InsufficientSamples { class: 1, available: 5, needed: 6 })
        ));
        assert!(matches!(sample_episodes(&m, 1, 3, 1, 0), Err(EpisodeError::NoEntries(1))));
        assert!(matches!(sample_episodes(&m, 0, 3, 0, 0), Err(EpisodeError::InvalidShots)));
    }

    #[test]
    fn episodes_jsonl_round_trip() {
        let m = manifest(DatasetName::Custom, 4, &[(1, 4)]);
        let eps = sample_episodes(&m, 0, 3, 2, 9).unwrap();
        let mut buf = Vec::new();
        write_episodes(&mut buf, &eps).unwrap();
        assert_eq!(read_episodes(buf.as_slice()).unwrap(), eps);
    }

    #[test]
    fn index_stream_is_uniform_enough() {
        let mut rng = IndexStream::new(42);
        let mut hist = [0u32; 6];
        for _ in 0..60_000 {
            hist[rng.below(6)] += 1;
        }
        assert!(hist.iter().all(|&h| (9_000..11_000).contains(&h)), "{hist:?}");
    }

    #[test]
    fn ids_are_content_derived() {
        let m = manifest(DatasetName::Custom, 4, &[(1, 3)]);
        let e = &sample_episodes(&m, 0, 1, 1, 5).unwrap()[0];
        assert!(e.id.starts_with("custom_f0_c1_c1-"), "{}", e.id);
        assert!(e.id.ends_with("_s5_0000"));
        assert_eq!(e.fss_mask_ref, format!("{}.png", e.id));
    }
}
