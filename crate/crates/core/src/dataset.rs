//! Sample bookkeeping: augmentation-case assembly, deterministic splits,
//! manifest persistence, and a synthetic corpus generator with ground-truth
//! boxes for verifying the detector end to end.

use crate::imaging::{BBox, GrayImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub const MANIFEST_HEADER: &str = "path,label,provenance,split,case,seed";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown case id {0:?} (expected original|1|2|3)")]
    UnknownCase(String),
    #[error("record {path:?} in the {pool} pool carries provenance {found}")]
    PoolProvenance {
        pool: &'static str,
        path: String,
        found: Provenance,
    },
    #[error(
        "split requests {requested} records but the manifest holds {available} (deficit {deficit})"
    )]
    SplitOverdraw {
        requested: usize,
        available: usize,
        deficit: usize,
    },
    #[error("validation draw {val} exceeds the training partition of {train}")]
    OverlapValTooLarge { val: usize, train: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    BadRow { line: usize, reason: String },
    #[error("bad manifest header {found:?}")]
    BadHeader { found: String },
    #[error("pool directory entry {path:?} is not a label directory (expected TB or Normal)")]
    UnknownLabelDir { path: String },
    #[error("path {path:?} contains a character the manifest format cannot carry")]
    UnencodablePath { path: String },
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $(Self::$variant => f.write_str($text)),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    )),
                }
            }
        }
    };
}

string_enum!(Label {
    TB => "TB",
    Normal => "Normal",
});

string_enum!(Provenance {
    Original => "Original",
    HaarFeature => "HaarFeature",
    LBPFeature => "LBPFeature",
    Crop => "Crop",
    NoisyLBP => "NoisyLBP",
    NoisyHaar => "NoisyHaar",
});

string_enum!(Split {
    Train => "Train",
    Val => "Val",
    Test => "Test",
    Unassigned => "Unassigned",
});

/// One of the augmentation recipes, or the unaugmented baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    Original,
    Case1,
    Case2,
    Case3,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseId::Original => f.write_str("Original"),
            CaseId::Case1 => f.write_str("Case1"),
            CaseId::Case2 => f.write_str("Case2"),
            CaseId::Case3 => f.write_str("Case3"),
        }
    }
}

impl FromStr for CaseId {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(CaseId::Original),
            "1" | "case1" => Ok(CaseId::Case1),
            "2" | "case2" => Ok(CaseId::Case2),
            "3" | "case3" => Ok(CaseId::Case3),
            _ => Err(DatasetError::UnknownCase(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: String,
    pub label: Label,
    pub provenance: Provenance,
    pub split: Split,
}

impl SampleRecord {
    pub fn new(path: impl Into<String>, label: Label, provenance: Provenance) -> Self {
        SampleRecord {
            path: path.into(),
            label,
            provenance,
            split: Split::Unassigned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub case_id: CaseId,
    /// Seed of the split shuffle; 0 until a split has been applied.
    pub seed: u64,
}

/// Per-(split, label) record counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitSummary {
    counts: [[usize; 2]; 4],
}

impl SplitSummary {
    pub fn of(manifest: &DatasetManifest) -> Self {
        let mut summary = SplitSummary::default();
        for r in &manifest.records {
            summary.counts[Self::split_idx(r.split)][Self::label_idx(r.label)] += 1;
        }
        summary
    }

    fn split_idx(s: Split) -> usize {
        match s {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
            Split::Unassigned => 3,
        }
    }

    fn label_idx(l: Label) -> usize {
        match l {
            Label::Normal => 0,
            Label::TB => 1,
        }
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.counts[Self::split_idx(split)][Self::label_idx(label)]
    }

    pub fn split_total(&self, split: Split) -> usize {
        self.counts[Self::split_idx(split)].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

impl fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for split in [Split::Train, Split::Val, Split::Test, Split::Unassigned] {
            writeln!(
                f,
                "{split}: {} (TB {}, Normal {})",
                self.split_total(split),
                self.count(split, Label::TB),
                self.count(split, Label::Normal),
            )?;
        }
        Ok(())
    }
}

fn check_pool(
    pool: &[SampleRecord],
    name: &'static str,
    allowed: &[Provenance],
) -> Result<(), DatasetError> {
    for r in pool {
        if !allowed.contains(&r.provenance) {
            return Err(DatasetError::PoolProvenance {
                pool: name,
                path: r.path.clone(),
                found: r.provenance,
            });
        }
    }
    Ok(())
}

/// Assembles a manifest from the augmentation pools. Case1 pools originals
/// with Haar features; Case3 adds LBP features and crops; Case2 adds the
/// noisy pool on top of Case3. Pools are concatenated in argument order and
/// kept stable within each pool.
pub fn build_case(
    original: &[SampleRecord],
    haar: &[SampleRecord],
    lbp: &[SampleRecord],
    crops: &[SampleRecord],
    noisy: &[SampleRecord],
    case_id: CaseId,
) -> Result<DatasetManifest, DatasetError> {
    check_pool(original, "original", &[Provenance::Original])?;
    check_pool(haar, "haar", &[Provenance::HaarFeature])?;
    check_pool(lbp, "lbp", &[Provenance::LBPFeature])?;
    check_pool(crops, "crops", &[Provenance::Crop])?;
    check_pool(noisy, "noisy", &[Provenance::NoisyLBP, Provenance::NoisyHaar])?;

    let parts: &[&[SampleRecord]] = match case_id {
        CaseId::Original => &[original],
        CaseId::Case1 => &[original, haar],
        CaseId::Case3 => &[original, haar, lbp, crops],
        CaseId::Case2 => &[original, haar, lbp, crops, noisy],
    };
    let records = parts.iter().flat_map(|p| p.iter().cloned()).collect();
    Ok(DatasetManifest {
        records,
        case_id,
        seed: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Train/Val/Test are pairwise disjoint; the counts must fit.
    Disjoint,
    /// Validation is drawn from the training partition and appears as
    /// duplicated records, reproducing splits whose counts overdraw the
    /// total by exactly the validation size.
    OverlapVal,
}

/// Shuffles the records with a seeded generator and assigns splits by
/// count, leaving the remainder `Unassigned`. The output preserves the
/// shuffled order (then any duplicated validation records in overlap mode).
pub fn split(
    manifest: DatasetManifest,
    train_n: usize,
    val_n: usize,
    test_n: usize,
    seed: u64,
    mode: SplitMode,
) -> Result<DatasetManifest, DatasetError> {
    let available = manifest.records.len();
    let direct = match mode {
        SplitMode::Disjoint => train_n + val_n + test_n,
        SplitMode::OverlapVal => train_n + test_n,
    };
    if direct > available {
        return Err(DatasetError::SplitOverdraw {
            requested: direct + if mode == SplitMode::OverlapVal { val_n } else { 0 },
            available,
            deficit: direct - available,
        });
    }
    if mode == SplitMode::OverlapVal && val_n > train_n {
        return Err(DatasetError::OverlapValTooLarge {
            val: val_n,
            train: train_n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = manifest.records;
    records.shuffle(&mut rng);

    match mode {
        SplitMode::Disjoint => {
            for (i, r) in records.iter_mut().enumerate() {
                r.split = if i < train_n {
                    Split::Train
                } else if i < train_n + val_n {
                    Split::Val
                } else if i < train_n + val_n + test_n {
                    Split::Test
                } else {
                    Split::Unassigned
                };
            }
        }
        SplitMode::OverlapVal => {
            for (i, r) in records.iter_mut().enumerate() {
                r.split = if i < train_n {
                    Split::Train
                } else if i < train_n + test_n {
                    Split::Test
                } else {
                    Split::Unassigned
                };
            }
            let mut train_idx: Vec<usize> = (0..train_n).collect();
            train_idx.shuffle(&mut rng);
            let mut val: Vec<SampleRecord> = train_idx[..val_n]
                .iter()
                .map(|&i| records[i].clone())
                .collect();
            for r in &mut val {
                r.split = Split::Val;
            }
            records.extend(val);
        }
    }

    Ok(DatasetManifest {
        records,
        case_id: manifest.case_id,
        seed,
    })
}

pub fn manifest_to_csv(manifest: &DatasetManifest) -> Result<String, DatasetError> {
    let mut out = String::with_capacity(64 * (manifest.records.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for r in &manifest.records {
        if r.path.contains([',', '\n', '\r']) {
            return Err(DatasetError::UnencodablePath {
                path: r.path.clone(),
            });
        }
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.path, r.label, r.provenance, r.split, manifest.case_id, manifest.seed
        ));
    }
    Ok(out)
}

pub fn manifest_from_csv(text: &str) -> Result<DatasetManifest, DatasetError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    if header != MANIFEST_HEADER {
        return Err(DatasetError::BadHeader {
            found: header.to_string(),
        });
    }
    let mut records = Vec::new();
    let mut case_seed: Option<(CaseId, u64)> = None;
    for (idx, raw) in lines.enumerate() {
        let line_no = idx + 2; // header is line 1
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(DatasetError::BadRow {
                line: line_no,
                reason: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let bad = |reason: String| DatasetError::BadRow {
            line: line_no,
            reason,
        };
        let label = fields[1].parse::<Label>().map_err(&bad)?;
        let provenance = fields[2].parse::<Provenance>().map_err(&bad)?;
        let split = fields[3].parse::<Split>().map_err(&bad)?;
        let case = fields[4]
            .parse::<CaseId>()
            .map_err(|e| bad(e.to_string()))?;
        let seed = fields[5]
            .parse::<u64>()
            .map_err(|e| bad(format!("bad seed {:?}: {e}", fields[5])))?;
        match case_seed {
            None => case_seed = Some((case, seed)),
            Some((c, s)) if c != case || s != seed => {
                return Err(bad(format!(
                    "case/seed {case}/{seed} disagrees with {c}/{s} from earlier rows"
                )));
            }
            _ => {}
        }
        records.push(SampleRecord {
            path: fields[0].to_string(),
            label,
            provenance,
            split,
        });
    }
    let (case_id, seed) = case_seed.unwrap_or((CaseId::Original, 0));
    Ok(DatasetManifest {
        records,
        case_id,
        seed,
    })
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let csv = manifest_to_csv(manifest)?;
    fs::write(path, csv).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    manifest_from_csv(&text)
}

/// Scans a `<root>/<label>/*.pgm` tree into records with the given
/// provenance, sorted by label directory then file name.
pub fn scan_pool_dir(root: &Path, provenance: Provenance) -> Result<Vec<SampleRecord>, DatasetError> {
    let io_err = |p: &Path, e: std::io::Error| DatasetError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let mut label_dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let entry = entry.map_err(|e| io_err(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let label = name
            .parse::<Label>()
            .map_err(|_| DatasetError::UnknownLabelDir {
                path: path.display().to_string(),
            })?;
        label_dirs.push((name, label, path));
    }
    label_dirs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut records = Vec::new();
    for (_, label, dir) in label_dirs {
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let entry = entry.map_err(|e| io_err(&dir, e))?;
            let path = entry.path();
            if path.is_file() && path.extension().is_some_and(|e| e == "pgm") {
                files.push(path);
            }
        }
        files.sort();
        for path in files {
            records.push(SampleRecord::new(
                path.display().to_string(),
                label,
                provenance,
            ));
        }
    }
    Ok(records)
}

/// One generated image plus, for TB, the blob's true bounding box.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: GrayImage,
    pub label: Label,
    pub bbox: Option<BBox>,
}

/// Generates `n_per_class` images per class at `size` x `size`. TB images
/// are clamped Gaussian noise (mean 0.3, sigma 0.1) plus a bright Gaussian
/// blob (peak 0.6, sigma size/8) at a seeded interior location; Normal
/// images are noise only. The recorded box spans the blob center plus or
/// minus two sigmas. TB samples come first, then Normal, both in draw
/// order; output is deterministic per seed.
pub fn gen_synthetic(n_per_class: usize, size: usize, seed: u64) -> Vec<SyntheticSample> {
    assert!(n_per_class >= 1, "need at least one sample per class");
    assert!(size >= 16, "size {size} below the 16-pixel minimum");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.3f64, 0.1).expect("sigma is positive");
    let sigma = size as f64 / 8.0;
    let box_side = size / 2; // four sigmas across
    let quarter = size / 4;

    let noise_image = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..size * size)
            .map(|_| noise.sample(rng).clamp(0.0, 1.0) as f32)
            .collect()
    };

    let mut samples = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        let cx = rng.random_range(quarter..=size - box_side + quarter);
        let cy = rng.random_range(quarter..=size - box_side + quarter);
        let mut data = noise_image(&mut rng);
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                let blob = 0.6 * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let v = &mut data[y * size + x];
                *v = (*v + blob as f32).clamp(0.0, 1.0);
            }
        }
        samples.push(SyntheticSample {
            image: GrayImage::from_vec(size, size, data).expect("clamped values"),
            label: Label::TB,
            bbox: Some(BBox::new(cx - quarter, cy - quarter, box_side, box_side)),
        });
    }
    for _ in 0..n_per_class {
        samples.push(SyntheticSample {
            image: GrayImage::from_vec(size, size, noise_image(&mut rng)).expect("clamped values"),
            label: Label::Normal,
            bbox: None,
        });
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{block_mean_map, detect_roi, iou, mean_image, RoiMethod};
    use crate::imaging::crop;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn pool(n: usize, provenance: Provenance, prefix: &str) -> Vec<SampleRecord> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::TB } else { Label::Normal };
                SampleRecord::new(format!("{prefix}/{i:04}.pgm"), label, provenance)
            })
            .collect()
    }

    #[test]
    fn case_original_keeps_800() {
        let m = build_case(
            &pool(800, Provenance::Original, "orig"),
            &[],
            &[],
            &[],
            &[],
            CaseId::Original,
        )
        .unwrap();
        assert_eq!(m.records.len(), 800);
        assert_eq!(m.case_id, CaseId::Original);
    }

    #[test]
    fn case1_is_original_plus_haar() {
        let m = build_case(
            &pool(800, Provenance::Original, "orig"),
            &pool(579, Provenance::HaarFeature, "haar"),
            &pool(99, Provenance::LBPFeature, "lbp"),
            &[],
            &[],
            CaseId::Case1,
        )
        .unwrap();
        assert_eq!(m.records.len(), 1379);
        // Pools concatenate in argument order.
        assert_eq!(m.records[0].provenance, Provenance::Original);
        assert_eq!(m.records[800].provenance, Provenance::HaarFeature);
    }

    #[test]
    fn case_arithmetic_identities() {
        let orig = pool(13, Provenance::Original, "o");
        let haar = pool(7, Provenance::HaarFeature, "h");
        let lbp = pool(5, Provenance::LBPFeature, "l");
        let crops = pool(4, Provenance::Crop, "c");
        let noisy = pool(3, Provenance::NoisyLBP, "n");
        let c1 = build_case(&orig, &haar, &lbp, &crops, &noisy, CaseId::Case1).unwrap();
        let c3 = build_case(&orig, &haar, &lbp, &crops, &noisy, CaseId::Case3).unwrap();
        let c2 = build_case(&orig, &haar, &lbp, &crops, &noisy, CaseId::Case2).unwrap();
        assert_eq!(c1.records.len(), orig.len() + haar.len());
        assert_eq!(c3.records.len() - c1.records.len(), lbp.len() + crops.len());
        assert_eq!(c2.records.len() - c3.records.len(), noisy.len());
    }

    #[test]
    fn wrong_provenance_rejected() {
        let err = build_case(
            &pool(2, Provenance::HaarFeature, "bad"),
            &[],
            &[],
            &[],
            &[],
            CaseId::Original,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::PoolProvenance { pool: "original", .. }));
    }

    #[test]
    fn case_id_parsing() {
        assert_eq!("original".parse::<CaseId>().unwrap(), CaseId::Original);
        assert_eq!("1".parse::<CaseId>().unwrap(), CaseId::Case1);
        assert_eq!("Case2".parse::<CaseId>().unwrap(), CaseId::Case2);
        assert_eq!("3".parse::<CaseId>().unwrap(), CaseId::Case3);
        assert!("4".parse::<CaseId>().is_err());
    }

    fn manifest_of(n: usize) -> DatasetManifest {
        build_case(
            &pool(n, Provenance::Original, "orig"),
            &[],
            &[],
            &[],
            &[],
            CaseId::Original,
        )
        .unwrap()
    }

    #[test]
    fn overdrawn_split_reports_deficit() {
        let err = split(manifest_of(800), 650, 100, 150, 7, SplitMode::Disjoint).unwrap_err();
        match err {
            DatasetError::SplitOverdraw {
                requested,
                available,
                deficit,
            } => {
                assert_eq!((requested, available, deficit), (900, 800, 100));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn split_assigns_exact_disjoint_counts() {
        let m = split(manifest_of(800), 550, 100, 150, 7, SplitMode::Disjoint).unwrap();
        let summary = SplitSummary::of(&m);
        assert_eq!(summary.split_total(Split::Train), 550);
        assert_eq!(summary.split_total(Split::Val), 100);
        assert_eq!(summary.split_total(Split::Test), 150);
        assert_eq!(summary.split_total(Split::Unassigned), 0);
        assert_eq!(summary.total(), 800);
        let unique: HashSet<&str> = m.records.iter().map(|r| r.path.as_str()).collect();
        assert_eq!(unique.len(), 800, "no record appears twice");
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let a = split(manifest_of(800), 550, 100, 150, 7, SplitMode::Disjoint).unwrap();
        let b = split(manifest_of(800), 550, 100, 150, 7, SplitMode::Disjoint).unwrap();
        assert_eq!(a, b);
        let c = split(manifest_of(800), 550, 100, 150, 8, SplitMode::Disjoint).unwrap();
        assert_ne!(a, c, "different seed shuffles differently");
    }

    #[test]
    fn overlap_val_duplicates_validation() {
        let m = split(manifest_of(800), 650, 100, 150, 7, SplitMode::OverlapVal).unwrap();
        assert_eq!(m.records.len(), 900);
        let summary = SplitSummary::of(&m);
        assert_eq!(summary.split_total(Split::Train), 650);
        assert_eq!(summary.split_total(Split::Val), 100);
        assert_eq!(summary.split_total(Split::Test), 150);
        let train: HashSet<&str> = m
            .records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.path.as_str())
            .collect();
        for r in m.records.iter().filter(|r| r.split == Split::Val) {
            assert!(train.contains(r.path.as_str()), "val drawn from train");
        }
    }

    #[test]
    fn overlap_val_cannot_exceed_train() {
        let err = split(manifest_of(10), 4, 5, 1, 7, SplitMode::OverlapVal).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::OverlapValTooLarge { val: 5, train: 4 }
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let m = split(manifest_of(10), 6, 2, 2, 42, SplitMode::Disjoint).unwrap();
        let csv = manifest_to_csv(&m).unwrap();
        let back = manifest_from_csv(&csv).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn empty_manifest_writes_header_only() {
        let m = DatasetManifest {
            records: vec![],
            case_id: CaseId::Original,
            seed: 0,
        };
        let csv = manifest_to_csv(&m).unwrap();
        assert_eq!(csv, format!("{MANIFEST_HEADER}\n"));
        assert!(manifest_from_csv(&csv).unwrap().records.is_empty());
    }

    #[test]
    fn case2_manifest_line_count_matches_pool_sum() {
        let m = build_case(
            &pool(800, Provenance::Original, "o"),
            &pool(569, Provenance::HaarFeature, "h"),
            &pool(633, Provenance::LBPFeature, "l"),
            &pool(800, Provenance::Crop, "c"),
            &pool(167, Provenance::NoisyLBP, "n"),
            CaseId::Case2,
        )
        .unwrap();
        assert_eq!(m.records.len(), 2969);
        let csv = manifest_to_csv(&m).unwrap();
        assert_eq!(csv.lines().count(), 2970);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let text = format!("{MANIFEST_HEADER}\na.pgm,TB,Original,Train,Case1,7\nb.pgm,Bogus,Original,Train,Case1,7\n");
        let err = manifest_from_csv(&text).unwrap_err();
        match err {
            DatasetError::BadRow { line, reason } => {
                assert_eq!(line, 3);
                assert!(reason.contains("Bogus"), "{reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }

        let text = format!("{MANIFEST_HEADER}\na.pgm,TB,Original\n");
        match manifest_from_csv(&text).unwrap_err() {
            DatasetError::BadRow { line: 2, reason } => {
                assert!(reason.contains("3"), "{reason}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(
            manifest_from_csv("path,label\n"),
            Err(DatasetError::BadHeader { .. })
        ));
    }

    #[test]
    fn comma_in_path_rejected_at_write() {
        let m = DatasetManifest {
            records: vec![SampleRecord::new("a,b.pgm", Label::TB, Provenance::Original)],
            case_id: CaseId::Original,
            seed: 0,
        };
        assert!(matches!(
            manifest_to_csv(&m),
            Err(DatasetError::UnencodablePath { .. })
        ));
    }

    #[test]
    fn synthetic_counts_labels_and_determinism() {
        let a = gen_synthetic(1, 16, 5);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].label, Label::TB);
        assert_eq!(a[1].label, Label::Normal);
        assert!(a[0].bbox.is_some() && a[1].bbox.is_none());
        let bbox = a[0].bbox.unwrap();
        assert_eq!((bbox.w, bbox.h), (8, 8));
        assert!(bbox.fits(16, 16));

        let b = gen_synthetic(1, 16, 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data(), y.image.data(), "same seed, same bytes");
        }
        let c = gen_synthetic(1, 16, 6);
        assert_ne!(a[0].image.data(), c[0].image.data());
    }

    #[test]
    fn synthetic_blobs_are_detectable() {
        let size = 32;
        let k = 7;
        let samples = gen_synthetic(8, size, 99);
        let tb: Vec<&SyntheticSample> = samples.iter().filter(|s| s.label == Label::TB).collect();
        // Template: mean of the block-mean maps cropped at the true boxes
        // of the first three images; detect on the remaining five.
        let crops: Vec<_> = tb[..3]
            .iter()
            .map(|s| crop(&block_mean_map(&s.image, k).unwrap(), s.bbox.unwrap()).unwrap())
            .collect();
        let template = mean_image(&crops).unwrap();
        let mut total = 0.0;
        for s in &tb[3..] {
            let hit = detect_roi(&s.image, &template, RoiMethod::Haar, k, 0.0).unwrap();
            total += iou(hit.best, s.bbox.unwrap());
        }
        let mean = total / (tb.len() - 3) as f64;
        assert!(mean >= 0.5, "mean IoU {mean}");
    }

    #[test]
    fn scan_pool_dir_sorted_and_labeled() {
        let dir = tempfile::tempdir().unwrap();
        for (label, name) in [("TB", "b.pgm"), ("TB", "a.pgm"), ("Normal", "c.pgm")] {
            let sub = dir.path().join(label);
            fs::create_dir_all(&sub).unwrap();
            let img = GrayImage::zeros(4, 4).unwrap();
            fs::write(sub.join(name), crate::imaging::encode_pgm(&img)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let records = scan_pool_dir(dir.path(), Provenance::Original).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records[0].path.ends_with("Normal/c.pgm"));
        assert!(records[1].path.ends_with("TB/a.pgm"));
        assert!(records[2].path.ends_with("TB/b.pgm"));
        assert_eq!(records[0].label, Label::Normal);

        fs::create_dir_all(dir.path().join("Mystery")).unwrap();
        assert!(matches!(
            scan_pool_dir(dir.path(), Provenance::Original),
            Err(DatasetError::UnknownLabelDir { .. })
        ));
    }

    proptest! {
        #[test]
        fn case_sizes_always_satisfy_identities(
            o in 0usize..40, h in 0usize..40, l in 0usize..40,
            c in 0usize..40, n in 0usize..40,
        ) {
            let orig = pool(o, Provenance::Original, "o");
            let haar = pool(h, Provenance::HaarFeature, "h");
            let lbp = pool(l, Provenance::LBPFeature, "l");
            let crops = pool(c, Provenance::Crop, "c");
            let noisy = pool(n, Provenance::NoisyHaar, "n");
            let c1 = build_case(&orig, &haar, &lbp, &crops, &noisy, CaseId::Case1).unwrap();
            let c3 = build_case(&orig, &haar, &lbp, &crops, &noisy, CaseId::Case3).unwrap();
            let c2 = build_case(&orig, &haar, &lbp, &crops, &noisy, CaseId::Case2).unwrap();
            prop_assert_eq!(c1.records.len(), o + h);
            prop_assert_eq!(c2.records.len() - c3.records.len(), n);
            prop_assert_eq!(c3.records.len() - c1.records.len(), l + c);
        }

        #[test]
        fn split_partitions_are_disjoint_and_sized(
            total in 1usize..60,
            train in 0usize..30,
            val in 0usize..15,
            test in 0usize..15,
            seed in 0u64..1000,
        ) {
            prop_assume!(train + val + test <= total);
            let m = split(manifest_of(total), train, val, test, seed, SplitMode::Disjoint).unwrap();
            let summary = SplitSummary::of(&m);
            prop_assert_eq!(summary.split_total(Split::Train), train);
            prop_assert_eq!(summary.split_total(Split::Val), val);
            prop_assert_eq!(summary.split_total(Split::Test), test);
            prop_assert_eq!(summary.total(), total);
            let unique: HashSet<&str> = m.records.iter().map(|r| r.path.as_str()).collect();
            prop_assert_eq!(unique.len(), total);
        }
    }
}
