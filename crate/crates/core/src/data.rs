//! Recordings, CSV ingestion, quality control and stratified splitting.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of sensor channels (thumb, index, middle, ring, little).
pub const NUM_CHANNELS: usize = 5;
/// Number of sign classes.
pub const NUM_CLASSES: usize = 11;

const SYMBOLS: [&str; NUM_CLASSES] = ["1", "2", "3", "4", "5", "A", "B", "C", "D", "E", "F"];

/// One of the eleven signs. The index order is fixed: 1,2,3,4,5,A,B,C,D,E,F.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassLabel(u8);

impl ClassLabel {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < NUM_CLASSES).then_some(ClassLabel(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = ClassLabel> {
        (0..NUM_CLASSES as u8).map(ClassLabel)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        SYMBOLS
            .iter()
            .position(|sym| sym.eq_ignore_ascii_case(s))
            .map(|i| ClassLabel(i as u8))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl TryFrom<String> for ClassLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ClassLabel> for String {
    fn from(l: ClassLabel) -> String {
        l.symbol().to_string()
    }
}

/// Five synchronized voltage readings, thumb first.
pub type Frame = [f64; NUM_CHANNELS];

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub label: ClassLabel,
    pub samples: Vec<Frame>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Parse CSV text into frames. `row` in errors is the 1-based line number.
///
/// The first non-blank line is treated as a header when none of its leading
/// five cells is numeric. Columns beyond the fifth are ignored.
pub fn parse_frames(text: &str) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    let mut seen_first = false;
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if !seen_first {
            seen_first = true;
            if cells.iter().take(NUM_CHANNELS).all(|c| parse_cell(c).is_none()) {
                continue;
            }
        }
        if cells.len() < NUM_CHANNELS {
            return Err(Error::TooFewColumns {
                row,
                found: cells.len(),
            });
        }
        let mut frame = [0.0; NUM_CHANNELS];
        for (slot, cell) in frame.iter_mut().zip(&cells) {
            *slot = parse_cell(cell).ok_or_else(|| Error::MalformedRow {
                row,
                cell: cell.trim().to_string(),
            })?;
            if !slot.is_finite() {
                return Err(Error::NonFiniteValue { row });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Load one recording from a CSV file.
pub fn load_recording(path: &Path, label: ClassLabel) -> Result<Recording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let samples = parse_frames(&text)?;
    if samples.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(Recording {
        id: path.to_string_lossy().into_owned(),
        label,
        samples,
    })
}

/// Write frames as headerless CSV. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let mut out = String::with_capacity(rec.samples.len() * 40);
    for frame in &rec.samples {
        let cells: Vec<String> = frame.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One manifest line: a path relative to the manifest's directory and a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: ClassLabel,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (path, label) = line.rsplit_once(',').ok_or_else(|| Error::MalformedRow {
            row: lineno + 1,
            cell: line.to_string(),
        })?;
        entries.push(ManifestEntry {
            path: PathBuf::from(path.trim()),
            label: label.parse()?,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for e in entries {
        writeln!(f, "{},{}", e.path.display(), e.label).map_err(|err| Error::io(path, err))?;
    }
    Ok(())
}

/// Load every recording under `dir`.
///
/// Labels come from `dir/manifest.txt` when present; otherwise each
/// immediate subdirectory named after a class symbol contributes its `*.csv`
/// files. Recording ids are paths relative to `dir`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Recording>> {
    let manifest = dir.join(MANIFEST_FILE);
    let entries = if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        parse_manifest(&text)?
    } else {
        scan_label_dirs(dir)?
    };
    entries
        .into_iter()
        .map(|e| {
            let mut rec = load_recording(&dir.join(&e.path), e.label)?;
            rec.id = e.path.to_string_lossy().replace('\\', "/");
            Ok(rec)
        })
        .collect()
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    Ok(paths)
}

fn scan_label_dirs(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for sub in sorted_dir(dir)? {
        if !sub.is_dir() {
            continue;
        }
        let Some(label) = sub
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<ClassLabel>().ok())
        else {
            continue;
        };
        for file in sorted_dir(&sub)? {
            if file.extension().is_some_and(|ext| ext == "csv") {
                let rel = file.strip_prefix(dir).unwrap_or(&file).to_path_buf();
                entries.push(ManifestEntry { path: rel, label });
            }
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcConfig {
    /// Frames with more than this many zero channels are dropped.
    pub max_zeros: usize,
    /// A reading counts as zero when `|v| <= zero_eps`.
    pub zero_eps: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            max_zeros: 3,
            zero_eps: 0.0,
        }
    }
}

/// Drop frames with more than `max_zeros` zero readings (dead-sensor rows).
/// Returns the filtered recording and the number of frames removed.
pub fn quality_filter(rec: &Recording, cfg: &QcConfig) -> Result<(Recording, usize)> {
    let samples: Vec<Frame> = rec
        .samples
        .iter()
        .filter(|f| f.iter().filter(|v| v.abs() <= cfg.zero_eps).count() <= cfg.max_zeros)
        .copied()
        .collect();
    if samples.is_empty() {
        return Err(Error::AllRowsRemoved(rec.id.clone()));
    }
    let removed = rec.samples.len() - samples.len();
    Ok((
        Recording {
            id: rec.id.clone(),
            label: rec.label,
            samples,
        },
        removed,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
            rng_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidConfig("split fractions must lie in [0, 1]".into()));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Apportion `n` items by `fracs` with the largest-remainder method.
/// Ties in the fractional part go to the earlier slot.
pub fn largest_remainder(n: usize, fracs: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fracs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &slot in order.iter().take(n.saturating_sub(assigned)) {
        counts[slot] += 1;
    }
    counts
}

/// Indices into the input slice for each subset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    pub fn select<T: Clone>(&self, items: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
        (pick(&self.train), pick(&self.val), pick(&self.test))
    }
}

/// Stratified train/val/test split over whole recordings.
///
/// Each class is shuffled with its own derived stream and cut by
/// largest-remainder counts, so no recording lands in two subsets.
pub fn stratified_split(recordings: &[Recording], spec: &SplitSpec) -> Result<Partition> {
    spec.validate()?;
    let mut part = Partition::default();
    for class in ClassLabel::all() {
        let mut members: Vec<usize> = recordings
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(Error::InsufficientClassData {
                class: class.to_string(),
                have: members.len(),
                need: 3,
            });
        }
        let mut rng = rng::derived_rng(spec.rng_seed, "split", class.index() as u64);
        members.shuffle(&mut rng);
        let counts = largest_remainder(
            members.len(),
            &[spec.train_frac, spec.val_frac, spec.test_frac],
        );
        let (train, rest) = members.split_at(counts[0]);
        let (val, test) = rest.split_at(counts[1]);
        part.train.extend_from_slice(train);
        part.val.extend_from_slice(val);
        part.test.extend_from_slice(test);
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(label: usize, n: usize, id: &str) -> Recording {
        Recording {
            id: id.to_string(),
            label: ClassLabel::from_index(label).unwrap(),
            samples: (0..n).map(|i| [i as f64; 5]).collect(),
        }
    }

    #[test]
    fn label_symbols_round_trip_in_fixed_order() {
        let syms: Vec<String> = ClassLabel::all().map(|l| l.to_string()).collect();
        assert_eq!(syms, ["1", "2", "3", "4", "5", "A", "B", "C", "D", "E", "F"]);
        for l in ClassLabel::all() {
            assert_eq!(l.symbol().parse::<ClassLabel>().unwrap(), l);
        }
        assert_eq!("c".parse::<ClassLabel>().unwrap().index(), 7);
        assert!("G".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn parses_three_rows() {
        let frames = parse_frames("0.1,0.2,0.3,0.4,0.5\n1,2,3,4,5\n-1,-2,-3,-4,-5\n").unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[1], [1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn extra_columns_are_ignored() {
        let frames = parse_frames("1,2,3,4,5,99\n6,7,8,9,10,-1\n").unwrap();
        assert_eq!(frames, vec![[1.0, 2.0, 3.0, 4.0, 5.0], [6.0, 7.0, 8.0, 9.0, 10.0]]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_frames("1,2,3,4,5\na,b,c,d,e\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn header_is_skipped_and_short_rows_rejected() {
        let frames = parse_frames("thumb,index,middle,ring,little\n1,2,3,4,5\n").unwrap();
        assert_eq!(frames.len(), 1);
        let err = parse_frames("1,2,3\n").unwrap_err();
        assert!(matches!(err, Error::TooFewColumns { row: 1, found: 3 }));
        assert!(matches!(
            parse_frames("1,2,NaN,4,5\n").unwrap_err(),
            Error::NonFiniteValue { row: 1 }
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, "\n\n").unwrap();
        let err = load_recording(&path, ClassLabel::from_index(0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::EmptyFile(_)));
    }

    #[test]
    fn qc_drops_rows_with_more_than_three_zeros() {
        let mut r = rec(0, 10, "r");
        r.samples[0] = [0.0, 0.0, 0.0, 0.0, 0.2];
        r.samples[3] = [0.0, 0.0, 0.0, 0.0, 0.0];
        r.samples[5] = [0.0, 0.0, 0.0, 1.1, 0.2];
        let (out, removed) = quality_filter(&r, &QcConfig::default()).unwrap();
        assert_eq!(removed, 2);
        assert_eq!(out.len(), 8);
        assert!(out.samples.contains(&[0.0, 0.0, 0.0, 1.1, 0.2]));
        let (again, removed_again) = quality_filter(&out, &QcConfig::default()).unwrap();
        assert_eq!(again, out);
        assert_eq!(removed_again, 0);
    }

    #[test]
    fn qc_rejects_fully_dead_recording() {
        let r = Recording {
            id: "dead".into(),
            label: ClassLabel::from_index(0).unwrap(),
            samples: vec![[0.0; 5]; 4],
        };
        assert!(matches!(
            quality_filter(&r, &QcConfig::default()),
            Err(Error::AllRowsRemoved(_))
        ));
    }

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(largest_remainder(20, &[0.7, 0.15, 0.15]), vec![14, 3, 3]);
        assert_eq!(largest_remainder(10, &[0.7, 0.15, 0.15]), vec![7, 2, 1]);
        assert_eq!(largest_remainder(3, &[0.7, 0.15, 0.15]), vec![2, 1, 0]);
    }

    #[test]
    fn split_of_twenty_is_14_3_3_and_deterministic() {
        let recs: Vec<Recording> = (0..20).map(|i| rec(4, 3, &format!("r{i}"))).collect();
        let spec = SplitSpec {
            rng_seed: 9,
            ..SplitSpec::default()
        };
        let p = stratified_split(&recs, &spec).unwrap();
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (14, 3, 3));
        assert_eq!(p, stratified_split(&recs, &spec).unwrap());
        let other = stratified_split(
            &recs,
            &SplitSpec {
                rng_seed: 10,
                ..spec
            },
        )
        .unwrap();
        assert_ne!(p, other);
        assert_eq!(other.train.len(), 14);
    }

    #[test]
    fn split_requires_three_per_class() {
        let recs = vec![rec(0, 3, "a"), rec(0, 3, "b")];
        assert!(matches!(
            stratified_split(&recs, &SplitSpec::default()),
            Err(Error::InsufficientClassData { have: 2, .. })
        ));
    }

    #[test]
    fn manifest_wins_over_directories() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec(0, 4, "x");
        write_recording(&dir.path().join("A/one.csv"), &r).unwrap();
        let from_dirs = load_dataset(dir.path()).unwrap();
        assert_eq!(from_dirs[0].label.symbol(), "A");
        assert_eq!(from_dirs[0].id, "A/one.csv");
        write_manifest(
            &dir.path().join(MANIFEST_FILE),
            &[ManifestEntry {
                path: "A/one.csv".into(),
                label: "3".parse().unwrap(),
            }],
        )
        .unwrap();
        let from_manifest = load_dataset(dir.path()).unwrap();
        assert_eq!(from_manifest[0].label.symbol(), "3");
        assert_eq!(from_manifest[0].samples, r.samples);
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_exhaustive(
            per_class in proptest::collection::vec(3usize..25, 1..11),
            seed in any::<u64>(),
        ) {
            let mut recs = Vec::new();
            for (c, &n) in per_class.iter().enumerate() {
                for i in 0..n {
                    recs.push(rec(c, 2, &format!("{c}-{i}")));
                }
            }
            let p = stratified_split(&recs, &SplitSpec { rng_seed: seed, ..SplitSpec::default() }).unwrap();
            let mut all: Vec<usize> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..recs.len()).collect::<Vec<_>>());
        }

        #[test]
        fn csv_round_trip_is_bit_exact(values in proptest::collection::vec(-1e6f64..1e6, 5..200)) {
            let n = values.len() / 5;
            let r = Recording {
                id: "rt".into(),
                label: ClassLabel::from_index(3).unwrap(),
                samples: (0..n).map(|i| values[i * 5..i * 5 + 5].try_into().unwrap()).collect(),
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.csv");
            write_recording(&path, &r).unwrap();
            let back = load_recording(&path, r.label).unwrap();
            for (a, b) in back.samples.iter().zip(&r.samples) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
