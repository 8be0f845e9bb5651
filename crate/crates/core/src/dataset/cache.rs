use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{segmentize, Dastgah, RecordEntry};
use crate::audio_io::{read_wav, resample, PIPELINE_RATE};
use crate::dsp::{FeatureExtractor, FeatureKind, FeatureMatrix, StftConfig};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"NAVF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
const INDEX_FILE: &str = "index.json";
const ERRORS_FILE: &str = "errors.json";

/// Serialises a matrix as little-endian float32 behind a 20-byte header.
pub fn encode_feature_file(matrix: &FeatureMatrix, label: Dastgah) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * matrix.values().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(matrix.kind().code());
    out.push(label.code() as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.cols() as u32).to_le_bytes());
    for &v in matrix.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_feature_file(
    path: impl AsRef<Path>,
    matrix: &FeatureMatrix,
    label: Dastgah,
) -> Result<()> {
    std::fs::write(path, encode_feature_file(matrix, label))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FeatureHeader {
    kind: FeatureKind,
    label: Dastgah,
    rows: usize,
    cols: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<FeatureHeader> {
    let bad = |reason: String| Error::FeatureFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = FeatureKind::from_code(bytes[8]).ok_or_else(|| bad(format!("unknown kind code {}", bytes[8])))?;
    let label = Dastgah::from_code(bytes[9] as usize).map_err(|e| bad(e.to_string()))?;
    let rows = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    Ok(FeatureHeader {
        kind,
        label,
        rows,
        cols,
    })
}

pub fn decode_feature_file(path: &Path, bytes: &[u8]) -> Result<(FeatureMatrix, Dastgah)> {
    let h = parse_header(path, bytes)?;
    let expected = HEADER_LEN + 4 * h.rows * h.cols;
    if bytes.len() != expected {
        return Err(Error::FeatureFile {
            path: path.to_path_buf(),
            reason: format!("{} bytes, header implies {expected}", bytes.len()),
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((FeatureMatrix::new(h.kind, h.rows, h.cols, values)?, h.label))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<(FeatureMatrix, Dastgah)> {
    let path = path.as_ref();
    decode_feature_file(path, &std::fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub segment_id: String,
    /// File name relative to the cache directory.
    pub file: String,
    pub record_id: String,
    /// Dastgah code 0..=6.
    pub label: usize,
    pub kind: FeatureKind,
    pub rows: usize,
    pub cols: usize,
}

impl IndexEntry {
    pub fn dastgah(&self) -> Result<Dastgah> {
        Dastgah::from_code(self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub record_id: String,
    pub path: PathBuf,
    pub error: String,
}

/// A directory of feature files plus its JSON index.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
    entries: Vec<IndexEntry>,
}

impl FeatureCache {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let text = std::fs::read_to_string(dir.join(INDEX_FILE))?;
        let entries: Vec<IndexEntry> = serde_json::from_str(&text)?;
        Ok(Self { dir, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, segment_id: &str) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| e.segment_id.as_str().cmp(segment_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Feature kind shared by every entry, if any.
    pub fn kind(&self) -> Option<FeatureKind> {
        let first = self.entries.first()?.kind;
        self.entries.iter().all(|e| e.kind == first).then_some(first)
    }

    /// Reads one matrix and checks it against its index entry.
    pub fn read(&self, entry: &IndexEntry) -> Result<FeatureMatrix> {
        let path = self.dir.join(&entry.file);
        let (m, label) = read_feature_file(&path)?;
        if m.kind() != entry.kind
            || m.rows() != entry.rows
            || m.cols() != entry.cols
            || label.code() != entry.label
        {
            return Err(Error::FeatureFile {
                path,
                reason: format!("header disagrees with index entry {}", entry.segment_id),
            });
        }
        Ok(m)
    }

    pub fn class_counts(&self) -> [usize; Dastgah::COUNT] {
        let mut counts = [0; Dastgah::COUNT];
        for e in &self.entries {
            if e.label < Dastgah::COUNT {
                counts[e.label] += 1;
            }
        }
        counts
    }

    fn write_index(dir: &Path, entries: &[IndexEntry]) -> Result<()> {
        std::fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(entries)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExtractSummary {
    pub cache: FeatureCache,
    pub errors: Vec<RecordError>,
    /// Segments whose existing files were reused.
    pub reused: usize,
}

fn existing_header_matches(path: &Path, entry: &IndexEntry) -> bool {
    let Ok(bytes) = std::fs::read(path) else {
        return false;
    };
    match parse_header(path, &bytes) {
        Ok(h) => {
            h.kind == entry.kind
                && h.rows == entry.rows
                && h.cols == entry.cols
                && h.label.code() == entry.label
                && bytes.len() == HEADER_LEN + 4 * h.rows * h.cols
        }
        Err(_) => false,
    }
}

fn extract_record(
    record: &RecordEntry,
    extractor: &FeatureExtractor,
    out_dir: &Path,
    previous: &HashMap<String, IndexEntry>,
) -> Result<(Vec<IndexEntry>, usize)> {
    let clip = resample(&read_wav(&record.path)?, PIPELINE_RATE)?;
    let segments = segmentize(&clip, &record.record_id, record.dastgah)?;
    let kind = extractor.kind();
    let rows = extractor.config().frame_count(super::SEGMENT_SAMPLES)?;
    let mut entries = Vec::with_capacity(segments.len());
    let mut reused = 0;
    for seg in &segments {
        let id = seg.id();
        let entry = IndexEntry {
            file: format!("{id}.navf"),
            segment_id: id,
            record_id: record.record_id.clone(),
            label: record.dastgah.code(),
            kind,
            rows,
            cols: kind.dims(),
        };
        let path = out_dir.join(&entry.file);
        if previous.get(&entry.segment_id) == Some(&entry) && existing_header_matches(&path, &entry) {
            reused += 1;
        } else {
            let m = extractor.extract(&seg.samples)?;
            write_feature_file(&path, &m, seg.label)?;
        }
        entries.push(entry);
    }
    Ok((entries, reused))
}

/// Decodes, resamples, segments and featurises every record into `out_dir`.
/// Records that fail are reported in the summary (and `errors.json`) without
/// stopping the run. Segments already present with matching headers are
/// not recomputed.
pub fn extract_features(
    records: &[RecordEntry],
    kind: FeatureKind,
    cfg: &StftConfig,
    out_dir: impl AsRef<Path>,
) -> Result<ExtractSummary> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let extractor = FeatureExtractor::new(kind, *cfg, PIPELINE_RATE)?;
    let previous: HashMap<String, IndexEntry> = FeatureCache::load(out_dir)
        .map(|c| {
            c.entries
                .into_iter()
                .map(|e| (e.segment_id.clone(), e))
                .collect()
        })
        .unwrap_or_default();

    let results: Vec<Result<(Vec<IndexEntry>, usize)>> = records
        .par_iter()
        .map(|r| extract_record(r, &extractor, out_dir, &previous))
        .collect();

    let mut by_id = BTreeMap::new();
    let mut errors = Vec::new();
    let mut reused = 0;
    for (record, result) in records.iter().zip(results) {
        match result {
            Ok((entries, n)) => {
                reused += n;
                for e in entries {
                    by_id.insert(e.segment_id.clone(), e);
                }
            }
            Err(e) => {
                log::warn!("record {}: {e}", record.record_id);
                errors.push(RecordError {
                    record_id: record.record_id.clone(),
                    path: record.path.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let entries: Vec<IndexEntry> = by_id.into_values().collect();
    FeatureCache::write_index(out_dir, &entries)?;
    std::fs::write(out_dir.join(ERRORS_FILE), serde_json::to_string_pretty(&errors)?)?;
    Ok(ExtractSummary {
        cache: FeatureCache {
            dir: out_dir.to_path_buf(),
            entries,
        },
        errors,
        reused,
    })
}
